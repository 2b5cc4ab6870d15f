//! UV unwrapping, texel baking and view-consistent texture refinement.

pub mod atlas;
pub mod perceptual;
pub mod stage;
pub mod texels;

pub use atlas::*;
pub use perceptual::*;
pub use stage::*;
pub use texels::*;
