//! Guidance-pluggable reconstruction engine for single-image 3D heads.
//!
//! The engine runs in two stages. Geometry sculpting optimizes a deformable
//! tetrahedral grid under reference-view supervision and identity-aware score
//! distillation; texture generation back-projects the reference image into a
//! UV atlas, progressively inpaints the rest along a camera trajectory and
//! refines the texels against denoised renders.
//!
//! All neural guidance lives behind [`guidance::GuidanceProvider`]. The crate
//! ships an analytic [`guidance::SyntheticTargetOracle`] that denoises toward
//! known target renders so every stage can be checked end to end on a CPU.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod guidance;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod sculpt;
pub mod tetra;
pub mod texture;

pub use error::{Error, Result};

/// Double-precision 3-vector used for all geometry.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Double-precision 3×3 matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;
