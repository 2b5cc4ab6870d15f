//! Cameras, software rasterization, shading, soft silhouettes, landmark
//! images and the backward pass from pixel losses.

pub mod backward;
pub mod camera;
pub mod image;
pub mod landmarks;
pub mod normal_alpha;
pub mod raster;
pub mod shade;
pub mod silhouette;

pub use backward::{accumulate_gradients, PixelGradients, RenderGradients};
pub use camera::{camera_from_spherical, sample_camera, Camera, CameraRanges, Projector};
pub use image::{gaussian_blur, RasterImage};
pub use landmarks::{landmark_centers, project_landmarks, LANDMARK_RADIUS};
pub use normal_alpha::{normal_alpha_image, render_normal_alpha, NormalAlphaRender};
pub use raster::{rasterize, shade_depth, shade_mask, shade_normal, GBuffer};
pub use shade::{bilinear_footprint, shade_texture, Footprint, FootprintEntry};
pub use silhouette::{
    silhouette_edges, soft_silhouette, soft_silhouette_with, SoftSilhouette, DEFAULT_SHARPNESS,
};
