//! Landmark conditioning images: anti-aliased white disks on black.

use nalgebra::Vector2;

use super::camera::{Camera, Projector};
use super::image::RasterImage;
use super::raster::GBuffer;
use crate::tetra::align::LandmarkSet;

pub const LANDMARK_RADIUS: f64 = 3.0;
/// A landmark is occluded when it lies this fraction of its depth behind
/// the depth buffer.
pub const OCCLUSION_TOLERANCE: f64 = 0.02;

/// Projected pixel centre and eye depth per landmark; `None` when behind
/// the near plane.
pub fn landmark_centers(
    landmarks: &LandmarkSet,
    camera: &Camera,
) -> Vec<Option<(Vector2<f64>, f64)>> {
    let pr = Projector::new(camera);
    landmarks.points.iter().map(|p| pr.project(p)).collect()
}

fn visible(center: &Vector2<f64>, depth: f64, gb: &GBuffer) -> bool {
    let (x, y) = (center.x.floor(), center.y.floor());
    if x < 0.0 || y < 0.0 || x >= gb.width as f64 || y >= gb.height as f64 {
        return true;
    }
    let i = y as usize * gb.width + x as usize;
    gb.face[i].is_none() || depth <= gb.depth[i] * (1.0 + OCCLUSION_TOLERANCE)
}

pub fn project_landmarks(
    landmarks: &LandmarkSet,
    camera: &Camera,
    depth: Option<&GBuffer>,
) -> RasterImage {
    project_landmarks_with_radius(landmarks, camera, depth, LANDMARK_RADIUS)
}

pub fn project_landmarks_with_radius(
    landmarks: &LandmarkSet,
    camera: &Camera,
    depth: Option<&GBuffer>,
    radius: f64,
) -> RasterImage {
    let (w, h) = (camera.width, camera.height);
    let mut img = RasterImage::new(w, h, 1);
    for (c, z) in landmark_centers(landmarks, camera).into_iter().flatten() {
        if depth.is_some_and(|gb| !visible(&c, z, gb)) {
            continue;
        }
        let x0 = (c.x - radius - 1.0).floor().max(0.0) as usize;
        let y0 = (c.y - radius - 1.0).floor().max(0.0) as usize;
        let x1 = (c.x + radius + 1.0).ceil().min(w as f64);
        let y1 = (c.y + radius + 1.0).ceil().min(h as f64);
        if x1 <= 0.0 || y1 <= 0.0 {
            continue;
        }
        for y in y0..y1 as usize {
            for x in x0..x1 as usize {
                let d = (Vector2::new(x as f64 + 0.5, y as f64 + 0.5) - c).norm();
                let cov = (radius + 0.5 - d).clamp(0.0, 1.0);
                let i = y * w + x;
                if cov > img.data[i] {
                    img.data[i] = cov;
                }
            }
        }
    }
    img
}
