//! Pinhole camera on a sphere around a look-at point.
//!
//! World frame is y-up and right-handed. Camera space follows the OpenGL
//! convention: x right, y up, looking down −z. Eye depth is therefore
//! `−z_cam`. Pixel coordinates have x to the right and y down, with pixel
//! `(i, j)` centred at `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix2x3, Matrix4, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

/// Faces or points closer than this eye depth are not rendered.
pub const NEAR_PLANE: f64 = 1e-3;
pub const FAR_PLANE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Degrees; 0 looks at the front of the head from +z.
    pub azimuth: f64,
    /// Degrees, open interval (−90, 90).
    pub elevation: f64,
    pub distance: f64,
    /// Vertical field of view in degrees.
    pub fovy: f64,
    pub look_at: [f64; 3],
    pub width: usize,
    pub height: usize,
}

pub fn camera_from_spherical(
    azimuth: f64,
    elevation: f64,
    distance: f64,
    fovy: f64,
    look_at: Vec3,
    size: (usize, usize),
) -> Result<Camera> {
    let cam = Camera {
        azimuth,
        elevation,
        distance,
        fovy,
        look_at: [look_at.x, look_at.y, look_at.z],
        width: size.0,
        height: size.1,
    };
    cam.validate()?;
    Ok(cam)
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.azimuth, self.elevation, self.distance, self.fovy]
            .iter()
            .chain(self.look_at.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("camera parameters must be finite"));
        }
        if !(self.fovy > 0.0 && self.fovy < 180.0) {
            return Err(Error::invalid(format!(
                "fovy {} outside (0, 180)",
                self.fovy
            )));
        }
        if !(self.distance > 0.0) {
            return Err(Error::invalid(format!(
                "camera distance {} must be positive",
                self.distance
            )));
        }
        if !(self.elevation.abs() < 90.0) {
            return Err(Error::invalid(format!(
                "elevation {} outside (-90, 90)",
                self.elevation
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        Ok(())
    }

    pub fn look_at(&self) -> Vec3 {
        Vec3::from(self.look_at)
    }

    /// Unit vector from the look-at point towards the camera.
    pub fn back(&self) -> Vec3 {
        let (az, el) = (self.azimuth.to_radians(), self.elevation.to_radians());
        Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos())
    }

    pub fn position(&self) -> Vec3 {
        self.look_at() + self.back() * self.distance
    }

    pub fn forward(&self) -> Vec3 {
        -self.back()
    }

    /// Rows are the camera x, y, z axes expressed in world coordinates.
    pub fn rotation(&self) -> Mat3 {
        let back = self.back();
        let right = Vec3::y().cross(&back).normalize();
        let up = back.cross(&right);
        Mat3::from_rows(&[right.transpose(), up.transpose(), back.transpose()])
    }

    pub fn view_matrix(&self) -> Matrix4<f64> {
        let r = self.rotation();
        let t = -(r * self.position());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        m
    }

    /// OpenGL-style clip-space projection.
    pub fn projection_matrix(&self) -> Matrix4<f64> {
        let f = 1.0 / (self.fovy.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let (n, fa) = (NEAR_PLANE, FAR_PLANE);
        let mut m = Matrix4::zeros();
        m[(0, 0)] = f / aspect;
        m[(1, 1)] = f;
        m[(2, 2)] = (fa + n) / (n - fa);
        m[(2, 3)] = 2.0 * fa * n / (n - fa);
        m[(3, 2)] = -1.0;
        m
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.height as f64 * 0.5) / (self.fovy.to_radians() * 0.5).tan()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * (p - self.position())
    }

    /// Eye depth of a world point (positive in front of the camera).
    pub fn eye_depth(&self, p: &Vec3) -> f64 {
        self.back().dot(&(self.position() - p))
    }

    /// Pixel coordinates and eye depth, or `None` if in front of the near plane.
    pub fn project(&self, p: &Vec3) -> Option<(Vector2<f64>, f64)> {
        Projector::new(self).project(p)
    }

    /// World-space ray through a (continuous) pixel position.
    pub fn pixel_ray(&self, px: f64, py: f64) -> (Vec3, Vec3) {
        let f = self.focal();
        let xc = (px - self.width as f64 * 0.5) / f;
        let yc = -(py - self.height as f64 * 0.5) / f;
        let dir = self.rotation().transpose() * Vec3::new(xc, yc, -1.0);
        (self.position(), dir.normalize())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Cached camera quantities for projecting many points.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    pub rotation: Mat3,
    pub position: Vec3,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Projector {
    pub fn new(cam: &Camera) -> Self {
        Self {
            rotation: cam.rotation(),
            position: cam.position(),
            focal: cam.focal(),
            cx: cam.width as f64 * 0.5,
            cy: cam.height as f64 * 0.5,
        }
    }

    pub fn depth(&self, p: &Vec3) -> f64 {
        -(self.rotation.row(2) * (p - self.position))[0]
    }

    pub fn project(&self, p: &Vec3) -> Option<(Vector2<f64>, f64)> {
        let c = self.rotation * (p - self.position);
        let z = -c.z;
        if !(z > NEAR_PLANE) {
            return None;
        }
        Some((
            Vector2::new(
                self.cx + self.focal * c.x / z,
                self.cy - self.focal * c.y / z,
            ),
            z,
        ))
    }

    /// Jacobian of the pixel position with respect to the world point.
    pub fn project_jacobian(&self, p: &Vec3) -> Matrix2x3<f64> {
        let c = self.rotation * (p - self.position);
        let z = -c.z;
        let f = self.focal;
        // u = cx + f x / z, v = cy - f y / z with z = -c.z
        let dc = Matrix2x3::new(
            f / z,
            0.0,
            f * c.x / (z * z),
            0.0,
            -f / z,
            -f * c.y / (z * z),
        );
        dc * self.rotation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRanges {
    pub elevation: [f64; 2],
    pub azimuth: [f64; 2],
    pub fovy: [f64; 2],
    pub distance: [f64; 2],
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self {
            elevation: [-20.0, 45.0],
            azimuth: [-180.0, 180.0],
            fovy: [30.0, 45.0],
            distance: [2.5, 4.0],
        }
    }
}

impl CameraRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("elevation", self.elevation),
            ("azimuth", self.azimuth),
            ("fovy", self.fovy),
            ("distance", self.distance),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::invalid(format!(
                    "{name} range [{}, {}] is invalid",
                    r[0], r[1]
                )));
            }
        }
        if !(self.fovy[0] > 0.0 && self.fovy[1] < 180.0) {
            return Err(Error::invalid("fovy range must lie inside (0, 180)"));
        }
        if !(self.distance[0] > 0.0) {
            return Err(Error::invalid("distance range must be positive"));
        }
        if !(self.elevation[0] > -90.0 && self.elevation[1] < 90.0) {
            return Err(Error::invalid("elevation range must lie inside (-90, 90)"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

/// Draws elevation, azimuth, fovy and distance in that order.
pub fn sample_camera(
    ranges: &CameraRanges,
    rng: &mut impl Rng,
    look_at: Vec3,
    size: (usize, usize),
) -> Result<Camera> {
    ranges.validate()?;
    let elevation = uniform(rng, ranges.elevation);
    let azimuth = uniform(rng, ranges.azimuth);
    let fovy = uniform(rng, ranges.fovy);
    let distance = uniform(rng, ranges.distance);
    camera_from_spherical(azimuth, elevation, distance, fovy, look_at, size)
}
