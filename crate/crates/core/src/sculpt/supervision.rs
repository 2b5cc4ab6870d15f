//! Reference-view geometric supervision and its on-disk layout.

use std::path::Path;

use crate::render::{rasterize, shade_depth, shade_mask, shade_normal, Camera, RasterImage};
use crate::tetra::mesh::{compute_vertex_normals, TriMesh};
use crate::{Error, Result};

pub const NORMAL_FILE: &str = "ref_normal.pfm";
pub const DEPTH_FILE: &str = "ref_depth.pfm";
pub const MASK_FILE: &str = "ref_mask.png";
pub const IMAGE_FILE: &str = "ref_image.png";
pub const CAMERA_FILE: &str = "ref_camera.toml";

/// Normal, depth and mask images for the reference camera, plus the
/// reference portrait.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSupervision {
    /// Camera-space unit normals in `[-1, 1]³`, three channels.
    pub normal_map: RasterImage,
    /// Eye depth, one channel.
    pub depth_map: RasterImage,
    /// Binary foreground mask, one channel.
    pub mask: RasterImage,
    pub camera: Camera,
    /// Linear RGB.
    pub image: RasterImage,
}

impl ReferenceSupervision {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let (w, h) = (self.camera.width, self.camera.height);
        for (name, img, channels) in [
            ("normal map", &self.normal_map, 3),
            ("depth map", &self.depth_map, 1),
            ("mask", &self.mask, 1),
            ("reference image", &self.image, 3),
        ] {
            if img.width != w || img.height != h || img.channels != channels {
                return Err(Error::invalid(format!(
                    "{name} is {}x{}x{}, expected {w}x{h}x{channels}",
                    img.width, img.height, img.channels
                )));
            }
            if !img.is_finite() {
                return Err(Error::invalid(format!("{name} contains non-finite values")));
            }
        }
        if self.mask.data.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("mask must be binary"));
        }
        if self
            .mask
            .data
            .iter()
            .zip(&self.depth_map.data)
            .any(|(&m, &d)| m == 1.0 && d <= 0.0)
        {
            return Err(Error::invalid("depth must be positive inside the mask"));
        }
        Ok(())
    }

    pub fn mask_bits(&self) -> Vec<bool> {
        self.mask.data.iter().map(|&m| m == 1.0).collect()
    }

    /// Supervision rendered from a mesh. Without an explicit image the
    /// portrait is the normal map shaded into `[0, 1]`.
    pub fn from_mesh(mesh: &TriMesh, camera: &Camera, image: Option<RasterImage>) -> Result<Self> {
        camera.validate()?;
        let mesh = if mesh.vertex_normals.is_some() {
            mesh.clone()
        } else {
            compute_vertex_normals(mesh)
        };
        let gb = rasterize(&mesh, camera);
        let normal_map = shade_normal(&gb);
        let image = match image {
            Some(img) => img,
            None => {
                let mut img = normal_map.map(|v| 0.5 * (v + 1.0));
                for i in 0..gb.pixel_count() {
                    if gb.face[i].is_none() {
                        img.pixel_mut(i).fill(0.0);
                    }
                }
                img
            }
        };
        let sup = Self {
            normal_map,
            depth_map: shade_depth(&gb),
            mask: shade_mask(&gb),
            camera: *camera,
            image,
        };
        sup.validate()?;
        Ok(sup)
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let cam_path = dir.join(CAMERA_FILE);
        let text = std::fs::read_to_string(&cam_path).map_err(|e| Error::io(&cam_path, e))?;
        let camera: Camera =
            toml::from_str(&text).map_err(|e| Error::format(&cam_path, e.to_string()))?;
        let mut image = RasterImage::read_png(&dir.join(IMAGE_FILE))?;
        if image.channels == 4 {
            image = image.truncate_channels(3);
        }
        let mut mask = RasterImage::read_png(&dir.join(MASK_FILE))?;
        if mask.channels > 1 {
            mask = mask.channel(0);
        }
        let mask = mask.map(|m| if m >= 0.5 { 1.0 } else { 0.0 });
        let sup = Self {
            normal_map: RasterImage::read_pfm(&dir.join(NORMAL_FILE))?,
            depth_map: RasterImage::read_pfm(&dir.join(DEPTH_FILE))?,
            mask,
            camera,
            image,
        };
        sup.validate()?;
        Ok(sup)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.normal_map.write_pfm(&dir.join(NORMAL_FILE))?;
        self.depth_map.write_pfm(&dir.join(DEPTH_FILE))?;
        self.mask.write_png(&dir.join(MASK_FILE))?;
        self.image.write_png(&dir.join(IMAGE_FILE))?;
        let cam_path = dir.join(CAMERA_FILE);
        let text =
            toml::to_string(&self.camera).map_err(|e| Error::format(&cam_path, e.to_string()))?;
        std::fs::write(&cam_path, text).map_err(|e| Error::io(&cam_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::camera_from_spherical;
    use crate::tetra::mesh::icosphere;
    use crate::Vec3;

    fn sample() -> ReferenceSupervision {
        let cam = camera_from_spherical(10.0, 5.0, 3.0, 40.0, Vec3::zeros(), (24, 20)).unwrap();
        ReferenceSupervision::from_mesh(&icosphere(0.6, 2), &cam, None).unwrap()
    }

    #[test]
    fn rendered_supervision_is_valid() {
        let s = sample();
        assert!(s.mask_bits().iter().any(|m| *m));
        let mut bad = s.clone();
        bad.mask.data[0] = 0.5;
        assert!(bad.validate().is_err());
        let mut bad = s.clone();
        bad.depth_map = RasterImage::new(3, 3, 1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn directory_round_trip() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        s.save_dir(dir.path()).unwrap();
        let back = ReferenceSupervision::load_dir(dir.path()).unwrap();
        assert_eq!(back.camera, s.camera);
        assert_eq!(back.mask, s.mask);
        for (a, b) in back.normal_map.data.iter().zip(&s.normal_map.data) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(back.image.max_abs_diff(&s.image) < 0.01);
    }

    #[test]
    fn missing_directory_names_the_file() {
        let err = ReferenceSupervision::load_dir(Path::new("/nonexistent/sup")).unwrap_err();
        assert!(err.to_string().contains(CAMERA_FILE));
    }
}
