//! Conditioning signals handed to guidance providers and the identity
//! vector file format.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::canny::{canny, DEFAULT_HIGH, DEFAULT_LOW};
use crate::render::{project_landmarks, rasterize, Camera, RasterImage};
use crate::tetra::{LandmarkSet, TriMesh};
use crate::{Error, Result};

pub const IDENTITY_MAGIC: &[u8; 4] = b"FID0";
pub const DEFAULT_IDENTITY_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditionBundle {
    /// Opaque text tag; providers may ignore it.
    pub text_tag: String,
    pub identity: Vec<f64>,
    pub landmark_image: Option<RasterImage>,
    /// Set when no landmarks were supplied and the landmark image is blank.
    pub landmarks_missing: bool,
    pub normal_image: Option<RasterImage>,
    pub canny_image: Option<RasterImage>,
    pub depth_image: Option<RasterImage>,
}

impl ConditionBundle {
    pub fn with_normal(mut self, normal: RasterImage) -> Self {
        self.normal_image = Some(normal);
        self
    }

    /// Checks every attached image against the working resolution.
    pub fn check_resolution(&self, width: usize, height: usize) -> Result<()> {
        for (name, img) in [
            ("landmark", &self.landmark_image),
            ("normal", &self.normal_image),
            ("canny", &self.canny_image),
            ("depth", &self.depth_image),
        ] {
            if let Some(img) = img {
                if img.width != width || img.height != height {
                    return Err(Error::invalid(format!(
                        "{name} image is {}x{}, working resolution is {width}x{height}",
                        img.width, img.height
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-run conditioning inputs; produces a bundle per camera.
#[derive(Debug, Clone)]
pub struct ConditionBuilder {
    pub text_tag: String,
    pub identity: Vec<f64>,
    pub landmarks: Option<LandmarkSet>,
    /// Canny edges of the reference image, computed once.
    pub canny_image: Option<RasterImage>,
}

impl ConditionBuilder {
    pub fn new(
        reference_image: Option<&RasterImage>,
        identity: Vec<f64>,
        landmarks: Option<LandmarkSet>,
        text_tag: impl Into<String>,
    ) -> Self {
        Self {
            text_tag: text_tag.into(),
            identity,
            landmarks,
            canny_image: reference_image.map(|img| canny(img, DEFAULT_LOW, DEFAULT_HIGH)),
        }
    }

    /// Landmarks are occlusion-tested against `mesh` when it is given.
    pub fn bundle(&self, camera: &Camera, mesh: Option<&TriMesh>) -> ConditionBundle {
        let (landmark_image, landmarks_missing) = match &self.landmarks {
            Some(l) if !l.is_empty() => {
                let gb = mesh.map(|m| rasterize(m, camera));
                (project_landmarks(l, camera, gb.as_ref()), false)
            }
            _ => (RasterImage::new(camera.width, camera.height, 1), true),
        };
        ConditionBundle {
            text_tag: self.text_tag.clone(),
            identity: self.identity.clone(),
            landmark_image: Some(landmark_image),
            landmarks_missing,
            normal_image: None,
            canny_image: self.canny_image.clone(),
            depth_image: None,
        }
    }
}

pub fn build_condition_bundle(
    reference_image: Option<&RasterImage>,
    identity: &[f64],
    landmarks: Option<&LandmarkSet>,
    camera: &Camera,
    mesh: Option<&TriMesh>,
    text_tag: &str,
) -> ConditionBundle {
    ConditionBuilder::new(
        reference_image,
        identity.to_vec(),
        landmarks.cloned(),
        text_tag,
    )
    .bundle(camera, mesh)
}

pub fn write_identity_to(identity: &[f64], w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(IDENTITY_MAGIC)?;
    w.write_u32::<LittleEndian>(identity.len() as u32)?;
    for v in identity {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    Ok(())
}

pub fn read_identity_from(r: &mut impl Read) -> std::result::Result<Vec<f64>, String> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| e.to_string())?;
    if &magic != IDENTITY_MAGIC {
        return Err(format!("bad magic {magic:?}"));
    }
    let n = r.read_u32::<LittleEndian>().map_err(|e| e.to_string())? as usize;
    if n > 1 << 20 {
        return Err(format!("identity length {n} is implausible"));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let v = r
            .read_f32::<LittleEndian>()
            .map_err(|e| format!("value {i}: {e}"))?;
        if !v.is_finite() {
            return Err(format!("value {i} is not finite"));
        }
        out.push(v as f64);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| e.to_string())? != 0 {
        return Err("trailing bytes after identity vector".into());
    }
    Ok(out)
}

pub fn write_identity(identity: &[f64], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_identity_to(identity, &mut f).map_err(|e| Error::io(path, e))
}

pub fn read_identity(path: &Path) -> Result<Vec<f64>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    read_identity_from(&mut f).map_err(|m| Error::format(path, m))
}

/// Unit-length pseudo-identity derived from a hash of the image samples
/// (quantized to 16 bits) and a seed.
pub fn derive_identity(image: &RasterImage, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update((image.width as u64).to_le_bytes());
    h.update((image.height as u64).to_le_bytes());
    h.update((image.channels as u64).to_le_bytes());
    for v in &image.data {
        h.update(((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_le_bytes());
    }
    h.update(seed.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.into_iter().map(|x| x / n).collect()
    } else {
        v
    }
}
