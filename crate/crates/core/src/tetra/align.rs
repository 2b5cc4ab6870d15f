//! Similarity alignment of facial landmarks onto a mesh.

use super::mesh::TriMesh;
use super::octree::build_octree;
use crate::render::Camera;
use crate::{Error, Mat3, Result, Vec3};

/// `x ↦ scale · rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimTransform {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl SimTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    /// ‖RᵀR − I‖ (max entry).
    pub fn orthogonality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity()).amax()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<Vec3>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!(
                "landmark {i} has non-finite coordinates"
            )));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &SimTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
        }
    }

    /// Whitespace-separated `x y z` per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("landmark line {}: {e}", n + 1)))?;
            if vals.len() != 3 {
                return Err(Error::invalid(format!(
                    "landmark line {}: expected 3 values",
                    n + 1
                )));
            }
            points.push(Vec3::new(vals[0], vals[1], vals[2]));
        }
        Self::new(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityFit {
    pub transform: SimTransform,
    /// Root-mean-square distance between transformed source and target.
    pub rms_residual: f64,
}

/// Least-squares similarity mapping `src` onto `dst` via the SVD of the
/// cross-covariance, with a reflection guard.
pub fn estimate_similarity_transform(
    src: &LandmarkSet,
    dst: &LandmarkSet,
) -> Result<SimilarityFit> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::invalid(format!(
            "point counts differ: {} source vs {} target",
            n,
            dst.len()
        )));
    }
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 point pairs, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s: Vec3 = src.points.iter().sum::<Vec3>() * inv_n;
    let mu_d: Vec3 = dst.points.iter().sum::<Vec3>() * inv_n;
    let mut cov = Mat3::zeros();
    let mut src_cov = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.points.iter().zip(&dst.points) {
        let a = s - mu_s;
        let b = d - mu_d;
        cov += b * a.transpose();
        src_cov += a * a.transpose();
        var_s += a.norm_squared();
    }
    cov *= inv_n;
    src_cov *= inv_n;
    var_s *= inv_n;

    let mut ev: Vec<f64> = src_cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if var_s <= 0.0 || ev[1] <= 1e-12 * ev[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(
            "source points are coincident or collinear".into(),
        ));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut s = Mat3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * s[(i, i)]).sum();
    let scale = trace / var_s;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate(
            "target points collapse to a point".into(),
        ));
    }
    let translation = mu_d - rotation * mu_s * scale;
    let transform = SimTransform {
        scale,
        rotation,
        translation,
    };
    let rms_residual = (src
        .points
        .iter()
        .zip(&dst.points)
        .map(|(s, d)| (transform.apply(s) - d).norm_squared())
        .sum::<f64>()
        * inv_n)
        .sqrt();
    Ok(SimilarityFit {
        transform,
        rms_residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub landmarks: LandmarkSet,
    pub targets: Vec<Vec3>,
    pub fit: SimilarityFit,
}

/// Casts a ray from the camera centre through each keypoint, takes the
/// first mesh hit as its target and applies the best similarity transform
/// from source keypoints to targets to every landmark.
pub fn align_landmarks_to_mesh(
    landmarks: &LandmarkSet,
    keypoint_indices: &[usize],
    camera: &Camera,
    mesh: &TriMesh,
) -> Result<Alignment> {
    if let Some(&k) = keypoint_indices.iter().find(|&&k| k >= landmarks.len()) {
        return Err(Error::invalid(format!(
            "keypoint index {k} out of range for {} landmarks",
            landmarks.len()
        )));
    }
    let octree = build_octree(mesh, 8)?;
    let eye = camera.position();
    let mut targets = Vec::with_capacity(keypoint_indices.len());
    for &k in keypoint_indices {
        let d = landmarks.points[k] - eye;
        let len = d.norm();
        if len == 0.0 {
            return Err(Error::AlignmentFailure { index: k });
        }
        let hit = octree
            .ray_intersect(mesh, &eye, &(d / len))
            .ok_or(Error::AlignmentFailure { index: k })?;
        targets.push(hit.point);
    }
    let src = LandmarkSet {
        points: keypoint_indices
            .iter()
            .map(|&k| landmarks.points[k])
            .collect(),
    };
    let fit = estimate_similarity_transform(
        &src,
        &LandmarkSet {
            points: targets.clone(),
        },
    )?;
    Ok(Alignment {
        landmarks: landmarks.transformed(&fit.transform),
        targets,
        fit,
    })
}
