//! Evaluation metrics: Chamfer distance, PSNR and mask IoU.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::render::RasterImage;
use crate::tetra::mesh::TriMesh;
use crate::tetra::octree::build_octree;
use crate::{Error, Result, Vec3};

pub const CHAMFER_SEED: u64 = 0x5eed_c4a3;
pub const PSNR_CAP: f64 = 99.0;

/// Area-weighted stratified surface samples with a fixed seed.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::invalid("cannot sample an empty mesh"));
    }
    let mut cum = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cum.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::invalid("mesh has zero surface area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|k| {
            let u = (k as f64 + rng.random::<f64>()) / n as f64 * total;
            let f = cum.partition_point(|c| *c < u).min(cum.len() - 1);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let [a, b, c] = mesh.triangle(f);
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

fn mean_distance(points: &[Vec3], mesh: &TriMesh) -> Result<f64> {
    let tree = build_octree(mesh, 8)?;
    Ok(points
        .iter()
        .map(|p| tree.closest_point(mesh, p).distance)
        .sum::<f64>()
        / points.len() as f64)
}

/// Symmetric mean nearest-surface distance using `samples` points per mesh.
pub fn chamfer_distance(a: &TriMesh, b: &TriMesh, samples: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid(
            "chamfer distance needs two non-empty meshes",
        ));
    }
    if samples == 0 {
        return Err(Error::invalid("chamfer distance needs at least one sample"));
    }
    let sa = sample_surface(a, samples, CHAMFER_SEED)?;
    let sb = sample_surface(b, samples, CHAMFER_SEED)?;
    Ok(0.5 * (mean_distance(&sa, b)? + mean_distance(&sb, a)?))
}

/// `10·log10(1/MSE)` over masked pixels (all channels), capped at 99 dB.
pub fn psnr(a: &RasterImage, b: &RasterImage, mask: Option<&[bool]>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid("psnr needs images of equal shape"));
    }
    if mask.is_some_and(|m| m.len() != a.pixel_count()) {
        return Err(Error::invalid("psnr mask does not match the images"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.pixel_count() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for (x, y) in a.pixel(i).iter().zip(b.pixel(i)) {
            sum += (x - y).powi(2);
        }
        n += a.channels;
    }
    if n == 0 {
        return Err(Error::invalid("psnr mask is empty"));
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Intersection over union; two empty masks count as identical.
pub fn mask_iou(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("masks differ in size"));
    }
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tetra::mesh::{closest_point_on_triangle, icosphere};

    #[test]
    fn chamfer_identity_and_symmetry() {
        let a = icosphere(1.0, 2);
        assert!(chamfer_distance(&a, &a, 2000).unwrap() < 1e-6);
        let b = icosphere(1.1, 3);
        assert_eq!(
            chamfer_distance(&a, &b, 1500).unwrap(),
            chamfer_distance(&b, &a, 1500).unwrap()
        );
        assert!(chamfer_distance(&a, &TriMesh::default(), 10).is_err());
    }

    #[test]
    fn concentric_spheres() {
        let a = icosphere(1.0, 4);
        let b = icosphere(1.1, 4);
        let d = chamfer_distance(&a, &b, 4000).unwrap();
        assert!((d - 0.1).abs() < 0.005, "chamfer {d}");
    }

    #[test]
    fn matches_brute_force_oracle() {
        let a = icosphere(0.8, 1);
        let b = icosphere(1.0, 1).transformed(|p| p + Vec3::new(0.1, 0.0, -0.05));
        let brute = |pts: &[Vec3], m: &TriMesh| {
            pts.iter()
                .map(|p| {
                    (0..m.faces.len())
                        .map(|f| {
                            let [x, y, z] = m.triangle(f);
                            (closest_point_on_triangle(p, &x, &y, &z).0 - p).norm()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / pts.len() as f64
        };
        let sa = sample_surface(&a, 300, CHAMFER_SEED).unwrap();
        let sb = sample_surface(&b, 300, CHAMFER_SEED).unwrap();
        let oracle = 0.5 * (brute(&sa, &b) + brute(&sb, &a));
        assert!((chamfer_distance(&a, &b, 300).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn psnr_cases() {
        let a = RasterImage::filled(4, 4, 3, 0.5);
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
        let mut c = a.clone();
        let mask: Vec<bool> = (0..16).map(|i| i < 8).collect();
        for i in 0..16 {
            let d = if i < 8 { 0.05 } else { 0.3 };
            c.pixel_mut(i).iter_mut().for_each(|v| *v += d);
        }
        let by_hand = 10.0 * (1.0 / (0.05f64 * 0.05)).log10();
        assert!((psnr(&a, &c, Some(&mask)).unwrap() - by_hand).abs() < 1e-9);
        assert!(psnr(&a, &c, Some(&[false; 16])).is_err());
    }

    #[test]
    fn iou_cases() {
        assert_eq!(mask_iou(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(mask_iou(&[true, true], &[true, false]).unwrap(), 0.5);
    }
}
