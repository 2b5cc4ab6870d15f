//! Soft silhouette: a sigmoid of the signed screen distance to the nearest
//! silhouette edge, with gradients with respect to vertex positions.

use std::collections::BTreeMap;

use nalgebra::Vector2;
use rayon::prelude::*;

use super::camera::{Camera, Projector};
use super::image::RasterImage;
use super::raster::rasterize;
use crate::tetra::mesh::TriMesh;
use crate::{Error, Result, Vec3};

/// Per-pixel sharpness (1 / px).
pub const DEFAULT_SHARPNESS: f64 = 2.0;
/// Pixels farther than `BAND / sharpness` from every silhouette edge take
/// the hard mask value; the sigmoid there is within 2e-8 of it.
pub const BAND: f64 = 18.0;
const TILE_ROWS: usize = 16;

#[derive(Debug, Clone, Copy)]
struct Nearest {
    edge: u32,
    u: f64,
    d: f64,
    c: Vector2<f64>,
}

#[derive(Debug, Clone)]
pub struct SoftSilhouette {
    pub width: usize,
    pub height: usize,
    pub sharpness: f64,
    pub alpha: Vec<f64>,
    pub hard: Vec<bool>,
    pub edges: Vec<[u32; 2]>,
    nearest: Vec<Option<Nearest>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mesh edges between a camera-facing and a back-facing face, plus open
/// boundary edges, sorted by vertex pair.
pub fn silhouette_edges(mesh: &TriMesh, camera: &Camera) -> Vec<[u32; 2]> {
    let eye = camera.position();
    let facing: Vec<bool> = (0..mesh.faces.len())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            mesh.face_cross(f).dot(&(eye - (a + b + c) / 3.0)) > 0.0
        })
        .collect();
    let mut map: BTreeMap<(u32, u32), (usize, bool, bool)> = BTreeMap::new();
    for (f, tri) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let e = map.entry((a.min(b), a.max(b))).or_insert((0, false, false));
            e.0 += 1;
            if facing[f] {
                e.1 = true;
            } else {
                e.2 = true;
            }
        }
    }
    map.into_iter()
        .filter(|(_, (n, front, back))| *n == 1 || (*front && *back))
        .map(|((a, b), _)| [a, b])
        .collect()
}

pub fn soft_silhouette(mesh: &TriMesh, camera: &Camera, sharpness: f64) -> Result<SoftSilhouette> {
    let hard = rasterize(mesh, camera).mask();
    let edges = silhouette_edges(mesh, camera);
    soft_silhouette_with(mesh, camera, sharpness, &hard, &edges)
}

/// Soft silhouette for a given hard mask and silhouette edge set. Holding
/// both fixed gives a function that is smooth in the vertex positions.
pub fn soft_silhouette_with(
    mesh: &TriMesh,
    camera: &Camera,
    sharpness: f64,
    hard: &[bool],
    edges: &[[u32; 2]],
) -> Result<SoftSilhouette> {
    if !(sharpness > 0.0 && sharpness.is_finite()) {
        return Err(Error::invalid(format!(
            "sharpness {sharpness} must be positive"
        )));
    }
    let (w, h) = (camera.width, camera.height);
    if hard.len() != w * h {
        return Err(Error::invalid("hard mask size does not match the camera"));
    }
    let pr = Projector::new(camera);
    let band = BAND / sharpness;
    let segs: Vec<Option<[Vector2<f64>; 2]>> = edges
        .iter()
        .map(|e| {
            let a = pr.project(&mesh.positions[e[0] as usize])?.0;
            let b = pr.project(&mesh.positions[e[1] as usize])?.0;
            Some([a, b])
        })
        .collect();
    let n_tiles = h.div_ceil(TILE_ROWS);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); n_tiles];
    for (i, s) in segs.iter().enumerate() {
        if let Some([a, b]) = s {
            let y0 = (a.y.min(b.y) - band - 0.5).ceil().max(0.0);
            let y1 = (a.y.max(b.y) + band - 0.5).floor().min(h as f64 - 1.0);
            if y0 <= y1 {
                for bin in bins
                    .iter_mut()
                    .take(y1 as usize / TILE_ROWS + 1)
                    .skip(y0 as usize / TILE_ROWS)
                {
                    bin.push(i as u32);
                }
            }
        }
    }
    let tiles: Vec<Vec<Option<Nearest>>> = bins
        .par_iter()
        .enumerate()
        .map(|(ti, bin)| {
            let r0 = ti * TILE_ROWS;
            let r1 = (r0 + TILE_ROWS).min(h);
            let mut near: Vec<Option<Nearest>> = vec![None; (r1 - r0) * w];
            for &ei in bin {
                let [a, b] = segs[ei as usize].expect("binned edge");
                let ab = b - a;
                let len2 = ab.norm_squared();
                let x0 = (a.x.min(b.x) - band - 0.5).ceil().max(0.0) as usize;
                let x1 = (a.x.max(b.x) + band - 0.5).floor().min(w as f64 - 1.0);
                if x1 < 0.0 {
                    continue;
                }
                let y0 = ((a.y.min(b.y) - band - 0.5).ceil().max(r0 as f64)) as usize;
                let y1 = (a.y.max(b.y) + band - 0.5).floor().min(r1 as f64 - 1.0);
                if y1 < y0 as f64 {
                    continue;
                }
                for y in y0..=y1 as usize {
                    for x in x0..=x1 as usize {
                        let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                        let u = if len2 > 0.0 {
                            ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
                        } else {
                            0.0
                        };
                        let c = a + ab * u;
                        let d = (p - c).norm();
                        if d > band {
                            continue;
                        }
                        let slot = &mut near[(y - r0) * w + x];
                        if slot.is_none_or(|n| d < n.d) {
                            *slot = Some(Nearest { edge: ei, u, d, c });
                        }
                    }
                }
            }
            near
        })
        .collect();
    let nearest: Vec<Option<Nearest>> = tiles.into_iter().flatten().collect();
    let alpha = nearest
        .iter()
        .zip(hard)
        .map(|(n, &m)| match n {
            Some(n) => sigmoid(sharpness * if m { n.d } else { -n.d }),
            None => {
                if m {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect();
    Ok(SoftSilhouette {
        width: w,
        height: h,
        sharpness,
        alpha,
        hard: hard.to_vec(),
        edges: edges.to_vec(),
        nearest,
    })
}

impl SoftSilhouette {
    pub fn image(&self) -> RasterImage {
        RasterImage::from_data(self.width, self.height, 1, self.alpha.clone()).expect("shape")
    }

    /// Screen distance to the nearest silhouette edge, if within the band.
    pub fn edge_distance(&self, i: usize) -> Option<f64> {
        self.nearest[i].map(|n| n.d)
    }

    /// Gradient of `Σ grad_alpha[i] · alpha[i]` with respect to vertex
    /// positions, holding the nearest-edge assignment fixed.
    pub fn backward(
        &self,
        mesh: &TriMesh,
        camera: &Camera,
        grad_alpha: &[f64],
    ) -> Result<Vec<Vec3>> {
        if grad_alpha.len() != self.alpha.len() {
            return Err(Error::invalid(format!(
                "silhouette gradient has {} entries, expected {}",
                grad_alpha.len(),
                self.alpha.len()
            )));
        }
        let mut screen = vec![Vector2::<f64>::zeros(); mesh.positions.len()];
        let mut touched = vec![false; mesh.positions.len()];
        for (i, (n, g)) in self.nearest.iter().zip(grad_alpha).enumerate() {
            let Some(n) = n else { continue };
            if *g == 0.0 || n.d <= 0.0 {
                continue;
            }
            let a = self.alpha[i];
            let sgn = if self.hard[i] { 1.0 } else { -1.0 };
            let gd = g * self.sharpness * sgn * a * (1.0 - a);
            let p = Vector2::new((i % self.width) as f64 + 0.5, (i / self.width) as f64 + 0.5);
            let dir = (p - n.c) / n.d;
            let e = self.edges[n.edge as usize];
            screen[e[0] as usize] -= dir * (gd * (1.0 - n.u));
            screen[e[1] as usize] -= dir * (gd * n.u);
            touched[e[0] as usize] = true;
            touched[e[1] as usize] = true;
        }
        let pr = Projector::new(camera);
        Ok(mesh
            .positions
            .iter()
            .enumerate()
            .map(|(v, p)| {
                if touched[v] {
                    pr.project_jacobian(p).transpose() * screen[v]
                } else {
                    Vec3::zeros()
                }
            })
            .collect())
    }
}
