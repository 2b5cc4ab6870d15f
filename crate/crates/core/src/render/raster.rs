//! Deterministic z-buffer rasterization into a G-buffer.

use std::borrow::Cow;

use nalgebra::Vector2;
use rayon::prelude::*;

use super::camera::{Camera, Projector};
use super::image::RasterImage;
use crate::tetra::mesh::{vertex_normals, TriMesh};
use crate::Vec3;

const TILE_ROWS: usize = 16;

/// Face ids, barycentrics and depths for one band of rows.
type Tile = (Vec<Option<u32>>, Vec<[f64; 3]>, Vec<f64>);

/// Per-pixel surface attributes of the nearest visible face.
#[derive(Debug, Clone)]
pub struct GBuffer {
    pub camera: Camera,
    pub width: usize,
    pub height: usize,
    pub face: Vec<Option<u32>>,
    /// Perspective-correct barycentrics of the pixel centre.
    pub bary: Vec<[f64; 3]>,
    /// Eye-space depth; 0 on background.
    pub depth: Vec<f64>,
    /// Interpolated world-space unit normal; zero on background.
    pub normal: Vec<Vec3>,
    pub uv: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy)]
struct ScreenTri {
    p: [Vector2<f64>; 3],
    z: [f64; 3],
    area: f64,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Pixel index range `[lo, hi]` whose centres lie within `[a, b]`.
fn pixel_span(a: f64, b: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (a - 0.5).ceil().max(0.0);
    let hi = (b - 0.5).floor().min(n as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

fn setup(mesh: &TriMesh, camera: &Camera) -> Vec<Option<ScreenTri>> {
    let pr = Projector::new(camera);
    let proj: Vec<Option<(Vector2<f64>, f64)>> =
        mesh.positions.par_iter().map(|p| pr.project(p)).collect();
    mesh.faces
        .par_iter()
        .map(|f| {
            let a = proj[f[0] as usize]?;
            let b = proj[f[1] as usize]?;
            let c = proj[f[2] as usize]?;
            let p = [a.0, b.0, c.0];
            let area = edge(&p[0], &p[1], &p[2]);
            if area == 0.0 || !area.is_finite() {
                return None;
            }
            let xs = [p[0].x, p[1].x, p[2].x];
            let ys = [p[0].y, p[1].y, p[2].y];
            let (x0, x1) = pixel_span(
                xs.iter().copied().fold(f64::INFINITY, f64::min),
                xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                camera.width,
            )?;
            let (y0, y1) = pixel_span(
                ys.iter().copied().fold(f64::INFINITY, f64::min),
                ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                camera.height,
            )?;
            Some(ScreenTri {
                p,
                z: [a.1, b.1, c.1],
                area,
                x0,
                x1,
                y0,
                y1,
            })
        })
        .collect()
}

/// Nearest face per pixel centre; equal depths keep the lower face id.
/// Faces with any vertex in front of the near plane are skipped.
pub fn rasterize(mesh: &TriMesh, camera: &Camera) -> GBuffer {
    let (w, h) = (camera.width, camera.height);
    let tris = setup(mesh, camera);
    let n_tiles = h.div_ceil(TILE_ROWS);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); n_tiles];
    for (f, t) in tris.iter().enumerate() {
        if let Some(t) = t {
            for bin in bins
                .iter_mut()
                .take(t.y1 / TILE_ROWS + 1)
                .skip(t.y0 / TILE_ROWS)
            {
                bin.push(f as u32);
            }
        }
    }
    let tiles: Vec<Tile> = bins
        .par_iter()
        .enumerate()
        .map(|(ti, bin)| {
            let r0 = ti * TILE_ROWS;
            let r1 = (r0 + TILE_ROWS).min(h);
            let n = (r1 - r0) * w;
            let mut face = vec![None; n];
            let mut bary = vec![[0.0; 3]; n];
            let mut depth = vec![f64::INFINITY; n];
            for &f in bin {
                let t = tris[f as usize].as_ref().expect("binned face");
                for y in t.y0.max(r0)..=t.y1.min(r1 - 1) {
                    for x in t.x0..=t.x1 {
                        let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                        let l = [
                            edge(&t.p[1], &t.p[2], &p) / t.area,
                            edge(&t.p[2], &t.p[0], &p) / t.area,
                            edge(&t.p[0], &t.p[1], &p) / t.area,
                        ];
                        if l.iter().any(|v| *v < 0.0) {
                            continue;
                        }
                        let q = [l[0] / t.z[0], l[1] / t.z[1], l[2] / t.z[2]];
                        let s = q[0] + q[1] + q[2];
                        let b = [q[0] / s, q[1] / s, q[2] / s];
                        let d = b[0] * t.z[0] + b[1] * t.z[1] + b[2] * t.z[2];
                        let i = (y - r0) * w + x;
                        if d < depth[i] {
                            depth[i] = d;
                            face[i] = Some(f);
                            bary[i] = b;
                        }
                    }
                }
            }
            (face, bary, depth)
        })
        .collect();
    let mut face = Vec::with_capacity(w * h);
    let mut bary = Vec::with_capacity(w * h);
    for (f, b, _) in tiles {
        face.extend(f);
        bary.extend(b);
    }
    let mut gb = GBuffer {
        camera: *camera,
        width: w,
        height: h,
        face,
        bary,
        depth: vec![0.0; w * h],
        normal: vec![Vec3::zeros(); w * h],
        uv: vec![[0.0; 2]; w * h],
    };
    gb.interpolate(mesh);
    gb
}

impl GBuffer {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn mask(&self) -> Vec<bool> {
        self.face.iter().map(|f| f.is_some()).collect()
    }

    pub fn covered_count(&self) -> usize {
        self.face.iter().filter(|f| f.is_some()).count()
    }

    /// Recomputes depth, normal and UV from `mesh` while keeping the face
    /// assignment and barycentrics fixed. Used to replay a render after a
    /// small parameter change.
    pub fn reinterpolate(&self, mesh: &TriMesh) -> GBuffer {
        let mut out = self.clone();
        out.interpolate(mesh);
        out
    }

    fn interpolate(&mut self, mesh: &TriMesh) {
        let normals = shading_normals(mesh);
        let pr = Projector::new(&self.camera);
        let uvs = mesh
            .uvs
            .as_ref()
            .filter(|u| u.len() == mesh.positions.len());
        for i in 0..self.face.len() {
            let Some(f) = self.face[i] else {
                self.depth[i] = 0.0;
                self.normal[i] = Vec3::zeros();
                self.uv[i] = [0.0; 2];
                continue;
            };
            let vs = mesh.faces[f as usize];
            let b = self.bary[i];
            let mut d = 0.0;
            let mut n = Vec3::zeros();
            let mut uv = [0.0; 2];
            for k in 0..3 {
                let v = vs[k] as usize;
                d += b[k] * pr.depth(&mesh.positions[v]);
                n += normals[v] * b[k];
                if let Some(u) = uvs {
                    uv[0] += b[k] * u[v][0];
                    uv[1] += b[k] * u[v][1];
                }
            }
            self.depth[i] = d;
            let len = n.norm();
            self.normal[i] = if len > 0.0 { n / len } else { Vec3::zeros() };
            self.uv[i] = uv;
        }
    }
}

/// The mesh's stored vertex normals, or area-weighted ones if absent.
pub(crate) fn shading_normals(mesh: &TriMesh) -> Cow<'_, [Vec3]> {
    match &mesh.vertex_normals {
        Some(n) if n.len() == mesh.positions.len() => Cow::Borrowed(n.as_slice()),
        _ => Cow::Owned(vertex_normals(&mesh.positions, &mesh.faces).0),
    }
}

/// Camera-space normals, zero on background.
pub fn shade_normal(gb: &GBuffer) -> RasterImage {
    let r = gb.camera.rotation();
    let mut img = RasterImage::new(gb.width, gb.height, 3);
    for i in 0..gb.pixel_count() {
        if gb.face[i].is_some() {
            let n = r * gb.normal[i];
            img.pixel_mut(i).copy_from_slice(n.as_slice());
        }
    }
    img
}

/// Eye depth in world units, zero on background.
pub fn shade_depth(gb: &GBuffer) -> RasterImage {
    RasterImage::from_data(gb.width, gb.height, 1, gb.depth.clone()).expect("gbuffer shape")
}

pub fn shade_mask(gb: &GBuffer) -> RasterImage {
    RasterImage::from_mask(gb.width, gb.height, &gb.mask())
}
