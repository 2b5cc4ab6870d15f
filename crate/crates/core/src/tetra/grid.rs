//! Deformable tetrahedral grid and its per-vertex parameters.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::{Error, Result, Vec3};

/// Maximum displacement of a grid vertex as a fraction of the cell edge.
pub const DEFAULT_DEFORM_LIMIT: f64 = 0.45;

/// Axis-aligned box in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    /// The cube `[-half, half]³`.
    pub fn cube(half: f64) -> Self {
        Self::new(Vec3::repeat(-half), Vec3::repeat(half))
    }

    pub fn empty() -> Self {
        Self::new(Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY))
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn is_degenerate(&self) -> bool {
        let e = self.extent();
        !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) || !e.iter().all(|v| v.is_finite())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    /// Length of the box diagonal.
    pub fn scale(&self) -> f64 {
        self.extent().norm()
    }
}

/// Regular lattice of `resolution³` cubes, each split into six tetrahedra
/// sharing the cube's main diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TetGrid {
    pub resolution: usize,
    pub bounds: Aabb,
    pub vertices: Vec<Vec3>,
    pub tets: Vec<[u32; 4]>,
}

/// Corner offsets of the six diagonal tets in cube-corner bit notation
/// (bit 0 = +x, bit 1 = +y, bit 2 = +z). Each tet walks from corner 0 to
/// corner 7 along one axis permutation, which makes the split conforming
/// between neighbouring cubes.
const KUHN_TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

impl TetGrid {
    pub fn vertex_count_for(resolution: usize) -> usize {
        (resolution + 1).pow(3)
    }

    pub fn tet_count_for(resolution: usize) -> usize {
        6 * resolution.pow(3)
    }

    /// Cell edge lengths per axis.
    pub fn cell_size(&self) -> Vec3 {
        self.bounds.extent() / self.resolution as f64
    }

    /// Shortest cell edge; the deformation bound is measured against it.
    pub fn cell_edge(&self) -> f64 {
        self.cell_size().min()
    }

    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.resolution + 1;
        i + n * (j + n * k)
    }

    /// Unique undirected edges of all tets, sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut edges = Vec::with_capacity(self.tets.len() * 6);
        for t in &self.tets {
            for a in 0..4 {
                for b in (a + 1)..4 {
                    let (u, v) = (t[a].min(t[b]), t[a].max(t[b]));
                    edges.push((u, v));
                }
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_header(w, CONTAINER_KIND_GRID)?;
        w.write_u32::<LittleEndian>(self.resolution as u32)?;
        for v in self.bounds.min.iter().chain(self.bounds.max.iter()) {
            w.write_f64::<LittleEndian>(*v)?;
        }
        w.write_u64::<LittleEndian>(self.vertices.len() as u64)?;
        for v in &self.vertices {
            for c in v.iter() {
                w.write_f64::<LittleEndian>(*c)?;
            }
        }
        w.write_u64::<LittleEndian>(self.tets.len() as u64)?;
        for t in &self.tets {
            for &i in t {
                w.write_u32::<LittleEndian>(i)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        read_header(r, CONTAINER_KIND_GRID)?;
        let io = |e: std::io::Error| Error::invalid(format!("truncated grid container: {e}"));
        let resolution = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = r.read_f64::<LittleEndian>().map_err(io)?;
        }
        let nv = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        if nv != Self::vertex_count_for(resolution) {
            return Err(Error::invalid(
                "grid vertex count does not match resolution",
            ));
        }
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let x = r.read_f64::<LittleEndian>().map_err(io)?;
            let y = r.read_f64::<LittleEndian>().map_err(io)?;
            let z = r.read_f64::<LittleEndian>().map_err(io)?;
            vertices.push(Vec3::new(x, y, z));
        }
        let nt = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        if nt != Self::tet_count_for(resolution) {
            return Err(Error::invalid("grid tet count does not match resolution"));
        }
        let mut tets = Vec::with_capacity(nt);
        for _ in 0..nt {
            let mut t = [0u32; 4];
            for i in &mut t {
                *i = r.read_u32::<LittleEndian>().map_err(io)?;
                if *i as usize >= nv {
                    return Err(Error::invalid("tet index out of range"));
                }
            }
            tets.push(t);
        }
        Ok(Self {
            resolution,
            bounds: Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5])),
            vertices,
            tets,
        })
    }
}

/// Builds the canonical tetrahedral subdivision of `bounds`.
///
/// Vertices are ordered x-fastest, then y, then z. Every tet is oriented to
/// have positive signed volume.
pub fn build_tet_grid(resolution: usize, bounds: Aabb) -> Result<TetGrid> {
    if resolution < 2 {
        return Err(Error::invalid(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    if bounds.is_degenerate() {
        return Err(Error::invalid("grid bounds are degenerate"));
    }
    let n = resolution + 1;
    let step = bounds.extent() / resolution as f64;
    let mut vertices = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                vertices.push(
                    bounds.min + Vec3::new(i as f64 * step.x, j as f64 * step.y, k as f64 * step.z),
                );
            }
        }
    }
    // Snap the far faces exactly onto the box.
    for v in vertices.iter_mut() {
        for a in 0..3 {
            if (v[a] - bounds.max[a]).abs() < 1e-12 * step[a] {
                v[a] = bounds.max[a];
            }
        }
    }

    let idx = |i: usize, j: usize, k: usize| (i + n * (j + n * k)) as u32;
    let mut tets = Vec::with_capacity(6 * resolution.pow(3));
    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let corner = |b: usize| idx(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
                for pattern in KUHN_TETS {
                    let mut t = pattern.map(corner);
                    if signed_volume(&vertices, &t) < 0.0 {
                        t.swap(2, 3);
                    }
                    tets.push(t);
                }
            }
        }
    }
    Ok(TetGrid {
        resolution,
        bounds,
        vertices,
        tets,
    })
}

pub fn signed_volume(vertices: &[Vec3], t: &[u32; 4]) -> f64 {
    let p = t.map(|i| vertices[i as usize]);
    (p[1] - p[0]).cross(&(p[2] - p[0])).dot(&(p[3] - p[0])) / 6.0
}

/// Optimized geometry parameters: one signed distance and one displacement
/// per grid vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct DmtetParams {
    pub sdf: Vec<f64>,
    pub deform: Vec<Vec3>,
    /// Bound on `|deform|` as a fraction of the grid's cell edge.
    pub deform_limit: f64,
}

impl DmtetParams {
    pub fn zeros(grid: &TetGrid) -> Self {
        Self {
            sdf: vec![0.0; grid.vertices.len()],
            deform: vec![Vec3::zeros(); grid.vertices.len()],
            deform_limit: DEFAULT_DEFORM_LIMIT,
        }
    }

    /// Samples `field` at the undeformed grid vertices.
    pub fn from_sdf(grid: &TetGrid, field: impl Fn(&Vec3) -> f64 + Sync) -> Self {
        use rayon::prelude::*;
        let sdf = grid.vertices.par_iter().map(&field).collect();
        Self {
            sdf,
            deform: vec![Vec3::zeros(); grid.vertices.len()],
            deform_limit: DEFAULT_DEFORM_LIMIT,
        }
    }

    pub fn check(&self, grid: &TetGrid) -> Result<()> {
        if self.sdf.len() != grid.vertices.len() || self.deform.len() != grid.vertices.len() {
            return Err(Error::invalid(format!(
                "params sized for {} vertices, grid has {}",
                self.sdf.len(),
                grid.vertices.len()
            )));
        }
        if let Some(i) = self.sdf.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!(
                "sdf value at vertex {i} is not finite"
            )));
        }
        let limit = self.deform_limit * grid.cell_edge() * (1.0 + 1e-9);
        if let Some(i) = self.deform.iter().position(|d| d.norm() > limit) {
            return Err(Error::invalid(format!(
                "deformation at vertex {i} exceeds the limit"
            )));
        }
        Ok(())
    }

    /// Clamps every displacement back into the admissible ball.
    pub fn project_deform(&mut self, grid: &TetGrid) {
        let limit = self.deform_limit * grid.cell_edge();
        for d in self.deform.iter_mut() {
            let n = d.norm();
            if n > limit {
                *d *= limit / n;
            }
        }
    }

    /// Deformed vertex positions.
    pub fn positions(&self, grid: &TetGrid) -> Vec<Vec3> {
        grid.vertices
            .iter()
            .zip(&self.deform)
            .map(|(v, d)| v + d)
            .collect()
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_header(w, CONTAINER_KIND_PARAMS)?;
        w.write_f64::<LittleEndian>(self.deform_limit)?;
        w.write_u64::<LittleEndian>(self.sdf.len() as u64)?;
        for s in &self.sdf {
            w.write_f64::<LittleEndian>(*s)?;
        }
        for d in &self.deform {
            for c in d.iter() {
                w.write_f64::<LittleEndian>(*c)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        read_header(r, CONTAINER_KIND_PARAMS)?;
        let io = |e: std::io::Error| Error::invalid(format!("truncated params container: {e}"));
        let deform_limit = r.read_f64::<LittleEndian>().map_err(io)?;
        let n = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let mut sdf = Vec::with_capacity(n);
        for _ in 0..n {
            sdf.push(r.read_f64::<LittleEndian>().map_err(io)?);
        }
        let mut deform = Vec::with_capacity(n);
        for _ in 0..n {
            let x = r.read_f64::<LittleEndian>().map_err(io)?;
            let y = r.read_f64::<LittleEndian>().map_err(io)?;
            let z = r.read_f64::<LittleEndian>().map_err(io)?;
            deform.push(Vec3::new(x, y, z));
        }
        Ok(Self {
            sdf,
            deform,
            deform_limit,
        })
    }
}

pub const CONTAINER_MAGIC: &[u8; 4] = b"SCLP";
pub const CONTAINER_VERSION: u32 = 1;
const CONTAINER_KIND_GRID: u32 = 1;
const CONTAINER_KIND_PARAMS: u32 = 2;

fn write_header(w: &mut impl Write, kind: u32) -> std::io::Result<()> {
    w.write_all(CONTAINER_MAGIC)?;
    w.write_u32::<LittleEndian>(CONTAINER_VERSION)?;
    w.write_u32::<LittleEndian>(kind)
}

fn read_header(r: &mut impl Read, kind: u32) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::invalid(format!("missing container header: {e}")))?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::invalid("bad container magic; expected SCLP"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::invalid(e.to_string()))?;
    if version != CONTAINER_VERSION {
        return Err(Error::invalid(format!(
            "unsupported container version {version}"
        )));
    }
    let found = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::invalid(e.to_string()))?;
    if found != kind {
        return Err(Error::invalid(format!(
            "container holds record kind {found}, expected {kind}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_two_counts() {
        let g = build_tet_grid(2, Aabb::cube(0.5)).unwrap();
        assert_eq!(g.vertices.len(), 27);
        assert_eq!(g.tets.len(), 8 * 6);
    }

    #[test]
    fn resolution_one_rejected() {
        assert!(matches!(
            build_tet_grid(1, Aabb::cube(1.0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn degenerate_bounds_rejected() {
        let b = Aabb::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0));
        assert!(build_tet_grid(4, b).is_err());
    }

    #[test]
    fn tets_positive_and_fill_the_box() {
        let b = Aabb::new(Vec3::new(-1.0, -0.5, 0.0), Vec3::new(1.0, 0.5, 2.0));
        let g = build_tet_grid(3, b).unwrap();
        let mut total = 0.0;
        for t in &g.tets {
            assert!(t.iter().all(|&i| (i as usize) < g.vertices.len()));
            let v = signed_volume(&g.vertices, t);
            assert!(v > 0.0);
            total += v;
        }
        let e = b.extent();
        assert!((total - e.x * e.y * e.z).abs() < 1e-12);
    }

    #[test]
    fn split_is_conforming() {
        // In a conforming tet mesh every interior triangle is shared by exactly
        // two tets and every boundary triangle lies on the box.
        use std::collections::HashMap;
        let g = build_tet_grid(3, Aabb::cube(1.0)).unwrap();
        let mut faces: HashMap<[u32; 3], usize> = HashMap::new();
        for t in &g.tets {
            for skip in 0..4 {
                let mut f: Vec<u32> = (0..4).filter(|&i| i != skip).map(|i| t[i]).collect();
                f.sort_unstable();
                *faces.entry([f[0], f[1], f[2]]).or_default() += 1;
            }
        }
        for (f, count) in faces {
            if count == 1 {
                let p = f.map(|i| g.vertices[i as usize]);
                let on_boundary = (0..3).any(|a| {
                    p.iter().all(|q| (q[a] - 1.0).abs() < 1e-12)
                        || p.iter().all(|q| (q[a] + 1.0).abs() < 1e-12)
                });
                assert!(on_boundary, "dangling interior face {f:?}");
            } else {
                assert_eq!(count, 2);
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = build_tet_grid(4, Aabb::cube(1.0)).unwrap();
        let b = build_tet_grid(4, Aabb::cube(1.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn project_deform_enforces_limit() {
        let g = build_tet_grid(4, Aabb::cube(1.0)).unwrap();
        let mut p = DmtetParams::zeros(&g);
        p.deform[3] = Vec3::new(10.0, 0.0, 0.0);
        assert!(p.check(&g).is_err());
        p.project_deform(&g);
        p.check(&g).unwrap();
        assert!((p.deform[3].norm() - 0.45 * g.cell_edge()).abs() < 1e-12);
    }

    #[test]
    fn container_round_trip() {
        let g = build_tet_grid(2, Aabb::cube(1.0)).unwrap();
        let mut p = DmtetParams::from_sdf(&g, |v| v.norm() - 0.5);
        p.deform[1] = Vec3::new(0.01, -0.02, 0.03);
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SCLP");
        p.write_to(&mut buf).unwrap();
        let mut r = buf.as_slice();
        assert_eq!(TetGrid::read_from(&mut r).unwrap(), g);
        assert_eq!(DmtetParams::read_from(&mut r).unwrap(), p);
    }

    #[test]
    fn container_rejects_wrong_kind() {
        let g = build_tet_grid(2, Aabb::cube(1.0)).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert!(DmtetParams::read_from(&mut buf.as_slice()).is_err());
    }
}
