//! Marching Tetrahedra over a deformable tet grid, with the vertex Jacobian
//! needed to pull surface gradients back onto `(sdf, deform)`.

use std::collections::HashMap;

use super::grid::{DmtetParams, TetGrid};
use super::mesh::{compute_vertex_normals, TriMesh};
use crate::{Result, Vec3};

/// Faces with area below this times the squared bounds diagonal are dropped.
pub const DEGENERATE_AREA_FACTOR: f64 = 1e-12;

/// Surface mesh plus, for each surface vertex, the grid edge it sits on.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedSurface {
    pub mesh: TriMesh,
    /// `(a, b)` grid vertex indices with `a < b`; the vertex lies at
    /// `x_a + t (x_b - x_a)` with `t = s_a / (s_a - s_b)`.
    pub vertex_edges: Vec<(u32, u32)>,
}

#[inline]
fn is_inside(s: f64) -> bool {
    s < 0.0
}

/// Extracts the zero level set of `params.sdf` on the deformed grid.
///
/// An sdf value of exactly zero counts as outside. All-inside or all-outside
/// fields produce an empty mesh.
pub fn marching_tetrahedra(grid: &TetGrid, params: &DmtetParams) -> Result<ExtractedSurface> {
    params.check(grid)?;
    let positions = params.positions(grid);
    let min_area = DEGENERATE_AREA_FACTOR * grid.bounds.scale().powi(2);
    Ok(extract(&positions, &grid.tets, &params.sdf, min_area))
}

/// Extraction on an arbitrary tet set.
pub fn extract(
    positions: &[Vec3],
    tets: &[[u32; 4]],
    sdf: &[f64],
    min_area: f64,
) -> ExtractedSurface {
    let mut vertex_of_edge: HashMap<(u32, u32), u32> = HashMap::new();
    let mut vertex_edges: Vec<(u32, u32)> = Vec::new();
    let mut verts: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    let mut vertex =
        |a: u32, b: u32, verts: &mut Vec<Vec3>, vertex_edges: &mut Vec<(u32, u32)>| -> u32 {
            let key = (a.min(b), a.max(b));
            *vertex_of_edge.entry(key).or_insert_with(|| {
                let (sa, sb) = (sdf[key.0 as usize], sdf[key.1 as usize]);
                let t = sa / (sa - sb);
                let xa = positions[key.0 as usize];
                let xb = positions[key.1 as usize];
                verts.push(xa + (xb - xa) * t);
                vertex_edges.push(key);
                (verts.len() - 1) as u32
            })
        };

    for tet in tets {
        let mut inside = [0u32; 4];
        let mut outside = [0u32; 4];
        let (mut ni, mut no) = (0, 0);
        for &v in tet {
            if is_inside(sdf[v as usize]) {
                inside[ni] = v;
                ni += 1;
            } else {
                outside[no] = v;
                no += 1;
            }
        }
        if ni == 0 || no == 0 {
            continue;
        }
        let centroid =
            |vs: &[u32]| vs.iter().map(|&v| positions[v as usize]).sum::<Vec3>() / vs.len() as f64;
        let outward = centroid(&outside[..no]) - centroid(&inside[..ni]);
        match ni {
            1 | 3 => {
                let (apex, base): (u32, &[u32]) = if ni == 1 {
                    (inside[0], &outside[..3])
                } else {
                    (outside[0], &inside[..3])
                };
                let mut tri = [
                    vertex(apex, base[0], &mut verts, &mut vertex_edges),
                    vertex(apex, base[1], &mut verts, &mut vertex_edges),
                    vertex(apex, base[2], &mut verts, &mut vertex_edges),
                ];
                let p = tri.map(|i| verts[i as usize]);
                if (p[1] - p[0]).cross(&(p[2] - p[0])).dot(&outward) < 0.0 {
                    tri.swap(1, 2);
                }
                faces.push(tri);
            }
            _ => {
                let (a, b) = (inside[0], inside[1]);
                let (c, d) = (outside[0], outside[1]);
                let ac = vertex(a, c, &mut verts, &mut vertex_edges);
                let ad = vertex(a, d, &mut verts, &mut vertex_edges);
                let bd = vertex(b, d, &mut verts, &mut vertex_edges);
                let bc = vertex(b, c, &mut verts, &mut vertex_edges);
                let q = [ac, ad, bd, bc].map(|i| verts[i as usize]);
                let n = (q[1] - q[0]).cross(&(q[2] - q[0])) + (q[2] - q[0]).cross(&(q[3] - q[0]));
                if n.dot(&outward) >= 0.0 {
                    faces.push([ac, ad, bd]);
                    faces.push([ac, bd, bc]);
                } else {
                    faces.push([ac, bd, ad]);
                    faces.push([ac, bc, bd]);
                }
            }
        }
    }

    let mut mesh = TriMesh::new(verts, faces);
    let before = mesh.positions.len();
    let keep: Vec<bool> = (0..mesh.faces.len())
        .map(|f| mesh.face_area(f) >= min_area)
        .collect();
    if keep.iter().any(|k| !k) {
        mesh.faces = mesh
            .faces
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(f, _)| *f)
            .collect();
    }
    let remap = mesh.compact();
    if mesh.positions.len() != before {
        vertex_edges = vertex_edges
            .iter()
            .zip(&remap)
            .filter(|(_, r)| r.is_some())
            .map(|(e, _)| *e)
            .collect();
    }
    ExtractedSurface {
        mesh: compute_vertex_normals(&mesh),
        vertex_edges,
    }
}

/// Gradients on the grid parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub sdf: Vec<f64>,
    pub deform: Vec<Vec3>,
}

impl ParamGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            sdf: vec![0.0; n],
            deform: vec![Vec3::zeros(); n],
        }
    }

    pub fn add_assign(&mut self, other: &ParamGradients, scale: f64) {
        for (a, b) in self.sdf.iter_mut().zip(&other.sdf) {
            *a += scale * b;
        }
        for (a, b) in self.deform.iter_mut().zip(&other.deform) {
            *a += b * scale;
        }
    }
}

/// Chain rule through the linear zero-crossing placement.
pub fn surface_backward(
    grid: &TetGrid,
    params: &DmtetParams,
    surface: &ExtractedSurface,
    grad_positions: &[Vec3],
) -> ParamGradients {
    let mut out = ParamGradients::zeros(grid.vertices.len());
    for (&(a, b), g) in surface.vertex_edges.iter().zip(grad_positions) {
        let (a, b) = (a as usize, b as usize);
        let (sa, sb) = (params.sdf[a], params.sdf[b]);
        let denom = sa - sb;
        let t = sa / denom;
        let xa = grid.vertices[a] + params.deform[a];
        let xb = grid.vertices[b] + params.deform[b];
        let e = xb - xa;
        let ge = g.dot(&e);
        out.sdf[a] += ge * (-sb / (denom * denom));
        out.sdf[b] += ge * (sa / (denom * denom));
        out.deform[a] += g * (1.0 - t);
        out.deform[b] += g * t;
    }
    out
}
