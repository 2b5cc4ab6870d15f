//! UV unwrapping: normal-clustered planar charts packed onto shelves.

use std::collections::{HashMap, VecDeque};

use crate::tetra::mesh::{compute_vertex_normals, TriMesh};
use crate::{Error, Result, Vec3};

/// Faces join a chart while their normal stays within this angle of the
/// chart's seed face.
pub const CHART_ANGLE_DEG: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChartRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl ChartRect {
    pub fn overlaps(&self, o: &ChartRect) -> bool {
        self.x < o.x + o.width
            && o.x < self.x + self.width
            && self.y < o.y + o.height
            && o.y < self.y + self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UvAtlas {
    pub size: usize,
    pub gutter: usize,
    /// Texels per world unit.
    pub scale: f64,
    pub face_chart: Vec<u32>,
    /// Texel rectangles, gutters included. Row 0 is the top of the atlas.
    pub charts: Vec<ChartRect>,
}

impl UvAtlas {
    pub fn chart_count(&self) -> usize {
        self.charts.len()
    }
}

struct Chart {
    faces: Vec<usize>,
    basis: (Vec3, Vec3),
    min: [f64; 2],
    extent: [f64; 2],
}

fn face_adjacency(mesh: &TriMesh) -> Vec<Vec<usize>> {
    let mut by_edge: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (f, tri) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    let mut adj = vec![Vec::new(); mesh.faces.len()];
    for faces in by_edge.values() {
        for &a in faces {
            for &b in faces {
                if a != b {
                    adj[a].push(b);
                }
            }
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

fn grow_charts(mesh: &TriMesh) -> Vec<Vec<usize>> {
    let adj = face_adjacency(mesh);
    let normals: Vec<Vec3> = (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect();
    let cos_limit = CHART_ANGLE_DEG.to_radians().cos();
    let mut assigned = vec![false; mesh.faces.len()];
    let mut charts = Vec::new();
    for seed in 0..mesh.faces.len() {
        if assigned[seed] {
            continue;
        }
        assigned[seed] = true;
        let ns = normals[seed];
        let mut faces = vec![seed];
        let mut queue = VecDeque::from([seed]);
        while let Some(f) = queue.pop_front() {
            for &g in &adj[f] {
                if !assigned[g] && ns.norm() > 0.0 && normals[g].dot(&ns) >= cos_limit {
                    assigned[g] = true;
                    faces.push(g);
                    queue.push_back(g);
                }
            }
        }
        faces.sort_unstable();
        charts.push(faces);
    }
    charts
}

fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let k = (0..3)
        .min_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()))
        .unwrap_or(0);
    let mut e = Vec3::zeros();
    e[k] = 1.0;
    let t1 = e.cross(n).normalize();
    (t1, n.cross(&t1))
}

fn flatten(mesh: &TriMesh, faces: Vec<usize>) -> Chart {
    let mut avg: Vec3 = faces.iter().map(|&f| mesh.face_cross(f)).sum();
    if avg.norm() == 0.0 {
        avg = Vec3::z();
    }
    let n = avg.normalize();
    let basis = plane_basis(&n);
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for &f in &faces {
        for &v in &mesh.faces[f] {
            let p = mesh.positions[v as usize];
            let c = [p.dot(&basis.0), p.dot(&basis.1)];
            for k in 0..2 {
                min[k] = min[k].min(c[k]);
                max[k] = max[k].max(c[k]);
            }
        }
    }
    Chart {
        faces,
        basis,
        min,
        extent: [max[0] - min[0], max[1] - min[1]],
    }
}

fn rect_size(c: &Chart, scale: f64, gutter: usize) -> (usize, usize) {
    let w = (c.extent[0] * scale).ceil() as usize + 2 * gutter + 1;
    let h = (c.extent[1] * scale).ceil() as usize + 2 * gutter + 1;
    (w, h)
}

/// Shelf packing by decreasing height. `None` when the charts overflow.
fn pack(charts: &[Chart], scale: f64, size: usize, gutter: usize) -> Option<Vec<ChartRect>> {
    let sizes: Vec<(usize, usize)> = charts.iter().map(|c| rect_size(c, scale, gutter)).collect();
    let mut order: Vec<usize> = (0..charts.len()).collect();
    order.sort_by(|&a, &b| sizes[b].1.cmp(&sizes[a].1).then(a.cmp(&b)));
    let mut rects = vec![
        ChartRect {
            x: 0,
            y: 0,
            width: 0,
            height: 0
        };
        charts.len()
    ];
    let (mut x, mut y, mut shelf) = (0usize, 0usize, 0usize);
    for i in order {
        let (w, h) = sizes[i];
        if w > size {
            return None;
        }
        if x + w > size {
            y += shelf;
            x = 0;
            shelf = 0;
        }
        if y + h > size {
            return None;
        }
        rects[i] = ChartRect {
            x,
            y,
            width: w,
            height: h,
        };
        x += w;
        shelf = shelf.max(h);
    }
    Some(rects)
}

/// Splits `mesh` into charts and assigns per-vertex UVs. Vertices on chart
/// borders are duplicated; shading normals are carried over from the input
/// so shading stays smooth across seams.
///
/// The chart scale is the largest one (found by bisection) at which the
/// shelf packing fits. The call fails when even a vanishing scale
/// overflows, i.e. the gutters alone do not fit.
pub fn unwrap_uv(mesh: &TriMesh, atlas_size: usize, gutter: usize) -> Result<(TriMesh, UvAtlas)> {
    if mesh.is_empty() {
        return Err(Error::invalid("cannot unwrap an empty mesh"));
    }
    if atlas_size == 0 {
        return Err(Error::invalid("atlas size must be positive"));
    }
    let with_normals = if mesh
        .vertex_normals
        .as_ref()
        .is_some_and(|n| n.len() == mesh.positions.len())
    {
        mesh.clone()
    } else {
        compute_vertex_normals(mesh)
    };
    let charts: Vec<Chart> = grow_charts(mesh)
        .into_iter()
        .map(|f| flatten(mesh, f))
        .collect();
    let largest = charts
        .iter()
        .map(|c| c.extent[0].max(c.extent[1]))
        .fold(0.0, f64::max);
    let room = atlas_size as f64 - 2.0 * gutter as f64 - 1.0;
    if room < 1.0 || pack(&charts, 0.0, atlas_size, gutter).is_none() {
        return Err(Error::invalid(format!(
            "{} charts with gutter {gutter} overflow a {atlas_size}² atlas",
            charts.len()
        )));
    }
    let hi = if largest > 0.0 {
        (room - 1e-9) / largest
    } else {
        1.0
    };
    let scale = if pack(&charts, hi, atlas_size, gutter).is_some() {
        hi
    } else {
        let (mut lo, mut hi) = (0.0, hi);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if pack(&charts, mid, atlas_size, gutter).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let rects = pack(&charts, scale, atlas_size, gutter).expect("feasible scale");

    let src_normals = with_normals.vertex_normals.as_ref().expect("normals");
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = vec![[0u32; 3]; mesh.faces.len()];
    let mut face_chart = vec![0u32; mesh.faces.len()];
    let a = atlas_size as f64;
    for (ci, (chart, rect)) in charts.iter().zip(&rects).enumerate() {
        let mut local: HashMap<u32, u32> = HashMap::new();
        for &f in &chart.faces {
            face_chart[f] = ci as u32;
            for k in 0..3 {
                let v = mesh.faces[f][k];
                let id = *local.entry(v).or_insert_with(|| {
                    let p = mesh.positions[v as usize];
                    let c = [
                        p.dot(&chart.basis.0) - chart.min[0],
                        p.dot(&chart.basis.1) - chart.min[1],
                    ];
                    let x = rect.x as f64 + gutter as f64 + 0.5 + c[0] * scale;
                    let y = rect.y as f64 + gutter as f64 + 0.5 + c[1] * scale;
                    positions.push(p);
                    normals.push(src_normals[v as usize]);
                    uvs.push([x / a, 1.0 - y / a]);
                    (positions.len() - 1) as u32
                });
                faces[f][k] = id;
            }
        }
    }
    let mut out = TriMesh::new(positions, faces);
    out.vertex_normals = Some(normals);
    out.uvs = Some(uvs);
    Ok((
        out,
        UvAtlas {
            size: atlas_size,
            gutter,
            scale,
            face_chart,
            charts: rects,
        },
    ))
}
