//! Octree over mesh triangles for ray casting and nearest-point queries.

use super::grid::Aabb;
use super::mesh::{closest_point_on_triangle, TriMesh};
use crate::{Error, Result, Vec3};

pub const DEFAULT_MAX_DEPTH: usize = 10;

/// Rays only report hits with `t` strictly above this value.
pub const RAY_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct OctreeNode {
    pub bounds: Aabb,
    /// Index of the first of eight consecutive children, if split.
    pub first_child: Option<u32>,
    /// Triangle indices stored in a leaf.
    pub triangles: Vec<u32>,
    pub depth: usize,
}

impl OctreeNode {
    pub fn is_leaf(&self) -> bool {
        self.first_child.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct Octree {
    pub nodes: Vec<OctreeNode>,
    pub max_leaf: usize,
    pub max_depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub face: usize,
    pub point: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub distance: f64,
    pub face: usize,
    pub point: Vec3,
    pub barycentric: [f64; 3],
}

fn triangle_bounds(mesh: &TriMesh, f: usize) -> Aabb {
    Aabb::from_points(&mesh.triangle(f))
}

pub fn build_octree(mesh: &TriMesh, max_leaf: usize) -> Result<Octree> {
    build_octree_with_depth(mesh, max_leaf, DEFAULT_MAX_DEPTH)
}

pub fn build_octree_with_depth(
    mesh: &TriMesh,
    max_leaf: usize,
    max_depth: usize,
) -> Result<Octree> {
    if mesh.faces.is_empty() {
        return Err(Error::invalid("cannot build an octree over an empty mesh"));
    }
    if max_leaf == 0 {
        return Err(Error::invalid("octree leaf capacity must be positive"));
    }
    let mut root = mesh.bounds();
    let pad = 1e-6 * root.scale().max(1e-12);
    root.min -= Vec3::repeat(pad);
    root.max += Vec3::repeat(pad);

    let tri_boxes: Vec<Aabb> = (0..mesh.faces.len())
        .map(|f| triangle_bounds(mesh, f))
        .collect();
    let mut nodes = vec![OctreeNode {
        bounds: root,
        first_child: None,
        triangles: (0..mesh.faces.len() as u32).collect(),
        depth: 0,
    }];
    let mut queue = vec![0usize];
    while let Some(n) = queue.pop() {
        if nodes[n].triangles.len() <= max_leaf || nodes[n].depth >= max_depth {
            continue;
        }
        let b = nodes[n].bounds;
        let c = b.center();
        let tris = std::mem::take(&mut nodes[n].triangles);
        let first = nodes.len();
        for octant in 0..8 {
            let pick = |bit: usize, a: usize| {
                if octant & bit != 0 {
                    (c[a], b.max[a])
                } else {
                    (b.min[a], c[a])
                }
            };
            let (x0, x1) = pick(1, 0);
            let (y0, y1) = pick(2, 1);
            let (z0, z1) = pick(4, 2);
            let cb = Aabb::new(Vec3::new(x0, y0, z0), Vec3::new(x1, y1, z1));
            let child_tris = tris
                .iter()
                .copied()
                .filter(|&t| tri_boxes[t as usize].overlaps(&cb))
                .collect();
            nodes.push(OctreeNode {
                bounds: cb,
                first_child: None,
                triangles: child_tris,
                depth: nodes[n].depth + 1,
            });
        }
        nodes[n].first_child = Some(first as u32);
        for k in 0..8 {
            queue.push(first + k);
        }
    }
    Ok(Octree {
        nodes,
        max_leaf,
        max_depth,
    })
}

/// Barycentric slack so rays through shared edges and vertices are not lost
/// to round-off in every incident triangle.
const EDGE_EPS: f64 = 1e-12;

/// Möller–Trumbore intersection; returns ray parameter `t` on a hit with
/// edges included.
pub fn intersect_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

fn better(t: f64, face: usize, best: &Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((bt, bf)) => t < *bt || (t == *bt && face < *bf),
    }
}

/// Nearest hit over all triangles, ties broken by lower face index.
pub fn ray_intersect_brute_force(mesh: &TriMesh, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
    let mut best: Option<(f64, usize)> = None;
    for f in 0..mesh.faces.len() {
        if let Some(t) = intersect_triangle(origin, dir, &mesh.triangle(f)) {
            if t > RAY_EPSILON && better(t, f, &best) {
                best = Some((t, f));
            }
        }
    }
    best.map(|(t, face)| RayHit {
        t,
        face,
        point: origin + dir * t,
    })
}

/// Slab test. Returns the parametric interval of the ray inside `b`,
/// slightly inflated so boundary hits are never culled.
fn ray_box(origin: &Vec3, inv_dir: &Vec3, b: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let pad = 1e-9 * b.scale().max(1e-300);
    for a in 0..3 {
        let lo = b.min[a] - pad;
        let hi = b.max[a] + pad;
        if inv_dir[a].is_infinite() {
            if origin[a] < lo || origin[a] > hi {
                return None;
            }
            continue;
        }
        let ta = (lo - origin[a]) * inv_dir[a];
        let tb = (hi - origin[a]) * inv_dir[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    if t0 <= t1 && t1 >= 0.0 {
        Some((t0.max(0.0), t1))
    } else {
        None
    }
}

impl Octree {
    pub fn root_bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    pub fn leaves(&self) -> impl Iterator<Item = &OctreeNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Nearest intersection with `t > RAY_EPSILON`; identical to
    /// [`ray_intersect_brute_force`] including the face tie-break.
    pub fn ray_intersect(&self, mesh: &TriMesh, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<(f64, usize)> = None;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        if let Some((t0, _)) = ray_box(origin, &inv, &self.nodes[0].bounds) {
            stack.push((0, t0));
        }
        while let Some((n, t_enter)) = stack.pop() {
            if let Some((bt, _)) = best {
                if t_enter > bt {
                    continue;
                }
            }
            let node = &self.nodes[n as usize];
            match node.first_child {
                None => {
                    for &f in &node.triangles {
                        let f = f as usize;
                        if let Some(t) = intersect_triangle(origin, dir, &mesh.triangle(f)) {
                            if t > RAY_EPSILON && better(t, f, &best) {
                                best = Some((t, f));
                            }
                        }
                    }
                }
                Some(first) => {
                    let mut kids: Vec<(u32, f64)> = (0..8)
                        .filter_map(|k| {
                            let c = first + k;
                            ray_box(origin, &inv, &self.nodes[c as usize].bounds)
                                .map(|(t0, _)| (c, t0))
                        })
                        .collect();
                    // Far children first so the nearest is popped next.
                    kids.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
                    stack.extend(kids);
                }
            }
        }
        best.map(|(t, face)| RayHit {
            t,
            face,
            point: origin + dir * t,
        })
    }

    /// Closest surface point to `p`; ties resolved toward the lower face id.
    pub fn closest_point(&self, mesh: &TriMesh, p: &Vec3) -> ClosestPoint {
        let mut best = ClosestPoint {
            distance: f64::INFINITY,
            face: usize::MAX,
            point: *p,
            barycentric: [0.0; 3],
        };
        let mut best_d2 = f64::INFINITY;
        let mut stack: Vec<(u32, f64)> = vec![(0, box_distance2(&self.nodes[0].bounds, p))];
        while let Some((n, d2)) = stack.pop() {
            if d2 > best_d2 {
                continue;
            }
            let node = &self.nodes[n as usize];
            match node.first_child {
                None => {
                    for &f in &node.triangles {
                        let f = f as usize;
                        let [a, b, c] = mesh.triangle(f);
                        let (q, w) = closest_point_on_triangle(p, &a, &b, &c);
                        let e2 = (q - p).norm_squared();
                        if e2 < best_d2 || (e2 == best_d2 && f < best.face) {
                            best_d2 = e2;
                            best = ClosestPoint {
                                distance: 0.0,
                                face: f,
                                point: q,
                                barycentric: w,
                            };
                        }
                    }
                }
                Some(first) => {
                    let mut kids: Vec<(u32, f64)> = (0..8)
                        .map(|k| {
                            let c = first + k;
                            (c, box_distance2(&self.nodes[c as usize].bounds, p))
                        })
                        .filter(|(_, d)| *d <= best_d2)
                        .collect();
                    kids.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
                    stack.extend(kids);
                }
            }
        }
        best.distance = best_d2.sqrt();
        best
    }
}

fn box_distance2(b: &Aabb, p: &Vec3) -> f64 {
    let mut d = 0.0;
    for a in 0..3 {
        let v = if p[a] < b.min[a] {
            b.min[a] - p[a]
        } else if p[a] > b.max[a] {
            p[a] - b.max[a]
        } else {
            0.0
        };
        d += v * v;
    }
    d
}

/// Free-function form of [`Octree::ray_intersect`].
pub fn ray_intersect(octree: &Octree, mesh: &TriMesh, origin: &Vec3, dir: &Vec3) -> Option<RayHit> {
    octree.ray_intersect(mesh, origin, dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tetra::mesh::icosphere;

    #[test]
    fn single_triangle_single_leaf() {
        let m = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]);
        let o = build_octree(&m, 4).unwrap();
        assert_eq!(o.nodes.len(), 1);
        assert_eq!(o.nodes[0].triangles, vec![0]);
    }

    #[test]
    fn zero_leaf_capacity_rejected() {
        let m = icosphere(1.0, 0);
        assert!(matches!(
            build_octree(&m, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(build_octree(&TriMesh::default(), 4).is_err());
    }

    #[test]
    fn every_face_lands_in_an_intersecting_leaf() {
        let m = icosphere(1.0, 3);
        let o = build_octree(&m, 8).unwrap();
        let mut seen = vec![false; m.faces.len()];
        for leaf in o.leaves() {
            for &t in &leaf.triangles {
                assert!(triangle_bounds(&m, t as usize).overlaps(&leaf.bounds));
                seen[t as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        // Leaves tile the root box.
        let vol: f64 = o.leaves().map(|l| l.bounds.extent().product()).sum();
        assert!((vol - o.root_bounds().extent().product()).abs() < 1e-9);
        assert!(o.root_bounds().contains_box(&m.bounds()));
    }

    #[test]
    fn ray_toward_origin_hits_near_two() {
        let m = icosphere(1.0, 3);
        let o = build_octree(&m, 8).unwrap();
        let hit = o
            .ray_intersect(&m, &Vec3::new(0.0, 0.0, 3.0), &-Vec3::z())
            .unwrap();
        // Chord sagitta of the icosphere bounds the deviation from t = 2.
        assert!((hit.t - 2.0).abs() < 0.01, "t = {}", hit.t);
        assert!(o
            .ray_intersect(&m, &Vec3::new(0.0, 0.0, 3.0), &Vec3::z())
            .is_none());
    }

    #[test]
    fn closest_point_matches_brute_force() {
        let m = icosphere(1.0, 2);
        let o = build_octree(&m, 6).unwrap();
        for i in 0..50 {
            let s = i as f64;
            let p = Vec3::new(
                (s * 0.37).sin() * 1.7,
                (s * 0.91).cos() * 1.4,
                (s * 1.3).sin(),
            );
            let c = o.closest_point(&m, &p);
            let brute = (0..m.faces.len())
                .map(|f| {
                    let [a, b, cc] = m.triangle(f);
                    (closest_point_on_triangle(&p, &a, &b, &cc).0 - p).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((c.distance - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn rays_through_vertices_hit_the_vertex() {
        let m = icosphere(0.6, 3);
        let o = build_octree(&m, 8).unwrap();
        let eye = Vec3::new(0.0, 0.0, 3.0);
        for p in m.positions.iter().filter(|p| p.z > 0.3) {
            let d = (p - eye).normalize();
            let hit = o.ray_intersect(&m, &eye, &d).expect("vertex ray missed");
            assert!((hit.point - p).norm() < 1e-9, "{p:?} hit {:?}", hit.point);
        }
    }
}
