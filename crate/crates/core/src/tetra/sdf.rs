//! Signed distance primitives used for initialization and test fixtures.
//! Negative inside, positive outside.

use super::mesh::TriMesh;
use super::octree::{build_octree, Octree};
use crate::{Result, Vec3};

#[derive(Debug, Clone)]
pub enum SdfShape {
    Sphere { center: Vec3, radius: f64 },
    Ellipsoid { center: Vec3, radii: Vec3 },
    Capsule { a: Vec3, b: Vec3, radius: f64 },
    Mesh(MeshSdf),
}

impl SdfShape {
    pub fn sphere(center: Vec3, radius: f64) -> Self {
        SdfShape::Sphere { center, radius }
    }

    pub fn ellipsoid(center: Vec3, radii: Vec3) -> Self {
        SdfShape::Ellipsoid { center, radii }
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        eval_sdf_primitive(self, p)
    }
}

pub fn eval_sdf_primitive(shape: &SdfShape, p: &Vec3) -> f64 {
    match shape {
        SdfShape::Sphere { center, radius } => (p - center).norm() - radius,
        SdfShape::Ellipsoid { center, radii } => ellipsoid_sdf(&(p - center), radii),
        SdfShape::Capsule { a, b, radius } => {
            let ab = b - a;
            let len2 = ab.norm_squared();
            let u = if len2 > 0.0 {
                ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (p - (a + ab * u)).norm() - radius
        }
        SdfShape::Mesh(m) => m.eval(p),
    }
}

/// Exact signed distance to an axis-aligned ellipsoid centred at the origin,
/// by bisection on the Lagrange parameter of the closest-point problem.
pub fn ellipsoid_sdf(p: &Vec3, radii: &Vec3) -> f64 {
    // Sort axes by decreasing radius and fold the point into the first octant.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| radii[b].total_cmp(&radii[a]));
    let e = order.map(|i| radii[i]);
    let y = order.map(|i| p[i].abs());
    let inside = (y[0] / e[0]).powi(2) + (y[1] / e[1]).powi(2) + (y[2] / e[2]).powi(2) < 1.0;
    let d = distance_point_ellipsoid(e, y);
    if inside {
        -d
    } else {
        d
    }
}

const BISECTION_ITERS: usize = 1100;

fn robust_length(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * v.iter().map(|x| (x / m).powi(2)).sum::<f64>().sqrt()
}

fn root_2(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 {
        0.0
    } else {
        robust_length(&[n0, z1]) - 1.0
    };
    let mut s = 0.0;
    for _ in 0..BISECTION_ITERS {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let g = (n0 / (s + r0)).powi(2) + (z1 / (s + 1.0)).powi(2) - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

fn root_3(r0: f64, r1: f64, z: [f64; 3], g: f64) -> f64 {
    let n0 = r0 * z[0];
    let n1 = r1 * z[1];
    let mut s0 = z[2] - 1.0;
    let mut s1 = if g < 0.0 {
        0.0
    } else {
        robust_length(&[n0, n1, z[2]]) - 1.0
    };
    let mut s = 0.0;
    for _ in 0..BISECTION_ITERS {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let g =
            (n0 / (s + r0)).powi(2) + (n1 / (s + r1)).powi(2) + (z[2] / (s + 1.0)).powi(2) - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// `e0 ≥ e1 > 0`, `y ≥ 0`.
fn distance_point_ellipse(e0: f64, e1: f64, y0: f64, y1: f64) -> f64 {
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g != 0.0 {
                let r0 = (e0 / e1).powi(2);
                let s = root_2(r0, z0, z1, g);
                let x0 = r0 * y0 / (s + r0);
                let x1 = y1 / (s + 1.0);
                ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt()
            } else {
                0.0
            }
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer0 = e0 * y0;
        let denom0 = e0 * e0 - e1 * e1;
        if numer0 < denom0 {
            let xde0 = numer0 / denom0;
            let x0 = e0 * xde0;
            let x1 = e1 * (1.0 - xde0 * xde0).sqrt();
            ((x0 - y0).powi(2) + x1 * x1).sqrt()
        } else {
            (y0 - e0).abs()
        }
    }
}

/// `e0 ≥ e1 ≥ e2 > 0`, `y ≥ 0`.
fn distance_point_ellipsoid(e: [f64; 3], y: [f64; 3]) -> f64 {
    if y[2] > 0.0 {
        if y[1] > 0.0 {
            if y[0] > 0.0 {
                let z = [y[0] / e[0], y[1] / e[1], y[2] / e[2]];
                let g = z[0] * z[0] + z[1] * z[1] + z[2] * z[2] - 1.0;
                if g != 0.0 {
                    let r0 = (e[0] / e[2]).powi(2);
                    let r1 = (e[1] / e[2]).powi(2);
                    let s = root_3(r0, r1, z, g);
                    let x = [r0 * y[0] / (s + r0), r1 * y[1] / (s + r1), y[2] / (s + 1.0)];
                    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
                } else {
                    0.0
                }
            } else {
                distance_point_ellipse(e[1], e[2], y[1], y[2])
            }
        } else if y[0] > 0.0 {
            distance_point_ellipse(e[0], e[2], y[0], y[2])
        } else {
            (y[2] - e[2]).abs()
        }
    } else {
        let denom0 = e[0] * e[0] - e[2] * e[2];
        let denom1 = e[1] * e[1] - e[2] * e[2];
        let numer0 = e[0] * y[0];
        let numer1 = e[1] * y[1];
        if numer0 < denom0 && numer1 < denom1 {
            let xde0 = numer0 / denom0;
            let xde1 = numer1 / denom1;
            let discr = 1.0 - xde0 * xde0 - xde1 * xde1;
            if discr > 0.0 {
                let x = [e[0] * xde0, e[1] * xde1, e[2] * discr.sqrt()];
                return ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + x[2] * x[2]).sqrt();
            }
        }
        distance_point_ellipse(e[0], e[1], y[0], y[1])
    }
}

/// Signed distance to a closed triangle mesh. The magnitude is the exact
/// nearest-triangle distance; the sign is a majority vote of ray-parity
/// tests along three fixed, mutually skewed directions.
#[derive(Debug, Clone)]
pub struct MeshSdf {
    pub mesh: TriMesh,
    pub octree: Octree,
}

const PARITY_DIRECTIONS: [[f64; 3]; 3] = [
    [0.5773502691896258, 0.5773502691896257, 0.5773502691896258],
    [-0.7071067811865475, 0.1, 0.7],
    [0.13, -0.98, 0.15],
];

impl MeshSdf {
    pub fn new(mesh: TriMesh) -> Result<Self> {
        let octree = build_octree(&mesh, 8)?;
        Ok(Self { mesh, octree })
    }

    pub fn is_inside(&self, p: &Vec3) -> bool {
        let votes = PARITY_DIRECTIONS
            .iter()
            .filter(|d| {
                let dir = Vec3::new(d[0], d[1], d[2]).normalize();
                self.crossings(p, &dir) % 2 == 1
            })
            .count();
        votes >= 2
    }

    fn crossings(&self, p: &Vec3, dir: &Vec3) -> usize {
        let mut count = 0;
        let mut origin = *p;
        let mut travelled = 0.0;
        let limit = 4.0 * self.octree.root_bounds().scale()
            + (p - self.octree.root_bounds().center()).norm();
        while let Some(hit) = self.octree.ray_intersect(&self.mesh, &origin, dir) {
            count += 1;
            travelled += hit.t;
            if travelled > limit || count > self.mesh.faces.len() {
                break;
            }
            // Step past the hit so the next query finds the following surface.
            let step = 1e-9 * self.octree.root_bounds().scale();
            origin = hit.point + dir * step;
        }
        count
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        let d = self.octree.closest_point(&self.mesh, p).distance;
        if self.is_inside(p) {
            -d
        } else {
            d
        }
    }
}
