//! Triangle meshes, normals and mesh file formats.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::grid::Aabb;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub positions: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_normals: Option<Vec<Vec3>>,
    pub uvs: Option<Vec<[f64; 2]>>,
}

impl TriMesh {
    pub fn new(positions: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        Self {
            positions,
            faces,
            vertex_normals: None,
            uvs: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.positions)
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| self.positions[i as usize])
    }

    /// Unnormalized face normal; its length is twice the face area.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let c = self.face_cross(f);
        let n = c.norm();
        if n > 0.0 {
            c / n
        } else {
            Vec3::zeros()
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Undirected edge → number of incident faces.
    pub fn edge_face_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// Every edge is shared by exactly two faces, and no directed edge
    /// appears twice (consistent orientation).
    pub fn is_watertight(&self) -> bool {
        if self.faces.is_empty() {
            return false;
        }
        if !self.edge_face_counts().values().all(|&c| c == 2) {
            return false;
        }
        let mut directed = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                if !directed.insert((f[k], f[(k + 1) % 3])) {
                    return false;
                }
            }
        }
        true
    }

    /// V − E + F counting only referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.positions.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_face_counts().len() as i64;
        v - e + self.faces.len() as i64
    }

    /// Drops faces with area below `min_area` and unreferenced vertices.
    pub fn filter_degenerate(&mut self, min_area: f64) {
        let keep: Vec<bool> = (0..self.faces.len())
            .map(|f| self.face_area(f) >= min_area)
            .collect();
        let faces: Vec<[u32; 3]> = self
            .faces
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(f, _)| *f)
            .collect();
        self.faces = faces;
        self.compact();
    }

    /// Removes unreferenced vertices, preserving the order of the rest.
    pub fn compact(&mut self) -> Vec<Option<u32>> {
        let mut remap = vec![None; self.positions.len()];
        let mut next = 0u32;
        for f in &self.faces {
            for &i in f {
                if remap[i as usize].is_none() {
                    remap[i as usize] = Some(u32::MAX);
                }
            }
        }
        for r in remap.iter_mut() {
            if r.is_some() {
                *r = Some(next);
                next += 1;
            }
        }
        let pick = |v: usize| remap[v].is_some();
        self.positions = (0..self.positions.len())
            .filter(|&v| pick(v))
            .map(|v| self.positions[v])
            .collect();
        if let Some(n) = &self.vertex_normals {
            self.vertex_normals = Some((0..n.len()).filter(|&v| pick(v)).map(|v| n[v]).collect());
        }
        if let Some(uv) = &self.uvs {
            self.uvs = Some((0..uv.len()).filter(|&v| pick(v)).map(|v| uv[v]).collect());
        }
        for f in self.faces.iter_mut() {
            *f = f.map(|i| remap[i as usize].unwrap());
        }
        remap
    }

    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> TriMesh {
        let mut m = self.clone();
        m.positions = self.positions.iter().map(f).collect();
        m.vertex_normals = None;
        compute_vertex_normals(&m)
    }
}

/// Area-weighted vertex normals.
///
/// Isolated vertices receive the zero vector; their indices are returned in
/// the second element.
pub fn vertex_normals(positions: &[Vec3], faces: &[[u32; 3]]) -> (Vec<Vec3>, Vec<usize>) {
    let accum = accumulate_face_crosses(positions, faces);
    let mut isolated = Vec::new();
    let normals = accum
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let n = m.norm();
            if n > 0.0 {
                m / n
            } else {
                isolated.push(i);
                Vec3::zeros()
            }
        })
        .collect();
    (normals, isolated)
}

fn accumulate_face_crosses(positions: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    let mut accum = vec![Vec3::zeros(); positions.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| positions[i as usize]);
        let cross = (b - a).cross(&(c - a));
        for &i in f {
            accum[i as usize] += cross;
        }
    }
    accum
}

/// Returns a copy of `mesh` with area-weighted unit vertex normals.
pub fn compute_vertex_normals(mesh: &TriMesh) -> TriMesh {
    let (normals, isolated) = vertex_normals(&mesh.positions, &mesh.faces);
    if !isolated.is_empty() {
        log::debug!("{} isolated vertices carry zero normals", isolated.len());
    }
    TriMesh {
        vertex_normals: Some(normals),
        ..mesh.clone()
    }
}

/// Pulls a gradient on unit vertex normals back to vertex positions.
pub fn vertex_normals_backward(
    positions: &[Vec3],
    faces: &[[u32; 3]],
    grad_normals: &[Vec3],
) -> Vec<Vec3> {
    let accum = accumulate_face_crosses(positions, faces);
    // d n / d m = (I - n nᵀ) / |m|
    let grad_accum: Vec<Vec3> = accum
        .iter()
        .zip(grad_normals)
        .map(|(m, g)| {
            let len = m.norm();
            if len == 0.0 {
                return Vec3::zeros();
            }
            let n = m / len;
            (g - n * n.dot(g)) / len
        })
        .collect();
    let mut grad = vec![Vec3::zeros(); positions.len()];
    for f in faces {
        let [i0, i1, i2] = f.map(|i| i as usize);
        let g = grad_accum[i0] + grad_accum[i1] + grad_accum[i2];
        if g == Vec3::zeros() {
            continue;
        }
        let e1 = positions[i1] - positions[i0];
        let e2 = positions[i2] - positions[i0];
        // cross = e1 × e2
        let ge1 = e2.cross(&g);
        let ge2 = g.cross(&e1);
        grad[i1] += ge1;
        grad[i2] += ge2;
        grad[i0] -= ge1 + ge2;
    }
    grad
}

/// Geodesic sphere made by subdividing an icosahedron `subdivisions` times
/// (20·4ⁿ faces), with outward winding and radial normals computed from the
/// faces.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut positions: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: u32, b: u32, positions: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let p = ((positions[a as usize] + positions[b as usize]) * 0.5).normalize();
                positions.push(p);
                (positions.len() - 1) as u32
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut positions);
            let bc = mid(b, c, &mut positions);
            let ca = mid(c, a, &mut positions);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for p in positions.iter_mut() {
        *p *= radius;
    }
    compute_vertex_normals(&TriMesh::new(positions, faces))
}

/// Axis-aligned cube with side `2·half`, 12 outward-wound triangles.
pub fn cube_mesh(half: f64) -> TriMesh {
    let positions = (0..8)
        .map(|b| {
            Vec3::new(
                if b & 1 != 0 { half } else { -half },
                if b & 2 != 0 { half } else { -half },
                if b & 4 != 0 { half } else { -half },
            )
        })
        .collect();
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1], // -z
        [4, 5, 7],
        [4, 7, 6], // +z
        [0, 1, 5],
        [0, 5, 4], // -y
        [2, 6, 7],
        [2, 7, 3], // +y
        [0, 4, 6],
        [0, 6, 2], // -x
        [1, 3, 7],
        [1, 7, 5], // +x
    ];
    compute_vertex_normals(&TriMesh::new(positions, faces))
}

/// Closest point on triangle `(a, b, c)` to `p` with its barycentric
/// coordinates.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    // Region classification from Ericson, Real-Time Collision Detection.
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

// ---------------------------------------------------------------------------
// OBJ

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_obj_to(mesh, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_obj_to(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "# sculptd mesh: {} vertices, {} faces",
        mesh.positions.len(),
        mesh.faces.len()
    )?;
    for p in &mesh.positions {
        writeln!(w, "v {:.9} {:.9} {:.9}", p.x, p.y, p.z)?;
    }
    if let Some(uvs) = &mesh.uvs {
        for uv in uvs {
            writeln!(w, "vt {:.9} {:.9}", uv[0], uv[1])?;
        }
    }
    if let Some(ns) = &mesh.vertex_normals {
        for n in ns {
            writeln!(w, "vn {:.9} {:.9} {:.9}", n.x, n.y, n.z)?;
        }
    }
    let has_uv = mesh.uvs.is_some();
    let has_n = mesh.vertex_normals.is_some();
    for f in &mesh.faces {
        write!(w, "f")?;
        for &i in f {
            let i = i + 1;
            match (has_uv, has_n) {
                (true, true) => write!(w, " {i}/{i}/{i}")?,
                (true, false) => write!(w, " {i}/{i}")?,
                (false, true) => write!(w, " {i}//{i}")?,
                (false, false) => write!(w, " {i}")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_obj_from(BufReader::new(file)).map_err(|m| Error::format(path, m))
}

/// Position, uv and normal indices of one face corner.
type Corner = (usize, Option<usize>, Option<usize>);

pub fn read_obj_from(r: impl BufRead) -> std::result::Result<TriMesh, String> {
    let mut v = Vec::new();
    let mut vt = Vec::new();
    let mut vn = Vec::new();
    let mut corners: Vec<[Corner; 3]> = Vec::new();
    let parse_f = |s: &str, lineno: usize| -> std::result::Result<f64, String> {
        s.parse::<f64>()
            .map_err(|_| format!("line {lineno}: bad number `{s}`"))
    };
    for (lineno, line) in r.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| e.to_string())?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| parse_f(s, lineno))
                    .collect::<std::result::Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(format!("line {lineno}: vertex needs 3 coordinates"));
                }
                v.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("vt") => {
                let c: Vec<f64> = it
                    .take(2)
                    .map(|s| parse_f(s, lineno))
                    .collect::<std::result::Result<_, _>>()?;
                if c.len() != 2 {
                    return Err(format!("line {lineno}: texture coordinate needs 2 values"));
                }
                vt.push([c[0], c[1]]);
            }
            Some("vn") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| parse_f(s, lineno))
                    .collect::<std::result::Result<_, _>>()?;
                if c.len() != 3 {
                    return Err(format!("line {lineno}: normal needs 3 values"));
                }
                vn.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let idx = |s: Option<&str>,
                               n: usize|
                     -> std::result::Result<Option<usize>, String> {
                        match s {
                            None | Some("") => Ok(None),
                            Some(s) => {
                                let i: i64 = s
                                    .parse()
                                    .map_err(|_| format!("line {lineno}: bad index `{s}`"))?;
                                let i = if i < 0 { n as i64 + i } else { i - 1 };
                                if i < 0 || i as usize >= n {
                                    return Err(format!("line {lineno}: index {s} out of range"));
                                }
                                Ok(Some(i as usize))
                            }
                        }
                    };
                    let pi = idx(parts.next(), v.len())?
                        .ok_or_else(|| format!("line {lineno}: missing vertex index"))?;
                    let ti = idx(parts.next(), vt.len())?;
                    let ni = idx(parts.next(), vn.len())?;
                    poly.push((pi, ti, ni));
                }
                if poly.len() < 3 {
                    return Err(format!("line {lineno}: face needs at least 3 vertices"));
                }
                for k in 1..poly.len() - 1 {
                    corners.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let has_uv = !corners.is_empty() && corners.iter().flatten().all(|c| c.1.is_some());
    let has_n = !corners.is_empty() && corners.iter().flatten().all(|c| c.2.is_some());
    let simple = corners
        .iter()
        .flatten()
        .all(|c| (!has_uv || c.1 == Some(c.0)) && (!has_n || c.2 == Some(c.0)));
    if simple && (!has_uv || vt.len() == v.len()) && (!has_n || vn.len() == v.len()) {
        let faces = corners.iter().map(|f| f.map(|c| c.0 as u32)).collect();
        return Ok(TriMesh {
            positions: v,
            faces,
            vertex_normals: has_n.then_some(vn),
            uvs: has_uv.then_some(vt),
        });
    }
    // Split vertices so every (position, uv, normal) triple is unique.
    let mut map: HashMap<(usize, Option<usize>, Option<usize>), u32> = HashMap::new();
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut normals = Vec::new();
    let mut faces = Vec::with_capacity(corners.len());
    for f in &corners {
        let mut tri = [0u32; 3];
        for (k, c) in f.iter().enumerate() {
            let key = (c.0, c.1.filter(|_| has_uv), c.2.filter(|_| has_n));
            tri[k] = *map.entry(key).or_insert_with(|| {
                positions.push(v[c.0]);
                if has_uv {
                    uvs.push(vt[c.1.unwrap()]);
                }
                if has_n {
                    normals.push(vn[c.2.unwrap()]);
                }
                (positions.len() - 1) as u32
            });
        }
        faces.push(tri);
    }
    Ok(TriMesh {
        positions,
        faces,
        vertex_normals: has_n.then_some(normals),
        uvs: has_uv.then_some(uvs),
    })
}

// ---------------------------------------------------------------------------
// Binary PLY

pub fn write_ply(mesh: &TriMesh, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_ply_to(mesh, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ply_to(mesh: &TriMesh, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.positions.len())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property double {c}")?;
    }
    if mesh.vertex_normals.is_some() {
        for c in ["nx", "ny", "nz"] {
            writeln!(w, "property double {c}")?;
        }
    }
    if mesh.uvs.is_some() {
        writeln!(w, "property double s")?;
        writeln!(w, "property double t")?;
    }
    writeln!(w, "element face {}", mesh.faces.len())?;
    writeln!(w, "property list uchar uint vertex_indices")?;
    writeln!(w, "end_header")?;
    for i in 0..mesh.positions.len() {
        for c in mesh.positions[i].iter() {
            w.write_f64::<LittleEndian>(*c)?;
        }
        if let Some(n) = &mesh.vertex_normals {
            for c in n[i].iter() {
                w.write_f64::<LittleEndian>(*c)?;
            }
        }
        if let Some(uv) = &mesh.uvs {
            w.write_f64::<LittleEndian>(uv[i][0])?;
            w.write_f64::<LittleEndian>(uv[i][1])?;
        }
    }
    for f in &mesh.faces {
        w.write_u8(3)?;
        for &i in f {
            w.write_u32::<LittleEndian>(i)?;
        }
    }
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<TriMesh> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply_from(&mut BufReader::new(file)).map_err(|m| Error::format(path, m))
}

#[derive(Clone, Copy)]
enum PlyScalar {
    U8,
    I32,
    U32,
    F32,
    F64,
}

impl PlyScalar {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "uchar" | "uint8" | "char" | "int8" => PlyScalar::U8,
            "int" | "int32" => PlyScalar::I32,
            "uint" | "uint32" => PlyScalar::U32,
            "float" | "float32" => PlyScalar::F32,
            "double" | "float64" => PlyScalar::F64,
            other => return Err(format!("unsupported PLY type `{other}`")),
        })
    }

    fn read(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            PlyScalar::U8 => r.read_u8()? as f64,
            PlyScalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            PlyScalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            PlyScalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            PlyScalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

pub fn read_ply_from(r: &mut impl BufRead) -> std::result::Result<TriMesh, String> {
    let mut line = String::new();
    let mut next_line = |r: &mut dyn BufRead| -> std::result::Result<String, String> {
        line.clear();
        r.read_line(&mut line).map_err(|e| e.to_string())?;
        Ok(line.trim().to_string())
    };
    if next_line(r)? != "ply" {
        return Err("missing `ply` magic".into());
    }
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut vprops: Vec<(String, PlyScalar)> = Vec::new();
    let mut face_list: Option<(PlyScalar, PlyScalar)> = None;
    let mut current = String::new();
    loop {
        let l = next_line(r)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(format!("unsupported PLY format `{fmt}`"));
                }
            }
            ["element", name, count] => {
                current = name.to_string();
                let count: usize = count.parse().map_err(|_| "bad element count")?;
                match *name {
                    "vertex" => n_vertices = count,
                    "face" => n_faces = count,
                    other => return Err(format!("unsupported PLY element `{other}`")),
                }
            }
            ["property", "list", ct, it, _] if current == "face" => {
                face_list = Some((PlyScalar::parse(ct)?, PlyScalar::parse(it)?));
            }
            ["property", ty, name] if current == "vertex" => {
                vprops.push((name.to_string(), PlyScalar::parse(ty)?));
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["end_header"] => break,
            [] => return Err("unexpected end of header".into()),
            _ => return Err(format!("unsupported header line `{l}`")),
        }
    }
    let find = |n: &str| vprops.iter().position(|(p, _)| p == n);
    let (xi, yi, zi) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err("vertex element lacks x/y/z".into()),
    };
    let normals_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let uv_idx = match (find("s").or(find("u")), find("t").or(find("v"))) {
        (Some(a), Some(b)) => Some((a, b)),
        _ => None,
    };
    let mut positions = Vec::with_capacity(n_vertices);
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut vals = vec![0.0; vprops.len()];
    for _ in 0..n_vertices {
        for (k, (_, ty)) in vprops.iter().enumerate() {
            vals[k] = ty.read(r).map_err(|e| e.to_string())?;
        }
        positions.push(Vec3::new(vals[xi], vals[yi], vals[zi]));
        if let Some((a, b, c)) = normals_idx {
            normals.push(Vec3::new(vals[a], vals[b], vals[c]));
        }
        if let Some((a, b)) = uv_idx {
            uvs.push([vals[a], vals[b]]);
        }
    }
    let (ct, it) = face_list.ok_or("face element lacks vertex_indices list")?;
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let n = ct.read(r).map_err(|e| e.to_string())? as usize;
        let mut poly = Vec::with_capacity(n);
        for _ in 0..n {
            let i = it.read(r).map_err(|e| e.to_string())? as usize;
            if i >= n_vertices {
                return Err(format!("face index {i} out of range"));
            }
            poly.push(i as u32);
        }
        if n < 3 {
            return Err("face with fewer than 3 vertices".into());
        }
        for k in 1..n - 1 {
            faces.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    Ok(TriMesh {
        positions,
        faces,
        vertex_normals: normals_idx.map(|_| normals),
        uvs: uv_idx.map(|_| uvs),
    })
}
