//! Texel-level state: the surface point behind each texel, coverage, baking,
//! partial renders, the masked blend and export dilation.

use std::path::Path;

use rayon::prelude::*;

use crate::render::{rasterize, shade_texture, Camera, GBuffer, Projector, RasterImage};
use crate::tetra::mesh::{closest_point_on_triangle, TriMesh};
use crate::{Error, Result, Vec3};

/// Texels whose centre lies within this many texels of a UV triangle belong
/// to it, so that bilinear footprints along chart borders stay inside
/// occupied texels.
pub const RIM_TEXELS: f64 = 1.5;

/// Grey written to covered pixels whose footprint is not fully colored.
pub const UNKNOWN_GREY: f64 = 0.5;

/// Surface point behind each texel.
#[derive(Debug, Clone, PartialEq)]
pub struct TexelMap {
    pub size: usize,
    pub face: Vec<Option<u32>>,
    pub bary: Vec<[f64; 3]>,
    pub position: Vec<Vec3>,
    /// Unit interpolated shading normal.
    pub normal: Vec<Vec3>,
}

impl TexelMap {
    pub fn occupied(&self, t: usize) -> bool {
        self.face[t].is_some()
    }

    pub fn occupied_count(&self) -> usize {
        self.face.iter().filter(|f| f.is_some()).count()
    }
}

fn shading_normals(mesh: &TriMesh) -> Vec<Vec3> {
    match &mesh.vertex_normals {
        Some(n) if n.len() == mesh.positions.len() => n.clone(),
        _ => crate::tetra::mesh::vertex_normals(&mesh.positions, &mesh.faces).0,
    }
}

/// Rasterizes every UV triangle into a `size²` atlas. Ties go to the lower
/// face index.
pub fn build_texel_map(mesh: &TriMesh, size: usize) -> Result<TexelMap> {
    let uvs = mesh
        .uvs
        .as_ref()
        .filter(|u| u.len() == mesh.positions.len())
        .ok_or_else(|| Error::invalid("mesh has no per-vertex UVs"))?;
    if size == 0 {
        return Err(Error::invalid("atlas size must be positive"));
    }
    let n = size * size;
    let mut best = vec![f64::INFINITY; n];
    let mut face = vec![None; n];
    let mut bary = vec![[0.0; 3]; n];
    let s = size as f64;
    for (f, tri) in mesh.faces.iter().enumerate() {
        let p = tri.map(|v| {
            let t = uvs[v as usize];
            Vec3::new(t[0] * s, (1.0 - t[1]) * s, 0.0)
        });
        let lo_x = p.iter().map(|q| q.x).fold(f64::INFINITY, f64::min) - RIM_TEXELS;
        let hi_x = p.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max) + RIM_TEXELS;
        let lo_y = p.iter().map(|q| q.y).fold(f64::INFINITY, f64::min) - RIM_TEXELS;
        let hi_y = p.iter().map(|q| q.y).fold(f64::NEG_INFINITY, f64::max) + RIM_TEXELS;
        let (x0, x1) = (
            (lo_x - 0.5).ceil().max(0.0) as usize,
            ((hi_x - 0.5).floor().min(s - 1.0)).max(-1.0),
        );
        let (y0, y1) = (
            (lo_y - 0.5).ceil().max(0.0) as usize,
            ((hi_y - 0.5).floor().min(s - 1.0)).max(-1.0),
        );
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for j in y0..=y1 as usize {
            for i in x0..=x1 as usize {
                let c = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, 0.0);
                let (q, b) = closest_point_on_triangle(&c, &p[0], &p[1], &p[2]);
                let d = (q - c).norm();
                let t = j * size + i;
                if d <= RIM_TEXELS && d < best[t] {
                    best[t] = d;
                    face[t] = Some(f as u32);
                    bary[t] = b;
                }
            }
        }
    }
    let vn = shading_normals(mesh);
    let (position, normal) = (0..n)
        .map(|t| match face[t] {
            Some(f) => {
                let vs = mesh.faces[f as usize];
                let b = bary[t];
                let p: Vec3 = (0..3).map(|k| mesh.positions[vs[k] as usize] * b[k]).sum();
                let nn: Vec3 = (0..3).map(|k| vn[vs[k] as usize] * b[k]).sum();
                let nn = if nn.norm() > 0.0 {
                    nn.normalize()
                } else {
                    mesh.face_normal(f as usize)
                };
                (p, nn)
            }
            None => (Vec3::zeros(), Vec3::zeros()),
        })
        .unzip();
    Ok(TexelMap {
        size,
        face,
        bary,
        position,
        normal,
    })
}

/// Texels in linear RGB plus the colored-texel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureState {
    pub texels: RasterImage,
    pub coverage: Vec<bool>,
    /// Number of blends applied.
    pub generation: usize,
}

impl TextureState {
    pub fn new(size: usize) -> Self {
        Self {
            texels: RasterImage::new(size, size, 3),
            coverage: vec![false; size * size],
            generation: 0,
        }
    }

    pub fn size(&self) -> usize {
        self.texels.width
    }

    /// Fraction of occupied texels that are covered.
    pub fn coverage_fraction(&self, map: &TexelMap) -> f64 {
        let occ = map.occupied_count();
        if occ == 0 {
            return 0.0;
        }
        let cov = (0..self.coverage.len())
            .filter(|&t| self.coverage[t] && map.occupied(t))
            .count();
        cov as f64 / occ as f64
    }
}

/// Depth tolerance for a surface point at eye depth `z` seen at `cos_view`:
/// one pixel footprint plus the slope across it.
pub fn occlusion_tolerance(z: f64, focal: f64, cos_view: f64) -> f64 {
    let c = cos_view.clamp(1e-3, 1.0);
    let tan = (1.0 - c * c).sqrt() / c;
    z / focal * (1.0 + tan) + 1e-4 * z
}

/// Bilinear sample over covered pixels only; `None` when no covered pixel
/// contributes.
fn sample_covered(image: &RasterImage, gb: &GBuffer, x: f64, y: f64) -> Option<[f64; 3]> {
    let fx = (x - 0.5).clamp(0.0, (gb.width - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (gb.height - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(gb.width - 1), (y0 + 1).min(gb.height - 1));
    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for (px, py, w) in [
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x1, y0, ax * (1.0 - ay)),
        (x0, y1, (1.0 - ax) * ay),
        (x1, y1, ax * ay),
    ] {
        let i = py * gb.width + px;
        if w > 0.0 && gb.face[i].is_some() {
            let p = image.pixel(i);
            for c in 0..3 {
                acc[c] += w * p[c];
            }
            wsum += w;
        }
    }
    (wsum > 0.0).then(|| acc.map(|v| v / wsum))
}

/// Whether texel `t`'s surface point is visible from the camera and not
/// grazing. Returns the projected pixel position when it is.
fn texel_view(
    map: &TexelMap,
    t: usize,
    camera: &Camera,
    pr: &Projector,
    gb: &GBuffer,
    cos_limit: f64,
) -> Option<(f64, f64)> {
    map.face[t]?;
    let p = map.position[t];
    let to_eye = camera.position() - p;
    let dist = to_eye.norm();
    if dist == 0.0 {
        return None;
    }
    let cos_view = map.normal[t].dot(&to_eye) / dist;
    if cos_view < cos_limit {
        return None;
    }
    let (px, z) = pr.project(&p)?;
    if px.x < 0.0 || px.y < 0.0 || px.x >= gb.width as f64 || px.y >= gb.height as f64 {
        return None;
    }
    let i = px.y as usize * gb.width + px.x as usize;
    gb.face[i]?;
    if (z - gb.depth[i]).abs() > occlusion_tolerance(z, pr.focal, cos_view) {
        return None;
    }
    Some((px.x, px.y))
}

/// Writes image colors into visible, non-grazing, not yet covered texels.
pub fn bake_view(
    state: &TextureState,
    image: &RasterImage,
    camera: &Camera,
    mesh: &TriMesh,
    map: &TexelMap,
    grazing_deg: f64,
) -> Result<TextureState> {
    if image.width != camera.width || image.height != camera.height || image.channels < 3 {
        return Err(Error::invalid("bake image does not match the camera"));
    }
    if map.size != state.size() {
        return Err(Error::invalid("texel map and texture differ in size"));
    }
    let gb = rasterize(mesh, camera);
    let pr = Projector::new(camera);
    let cos_limit = grazing_deg.to_radians().cos();
    let writes: Vec<(usize, [f64; 3])> = (0..map.face.len())
        .into_par_iter()
        .filter(|&t| !state.coverage[t])
        .filter_map(|t| {
            let (x, y) = texel_view(map, t, camera, &pr, &gb, cos_limit)?;
            sample_covered(image, &gb, x, y).map(|c| (t, c))
        })
        .collect();
    let mut out = state.clone();
    for (t, c) in writes {
        out.texels.pixel_mut(t).copy_from_slice(&c);
        out.coverage[t] = true;
    }
    Ok(out)
}

/// Texels a bake from `camera` may write, ignoring coverage.
pub fn visible_texels(
    camera: &Camera,
    mesh: &TriMesh,
    map: &TexelMap,
    grazing_deg: f64,
) -> Vec<bool> {
    let gb = rasterize(mesh, camera);
    let pr = Projector::new(camera);
    let cos_limit = grazing_deg.to_radians().cos();
    (0..map.face.len())
        .into_par_iter()
        .map(|t| texel_view(map, t, camera, &pr, &gb, cos_limit).is_some())
        .collect()
}

/// Textured render and the known-pixel mask. Covered pixels whose footprint
/// touches an uncolored texel are grey and unknown.
pub fn render_partial(
    state: &TextureState,
    camera: &Camera,
    mesh: &TriMesh,
) -> (RasterImage, Vec<bool>) {
    let gb = rasterize(mesh, camera);
    let (mut img, fp) = shade_texture(&gb, &state.texels);
    let mut known = vec![false; gb.pixel_count()];
    for i in 0..gb.pixel_count() {
        if gb.face[i].is_none() {
            continue;
        }
        if fp.pixel_known(i, &state.coverage) {
            known[i] = true;
        } else {
            img.pixel_mut(i).fill(UNKNOWN_GREY);
        }
    }
    (img, known)
}

/// `T = m ⊙ T_prev + (1 − m) ⊙ T̂` with coverage `m ∨ m̂`.
pub fn blend_texture(prev: &TextureState, hat: &TextureState) -> Result<TextureState> {
    if !prev.texels.same_shape(&hat.texels) || prev.coverage.len() != hat.coverage.len() {
        return Err(Error::invalid("blend inputs differ in size"));
    }
    let mut out = hat.clone();
    for t in 0..prev.coverage.len() {
        if prev.coverage[t] {
            out.texels
                .pixel_mut(t)
                .copy_from_slice(prev.texels.pixel(t));
            out.coverage[t] = true;
        }
    }
    out.generation = prev.generation + 1;
    Ok(out)
}

/// Grows `mask` by `iterations` rings, each new texel taking the mean of
/// its masked 8-neighbours.
pub fn dilate(texels: &RasterImage, mask: &[bool], iterations: usize) -> RasterImage {
    let (w, h, c) = (texels.width, texels.height, texels.channels);
    let mut img = texels.clone();
    let mut m = mask.to_vec();
    for _ in 0..iterations {
        let mut next = m.clone();
        let mut grown = img.clone();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if m[i] {
                    continue;
                }
                let mut acc = vec![0.0; c];
                let mut k = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if (dx, dy) == (0, 0)
                            || nx < 0
                            || ny < 0
                            || nx >= w as i64
                            || ny >= h as i64
                        {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if m[j] {
                            for (a, v) in acc.iter_mut().zip(img.pixel(j)) {
                                *a += v;
                            }
                            k += 1;
                        }
                    }
                }
                if k > 0 {
                    for (o, a) in grown.pixel_mut(i).iter_mut().zip(&acc) {
                        *o = a / k as f64;
                    }
                    next[i] = true;
                }
            }
        }
        img = grown;
        m = next;
    }
    img
}

/// Writes the sRGB texture PNG (dilated) and the coverage mask PNG.
pub fn export_texture(
    state: &TextureState,
    dilation: usize,
    texture_path: &Path,
    coverage_path: &Path,
) -> Result<()> {
    dilate(&state.texels, &state.coverage, dilation)
        .map(|v| v.clamp(0.0, 1.0))
        .write_png(texture_path)?;
    RasterImage::from_mask(state.size(), state.size(), &state.coverage).write_png(coverage_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::metrics::psnr;
    use crate::render::camera_from_spherical;
    use crate::tetra::mesh::icosphere;
    use crate::tetra::octree::build_octree;
    use crate::texture::atlas::unwrap_uv;

    fn scene(size: usize) -> (TriMesh, TexelMap) {
        let (m, _) = unwrap_uv(&icosphere(0.6, 3), size, 3).unwrap();
        let map = build_texel_map(&m, size).unwrap();
        (m, map)
    }

    fn cam(az: f64, el: f64) -> Camera {
        camera_from_spherical(az, el, 2.5, 40.0, Vec3::zeros(), (96, 96)).unwrap()
    }

    fn smooth_image(c: &Camera) -> RasterImage {
        let mut img = RasterImage::new(c.width, c.height, 3);
        for y in 0..c.height {
            for x in 0..c.width {
                let (u, v) = (x as f64 / c.width as f64, y as f64 / c.height as f64);
                let p = img.pixel_mut(y * c.width + x);
                p[0] = 0.5 + 0.4 * (3.0 * u).sin();
                p[1] = 0.5 + 0.4 * (2.0 * v + 1.0).cos();
                p[2] = 0.3 + 0.5 * u * v;
            }
        }
        img
    }

    #[test]
    fn texel_map_covers_every_face() {
        let (m, map) = scene(128);
        let mut seen = vec![false; m.faces.len()];
        for f in map.face.iter().flatten() {
            seen[*f as usize] = true;
        }
        assert!(seen.iter().all(|s| *s));
        for t in (0..map.face.len()).filter(|&t| map.occupied(t)) {
            assert!((map.position[t].norm() - 0.6).abs() < 0.05);
        }
    }

    #[test]
    fn bake_round_trip_and_idempotence() {
        let (m, map) = scene(256);
        let c = cam(20.0, 10.0);
        let img = smooth_image(&c);
        let s0 = TextureState::new(256);
        let s1 = bake_view(&s0, &img, &c, &m, &map, 75.0).unwrap();
        assert!(s1.coverage.iter().any(|v| *v));
        let (render, known) = render_partial(&s1, &c, &m);
        assert!(known.iter().filter(|k| **k).count() > 1000);
        let p = psnr(&render, &img, Some(&known)).unwrap();
        assert!(p > 35.0, "round trip psnr {p}");
        let s2 = bake_view(&s1, &img, &c, &m, &map, 75.0).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn back_facing_and_occluded_texels_are_untouched() {
        let (m, map) = scene(128);
        let c = cam(0.0, 0.0);
        let s = bake_view(
            &TextureState::new(128),
            &smooth_image(&c),
            &c,
            &m,
            &map,
            75.0,
        )
        .unwrap();
        let octree = build_octree(&m, 8).unwrap();
        let eye = c.position();
        for t in (0..s.coverage.len()).filter(|&t| s.coverage[t]) {
            let p = map.position[t];
            assert!(
                map.normal[t].dot(&(eye - p)) > 0.0,
                "back-facing texel written"
            );
            let d = (p - eye).norm();
            let dir = (p - eye) / d;
            // A miss can happen for grazing rim texels; nothing is in front of them then.
            if let Some(hit) = octree.ray_intersect(&m, &eye, &dir) {
                let cos = map.normal[t].dot(&-dir);
                let z = c.eye_depth(&p);
                assert!(
                    hit.t >= d - occlusion_tolerance(z, c.focal(), cos) * d / z - 1e-9,
                    "occluded texel written"
                );
            }
        }
    }

    #[test]
    fn occlusion_is_respected_with_an_occluder() {
        let (m, map) = scene(128);
        let blocker = icosphere(0.2, 2).transformed(|p| p + Vec3::new(0.0, 0.0, 1.2));
        let mut both = m.clone();
        let off = both.positions.len() as u32;
        both.positions.extend(blocker.positions.iter());
        both.faces
            .extend(blocker.faces.iter().map(|f| f.map(|v| v + off)));
        let n = blocker.positions.len();
        both.vertex_normals
            .as_mut()
            .unwrap()
            .extend(std::iter::repeat_n(Vec3::z(), n));
        both.uvs
            .as_mut()
            .unwrap()
            .extend(std::iter::repeat_n([0.0, 0.0], n));
        let c = cam(0.0, 0.0);
        let open = bake_view(
            &TextureState::new(128),
            &smooth_image(&c),
            &c,
            &m,
            &map,
            75.0,
        )
        .unwrap();
        let blocked = bake_view(
            &TextureState::new(128),
            &smooth_image(&c),
            &c,
            &both,
            &map,
            75.0,
        )
        .unwrap();
        let front = (0..map.face.len())
            .filter(|&t| {
                map.occupied(t)
                    && map.position[t].z > 0.58
                    && map.position[t].x.abs() < 0.03
                    && map.position[t].y.abs() < 0.03
            })
            .collect::<Vec<_>>();
        assert!(!front.is_empty());
        for t in front {
            assert!(open.coverage[t] && !blocked.coverage[t]);
        }
    }

    #[test]
    fn known_mask_edge_cases() {
        let (m, map) = scene(128);
        let c = cam(0.0, 0.0);
        let (_, known) = render_partial(&TextureState::new(128), &c, &m);
        assert!(known.iter().all(|k| !k));
        let mut full = TextureState::new(128);
        full.coverage.iter_mut().for_each(|v| *v = true);
        let (_, known) = render_partial(&full, &c, &m);
        assert_eq!(known, rasterize(&m, &c).mask());
        let _ = map;
    }

    #[test]
    fn half_baked_sphere_splits_at_the_bake_boundary() {
        let size = 256;
        let (m, atlas) = unwrap_uv(&icosphere(0.6, 3), size, 3).unwrap();
        let map = build_texel_map(&m, size).unwrap();
        let front = cam(0.0, 0.0);
        let s = bake_view(
            &TextureState::new(size),
            &smooth_image(&front),
            &front,
            &m,
            &map,
            75.0,
        )
        .unwrap();
        let side = cam(90.0, 0.0);
        let (_, known) = render_partial(&s, &side, &m);
        let gb = rasterize(&m, &side);
        // The analytic boundary is where the front camera sees the sphere at
        // exactly the grazing angle. Distances are arc lengths on the sphere.
        let eye = front.position();
        let cos_limit = 75f64.to_radians().cos();
        let pix = 2.0 * side.distance * (side.fovy.to_radians() / 2.0).tan() / side.height as f64;
        let slack = pix + RIM_TEXELS / atlas.scale;
        let mut checked = 0;
        for i in 0..gb.pixel_count() {
            let Some(f) = gb.face[i] else { continue };
            let b = gb.bary[i];
            let p: Vec3 = (0..3)
                .map(|k| m.positions[m.faces[f as usize][k] as usize] * b[k])
                .sum();
            let cos_view = p.normalize().dot(&(eye - p).normalize());
            let arc = (cos_view - cos_limit) * 0.6 / 75f64.to_radians().sin();
            if known[i] {
                assert!(arc > -slack, "known pixel {arc} outside the baked cap");
            } else {
                assert!(arc < slack, "unknown pixel {arc} inside the baked cap");
            }
            checked += 1;
        }
        assert!(checked > 1000);
    }

    #[test]
    fn blend_selects_per_texel() {
        let size = 8;
        let mut prev = TextureState::new(size);
        let mut hat = TextureState::new(size);
        for t in 0..size * size {
            prev.texels.pixel_mut(t).fill(0.25 + t as f64 * 1e-3);
            hat.texels.pixel_mut(t).fill(0.75 - t as f64 * 1e-3);
            prev.coverage[t] = (t / size + t % size) % 2 == 0;
            hat.coverage[t] = t % 3 == 0;
        }
        let out = blend_texture(&prev, &hat).unwrap();
        for t in 0..size * size {
            let src = if prev.coverage[t] { &prev } else { &hat };
            assert_eq!(out.texels.pixel(t), src.texels.pixel(t));
            assert_eq!(out.coverage[t], prev.coverage[t] || hat.coverage[t]);
        }
        assert_eq!(out.generation, 1);
        let mut all = prev.clone();
        all.coverage.iter_mut().for_each(|c| *c = true);
        assert_eq!(blend_texture(&all, &hat).unwrap().texels, all.texels);
        let none = TextureState::new(size);
        assert_eq!(blend_texture(&none, &hat).unwrap().texels, hat.texels);
        assert!(blend_texture(&TextureState::new(4), &hat).is_err());
    }

    #[test]
    fn dilation_fills_rings() {
        let mut img = RasterImage::new(5, 5, 1);
        img.data[12] = 1.0;
        let mut mask = vec![false; 25];
        mask[12] = true;
        let d = dilate(&img, &mask, 1);
        assert_eq!(d.data[6], 1.0);
        assert_eq!(d.data[0], 0.0);
        assert_eq!(dilate(&img, &mask, 2).data[0], 1.0);
    }
}
