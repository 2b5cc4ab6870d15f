//! Fixed-assignment backward pass from pixel gradients to mesh and texels.
//!
//! Face assignment and barycentrics are constants. Silhouette gradients are
//! handled separately by the soft silhouette.

use super::camera::Projector;
use super::image::RasterImage;
use super::raster::{shading_normals, GBuffer};
use super::shade::Footprint;
use crate::tetra::mesh::{vertex_normals_backward, TriMesh};
use crate::{Error, Result, Vec3};

/// Upstream gradients with respect to shaded images.
#[derive(Debug, Clone, Copy, Default)]
pub struct PixelGradients<'a> {
    /// Shaped like `shade_normal` (camera-space normals).
    pub normal: Option<&'a RasterImage>,
    /// Shaped like `shade_depth`.
    pub depth: Option<&'a RasterImage>,
    /// Shaped like the `shade_texture` output.
    pub color: Option<&'a RasterImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    /// Direct position gradient (through depth).
    pub positions: Vec<Vec3>,
    /// Gradient with respect to the per-vertex shading normals.
    pub normals: Vec<Vec3>,
    /// Interleaved like the texture image.
    pub texels: Vec<f64>,
}

impl RenderGradients {
    /// Position gradient including the path through area-weighted vertex
    /// normals.
    pub fn total_position_gradient(&self, mesh: &TriMesh) -> Vec<Vec3> {
        let via_normals = vertex_normals_backward(&mesh.positions, &mesh.faces, &self.normals);
        self.positions
            .iter()
            .zip(via_normals)
            .map(|(a, b)| a + b)
            .collect()
    }
}

fn check_shape(
    img: Option<&RasterImage>,
    gb: &GBuffer,
    channels: Option<usize>,
    what: &str,
) -> Result<()> {
    if let Some(img) = img {
        if img.width != gb.width
            || img.height != gb.height
            || channels.is_some_and(|c| c != img.channels)
        {
            return Err(Error::invalid(format!(
                "{what} gradient is {}x{}x{}, render is {}x{}",
                img.width, img.height, img.channels, gb.width, gb.height
            )));
        }
    }
    Ok(())
}

pub fn accumulate_gradients(
    mesh: &TriMesh,
    gb: &GBuffer,
    footprint: Option<&Footprint>,
    grads: &PixelGradients<'_>,
) -> Result<RenderGradients> {
    check_shape(grads.normal, gb, Some(3), "normal")?;
    check_shape(grads.depth, gb, Some(1), "depth")?;
    check_shape(grads.color, gb, None, "color")?;
    let nv = mesh.positions.len();
    let mut positions = vec![Vec3::zeros(); nv];
    let mut normals = vec![Vec3::zeros(); nv];
    let mut texels = Vec::new();

    if let Some(g) = grads.normal {
        let rot_t = gb.camera.rotation().transpose();
        let vn = shading_normals(mesh);
        for i in 0..gb.pixel_count() {
            let Some(f) = gb.face[i] else { continue };
            let gp = g.pixel(i);
            if gp.iter().all(|v| *v == 0.0) {
                continue;
            }
            let vs = mesh.faces[f as usize];
            let b = gb.bary[i];
            let raw: Vec3 = (0..3).map(|k| vn[vs[k] as usize] * b[k]).sum();
            let len = raw.norm();
            if len == 0.0 {
                continue;
            }
            let n = raw / len;
            let gw = rot_t * Vec3::new(gp[0], gp[1], gp[2]);
            let graw = (gw - n * n.dot(&gw)) / len;
            for k in 0..3 {
                normals[vs[k] as usize] += graw * b[k];
            }
        }
    }

    if let Some(g) = grads.depth {
        // Eye depth of a vertex is back · (eye − p), so its gradient is −back.
        let pr = Projector::new(&gb.camera);
        let back = pr.rotation.row(2).transpose();
        for i in 0..gb.pixel_count() {
            let Some(f) = gb.face[i] else { continue };
            let gd = g.data[i];
            if gd == 0.0 {
                continue;
            }
            let vs = mesh.faces[f as usize];
            for k in 0..3 {
                positions[vs[k] as usize] -= back * (gd * gb.bary[i][k]);
            }
        }
    }

    if let Some(g) = grads.color {
        let fp =
            footprint.ok_or_else(|| Error::invalid("color gradient needs a texture footprint"))?;
        if fp.pixels.len() != gb.pixel_count() {
            return Err(Error::invalid("footprint does not match the render"));
        }
        let c = g.channels;
        texels = vec![0.0; fp.texture_width * fp.texture_height * c];
        for i in 0..gb.pixel_count() {
            let gp = g.pixel(i);
            for (t, w) in fp.pixels[i].iter() {
                let base = t as usize * c;
                for ch in 0..c {
                    texels[base + ch] += w * gp[ch];
                }
            }
        }
    }

    Ok(RenderGradients {
        positions,
        normals,
        texels,
    })
}
