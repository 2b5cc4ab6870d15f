//! Geometry images: camera-space normals mapped to [0, 1]³ in RGB plus the
//! soft silhouette in alpha. This is the image the geometry stage distils.

use super::backward::{accumulate_gradients, PixelGradients};
use super::camera::Camera;
use super::image::RasterImage;
use super::raster::{rasterize, GBuffer};
use super::silhouette::{silhouette_edges, soft_silhouette_with, SoftSilhouette};
use crate::tetra::mesh::TriMesh;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone)]
pub struct NormalAlphaRender {
    pub gbuffer: GBuffer,
    pub silhouette: SoftSilhouette,
    /// RGBA image; RGB is 0 on background.
    pub image: RasterImage,
}

pub fn normal_alpha_image(gb: &GBuffer, sil: &SoftSilhouette) -> RasterImage {
    let r = gb.camera.rotation();
    let mut img = RasterImage::new(gb.width, gb.height, 4);
    for i in 0..gb.pixel_count() {
        let px = img.pixel_mut(i);
        if gb.face[i].is_some() {
            let n = r * gb.normal[i];
            for k in 0..3 {
                px[k] = 0.5 * (n[k] + 1.0);
            }
        }
        px[3] = sil.alpha[i];
    }
    img
}

pub fn render_normal_alpha(
    mesh: &TriMesh,
    camera: &Camera,
    sharpness: f64,
) -> Result<NormalAlphaRender> {
    let gbuffer = rasterize(mesh, camera);
    let edges = silhouette_edges(mesh, camera);
    let silhouette = soft_silhouette_with(mesh, camera, sharpness, &gbuffer.mask(), &edges)?;
    let image = normal_alpha_image(&gbuffer, &silhouette);
    Ok(NormalAlphaRender {
        gbuffer,
        silhouette,
        image,
    })
}

impl NormalAlphaRender {
    /// Replays the render on a perturbed mesh with face assignment,
    /// barycentrics, hard mask and silhouette edges held fixed.
    pub fn replay(&self, mesh: &TriMesh) -> Result<NormalAlphaRender> {
        let cam = self.gbuffer.camera;
        let gbuffer = self.gbuffer.reinterpolate(mesh);
        let silhouette = soft_silhouette_with(
            mesh,
            &cam,
            self.silhouette.sharpness,
            &self.silhouette.hard,
            &self.silhouette.edges,
        )?;
        let image = normal_alpha_image(&gbuffer, &silhouette);
        Ok(NormalAlphaRender {
            gbuffer,
            silhouette,
            image,
        })
    }

    /// Gradient with respect to vertex positions given `dL/d image` and,
    /// optionally, `dL/d depth`. The mesh must carry the area-weighted
    /// normals it was rendered with.
    pub fn backward(
        &self,
        mesh: &TriMesh,
        grad: &RasterImage,
        grad_depth: Option<&RasterImage>,
    ) -> Result<Vec<Vec3>> {
        if !grad.same_shape(&self.image) {
            return Err(Error::invalid("normal-alpha gradient shape mismatch"));
        }
        let mut gn = RasterImage::new(grad.width, grad.height, 3);
        let mut ga = vec![0.0; grad.pixel_count()];
        for i in 0..grad.pixel_count() {
            let g = grad.pixel(i);
            if self.gbuffer.face[i].is_some() {
                let o = gn.pixel_mut(i);
                for k in 0..3 {
                    o[k] = 0.5 * g[k];
                }
            }
            ga[i] = g[3];
        }
        let rg = accumulate_gradients(
            mesh,
            &self.gbuffer,
            None,
            &PixelGradients {
                normal: Some(&gn),
                depth: grad_depth,
                color: None,
            },
        )?;
        let mut total = rg.total_position_gradient(mesh);
        let sil = self.silhouette.backward(mesh, &self.gbuffer.camera, &ga)?;
        for (t, s) in total.iter_mut().zip(sil) {
            *t += s;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::camera::camera_from_spherical;
    use crate::tetra::mesh::{compute_vertex_normals, icosphere};

    #[test]
    fn backward_matches_replay_fd() {
        let m = compute_vertex_normals(&icosphere(0.7, 2));
        let c = camera_from_spherical(30.0, 15.0, 3.0, 40.0, Vec3::zeros(), (32, 32)).unwrap();
        let base = render_normal_alpha(&m, &c, 1.0).unwrap();
        let w = RasterImage::from_data(
            32,
            32,
            4,
            (0..32 * 32 * 4)
                .map(|i| ((i * 13) % 11) as f64 / 11.0 - 0.45)
                .collect(),
        )
        .unwrap();
        let loss = |mesh: &TriMesh| {
            let r = base.replay(&compute_vertex_normals(mesh)).unwrap();
            r.image
                .data
                .iter()
                .zip(&w.data)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let g = base.backward(&m, &w, None).unwrap();
        let h = 1e-6;
        for v in (0..m.positions.len())
            .filter(|&v| g[v].norm() > 1e-3)
            .take(10)
        {
            for k in 0..3 {
                let mut p = m.clone();
                p.positions[v][k] += h;
                let lp = loss(&p);
                p.positions[v][k] -= 2.0 * h;
                let fd = (lp - loss(&p)) / (2.0 * h);
                assert!(
                    (fd - g[v][k]).abs() < 1e-5 * g[v].norm().max(1.0),
                    "v{v}: {fd} vs {}",
                    g[v][k]
                );
            }
        }
    }

    #[test]
    fn background_rgb_is_zero() {
        let m = compute_vertex_normals(&icosphere(0.5, 2));
        let c = camera_from_spherical(0.0, 0.0, 3.0, 40.0, Vec3::zeros(), (24, 24)).unwrap();
        let r = render_normal_alpha(&m, &c, 2.0).unwrap();
        assert!(r.image.pixel(0)[..3].iter().all(|v| *v == 0.0));
        let centre = r.image.pixel(12 * 24 + 12);
        assert!((centre[2] - 1.0).abs() < 0.05 && centre[3] > 0.99);
    }
}
