//! Analytic guidance provider that denoises toward known target renders.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand_chacha::ChaCha8Rng;

use super::conditions::ConditionBundle;
use super::provider::{Capabilities, EpsilonPrediction, GuidanceProvider};
use super::schedule::DiffusionSchedule;
use crate::render::{
    gaussian_blur, rasterize, render_normal_alpha, shade_texture, Camera, RasterImage,
};
use crate::tetra::mesh::{compute_vertex_normals, TriMesh};
use crate::{Error, Result, Vec3};

pub type ColorField = Arc<dyn Fn(&Vec3) -> [f64; 3] + Send + Sync>;

/// How the ground-truth scene is turned into a target image.
#[derive(Clone)]
pub enum TargetAppearance {
    /// RGBA normal-plus-silhouette image, as distilled by the geometry stage.
    NormalAlpha { sharpness: f64 },
    /// RGB from a texture sampled through the mesh UVs.
    Texture(RasterImage),
    /// RGB as a function of the surface point.
    Field(ColorField),
}

impl std::fmt::Debug for TargetAppearance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NormalAlpha { sharpness } => write!(f, "NormalAlpha({sharpness})"),
            Self::Texture(t) => write!(f, "Texture({}x{})", t.width, t.height),
            Self::Field(_) => write!(f, "Field"),
        }
    }
}

pub const SCENE_CACHE_LIMIT: usize = 64;

type CameraKey = [u64; 9];

fn camera_key(c: &Camera) -> CameraKey {
    [
        c.azimuth.to_bits(),
        c.elevation.to_bits(),
        c.distance.to_bits(),
        c.fovy.to_bits(),
        c.look_at[0].to_bits(),
        c.look_at[1].to_bits(),
        c.look_at[2].to_bits(),
        c.width as u64,
        c.height as u64,
    ]
}

pub struct SyntheticTargetOracle {
    scene: Option<(TriMesh, TargetAppearance)>,
    /// Gaussian sigma (pixels) applied to targets used for inpainting.
    pub blur: f64,
    identity_dim: usize,
    cache: Mutex<HashMap<CameraKey, Arc<RasterImage>>>,
}

impl std::fmt::Debug for SyntheticTargetOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SyntheticTargetOracle")
            .field("appearance", &self.scene.as_ref().map(|s| &s.1))
            .field("blur", &self.blur)
            .field("identity_dim", &self.identity_dim)
            .finish()
    }
}

impl SyntheticTargetOracle {
    /// Targets rendered on demand from a ground-truth mesh.
    pub fn from_scene(
        mesh: &TriMesh,
        appearance: TargetAppearance,
        blur: f64,
        identity_dim: usize,
    ) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::invalid("oracle scene mesh is empty"));
        }
        if let TargetAppearance::Texture(_) = &appearance {
            if mesh
                .uvs
                .as_ref()
                .is_none_or(|u| u.len() != mesh.positions.len())
            {
                return Err(Error::invalid("textured oracle scene needs per-vertex UVs"));
            }
        }
        Ok(Self {
            scene: Some((compute_vertex_normals(mesh), appearance)),
            blur,
            identity_dim,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// A fixed set of camera-indexed targets; other cameras have none.
    pub fn from_targets(
        targets: Vec<(Camera, RasterImage)>,
        blur: f64,
        identity_dim: usize,
    ) -> Self {
        let cache = targets
            .into_iter()
            .map(|(c, img)| (camera_key(&c), Arc::new(img)))
            .collect();
        Self {
            scene: None,
            blur,
            identity_dim,
            cache: Mutex::new(cache),
        }
    }

    pub fn scene_mesh(&self) -> Option<&TriMesh> {
        self.scene.as_ref().map(|s| &s.0)
    }

    /// `x_gt(c)`. Scene renders are cached up to [`SCENE_CACHE_LIMIT`]
    /// entries; random training views rarely repeat.
    pub fn target(&self, camera: &Camera) -> Result<Arc<RasterImage>> {
        let key = camera_key(camera);
        if let Some(t) = self.cache.lock().expect("oracle cache").get(&key) {
            return Ok(t.clone());
        }
        let Some((mesh, appearance)) = &self.scene else {
            return Err(Error::MissingTarget(format!(
                "az {} el {} dist {} fovy {}",
                camera.azimuth, camera.elevation, camera.distance, camera.fovy
            )));
        };
        let img = Arc::new(render_target(mesh, appearance, camera)?);
        let mut cache = self.cache.lock().expect("oracle cache");
        if cache.len() < SCENE_CACHE_LIMIT {
            cache.insert(key, img.clone());
        }
        Ok(img)
    }
}

pub fn render_target(
    mesh: &TriMesh,
    appearance: &TargetAppearance,
    camera: &Camera,
) -> Result<RasterImage> {
    Ok(match appearance {
        TargetAppearance::NormalAlpha { sharpness } => {
            render_normal_alpha(mesh, camera, *sharpness)?.image
        }
        TargetAppearance::Texture(tex) => shade_texture(&rasterize(mesh, camera), tex).0,
        TargetAppearance::Field(f) => {
            let gb = rasterize(mesh, camera);
            let mut img = RasterImage::new(camera.width, camera.height, 3);
            for i in 0..gb.pixel_count() {
                if let Some(face) = gb.face[i] {
                    let vs = mesh.faces[face as usize];
                    let b = gb.bary[i];
                    let p: Vec3 = (0..3).map(|k| mesh.positions[vs[k] as usize] * b[k]).sum();
                    img.pixel_mut(i).copy_from_slice(&f(&p));
                }
            }
            img
        }
    })
}

impl GuidanceProvider for SyntheticTargetOracle {
    fn capabilities(&self) -> Capabilities {
        Capabilities::all()
    }

    fn identity_dim(&self) -> usize {
        self.identity_dim
    }

    /// `ε̂ = (x_t − √ᾱ·x_gt)/√(1−ᾱ)`; conditional and unconditional coincide.
    fn predict_epsilon(
        &self,
        x_t: &RasterImage,
        t: usize,
        camera: &Camera,
        _conditions: &ConditionBundle,
        schedule: &DiffusionSchedule,
    ) -> Result<EpsilonPrediction> {
        schedule.check_timestep(t)?;
        let gt = self.target(camera)?;
        if !gt.same_shape(x_t) {
            return Err(Error::invalid(format!(
                "oracle target is {}x{}x{}, query is {}x{}x{}",
                gt.width, gt.height, gt.channels, x_t.width, x_t.height, x_t.channels
            )));
        }
        let (a, b) = (
            schedule.sqrt_alpha_bar(t),
            schedule.sqrt_one_minus_alpha_bar(t),
        );
        let mut eps = x_t.clone();
        for (e, g) in eps.data.iter_mut().zip(&gt.data) {
            *e = (*e - a * g) / b;
        }
        Ok(EpsilonPrediction {
            cond: eps,
            uncond: None,
        })
    }

    /// The one-step estimate is `x_gt` whatever the noise, so it is returned
    /// directly instead of through a noising round trip.
    fn refine(
        &self,
        x0: &RasterImage,
        t: usize,
        camera: &Camera,
        _conditions: &ConditionBundle,
        schedule: &DiffusionSchedule,
        _rng: &mut ChaCha8Rng,
    ) -> Result<RasterImage> {
        schedule.check_timestep(t)?;
        let gt = self.target(camera)?;
        if !gt.same_shape(x0) {
            return Err(Error::invalid(
                "oracle target shape does not match the refinement input",
            ));
        }
        Ok((*gt).clone())
    }

    fn inpaint(
        &self,
        partial: &RasterImage,
        known: &[bool],
        camera: &Camera,
        _conditions: &ConditionBundle,
    ) -> Result<RasterImage> {
        let gt = self.target(camera)?;
        if !gt.same_shape(partial) {
            return Err(Error::invalid(
                "oracle target shape does not match the inpainting input",
            ));
        }
        let mut out = gaussian_blur(&gt, self.blur);
        for (i, &k) in known.iter().enumerate() {
            if k {
                out.pixel_mut(i).copy_from_slice(partial.pixel(i));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::provider::{
        check_identity, noise_like, provider_inpaint, provider_refine, sds_gradient,
        sds_gradient_at, vsd_gradient,
    };
    use crate::guidance::schedule::TimestepSampler;
    use crate::render::camera_from_spherical;
    use crate::tetra::mesh::icosphere;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Camera {
        camera_from_spherical(0.0, 0.0, 3.0, 40.0, Vec3::zeros(), (6, 5)).unwrap()
    }

    fn gt() -> RasterImage {
        RasterImage::from_data(
            6,
            5,
            3,
            (0..90)
                .map(|i| (i as f64 * 0.37).sin() * 0.5 + 0.5)
                .collect(),
        )
        .unwrap()
    }

    fn oracle() -> SyntheticTargetOracle {
        SyntheticTargetOracle::from_targets(vec![(cam(), gt())], 0.0, 0)
    }

    #[test]
    fn gradient_vanishes_at_target() {
        let s = DiffusionSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = sds_gradient(
            &gt(),
            &cam(),
            &ConditionBundle::default(),
            &oracle(),
            &s,
            &TimestepSampler::default(),
            0.0,
            7.5,
            &mut rng,
        )
        .unwrap();
        assert!(g.grad.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_closed_form_independent_of_noise() {
        let s = DiffusionSchedule::default();
        let mut x0 = gt();
        for (k, v) in x0.data.iter_mut().enumerate() {
            *v += 0.01 * k as f64 - 0.3;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in [20, 120, 500, 979] {
            let eps = noise_like(&x0, &mut rng);
            let g = sds_gradient_at(
                &x0,
                &cam(),
                &ConditionBundle::default(),
                &oracle(),
                &s,
                t,
                &eps,
                7.5,
            )
            .unwrap();
            let k = s.weight[t] * s.signal_to_noise_root(t);
            for ((gv, a), b) in g.data.iter().zip(&x0.data).zip(&gt().data) {
                assert!((gv - k * (a - b)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scalar_descent_below_bound_is_monotone() {
        let s = DiffusionSchedule::default();
        let t = 300;
        let k = s.weight[t] * s.signal_to_noise_root(t);
        let c = camera_from_spherical(0.0, 0.0, 3.0, 40.0, Vec3::zeros(), (1, 1)).unwrap();
        let y = RasterImage::from_data(1, 1, 1, vec![0.8]).unwrap();
        let o = SyntheticTargetOracle::from_targets(vec![(c, y.clone())], 0.0, 0);
        let mut x = RasterImage::from_data(1, 1, 1, vec![-0.4]).unwrap();
        let lr = 1.9 / k;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut prev = (x.data[0] - 0.8).abs();
        for _ in 0..50 {
            let eps = noise_like(&x, &mut rng);
            let g =
                sds_gradient_at(&x, &c, &ConditionBundle::default(), &o, &s, t, &eps, 1.0).unwrap();
            x.data[0] -= lr * g.data[0];
            let d = (x.data[0] - 0.8).abs();
            assert!(d < prev || d < 1e-12);
            prev = d;
        }
    }

    #[test]
    fn vsd_cases() {
        let s = DiffusionSchedule::default();
        let ts = TimestepSampler::default();
        let x0 = gt().map(|v| v * 0.5);
        let o = oracle();
        let cb = ConditionBundle::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = vsd_gradient(&x0, &cam(), &cb, &o, &o, &s, &ts, 0.3, 1.0, &mut rng).unwrap();
        assert!(z.grad.data.iter().all(|v| *v == 0.0));
        // A second provider whose target is x0 predicts exactly ε.
        let self_oracle = SyntheticTargetOracle::from_targets(vec![(cam(), x0.clone())], 0.0, 0);
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let v = vsd_gradient(
            &x0,
            &cam(),
            &cb,
            &o,
            &self_oracle,
            &s,
            &ts,
            0.3,
            1.0,
            &mut r1,
        )
        .unwrap();
        let d = sds_gradient(&x0, &cam(), &cb, &o, &s, &ts, 0.3, 1.0, &mut r2).unwrap();
        assert_eq!(v.t, d.t);
        assert!(v.grad.max_abs_diff(&d.grad) < 1e-9);
    }

    #[test]
    fn inpaint_cases() {
        let o = oracle();
        let partial = RasterImage::filled(6, 5, 3, 0.5);
        let cb = ConditionBundle::default();
        let all = provider_inpaint(&o, &partial, &[true; 30], &cam(), &cb).unwrap();
        assert_eq!(all, partial);
        let none = provider_inpaint(&o, &partial, &[false; 30], &cam(), &cb).unwrap();
        assert_eq!(none, gt());
        let half: Vec<bool> = (0..30).map(|i| i % 6 < 3).collect();
        let h = provider_inpaint(&o, &partial, &half, &cam(), &cb).unwrap();
        for i in 0..30 {
            let g = gt();
            let expect = if half[i] {
                partial.pixel(i)
            } else {
                g.pixel(i)
            };
            assert_eq!(h.pixel(i), expect);
        }
    }

    #[test]
    fn refine_recovers_target() {
        let o = oracle();
        let cb = ConditionBundle::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tiny = crate::guidance::schedule::make_schedule(1000, 1e-8, 0.012).unwrap();
        let x0 = RasterImage::filled(6, 5, 3, 0.1);
        let r = provider_refine(&o, &x0, 0, &cam(), &cb, &tiny, &mut rng).unwrap();
        assert!(r.max_abs_diff(&gt()) < 1e-6);
        let s = DiffusionSchedule::default();
        let r = provider_refine(&o, &gt(), 120, &cam(), &cb, &s, &mut rng).unwrap();
        assert!(r.max_abs_diff(&gt()) < 1e-12);
        assert!(provider_refine(&o, &gt(), 1000, &cam(), &cb, &s, &mut rng).is_err());
    }

    #[test]
    fn identity_dimension_contract() {
        let o = SyntheticTargetOracle::from_targets(vec![], 0.0, 512);
        let ok = ConditionBundle {
            identity: vec![0.0; 512],
            ..Default::default()
        };
        let bad = ConditionBundle {
            identity: vec![0.0; 7],
            ..Default::default()
        };
        assert!(check_identity(&o, &ok).is_ok());
        assert!(matches!(
            check_identity(&o, &bad),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn unknown_camera_is_missing_target() {
        let other = camera_from_spherical(10.0, 0.0, 3.0, 40.0, Vec3::zeros(), (6, 5)).unwrap();
        let e = oracle().target(&other).unwrap_err();
        assert!(matches!(e, Error::MissingTarget(_)));
    }

    #[test]
    fn scene_targets_are_cached_and_deterministic() {
        let o = SyntheticTargetOracle::from_scene(
            &icosphere(0.7, 2),
            TargetAppearance::NormalAlpha { sharpness: 2.0 },
            0.0,
            0,
        )
        .unwrap();
        let c = camera_from_spherical(20.0, 5.0, 3.0, 40.0, Vec3::zeros(), (24, 24)).unwrap();
        let a = o.target(&c).unwrap();
        let b = o.target(&c).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(a.channels, 4);
        let fresh = render_target(
            o.scene_mesh().unwrap(),
            &TargetAppearance::NormalAlpha { sharpness: 2.0 },
            &c,
        )
        .unwrap();
        assert_eq!(*a, fresh);
    }
}
