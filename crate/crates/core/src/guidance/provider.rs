//! The guidance-provider contract and the score-distillation estimators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::conditions::ConditionBundle;
use super::schedule::{add_noise, predict_x0, DiffusionSchedule, TimestepSampler};
use crate::render::{Camera, RasterImage};
use crate::{Error, Result};

pub const DEFAULT_CFG_SCALE: f64 = 7.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub predict_epsilon: bool,
    pub inpaint: bool,
    pub refine: bool,
}

impl Capabilities {
    pub fn all() -> Self {
        Self {
            predict_epsilon: true,
            inpaint: true,
            refine: true,
        }
    }

    pub fn to_bits(self) -> u8 {
        self.predict_epsilon as u8 | (self.inpaint as u8) << 1 | (self.refine as u8) << 2
    }

    pub fn from_bits(b: u8) -> Self {
        Self {
            predict_epsilon: b & 1 != 0,
            inpaint: b & 2 != 0,
            refine: b & 4 != 0,
        }
    }
}

/// Conditional and (optionally) unconditional noise predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonPrediction {
    pub cond: RasterImage,
    pub uncond: Option<RasterImage>,
}

impl EpsilonPrediction {
    /// Classifier-free guidance blend `uncond + s·(cond − uncond)`.
    pub fn guided(&self, cfg_scale: f64) -> RasterImage {
        match &self.uncond {
            None => self.cond.clone(),
            Some(u) => {
                let mut out = u.clone();
                for (o, c) in out.data.iter_mut().zip(&self.cond.data) {
                    *o += cfg_scale * (c - *o);
                }
                out
            }
        }
    }
}

/// A denoiser. Implementations must be deterministic given their inputs
/// and safe for concurrent read-only use.
pub trait GuidanceProvider: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Required identity-vector length; 0 accepts any length.
    fn identity_dim(&self) -> usize;

    fn conditioning_channels(&self) -> Vec<String> {
        vec![]
    }

    fn predict_epsilon(
        &self,
        _x_t: &RasterImage,
        _t: usize,
        _camera: &Camera,
        _conditions: &ConditionBundle,
        _schedule: &DiffusionSchedule,
    ) -> Result<EpsilonPrediction> {
        Err(Error::UnsupportedCapability("predict_epsilon"))
    }

    /// Returns a full image; callers composite the known pixels back.
    fn inpaint(
        &self,
        _partial: &RasterImage,
        _known: &[bool],
        _camera: &Camera,
        _conditions: &ConditionBundle,
    ) -> Result<RasterImage> {
        Err(Error::UnsupportedCapability("inpaint"))
    }

    /// Noise `x0` to timestep `t` and denoise in one step. The default uses
    /// the guided noise prediction.
    fn refine(
        &self,
        x0: &RasterImage,
        t: usize,
        camera: &Camera,
        conditions: &ConditionBundle,
        schedule: &DiffusionSchedule,
        rng: &mut ChaCha8Rng,
    ) -> Result<RasterImage> {
        if !self.capabilities().predict_epsilon {
            return Err(Error::UnsupportedCapability("refine"));
        }
        let eps = noise_like(x0, rng);
        let x_t = add_noise(x0, t, &eps, schedule)?;
        let pred = self.predict_epsilon(&x_t, t, camera, conditions, schedule)?;
        predict_x0(&x_t, t, &pred.guided(DEFAULT_CFG_SCALE), schedule)
    }
}

pub fn noise_like(img: &RasterImage, rng: &mut impl Rng) -> RasterImage {
    RasterImage {
        data: (0..img.data.len())
            .map(|_| rng.sample(StandardNormal))
            .collect(),
        ..img.clone()
    }
}

pub fn check_identity(provider: &dyn GuidanceProvider, conditions: &ConditionBundle) -> Result<()> {
    let d = provider.identity_dim();
    if d != 0 && conditions.identity.len() != d {
        return Err(Error::invalid(format!(
            "identity vector has length {}, provider expects {d}",
            conditions.identity.len()
        )));
    }
    Ok(())
}

fn checked_prediction(
    provider: &dyn GuidanceProvider,
    x_t: &RasterImage,
    t: usize,
    camera: &Camera,
    conditions: &ConditionBundle,
    schedule: &DiffusionSchedule,
    cfg_scale: f64,
) -> Result<RasterImage> {
    if !provider.capabilities().predict_epsilon {
        return Err(Error::UnsupportedCapability("predict_epsilon"));
    }
    check_identity(provider, conditions)?;
    let p = provider.predict_epsilon(x_t, t, camera, conditions, schedule)?;
    let g = p.guided(cfg_scale);
    if !g.same_shape(x_t) {
        return Err(Error::Provider(format!(
            "noise prediction is {}x{}x{}, input is {}x{}x{}",
            g.width, g.height, g.channels, x_t.width, x_t.height, x_t.channels
        )));
    }
    if !g.is_finite() {
        return Err(Error::Provider(
            "noise prediction contains non-finite values".into(),
        ));
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillationSample {
    /// Pixel-space gradient estimate `dL/dx0`.
    pub grad: RasterImage,
    pub t: usize,
}

/// `w(t)·(ε̂ − ε)` for a given timestep and noise draw.
#[allow(clippy::too_many_arguments)]
pub fn sds_gradient_at(
    x0: &RasterImage,
    camera: &Camera,
    conditions: &ConditionBundle,
    provider: &dyn GuidanceProvider,
    schedule: &DiffusionSchedule,
    t: usize,
    eps: &RasterImage,
    cfg_scale: f64,
) -> Result<RasterImage> {
    let x_t = add_noise(x0, t, eps, schedule)?;
    let eps_hat = checked_prediction(provider, &x_t, t, camera, conditions, schedule, cfg_scale)?;
    let w = schedule.weight[t];
    let mut grad = eps_hat;
    for (g, e) in grad.data.iter_mut().zip(&eps.data) {
        *g = w * (*g - e);
    }
    Ok(grad)
}

/// Samples `t` at run `progress` and `ε`, then evaluates [`sds_gradient_at`].
#[allow(clippy::too_many_arguments)]
pub fn sds_gradient(
    x0: &RasterImage,
    camera: &Camera,
    conditions: &ConditionBundle,
    provider: &dyn GuidanceProvider,
    schedule: &DiffusionSchedule,
    sampler: &TimestepSampler,
    progress: f64,
    cfg_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DistillationSample> {
    if !provider.capabilities().predict_epsilon {
        return Err(Error::UnsupportedCapability("predict_epsilon"));
    }
    let t = sampler.sample(progress, schedule.num_steps, rng);
    let eps = noise_like(x0, rng);
    let grad = sds_gradient_at(
        x0, camera, conditions, provider, schedule, t, &eps, cfg_scale,
    )?;
    Ok(DistillationSample { grad, t })
}

/// `w(t)·(ε̂_main − ε̂_second)` with a shared `(t, ε)` draw.
#[allow(clippy::too_many_arguments)]
pub fn vsd_gradient(
    x0: &RasterImage,
    camera: &Camera,
    conditions: &ConditionBundle,
    main: &dyn GuidanceProvider,
    second: &dyn GuidanceProvider,
    schedule: &DiffusionSchedule,
    sampler: &TimestepSampler,
    progress: f64,
    cfg_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DistillationSample> {
    for p in [main, second] {
        if !p.capabilities().predict_epsilon {
            return Err(Error::UnsupportedCapability("predict_epsilon"));
        }
    }
    let t = sampler.sample(progress, schedule.num_steps, rng);
    let eps = noise_like(x0, rng);
    let x_t = add_noise(x0, t, &eps, schedule)?;
    let a = checked_prediction(main, &x_t, t, camera, conditions, schedule, cfg_scale)?;
    let b = checked_prediction(second, &x_t, t, camera, conditions, schedule, 1.0)?;
    let w = schedule.weight[t];
    let mut grad = a;
    for (g, s) in grad.data.iter_mut().zip(&b.data) {
        *g = w * (*g - s);
    }
    Ok(DistillationSample { grad, t })
}

/// Inpaints and then copies `partial` back over the known pixels.
pub fn provider_inpaint(
    provider: &dyn GuidanceProvider,
    partial: &RasterImage,
    known: &[bool],
    camera: &Camera,
    conditions: &ConditionBundle,
) -> Result<RasterImage> {
    if known.len() != partial.pixel_count() {
        return Err(Error::invalid("known mask does not match the image"));
    }
    if !provider.capabilities().inpaint {
        return Err(Error::UnsupportedCapability("inpaint"));
    }
    check_identity(provider, conditions)?;
    let mut out = provider.inpaint(partial, known, camera, conditions)?;
    if !out.same_shape(partial) {
        return Err(Error::Provider(
            "inpainted image has the wrong shape".into(),
        ));
    }
    for (i, &k) in known.iter().enumerate() {
        if k {
            out.pixel_mut(i).copy_from_slice(partial.pixel(i));
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn provider_refine(
    provider: &dyn GuidanceProvider,
    x0: &RasterImage,
    t: usize,
    camera: &Camera,
    conditions: &ConditionBundle,
    schedule: &DiffusionSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<RasterImage> {
    schedule.check_timestep(t)?;
    if !provider.capabilities().refine {
        return Err(Error::UnsupportedCapability("refine"));
    }
    check_identity(provider, conditions)?;
    let out = provider.refine(x0, t, camera, conditions, schedule, rng)?;
    if !out.same_shape(x0) {
        return Err(Error::Provider("refined image has the wrong shape".into()));
    }
    Ok(out)
}
