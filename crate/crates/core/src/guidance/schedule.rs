//! Diffusion noise schedule and timestep sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::render::RasterImage;
use crate::{Error, Result};

pub const DEFAULT_NUM_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.012;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Per-step loss weight, `1 − ᾱ_t`.
    pub weight: Vec<f64>,
}

/// Scaled-linear ramp: `β_i = (√β_start + i/(T−1)·(√β_end − √β_start))²`.
pub fn make_schedule(
    num_steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<DiffusionSchedule> {
    if num_steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let (s0, s1) = (beta_start.sqrt(), beta_end.sqrt());
    let beta: Vec<f64> = (0..num_steps)
        .map(|i| {
            let f = if num_steps == 1 {
                0.0
            } else {
                i as f64 / (num_steps - 1) as f64
            };
            (s0 + f * (s1 - s0)).powi(2)
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(num_steps);
    let mut acc = 1.0;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    let weight = alpha_bar.iter().map(|a| 1.0 - a).collect();
    Ok(DiffusionSchedule {
        num_steps,
        beta_start,
        beta_end,
        beta,
        alpha_bar,
        weight,
    })
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_NUM_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule")
    }
}

impl DiffusionSchedule {
    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t >= self.num_steps {
            return Err(Error::invalid(format!(
                "timestep {t} out of range for a {}-step schedule",
                self.num_steps
            )));
        }
        Ok(())
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    /// `√ᾱ/√(1−ᾱ)`, the factor relating an x0 error to an epsilon error.
    pub fn signal_to_noise_root(&self, t: usize) -> f64 {
        self.sqrt_alpha_bar(t) / self.sqrt_one_minus_alpha_bar(t)
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn add_noise(
    x0: &RasterImage,
    t: usize,
    eps: &RasterImage,
    schedule: &DiffusionSchedule,
) -> Result<RasterImage> {
    schedule.check_timestep(t)?;
    if !x0.same_shape(eps) {
        return Err(Error::invalid("noise shape does not match the image"));
    }
    let (a, b) = (
        schedule.sqrt_alpha_bar(t),
        schedule.sqrt_one_minus_alpha_bar(t),
    );
    let mut out = x0.clone();
    for (o, e) in out.data.iter_mut().zip(&eps.data) {
        *o = a * *o + b * e;
    }
    Ok(out)
}

/// `x̂0 = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`.
pub fn predict_x0(
    x_t: &RasterImage,
    t: usize,
    eps_hat: &RasterImage,
    schedule: &DiffusionSchedule,
) -> Result<RasterImage> {
    schedule.check_timestep(t)?;
    if !x_t.same_shape(eps_hat) {
        return Err(Error::invalid(
            "noise prediction shape does not match the image",
        ));
    }
    let (a, b) = (
        schedule.sqrt_alpha_bar(t),
        schedule.sqrt_one_minus_alpha_bar(t),
    );
    let mut out = x_t.clone();
    for (o, e) in out.data.iter_mut().zip(&eps_hat.data) {
        *o = (*o - b * e) / a;
    }
    Ok(out)
}

/// Uniform timesteps over `[lower·T, upper·T]`, where the upper fraction
/// anneals linearly from `upper_start` to `upper_end` with run progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimestepSampler {
    pub lower: f64,
    pub upper_start: f64,
    pub upper_end: f64,
}

impl Default for TimestepSampler {
    fn default() -> Self {
        Self {
            lower: 0.02,
            upper_start: 0.98,
            upper_end: 0.5,
        }
    }
}

impl TimestepSampler {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !(ok(self.lower) && ok(self.upper_start) && ok(self.upper_end))
            || self.lower > self.upper_start
            || self.lower > self.upper_end
        {
            return Err(Error::invalid(
                "timestep fractions must satisfy 0 <= lower <= upper <= 1",
            ));
        }
        Ok(())
    }

    /// Inclusive timestep range at `progress ∈ [0, 1]`.
    pub fn range(&self, progress: f64, num_steps: usize) -> (usize, usize) {
        let p = progress.clamp(0.0, 1.0);
        let upper = self.upper_start + (self.upper_end - self.upper_start) * p;
        let max_t = num_steps - 1;
        let lo = ((self.lower * num_steps as f64).round() as usize).min(max_t);
        let hi = ((upper * num_steps as f64).round() as usize).clamp(lo, max_t);
        (lo, hi)
    }

    pub fn sample(&self, progress: f64, num_steps: usize, rng: &mut impl Rng) -> usize {
        let (lo, hi) = self.range(progress, num_steps);
        rng.random_range(lo..=hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_schedule_properties() {
        let s = make_schedule(1000, 0.00085, 0.012).unwrap();
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar[999] < 0.01);
        assert!((s.alpha_bar[0] - (1.0 - s.beta[0])).abs() < 1e-6);
        assert!(s.beta.iter().all(|b| *b > 0.0 && *b < 1.0));
        // Direct product, independently accumulated.
        let direct: f64 = (0..1000)
            .map(|i| {
                let b = (0.00085f64.sqrt()
                    + i as f64 / 999.0 * (0.012f64.sqrt() - 0.00085f64.sqrt()))
                .powi(2);
                1.0 - b
            })
            .product();
        assert!((direct - s.alpha_bar[999]).abs() < 1e-12);
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.01, 0.02).unwrap();
        assert_eq!(s.alpha_bar, vec![1.0 - 0.01]);
    }

    #[test]
    fn invalid_schedules() {
        assert!(make_schedule(10, 0.02, 0.01).is_err());
        assert!(make_schedule(0, 0.01, 0.02).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 0.01, 1.0).is_err());
    }

    #[test]
    fn noise_edge_cases() {
        let s = DiffusionSchedule::default();
        let x = RasterImage::from_data(2, 1, 1, vec![0.3, 0.7]).unwrap();
        let z = RasterImage::new(2, 1, 1);
        let xt = add_noise(&x, 500, &z, &s).unwrap();
        assert!((xt.data[0] - s.sqrt_alpha_bar(500) * 0.3).abs() < 1e-15);
        let tiny = make_schedule(10, 1e-8, 1e-7).unwrap();
        let e = RasterImage::filled(2, 1, 1, 1.0);
        assert!(add_noise(&x, 0, &e, &tiny).unwrap().max_abs_diff(&x) < 1e-3);
        assert!(add_noise(&x, 1000, &z, &s).is_err());
    }

    proptest! {
        #[test]
        fn noise_recovery_round_trip(t in 0usize..1000, vals in proptest::collection::vec(-2.0f64..2.0, 8)) {
            let s = DiffusionSchedule::default();
            let x = RasterImage::from_data(2, 2, 1, vals[..4].to_vec()).unwrap();
            let e = RasterImage::from_data(2, 2, 1, vals[4..].to_vec()).unwrap();
            let xt = add_noise(&x, t, &e, &s).unwrap();
            let back = predict_x0(&xt, t, &e, &s).unwrap();
            prop_assert!(back.max_abs_diff(&x) < 1e-9);
        }
    }

    #[test]
    fn sampler_anneals_upper_bound() {
        let ts = TimestepSampler::default();
        assert_eq!(ts.range(0.0, 1000), (20, 980));
        assert_eq!(ts.range(1.0, 1000), (20, 500));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let t = ts.sample(0.5, 1000, &mut rng);
            assert!((20..=740).contains(&t));
        }
    }
}
