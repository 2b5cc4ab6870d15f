use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use crate::guidance::{TimestepSampler, DEFAULT_CFG_SCALE};
use crate::optim::AdamConfig;
use crate::render::{CameraRanges, DEFAULT_SHARPNESS};
use crate::{Error, Result};

/// Geometry-stage settings. Counts are signed so that negative values in a
/// config file reach validation instead of failing to parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryStageConfig {
    pub grid_resolution: i64,
    /// The grid spans `[-e, e]³`.
    pub grid_half_extent: f64,
    pub fit_iterations: i64,
    /// Square render size used while fitting the initial mesh.
    pub fit_render_size: i64,
    pub refine_iterations: i64,
    pub weights: LossWeights,
    pub lr_sdf: f64,
    pub lr_deform: f64,
    pub adam: AdamConfig,
    pub camera_ranges: CameraRanges,
    /// Probability of a reference-view step once the warm-up is over.
    pub reference_probability: f64,
    /// Leading fraction of refine iterations that run both branches.
    pub both_branches_fraction: f64,
    pub cfg_scale: f64,
    pub timesteps: TimestepSampler,
    /// Soft-silhouette sharpness in 1/pixel.
    pub sharpness: f64,
    /// Checkpoint period in iterations; 0 disables checkpoints.
    pub checkpoint_every: i64,
    pub seed: u64,
}

impl Default for GeometryStageConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 512,
            grid_half_extent: 1.0,
            fit_iterations: 200,
            fit_render_size: 128,
            refine_iterations: 5000,
            weights: LossWeights::default(),
            lr_sdf: 1e-3,
            lr_deform: 1e-4,
            adam: AdamConfig::default(),
            camera_ranges: CameraRanges::default(),
            reference_probability: 0.25,
            both_branches_fraction: 0.1,
            cfg_scale: DEFAULT_CFG_SCALE,
            timesteps: TimestepSampler::default(),
            sharpness: DEFAULT_SHARPNESS,
            checkpoint_every: 500,
            seed: 0,
        }
    }
}

pub(crate) fn field_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::ConfigValidation {
        field: field.into(),
        message: message.into(),
    }
}

pub(crate) fn check_count(prefix: &str, name: &str, v: i64, min: i64) -> Result<()> {
    if v < min {
        return Err(field_error(
            format!("{prefix}{name}"),
            format!("must be at least {min}, got {v}"),
        ));
    }
    Ok(())
}

pub(crate) fn check_nonneg(prefix: &str, name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(field_error(
            format!("{prefix}{name}"),
            format!("must be finite and non-negative, got {v}"),
        ));
    }
    Ok(())
}

pub(crate) fn check_probability(prefix: &str, name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(field_error(
            format!("{prefix}{name}"),
            format!("must lie in [0, 1], got {v}"),
        ));
    }
    Ok(())
}

impl GeometryStageConfig {
    /// Field names in errors are prefixed with `prefix`.
    pub fn validate_with_prefix(&self, prefix: &str) -> Result<()> {
        check_count(prefix, "grid_resolution", self.grid_resolution, 1)?;
        check_count(prefix, "fit_iterations", self.fit_iterations, 0)?;
        check_count(prefix, "fit_render_size", self.fit_render_size, 1)?;
        check_count(prefix, "refine_iterations", self.refine_iterations, 0)?;
        check_count(prefix, "checkpoint_every", self.checkpoint_every, 0)?;
        if !(self.grid_half_extent.is_finite() && self.grid_half_extent > 0.0) {
            return Err(field_error(
                format!("{prefix}grid_half_extent"),
                "must be positive",
            ));
        }
        if let Some(w) = self.weights.first_invalid() {
            return Err(field_error(
                format!("{prefix}weights.{w}"),
                "must be finite and non-negative",
            ));
        }
        check_nonneg(prefix, "lr_sdf", self.lr_sdf)?;
        check_nonneg(prefix, "lr_deform", self.lr_deform)?;
        check_nonneg(prefix, "cfg_scale", self.cfg_scale)?;
        check_probability(prefix, "reference_probability", self.reference_probability)?;
        check_probability(
            prefix,
            "both_branches_fraction",
            self.both_branches_fraction,
        )?;
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return Err(field_error(
                format!("{prefix}sharpness"),
                "must be positive",
            ));
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(field_error(
                format!("{prefix}adam"),
                "betas must lie in [0, 1) and eps be positive",
            ));
        }
        self.camera_ranges
            .validate()
            .map_err(|e| field_error(format!("{prefix}camera_ranges"), e.to_string()))?;
        self.timesteps
            .validate()
            .map_err(|e| field_error(format!("{prefix}timesteps"), e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_prefix("")
    }

    /// Desk-scale settings: grid 32 and 600 refine steps.
    pub fn desk() -> Self {
        Self {
            grid_resolution: 32,
            fit_iterations: 100,
            fit_render_size: 64,
            refine_iterations: 600,
            checkpoint_every: 100,
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = GeometryStageConfig::default();
        assert_eq!(c.grid_resolution, 512);
        assert_eq!(c.refine_iterations, 5000);
        assert_eq!(
            c.weights,
            LossWeights {
                mask: 100.0,
                normal: 10.0,
                depth: 1.0,
                isd: 1.0
            }
        );
        assert_eq!((c.lr_sdf, c.lr_deform), (1e-3, 1e-4));
        assert_eq!(c.reference_probability, 0.25);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_fields() {
        let c = GeometryStageConfig {
            refine_iterations: -1,
            ..Default::default()
        };
        match c.validate_with_prefix("geometry.") {
            Err(Error::ConfigValidation { field, .. }) => {
                assert_eq!(field, "geometry.refine_iterations")
            }
            other => panic!("{other:?}"),
        }
        let mut c = GeometryStageConfig::default();
        c.weights.normal = -2.0;
        assert!(
            matches!(c.validate(), Err(Error::ConfigValidation { field, .. }) if field == "weights.normal")
        );
    }
}
