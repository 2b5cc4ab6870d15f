//! Diffusion-guidance contract: noise schedules, conditioning signals, the
//! provider trait with an analytic oracle, score-distillation estimators and
//! the out-of-process plug-in protocol.

pub mod canny;
pub mod conditions;
pub mod oracle;
pub mod plugin;
pub mod provider;
pub mod schedule;

pub use canny::canny;
pub use conditions::{
    build_condition_bundle, derive_identity, read_identity, write_identity, ConditionBuilder,
    ConditionBundle,
};
pub use oracle::{ColorField, SyntheticTargetOracle, TargetAppearance};
pub use plugin::{serve, ExternalProvider};
pub use provider::{
    provider_inpaint, provider_refine, sds_gradient, sds_gradient_at, vsd_gradient, Capabilities,
    DistillationSample, EpsilonPrediction, GuidanceProvider, DEFAULT_CFG_SCALE,
};
pub use schedule::{add_noise, make_schedule, predict_x0, DiffusionSchedule, TimestepSampler};
