//! Geometry stage: fit a DMTet grid to an initial mesh, then sculpt it under
//! reference-view supervision and score distillation on random views.

pub mod config;
pub mod losses;
pub mod stage;
pub mod supervision;

#[cfg(test)]
mod tests;

pub use config::GeometryStageConfig;
pub use losses::{
    pearson_depth_loss, pearson_with_grad, reference_losses_for_render, LossWeights,
    ReferenceLosses,
};
pub use stage::{
    fit_dmtet_to_initial, geometry_backward, loss_csv, run_geometry_stage, sculpt_step,
    GeometryOutcome, ReferenceLossValues, SculptState, StepMetrics,
};
pub use supervision::ReferenceSupervision;
