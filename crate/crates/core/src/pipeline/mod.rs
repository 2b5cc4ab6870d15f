//! End-to-end runs: configuration, provider construction, orchestration of
//! both stages, metrics, reports and asset export.

pub mod config;
pub mod demo;
pub mod metrics;
pub mod provider;
pub mod report;
pub mod run;


pub use config::{load_config, parse_config, PathsConfig, PipelineConfig, ProviderSpec};
pub use demo::{write_demo_assets, DemoSpec};
pub use metrics::{chamfer_distance, mask_iou, psnr};
pub use provider::{build_oracle, build_provider, serve_oracle, ChildTransport, StageRouter};
pub use report::{
    export_assets, read_manifest, render_turntable, turntable_cameras, ExportBundle, FinalMetrics,
    Manifest, RunReport, StageReport, StageStatus,
};
pub use run::{run_pipeline, RunOptions, RunOutcome, StageSelection};
