//! Orchestration: geometry stage, texture stage, metrics and export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{PipelineConfig, ProviderSpec};
use super::metrics::{chamfer_distance, mask_iou, psnr};
use super::provider::build_provider;
use super::report::{
    export_assets, export_texels, render_turntable, turntable_cameras, CurvePoint, ExportBundle,
    FinalMetrics, Manifest, RunReport, StageReport, StageStatus,
};
use crate::guidance::conditions::DEFAULT_IDENTITY_DIM;
use crate::guidance::{derive_identity, read_identity, ConditionBuilder, GuidanceProvider};
use crate::render::{rasterize, shade_texture};
use crate::sculpt::{run_geometry_stage, ReferenceSupervision};
use crate::tetra::align::LandmarkSet;
use crate::tetra::mesh::{read_obj, write_obj, TriMesh};
use crate::texture::{refine_csv, run_texture_stage, TextureOutcome};
use crate::{Error, Result};

pub const GEOMETRY_STAGE: &str = "geometry";
pub const TEXTURE_STAGE: &str = "texture";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const GEOMETRY_FINAL: &str = "geometry_final.obj";
pub const DEBUG_DIR: &str = "debug";
pub const CHAMFER_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StageSelection {
    Geometry,
    Texture,
    #[default]
    All,
}

impl StageSelection {
    pub fn runs_geometry(self) -> bool {
        matches!(self, Self::Geometry | Self::All)
    }

    pub fn runs_texture(self) -> bool {
        matches!(self, Self::Texture | Self::All)
    }
}

impl std::str::FromStr for StageSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometry" => Ok(Self::Geometry),
            "texture" => Ok(Self::Texture),
            "all" => Ok(Self::All),
            other => Err(Error::invalid(format!(
                "unknown stage `{other}`; expected geometry, texture or all"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub stage: StageSelection,
    /// Write per-view inpainting images under `debug/`.
    pub debug_dumps: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub manifest: Manifest,
    pub output_dir: PathBuf,
}

pub fn geometry_checkpoint_path(config: &PipelineConfig) -> PathBuf {
    config
        .paths
        .output_dir
        .join(CHECKPOINT_DIR)
        .join(GEOMETRY_FINAL)
}

fn load_identity(
    config: &PipelineConfig,
    sup: &ReferenceSupervision,
    provider: &dyn GuidanceProvider,
) -> Result<Vec<f64>> {
    match &config.paths.identity {
        Some(path) => read_identity(path),
        None => {
            let dim = match provider.identity_dim() {
                0 => DEFAULT_IDENTITY_DIM,
                d => d,
            };
            Ok(derive_identity(&sup.image, dim, config.seed))
        }
    }
}

fn load_landmarks(path: &Path) -> Result<LandmarkSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LandmarkSet::parse(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn read_optional(path: &Path) -> Result<Option<String>> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Runs the selected stages, computes metrics and exports assets into the
/// output directory. The texture stage always reads the geometry checkpoint
/// from disk, so a texture-only run after a geometry-only run reproduces a
/// full run exactly.
pub fn run_pipeline(config: &PipelineConfig, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    if options.stage.runs_texture()
        && matches!(config.provider, ProviderSpec::Oracle { .. })
        && config.paths.gt_texture.is_none()
    {
        return Err(Error::ConfigValidation {
            field: "paths.gt_texture".into(),
            message: "the oracle provider needs a ground-truth texture for the texture stage"
                .into(),
        });
    }
    let out = config.paths.output_dir.clone();
    let checkpoints = out.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&checkpoints).map_err(|e| Error::io(&checkpoints, e))?;

    let sup = ReferenceSupervision::load_dir(&config.paths.supervision_dir)?;
    let provider = build_provider(config)?;
    let identity = load_identity(config, &sup, provider.as_ref())?;
    let landmarks = config
        .paths
        .landmarks
        .as_deref()
        .map(load_landmarks)
        .transpose()?;
    let builder = ConditionBuilder::new(
        Some(&sup.image),
        identity,
        landmarks,
        config.text_tag.clone(),
    );
    let initial = read_obj(&config.paths.initial_mesh)?;
    let gt = config.paths.gt_mesh.as_deref().map(read_obj).transpose()?;

    let final_path = checkpoints.join(GEOMETRY_FINAL);
    let geometry_report = if options.stage.runs_geometry() {
        log::info!(
            "geometry stage: {} refine iterations",
            config.geometry.refine_iterations
        );
        let start = Instant::now();
        let outcome = run_geometry_stage(
            &initial,
            &sup,
            &builder,
            provider.as_ref(),
            &config.geometry_config(),
            Some(&checkpoints),
        )?;
        write_obj(&outcome.mesh, &final_path)?;
        let loss_curve = outcome
            .state
            .history
            .iter()
            .filter_map(|m| {
                m.reference.map(|r| CurvePoint {
                    iteration: m.iteration as u64,
                    loss: r.total,
                })
            })
            .collect();
        StageReport {
            name: GEOMETRY_STAGE.into(),
            status: StageStatus::Completed,
            iterations: outcome.state.iteration as u64,
            loss_curve,
            wall_clock_seconds: Some(start.elapsed().as_secs_f64()),
        }
    } else {
        if !final_path.is_file() {
            return Err(Error::io(
                &final_path,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "geometry checkpoint not found; run the geometry stage first",
                ),
            ));
        }
        StageReport {
            status: StageStatus::Resumed,
            ..StageReport::skipped(GEOMETRY_STAGE)
        }
    };
    let geometry_mesh = read_obj(&final_path)?;

    let mut texture_outcome: Option<TextureOutcome> = None;
    let texture_report = if options.stage.runs_texture() {
        log::info!(
            "texture stage: {} refinement steps",
            config.texture.refinement_steps
        );
        let start = Instant::now();
        let debug = options.debug_dumps.then(|| out.join(DEBUG_DIR));
        let outcome = run_texture_stage(
            &geometry_mesh,
            &sup.image,
            &sup.camera,
            &builder,
            provider.as_ref(),
            &config.texture_config(),
            debug.as_deref(),
        )?;
        let loss_curve = outcome
            .refine_history
            .iter()
            .map(|m| CurvePoint {
                iteration: m.iteration as u64,
                loss: m.losses.total,
            })
            .collect();
        let report = StageReport {
            name: TEXTURE_STAGE.into(),
            status: StageStatus::Completed,
            iterations: outcome.refine_history.len() as u64,
            loss_curve,
            wall_clock_seconds: Some(start.elapsed().as_secs_f64()),
        };
        texture_outcome = Some(outcome);
        report
    } else {
        StageReport::skipped(TEXTURE_STAGE)
    };

    let mut metrics = FinalMetrics::default();
    if let Some(gt) = &gt {
        metrics.chamfer = Some(chamfer_distance(&geometry_mesh, gt, CHAMFER_SAMPLES)?);
        metrics.chamfer_initial = Some(chamfer_distance(&initial, gt, CHAMFER_SAMPLES)?);
    }
    metrics.mask_iou = Some(mask_iou(
        &rasterize(&geometry_mesh, &sup.camera).mask(),
        &sup.mask_bits(),
    )?);

    let texels = texture_outcome
        .as_ref()
        .map(|t| export_texels(&t.state, config.texture.export_dilation as usize));
    if let (Some(t), Some(texels)) = (&texture_outcome, &texels) {
        let gb = rasterize(&t.mesh, &sup.camera);
        let render = shade_texture(&gb, texels).0;
        let both: Vec<bool> = gb
            .mask()
            .iter()
            .zip(sup.mask_bits())
            .map(|(&a, b)| a && b)
            .collect();
        metrics.reference_psnr = psnr(&render, &sup.image, Some(&both)).ok();
        metrics.coverage = Some(t.state.coverage_fraction(&t.texel_map));
        metrics.coverage_history = t.coverage_history.clone();
    }

    let report = RunReport {
        config_hash: config.hash()?,
        seed: config.seed,
        stages: vec![geometry_report, texture_report],
        metrics,
    };

    let final_mesh: &TriMesh = texture_outcome.as_ref().map_or(&geometry_mesh, |t| &t.mesh);
    let cameras = turntable_cameras(&sup.camera, config.render_resolution as usize)?;
    let turntable = render_turntable(final_mesh, texels.as_ref(), &cameras);
    let mut text_files = Vec::new();
    if let Some(csv) = read_optional(&checkpoints.join("geometry_loss.csv"))? {
        text_files.push(("geometry_loss.csv".to_string(), csv));
    }
    if let Some(t) = &texture_outcome {
        text_files.push((
            "texture_refine.csv".to_string(),
            refine_csv(&t.refine_history),
        ));
    }
    let coverage = texture_outcome
        .as_ref()
        .map(|t| t.state.coverage.as_slice());
    let bundle = ExportBundle {
        mesh: final_mesh,
        texture: texels.as_ref().zip(coverage),
        turntable: &turntable,
        text_files,
    };
    let manifest = export_assets(&report, &bundle, &out)?;
    log::info!(
        "exported {} files to {}",
        manifest.files.len(),
        out.display()
    );
    Ok(RunOutcome {
        report,
        manifest,
        output_dir: out,
    })
}
