//! The texture stage: reference back-projection, progressive inpainting
//! along a camera trajectory and texel refinement against one-step
//! denoised renders.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::atlas::{unwrap_uv, UvAtlas};
use super::perceptual::perceptual_loss_with_grad;
use super::texels::{
    bake_view, blend_texture, build_texel_map, render_partial, TexelMap, TextureState,
};
use crate::guidance::{
    provider_inpaint, provider_refine, ConditionBuilder, ConditionBundle, DiffusionSchedule,
    GuidanceProvider,
};
use crate::optim::{Adam, AdamConfig};
use crate::render::{
    accumulate_gradients, camera_from_spherical, rasterize, sample_camera, shade_normal,
    shade_texture, Camera, CameraRanges, GBuffer, PixelGradients, RasterImage,
};
use crate::sculpt::config::{check_count, check_nonneg, check_probability, field_error};
use crate::tetra::mesh::compute_vertex_normals;
use crate::tetra::TriMesh;
use crate::{Error, Result};

pub const STAGE_NAME: &str = "texture";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineWeights {
    pub mse: f64,
    pub perceptual: f64,
    pub reference: f64,
}

impl Default for RefineWeights {
    fn default() -> Self {
        Self {
            mse: 1.0,
            perceptual: 0.1,
            reference: 1.0,
        }
    }
}

/// Texture-stage settings. Counts are signed for the same reason as in the
/// geometry config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureStageConfig {
    pub atlas_size: i64,
    pub gutter: i64,
    /// Offsets from the reference azimuth, in trajectory order.
    pub trajectory_azimuths: Vec<f64>,
    pub trajectory_elevation: f64,
    pub top_view: bool,
    pub top_view_elevation: f64,
    pub top_view_azimuth: f64,
    pub refinement_steps: i64,
    pub refinement_t: i64,
    pub weights: RefineWeights,
    /// Largest angle in degrees between view ray and normal that still bakes.
    pub grazing_angle: f64,
    pub camera_ranges: CameraRanges,
    /// Probability that a refinement step uses the reference camera.
    pub reference_probability: f64,
    pub lr: f64,
    pub adam: AdamConfig,
    /// Dilation rings applied to the exported texture.
    pub export_dilation: i64,
    pub seed: u64,
}

impl Default for TextureStageConfig {
    fn default() -> Self {
        Self {
            atlas_size: 1024,
            gutter: 4,
            trajectory_azimuths: vec![0.0, 45.0, -45.0, 90.0, -90.0, 135.0, -135.0, 180.0],
            trajectory_elevation: -15.0,
            top_view: true,
            top_view_elevation: 60.0,
            top_view_azimuth: 0.0,
            refinement_steps: 400,
            refinement_t: 120,
            weights: RefineWeights::default(),
            grazing_angle: 75.0,
            camera_ranges: CameraRanges::default(),
            reference_probability: 0.25,
            lr: 0.01,
            adam: AdamConfig::default(),
            export_dilation: 4,
            seed: 0,
        }
    }
}

fn check_elevation(prefix: &str, name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > -90.0 && v < 90.0) {
        return Err(field_error(
            format!("{prefix}{name}"),
            format!("must lie inside (-90, 90), got {v}"),
        ));
    }
    Ok(())
}

impl TextureStageConfig {
    pub fn validate_with_prefix(&self, prefix: &str) -> Result<()> {
        check_count(prefix, "atlas_size", self.atlas_size, 1)?;
        check_count(prefix, "gutter", self.gutter, 0)?;
        check_count(prefix, "refinement_steps", self.refinement_steps, 0)?;
        check_count(prefix, "refinement_t", self.refinement_t, 0)?;
        check_count(prefix, "export_dilation", self.export_dilation, 0)?;
        let steps = DiffusionSchedule::default().num_steps as i64;
        if self.refinement_t >= steps {
            return Err(field_error(
                format!("{prefix}refinement_t"),
                format!(
                    "must be below the schedule length {steps}, got {}",
                    self.refinement_t
                ),
            ));
        }
        if let Some(a) = self.trajectory_azimuths.iter().find(|a| !a.is_finite()) {
            return Err(field_error(
                format!("{prefix}trajectory_azimuths"),
                format!("must be finite, got {a}"),
            ));
        }
        check_elevation(prefix, "trajectory_elevation", self.trajectory_elevation)?;
        check_elevation(prefix, "top_view_elevation", self.top_view_elevation)?;
        if !self.top_view_azimuth.is_finite() {
            return Err(field_error(
                format!("{prefix}top_view_azimuth"),
                "must be finite",
            ));
        }
        check_nonneg(prefix, "weights.mse", self.weights.mse)?;
        check_nonneg(prefix, "weights.perceptual", self.weights.perceptual)?;
        check_nonneg(prefix, "weights.reference", self.weights.reference)?;
        if !(self.grazing_angle > 0.0 && self.grazing_angle <= 90.0) {
            return Err(field_error(
                format!("{prefix}grazing_angle"),
                "must lie in (0, 90]",
            ));
        }
        check_probability(prefix, "reference_probability", self.reference_probability)?;
        check_nonneg(prefix, "lr", self.lr)?;
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
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_prefix("")
    }

    /// Desk-scale settings: a 256² atlas.
    pub fn desk() -> Self {
        Self {
            atlas_size: 256,
            gutter: 2,
            ..Self::default()
        }
    }
}

/// Ordered inpainting cameras; the first is the reference camera.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPlan {
    pub cameras: Vec<Camera>,
}

/// Reference camera, then one camera per azimuth offset at the trajectory
/// elevation, then the top view. Distance, field of view, target and image
/// size follow the reference camera.
pub fn plan_trajectory(reference: &Camera, config: &TextureStageConfig) -> Result<TrajectoryPlan> {
    reference.validate()?;
    let at = |az: f64, el: f64| {
        camera_from_spherical(
            reference.azimuth + az,
            el,
            reference.distance,
            reference.fovy,
            reference.look_at(),
            (reference.width, reference.height),
        )
    };
    let mut cameras = vec![*reference];
    for &az in &config.trajectory_azimuths {
        cameras.push(at(az, config.trajectory_elevation)?);
    }
    if config.top_view {
        cameras.push(at(config.top_view_azimuth, config.top_view_elevation)?);
    }
    Ok(TrajectoryPlan { cameras })
}

/// Normal-map condition: `(n + 1) / 2` of camera-space normals, zero on
/// background.
pub fn normal_condition(gb: &GBuffer) -> RasterImage {
    let mut img = shade_normal(gb);
    for i in 0..gb.pixel_count() {
        if gb.face[i].is_some() {
            for v in img.pixel_mut(i) {
                *v = 0.5 * (*v + 1.0);
            }
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintedView {
    /// Render of the current texture, grey where unknown.
    pub partial: RasterImage,
    pub known: Vec<bool>,
    /// Provider output, equal to `partial` on known pixels.
    pub image: RasterImage,
}

pub fn inpaint_view(
    state: &TextureState,
    camera: &Camera,
    mesh: &TriMesh,
    provider: &dyn GuidanceProvider,
    bundle: ConditionBundle,
) -> Result<InpaintedView> {
    let (partial, known) = render_partial(state, camera, mesh);
    let bundle = bundle.with_normal(normal_condition(&rasterize(mesh, camera)));
    let image = provider_inpaint(provider, &partial, &known, camera, &bundle)?;
    Ok(InpaintedView {
        partial,
        known,
        image,
    })
}

/// Bakes the reference view, then inpaints, bakes and blends each further
/// trajectory camera. Returns the texture and the coverage fraction after
/// each camera. Errors carry the trajectory index as the iteration.
#[allow(clippy::too_many_arguments)]
pub fn progressive_inpaint(
    mesh: &TriMesh,
    map: &TexelMap,
    reference_image: &RasterImage,
    plan: &TrajectoryPlan,
    builder: &ConditionBuilder,
    provider: &dyn GuidanceProvider,
    config: &TextureStageConfig,
    dump_dir: Option<&Path>,
) -> Result<(TextureState, Vec<f64>)> {
    let Some(reference) = plan.cameras.first() else {
        return Err(Error::invalid("trajectory has no cameras"));
    };
    let size = map.size;
    let mut state = bake_view(
        &TextureState::new(size),
        reference_image,
        reference,
        mesh,
        map,
        config.grazing_angle,
    )
    .map_err(|e| e.in_stage(STAGE_NAME, 0))?;
    let mut coverage = vec![state.coverage_fraction(map)];
    for (k, camera) in plan.cameras.iter().enumerate().skip(1) {
        let step = || -> Result<(TextureState, InpaintedView)> {
            let view = inpaint_view(
                &state,
                camera,
                mesh,
                provider,
                builder.bundle(camera, Some(mesh)),
            )?;
            let hat = bake_view(
                &TextureState::new(size),
                &view.image,
                camera,
                mesh,
                map,
                config.grazing_angle,
            )?;
            Ok((blend_texture(&state, &hat)?, view))
        };
        let (next, view) = step().map_err(|e| e.in_stage(STAGE_NAME, k))?;
        if let Some(dir) = dump_dir {
            view.partial
                .write_png(&dir.join(format!("partial_{k:02}.png")))?;
            RasterImage::from_mask(camera.width, camera.height, &view.known)
                .write_png(&dir.join(format!("known_{k:02}.png")))?;
            view.image
                .write_png(&dir.join(format!("inpainted_{k:02}.png")))?;
        }
        state = next;
        coverage.push(state.coverage_fraction(map));
    }
    Ok((state, coverage))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineLosses {
    pub mse: f64,
    pub perceptual: f64,
    /// Present on reference-camera draws.
    pub reference: Option<f64>,
    /// Weighted sum.
    pub total: f64,
}

/// Mean squared error over covered pixels and colour channels, and its
/// gradient added into `grad` with weight `w`.
fn covered_mse(
    x: &RasterImage,
    target: &RasterImage,
    gb: &GBuffer,
    w: f64,
    grad: &mut RasterImage,
) -> f64 {
    let n = (gb.covered_count() * 3) as f64;
    let mut sum = 0.0;
    for i in 0..gb.pixel_count() {
        if gb.face[i].is_none() {
            continue;
        }
        for c in 0..3 {
            let d = x.pixel(i)[c] - target.pixel(i)[c];
            sum += d * d;
            grad.pixel_mut(i)[c] += w * 2.0 * d / n;
        }
    }
    sum / n
}

/// Refinement loss of `texels` seen through `gb` and its gradient with
/// respect to the interleaved texel values. `x_hat` and `x_ref` are
/// constants.
pub fn refine_loss_and_grad(
    texels: &RasterImage,
    mesh: &TriMesh,
    gb: &GBuffer,
    x_hat: &RasterImage,
    x_ref: Option<&RasterImage>,
    weights: &RefineWeights,
) -> Result<(RefineLosses, Vec<f64>)> {
    let (x0, fp) = shade_texture(gb, texels);
    for target in std::iter::once(x_hat).chain(x_ref) {
        if !target.same_shape(&x0) {
            return Err(Error::invalid(format!(
                "refinement target is {}x{}x{}, render is {}x{}x{}",
                target.width, target.height, target.channels, x0.width, x0.height, x0.channels
            )));
        }
    }
    if gb.covered_count() == 0 {
        let losses = RefineLosses {
            mse: 0.0,
            perceptual: 0.0,
            reference: x_ref.map(|_| 0.0),
            total: 0.0,
        };
        return Ok((losses, vec![0.0; texels.data.len()]));
    }
    let mut grad = RasterImage::new(x0.width, x0.height, 3);
    let mse = covered_mse(&x0, x_hat, gb, weights.mse, &mut grad);
    let (perceptual, gp) = perceptual_loss_with_grad(&x0, x_hat)?;
    for (g, p) in grad.data.iter_mut().zip(&gp.data) {
        *g += weights.perceptual * p;
    }
    let reference = x_ref.map(|r| covered_mse(&x0, r, gb, weights.reference, &mut grad));
    let total = weights.mse * mse
        + weights.perceptual * perceptual
        + weights.reference * reference.unwrap_or(0.0);
    let pixel_grads = PixelGradients {
        color: Some(&grad),
        ..Default::default()
    };
    let g = accumulate_gradients(mesh, gb, Some(&fp), &pixel_grads)?;
    Ok((
        RefineLosses {
            mse,
            perceptual,
            reference,
            total,
        },
        g.texels,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineMetrics {
    pub iteration: usize,
    pub reference_view: bool,
    pub losses: RefineLosses,
}

/// Optimizer state of the refinement loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureRefiner {
    pub adam: Adam,
    pub iteration: usize,
    pub history: Vec<RefineMetrics>,
}

impl TextureRefiner {
    pub fn new(state: &TextureState, config: &TextureStageConfig) -> Self {
        Self {
            adam: Adam::new(state.texels.data.len(), config.adam),
            iteration: 0,
            history: Vec::new(),
        }
    }
}

/// The reference view used by the refinement loss.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceView<'a> {
    pub image: &'a RasterImage,
    pub camera: &'a Camera,
}

/// One refinement step. The geometry is frozen; only texels move, and they
/// are clamped to `[0, 1]` after the update. On error neither the texture
/// nor the refiner changes.
#[allow(clippy::too_many_arguments)]
pub fn refine_step(
    state: &mut TextureState,
    refiner: &mut TextureRefiner,
    mesh: &TriMesh,
    reference: ReferenceView<'_>,
    builder: &ConditionBuilder,
    provider: &dyn GuidanceProvider,
    schedule: &DiffusionSchedule,
    config: &TextureStageConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RefineMetrics> {
    let it = refiner.iteration;
    let (metrics, grad) = refine_gradients(
        state, it, mesh, reference, builder, provider, schedule, config, rng,
    )
    .map_err(|e| e.in_stage(STAGE_NAME, it))?;
    refiner.adam.step(&mut state.texels.data, &grad, config.lr);
    for v in &mut state.texels.data {
        *v = v.clamp(0.0, 1.0);
    }
    refiner.iteration += 1;
    refiner.history.push(metrics.clone());
    Ok(metrics)
}

#[allow(clippy::too_many_arguments)]
fn refine_gradients(
    state: &TextureState,
    iteration: usize,
    mesh: &TriMesh,
    reference: ReferenceView<'_>,
    builder: &ConditionBuilder,
    provider: &dyn GuidanceProvider,
    schedule: &DiffusionSchedule,
    config: &TextureStageConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(RefineMetrics, Vec<f64>)> {
    if !state.coverage.iter().any(|c| *c) {
        return Err(Error::invalid(
            "refinement needs a texture with some coverage",
        ));
    }
    let reference_view = rng.random::<f64>() < config.reference_probability;
    let rc = reference.camera;
    let camera = if reference_view {
        *rc
    } else {
        sample_camera(
            &config.camera_ranges,
            rng,
            rc.look_at(),
            (rc.width, rc.height),
        )?
    };
    let gb = rasterize(mesh, &camera);
    let (x0, _) = shade_texture(&gb, &state.texels);
    let bundle = builder
        .bundle(&camera, Some(mesh))
        .with_normal(normal_condition(&gb));
    let x_hat = provider_refine(
        provider,
        &x0,
        config.refinement_t as usize,
        &camera,
        &bundle,
        schedule,
        rng,
    )?;
    let x_ref = reference_view.then_some(reference.image);
    let (losses, grad) =
        refine_loss_and_grad(&state.texels, mesh, &gb, &x_hat, x_ref, &config.weights)?;
    Ok((
        RefineMetrics {
            iteration,
            reference_view,
            losses,
        },
        grad,
    ))
}

/// Refinement history as CSV, one row per step.
pub fn refine_csv(history: &[RefineMetrics]) -> String {
    let mut s = String::from("iteration,reference_view,mse,perceptual,reference,total\n");
    for m in history {
        let l = m.losses;
        let _ = writeln!(
            s,
            "{},{},{:.9e},{:.9e},{},{:.9e}",
            m.iteration,
            m.reference_view as u8,
            l.mse,
            l.perceptual,
            l.reference.map(|v| format!("{v:.9e}")).unwrap_or_default(),
            l.total
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TextureOutcome {
    /// The mesh the texture belongs to, with UVs and vertex normals.
    pub mesh: TriMesh,
    /// Present when the stage unwrapped the mesh itself.
    pub atlas: Option<UvAtlas>,
    pub texel_map: TexelMap,
    pub plan: TrajectoryPlan,
    pub state: TextureState,
    /// Coverage fraction after each trajectory camera.
    pub coverage_history: Vec<f64>,
    pub refine_history: Vec<RefineMetrics>,
}

/// Unwraps the mesh unless it already has UVs, inpaints along the planned
/// trajectory and refines. Per-view inpainting images and the refinement
/// CSV go to `dump_dir` when one is given.
pub fn run_texture_stage(
    mesh: &TriMesh,
    reference_image: &RasterImage,
    reference_camera: &Camera,
    builder: &ConditionBuilder,
    provider: &dyn GuidanceProvider,
    config: &TextureStageConfig,
    dump_dir: Option<&Path>,
) -> Result<TextureOutcome> {
    config.validate()?;
    reference_camera.validate()?;
    if reference_image.width != reference_camera.width
        || reference_image.height != reference_camera.height
        || reference_image.channels != 3
    {
        return Err(Error::invalid(
            "reference image must be RGB at the reference camera resolution",
        ));
    }
    if mesh.is_empty() {
        return Err(Error::Degenerate(
            "texture stage needs a non-empty mesh".into(),
        ));
    }
    let size = config.atlas_size as usize;
    let (mesh, atlas) = match &mesh.uvs {
        Some(uv) if uv.len() == mesh.positions.len() => {
            let m = if mesh.vertex_normals.is_some() {
                mesh.clone()
            } else {
                compute_vertex_normals(mesh)
            };
            (m, None)
        }
        _ => {
            let (m, a) = unwrap_uv(mesh, size, config.gutter as usize)?;
            (m, Some(a))
        }
    };
    let map = build_texel_map(&mesh, size)?;
    if let Some(dir) = dump_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let plan = plan_trajectory(reference_camera, config)?;
    let (mut state, coverage_history) = progressive_inpaint(
        &mesh,
        &map,
        reference_image,
        &plan,
        builder,
        provider,
        config,
        dump_dir,
    )?;

    let schedule = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut refiner = TextureRefiner::new(&state, config);
    let reference = ReferenceView {
        image: reference_image,
        camera: reference_camera,
    };
    for _ in 0..config.refinement_steps {
        refine_step(
            &mut state,
            &mut refiner,
            &mesh,
            reference,
            builder,
            provider,
            &schedule,
            config,
            &mut rng,
        )?;
    }
    if let Some(dir) = dump_dir {
        let path = dir.join("texture_refine.csv");
        std::fs::write(&path, refine_csv(&refiner.history)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TextureOutcome {
        mesh,
        atlas,
        texel_map: map,
        plan,
        state,
        coverage_history,
        refine_history: refiner.history,
    })
}
