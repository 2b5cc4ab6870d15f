//! The geometry stage: DMTet initialization from a mesh, the two-branch
//! sculpting step and the full refine loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::GeometryStageConfig;
use super::losses::{reference_losses_for_render, ReferenceLosses};
use super::supervision::ReferenceSupervision;
use crate::guidance::{sds_gradient, ConditionBuilder, DiffusionSchedule, GuidanceProvider};
use crate::optim::Adam;
use crate::render::{render_normal_alpha, sample_camera, NormalAlphaRender, RasterImage};
use crate::tetra::mesh::{compute_vertex_normals, write_obj};
use crate::tetra::mt::surface_backward;
use crate::tetra::{
    build_tet_grid, marching_tetrahedra, Aabb, DmtetParams, ExtractedSurface, MeshSdf,
    ParamGradients, TetGrid, TriMesh,
};
use crate::{Error, Result, Vec3};

pub const STAGE_NAME: &str = "geometry";

/// Loss values of a reference-view branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceLossValues {
    pub mask: f64,
    pub normal: f64,
    pub depth: Option<f64>,
    pub total: f64,
}

impl From<&ReferenceLosses> for ReferenceLossValues {
    fn from(l: &ReferenceLosses) -> Self {
        Self {
            mask: l.mask,
            normal: l.normal,
            depth: l.depth,
            total: l.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub iteration: usize,
    pub reference: Option<ReferenceLossValues>,
    pub timestep: Option<usize>,
    /// RMS distance between the render and the provider's one-step
    /// denoised estimate on the random view.
    pub isd_residual: Option<f64>,
    pub surface_vertices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SculptState {
    pub grid: TetGrid,
    pub dmtet: DmtetParams,
    pub adam_sdf: Adam,
    /// Over the flattened `xyz` displacements.
    pub adam_deform: Adam,
    /// Refine steps taken so far.
    pub iteration: usize,
    pub history: Vec<StepMetrics>,
    /// Per-iteration loss of the initial fit.
    pub fit_history: Vec<f64>,
}

impl SculptState {
    pub fn new(grid: TetGrid, dmtet: DmtetParams, config: &GeometryStageConfig) -> Result<Self> {
        dmtet.check(&grid)?;
        let n = grid.vertices.len();
        Ok(Self {
            adam_sdf: Adam::new(n, config.adam),
            adam_deform: Adam::new(3 * n, config.adam),
            grid,
            dmtet,
            iteration: 0,
            history: Vec::new(),
            fit_history: Vec::new(),
        })
    }

    pub fn extract(&self) -> Result<ExtractedSurface> {
        marching_tetrahedra(&self.grid, &self.dmtet)
    }

    /// Extracted surface with vertex normals; an empty surface is an error.
    pub fn mesh(&self) -> Result<TriMesh> {
        Ok(non_empty(self.extract()?)?.1)
    }

    pub fn apply_gradients(&mut self, g: &ParamGradients, lr_sdf: f64, lr_deform: f64) {
        self.adam_sdf.step(&mut self.dmtet.sdf, &g.sdf, lr_sdf);
        let mut flat: Vec<f64> = self
            .dmtet
            .deform
            .iter()
            .flat_map(|d| [d.x, d.y, d.z])
            .collect();
        let gflat: Vec<f64> = g.deform.iter().flat_map(|d| [d.x, d.y, d.z]).collect();
        self.adam_deform.step(&mut flat, &gflat, lr_deform);
        for (d, c) in self.dmtet.deform.iter_mut().zip(flat.chunks_exact(3)) {
            *d = Vec3::new(c[0], c[1], c[2]);
        }
        self.dmtet.project_deform(&self.grid);
    }
}

fn non_empty(surface: ExtractedSurface) -> Result<(ExtractedSurface, TriMesh)> {
    if surface.mesh.is_empty() {
        return Err(Error::Degenerate(
            "the sdf has no zero crossing; extracted surface is empty".into(),
        ));
    }
    let mesh = compute_vertex_normals(&surface.mesh);
    Ok((surface, mesh))
}

/// Pulls image and depth gradients of a normal-alpha render back onto the
/// grid parameters.
pub fn geometry_backward(
    grid: &TetGrid,
    params: &DmtetParams,
    surface: &ExtractedSurface,
    mesh: &TriMesh,
    render: &NormalAlphaRender,
    grad_image: &RasterImage,
    grad_depth: Option<&RasterImage>,
) -> Result<ParamGradients> {
    let gv = render.backward(mesh, grad_image, grad_depth)?;
    Ok(surface_backward(grid, params, surface, &gv))
}

/// Builds the grid, initializes the sdf from `initial_mesh` and fits it to
/// normal-alpha renders of that mesh from random cameras.
pub fn fit_dmtet_to_initial(
    initial_mesh: &TriMesh,
    config: &GeometryStageConfig,
) -> Result<SculptState> {
    config.validate()?;
    if initial_mesh.is_empty() {
        return Err(Error::invalid("initial mesh is empty"));
    }
    let bounds = Aabb::cube(config.grid_half_extent);
    if !bounds.contains_box(&initial_mesh.bounds()) {
        return Err(Error::invalid(format!(
            "initial mesh does not fit inside the grid cube of half extent {}",
            config.grid_half_extent
        )));
    }
    let grid = build_tet_grid(config.grid_resolution as usize, bounds)?;
    let target_mesh = compute_vertex_normals(initial_mesh);
    let sdf = MeshSdf::new(target_mesh.clone())?;
    let dmtet = DmtetParams::from_sdf(&grid, |p| sdf.eval(p));
    let mut state = SculptState::new(grid, dmtet, config)?;

    let size = config.fit_render_size as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xf17f_17f1);
    for it in 0..config.fit_iterations as usize {
        let camera = sample_camera(&config.camera_ranges, &mut rng, Vec3::zeros(), (size, size))?;
        let target = render_normal_alpha(&target_mesh, &camera, config.sharpness)?.image;
        let step = (|| {
            let (surface, mesh) = non_empty(state.extract()?)?;
            let render = render_normal_alpha(&mesh, &camera, config.sharpness)?;
            let scale = 2.0 / render.image.data.len() as f64;
            let mut loss = 0.0;
            let mut grad = render.image.clone();
            for (g, t) in grad.data.iter_mut().zip(&target.data) {
                let d = *g - t;
                loss += d * d;
                *g = scale * d;
            }
            let pg = geometry_backward(
                &state.grid,
                &state.dmtet,
                &surface,
                &mesh,
                &render,
                &grad,
                None,
            )?;
            Ok((0.5 * scale * loss, pg))
        })();
        let (loss, pg) = step.map_err(|e: Error| e.in_stage(STAGE_NAME, it))?;
        state.apply_gradients(&pg, config.lr_sdf, config.lr_deform);
        state.fit_history.push(loss);
    }
    Ok(state)
}

/// One refine step. Early iterations run both the reference and the random
/// branch; later ones pick the reference branch with the configured
/// probability. On error the state is left untouched.
#[allow(clippy::too_many_arguments)]
pub fn sculpt_step(
    state: &mut SculptState,
    supervision: &ReferenceSupervision,
    builder: &ConditionBuilder,
    provider: &dyn GuidanceProvider,
    schedule: &DiffusionSchedule,
    config: &GeometryStageConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepMetrics> {
    let it = state.iteration;
    let (metrics, grads) =
        step_gradients(state, supervision, builder, provider, schedule, config, rng)
            .map_err(|e| e.in_stage(STAGE_NAME, it))?;
    state.apply_gradients(&grads, config.lr_sdf, config.lr_deform);
    state.iteration += 1;
    state.history.push(metrics.clone());
    Ok(metrics)
}

#[allow(clippy::too_many_arguments)]
fn step_gradients(
    state: &SculptState,
    supervision: &ReferenceSupervision,
    builder: &ConditionBuilder,
    provider: &dyn GuidanceProvider,
    schedule: &DiffusionSchedule,
    config: &GeometryStageConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(StepMetrics, ParamGradients)> {
    let it = state.iteration;
    let total = config.refine_iterations.max(1) as f64;
    let (use_ref, use_rand) = if (it as f64) < config.both_branches_fraction * total {
        (true, true)
    } else {
        let r = rng.random::<f64>() < config.reference_probability;
        (r, !r)
    };
    let (surface, mesh) = non_empty(state.extract()?)?;
    let mut grads = ParamGradients::zeros(state.grid.vertices.len());
    let mut metrics = StepMetrics {
        iteration: it,
        reference: None,
        timestep: None,
        isd_residual: None,
        surface_vertices: mesh.positions.len(),
    };

    if use_ref {
        let render = render_normal_alpha(&mesh, &supervision.camera, config.sharpness)?;
        let losses = reference_losses_for_render(&render, supervision, &config.weights)?;
        let g = geometry_backward(
            &state.grid,
            &state.dmtet,
            &surface,
            &mesh,
            &render,
            &losses.grad_image,
            Some(&losses.grad_depth),
        )?;
        grads.add_assign(&g, 1.0);
        metrics.reference = Some((&losses).into());
    }

    if use_rand && config.weights.isd > 0.0 {
        let size = (supervision.camera.width, supervision.camera.height);
        let camera = sample_camera(
            &config.camera_ranges,
            rng,
            supervision.camera.look_at(),
            size,
        )?;
        let render = render_normal_alpha(&mesh, &camera, config.sharpness)?;
        let bundle = builder.bundle(&camera, Some(&mesh));
        let progress = it as f64 / total;
        let sample = sds_gradient(
            &render.image,
            &camera,
            &bundle,
            provider,
            schedule,
            &config.timesteps,
            progress,
            config.cfg_scale,
            rng,
        )?;
        let t = sample.t;
        let w = schedule.weight[t];
        if w > 0.0 {
            // x0 − x̂0 = √(1−ᾱ)/√ᾱ · (ε̂ − ε) and the gradient is w·(ε̂ − ε).
            let k = schedule.sqrt_one_minus_alpha_bar(t) / (schedule.sqrt_alpha_bar(t) * w);
            let ms =
                sample.grad.data.iter().map(|g| g * g).sum::<f64>() / sample.grad.data.len() as f64;
            metrics.isd_residual = Some(k * ms.sqrt());
        }
        let scale = config.weights.isd / render.image.pixel_count() as f64;
        let grad = sample.grad.map(|g| g * scale);
        let g = geometry_backward(
            &state.grid,
            &state.dmtet,
            &surface,
            &mesh,
            &render,
            &grad,
            None,
        )?;
        grads.add_assign(&g, 1.0);
        metrics.timestep = Some(t);
    }
    Ok((metrics, grads))
}

#[derive(Debug, Clone)]
pub struct GeometryOutcome {
    /// Final extracted mesh with vertex normals.
    pub mesh: TriMesh,
    pub state: SculptState,
}

/// Loss history as CSV, one row per refine step.
pub fn loss_csv(history: &[StepMetrics]) -> String {
    let mut s = String::from("iteration,mask,normal,depth,reference_total,timestep,isd_residual\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.9e}")).unwrap_or_default();
    for m in history {
        let r = m.reference;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            m.iteration,
            opt(r.map(|r| r.mask)),
            opt(r.map(|r| r.normal)),
            opt(r.and_then(|r| r.depth)),
            opt(r.map(|r| r.total)),
            m.timestep.map(|t| t.to_string()).unwrap_or_default(),
            opt(m.isd_residual),
        );
    }
    s
}

/// Fit, refine and extract. Checkpoint meshes and the loss CSV are written
/// to `checkpoint_dir` when one is given.
pub fn run_geometry_stage(
    initial_mesh: &TriMesh,
    supervision: &ReferenceSupervision,
    builder: &ConditionBuilder,
    provider: &dyn GuidanceProvider,
    config: &GeometryStageConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<GeometryOutcome> {
    config.validate()?;
    supervision.validate()?;
    let mut state = fit_dmtet_to_initial(initial_mesh, config)?;
    let schedule = DiffusionSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let every = config.checkpoint_every as usize;
    for _ in 0..config.refine_iterations {
        sculpt_step(
            &mut state,
            supervision,
            builder,
            provider,
            &schedule,
            config,
            &mut rng,
        )?;
        if let Some(dir) = checkpoint_dir {
            if every > 0 && state.iteration % every == 0 {
                let it = state.iteration;
                let mesh = state.mesh().map_err(|e| e.in_stage(STAGE_NAME, it))?;
                write_obj(&mesh, &dir.join(format!("geometry_{it:05}.obj")))?;
                write_loss_csv(&state.history, dir)?;
            }
        }
    }
    let mesh = state
        .mesh()
        .map_err(|e| e.in_stage(STAGE_NAME, state.iteration))?;
    if let Some(dir) = checkpoint_dir {
        write_loss_csv(&state.history, dir)?;
    }
    Ok(GeometryOutcome { mesh, state })
}

fn write_loss_csv(history: &[StepMetrics], dir: &Path) -> Result<()> {
    let path = dir.join("geometry_loss.csv");
    std::fs::write(&path, loss_csv(history)).map_err(|e| Error::io(&path, e))
}
