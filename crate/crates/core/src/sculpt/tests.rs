use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::guidance::{
    sds_gradient_at, ConditionBuilder, DiffusionSchedule, SyntheticTargetOracle, TargetAppearance,
};
use crate::pipeline::metrics::chamfer_distance;
use crate::render::{camera_from_spherical, render_normal_alpha, Camera, RasterImage};
use crate::tetra::{build_tet_grid, icosphere, marching_tetrahedra, Aabb, DmtetParams, TriMesh};
use crate::{Error, Vec3};

fn camera(az: f64, el: f64, size: usize) -> Camera {
    camera_from_spherical(az, el, 3.0, 40.0, Vec3::zeros(), (size, size)).unwrap()
}

fn sphere_state(res: usize, radius: f64) -> SculptState {
    let grid = build_tet_grid(res, Aabb::cube(1.0)).unwrap();
    let dmtet = DmtetParams::from_sdf(&grid, |p| p.norm() - radius);
    SculptState::new(grid, dmtet, &GeometryStageConfig::default()).unwrap()
}

fn ellipsoid(radii: Vec3) -> TriMesh {
    icosphere(1.0, 4).transformed(|p| p.component_mul(&radii))
}

#[test]
fn self_rendered_supervision_is_a_fixed_point() {
    let state = sphere_state(20, 0.55);
    let mesh = state.mesh().unwrap();
    let cam = camera(20.0, 10.0, 40);
    let sup = ReferenceSupervision::from_mesh(&mesh, &cam, None).unwrap();
    let weights = LossWeights::default();
    let render = render_normal_alpha(&mesh, &cam, 2.0).unwrap();
    let l = reference_losses_for_render(&render, &sup, &weights).unwrap();
    assert!(l.mask < 1e-6 && l.normal < 1e-6, "{} {}", l.mask, l.normal);
    assert!((l.depth.unwrap() + 1.0).abs() < 1e-12);
    assert!((l.total + weights.depth).abs() < 1e-6);
}

#[test]
fn inverted_mask_loss_is_near_one() {
    let state = sphere_state(20, 0.55);
    let mesh = state.mesh().unwrap();
    let cam = camera(0.0, 0.0, 40);
    let mut sup = ReferenceSupervision::from_mesh(&mesh, &cam, None).unwrap();
    sup.mask = sup.mask.map(|m| 1.0 - m);
    sup.depth_map = sup.depth_map.map(|_| 1.0);
    let render = render_normal_alpha(&mesh, &cam, 2.0).unwrap();
    let l = reference_losses_for_render(&render, &sup, &LossWeights::default()).unwrap();
    // Every pixel disagrees, so the loss is mean(|1 − 2M|²) = 1 minus the soft band.
    assert!(l.mask <= 1.0 && l.mask > 0.9, "{}", l.mask);
    assert!(l.depth.is_none());
}

#[test]
fn empty_mask_shrinks_the_surface() {
    let mut state = sphere_state(16, 0.5);
    let mesh = state.mesh().unwrap();
    let cam = camera(0.0, 0.0, 32);
    let mut sup = ReferenceSupervision::from_mesh(&mesh, &cam, None).unwrap();
    sup.mask = sup.mask.map(|_| 0.0);
    let weights = LossWeights::default();
    let render = render_normal_alpha(&mesh, &cam, 2.0).unwrap();
    let l = reference_losses_for_render(&render, &sup, &weights).unwrap();
    let surface = state.extract().unwrap();
    let g = geometry_backward(
        &state.grid,
        &state.dmtet,
        &surface,
        &mesh,
        &render,
        &l.grad_image,
        Some(&l.grad_depth),
    )
    .unwrap();
    assert!(
        g.sdf.iter().sum::<f64>() < 0.0,
        "descent must raise the sdf"
    );
    let before = render.gbuffer.covered_count();
    for _ in 0..5 {
        state.apply_gradients(&g, 1e-2, 0.0);
    }
    let after = render_normal_alpha(&state.mesh().unwrap(), &cam, 2.0).unwrap();
    assert!(after.gbuffer.covered_count() < before);
}

struct StepSetup {
    sup: ReferenceSupervision,
    builder: ConditionBuilder,
    oracle: SyntheticTargetOracle,
    config: GeometryStageConfig,
}

fn step_setup() -> StepSetup {
    let gt = ellipsoid(Vec3::new(0.6, 0.5, 0.4));
    let sup = ReferenceSupervision::from_mesh(&gt, &camera(0.0, 0.0, 32), None).unwrap();
    let config = GeometryStageConfig {
        grid_resolution: 16,
        refine_iterations: 20,
        ..GeometryStageConfig::default()
    };
    StepSetup {
        oracle: SyntheticTargetOracle::from_scene(
            &gt,
            TargetAppearance::NormalAlpha {
                sharpness: config.sharpness,
            },
            0.0,
            0,
        )
        .unwrap(),
        sup,
        builder: ConditionBuilder::new(None, vec![], None, "head"),
        config,
    }
}

#[test]
fn zero_learning_rate_changes_only_counters() {
    let s = step_setup();
    let config = GeometryStageConfig {
        lr_sdf: 0.0,
        lr_deform: 0.0,
        ..s.config.clone()
    };
    let mut state = sphere_state(16, 0.5);
    let before = state.dmtet.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let schedule = DiffusionSchedule::default();
    for _ in 0..3 {
        sculpt_step(
            &mut state, &s.sup, &s.builder, &s.oracle, &schedule, &config, &mut rng,
        )
        .unwrap();
    }
    assert_eq!(state.dmtet, before);
    assert_eq!(state.iteration, 3);
    assert_eq!(state.history.len(), 3);
}

#[test]
fn steps_are_deterministic() {
    let s = step_setup();
    let schedule = DiffusionSchedule::default();
    let run = || {
        let mut state = sphere_state(16, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..6 {
            sculpt_step(
                &mut state, &s.sup, &s.builder, &s.oracle, &schedule, &s.config, &mut rng,
            )
            .unwrap();
        }
        state
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.history.iter().any(|m| m.reference.is_some()));
    assert!(a.history.iter().any(|m| m.timestep.is_some()));
}

#[test]
fn provider_failure_reports_the_iteration() {
    let s = step_setup();
    let oracle = SyntheticTargetOracle::from_targets(vec![], 0.0, 0);
    let config = GeometryStageConfig {
        both_branches_fraction: 0.0,
        reference_probability: 0.0,
        ..s.config.clone()
    };
    let mut state = sphere_state(16, 0.5);
    state.iteration = 7;
    let before = state.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = sculpt_step(
        &mut state,
        &s.sup,
        &s.builder,
        &oracle,
        &DiffusionSchedule::default(),
        &config,
        &mut rng,
    )
    .unwrap_err();
    match err {
        Error::Stage {
            stage,
            iteration,
            source,
        } => {
            assert_eq!((stage, iteration), ("geometry", 7));
            assert!(matches!(*source, Error::MissingTarget(_)));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(state, before);
}

#[test]
fn combined_gradient_matches_finite_differences() {
    let grid = build_tet_grid(12, Aabb::cube(1.0)).unwrap();
    let mut params =
        DmtetParams::from_sdf(&grid, |p| (p - Vec3::new(0.03, -0.02, 0.01)).norm() - 0.52);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let limit = 0.3 * grid.cell_edge();
    for d in params.deform.iter_mut() {
        *d = Vec3::new(
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        ) * limit;
    }
    let gt = ellipsoid(Vec3::new(0.62, 0.5, 0.45));
    let size = 40;
    let c_ref = camera(10.0, 5.0, size);
    let c_rand = camera(70.0, 20.0, size);
    let sup = ReferenceSupervision::from_mesh(&gt, &c_ref, None).unwrap();
    let oracle = SyntheticTargetOracle::from_scene(
        &gt,
        TargetAppearance::NormalAlpha { sharpness: 1.0 },
        0.0,
        0,
    )
    .unwrap();
    let x_gt = oracle.target(&c_rand).unwrap();
    let weights = LossWeights::default();
    let schedule = DiffusionSchedule::default();
    let t = 400;
    let eps = RasterImage::from_data(
        size,
        size,
        4,
        (0..size * size * 4)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect(),
    )
    .unwrap();
    let k = schedule.weight[t] * schedule.sqrt_alpha_bar(t) / schedule.sqrt_one_minus_alpha_bar(t);
    let n = (size * size) as f64;

    let surface = marching_tetrahedra(&grid, &params).unwrap();
    let mesh = crate::tetra::compute_vertex_normals(&surface.mesh);
    let r_ref = render_normal_alpha(&mesh, &c_ref, 1.0).unwrap();
    let r_rand = render_normal_alpha(&mesh, &c_rand, 1.0).unwrap();

    let loss = |p: &DmtetParams| -> f64 {
        let s = marching_tetrahedra(&grid, p).unwrap();
        assert_eq!(s.vertex_edges, surface.vertex_edges);
        let m = crate::tetra::compute_vertex_normals(&s.mesh);
        let a = r_ref.replay(&m).unwrap();
        let l = reference_losses_for_render(&a, &sup, &weights)
            .unwrap()
            .total;
        let b = r_rand.replay(&m).unwrap();
        let isd: f64 = b
            .image
            .data
            .iter()
            .zip(&x_gt.data)
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        l + 0.5 * weights.isd / n * k * isd
    };

    let l = reference_losses_for_render(&r_ref, &sup, &weights).unwrap();
    assert!(l.depth.is_some());
    let mut g = geometry_backward(
        &grid,
        &params,
        &surface,
        &mesh,
        &r_ref,
        &l.grad_image,
        Some(&l.grad_depth),
    )
    .unwrap();
    let isd = sds_gradient_at(
        &r_rand.image,
        &c_rand,
        &Default::default(),
        &oracle,
        &schedule,
        t,
        &eps,
        7.5,
    )
    .unwrap();
    let isd = isd.map(|v| v * weights.isd / n);
    g.add_assign(
        &geometry_backward(&grid, &params, &surface, &mesh, &r_rand, &isd, None).unwrap(),
        1.0,
    );

    let h = 1e-4;
    let (mut an, mut fd) = (Vec::new(), Vec::new());
    let active: Vec<usize> = (0..grid.vertices.len())
        .filter(|&v| g.sdf[v] != 0.0 && params.sdf[v].abs() > 0.02)
        .step_by(7)
        .take(12)
        .collect();
    assert!(active.len() >= 8);
    for &v in &active {
        let mut q = params.clone();
        q.sdf[v] += h;
        let lp = loss(&q);
        q.sdf[v] -= 2.0 * h;
        fd.push((lp - loss(&q)) / (2.0 * h));
        an.push(g.sdf[v]);
        for c in 0..3 {
            let mut q = params.clone();
            q.deform[v][c] += h;
            let lp = loss(&q);
            q.deform[v][c] -= 2.0 * h;
            fd.push((lp - loss(&q)) / (2.0 * h));
            an.push(g.deform[v][c]);
        }
    }
    let err: f64 = an
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = an.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(err / norm < 1e-3, "relative error {}", err / norm);
}

#[test]
fn sdf_initialization_and_fit_track_the_initial_mesh() {
    let target = icosphere(0.55, 3);
    let mut config = GeometryStageConfig {
        grid_resolution: 32,
        fit_iterations: 0,
        fit_render_size: 48,
        ..GeometryStageConfig::default()
    };
    let state = fit_dmtet_to_initial(&target, &config).unwrap();
    let cell = state.grid.cell_edge();
    let c0 = chamfer_distance(&state.mesh().unwrap(), &target, 4000).unwrap();
    assert!(c0 < 3.0 * cell, "init chamfer {c0}");
    config.fit_iterations = 30;
    let state = fit_dmtet_to_initial(&target, &config).unwrap();
    let c1 = chamfer_distance(&state.mesh().unwrap(), &target, 4000).unwrap();
    assert!(c1 < 2.0 * cell, "fit chamfer {c1}");
    assert_eq!(state.fit_history.len(), 30);
}

#[test]
fn mesh_outside_bounds_is_rejected() {
    let config = GeometryStageConfig {
        grid_resolution: 8,
        ..GeometryStageConfig::default()
    };
    assert!(matches!(
        fit_dmtet_to_initial(&icosphere(1.5, 1), &config),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn zero_refine_iterations_return_the_fit() {
    let s = step_setup();
    let config = GeometryStageConfig {
        refine_iterations: 0,
        fit_iterations: 2,
        fit_render_size: 24,
        ..s.config.clone()
    };
    let init = icosphere(0.5, 2);
    let out = run_geometry_stage(&init, &s.sup, &s.builder, &s.oracle, &config, None).unwrap();
    let fit = fit_dmtet_to_initial(&init, &config).unwrap();
    assert_eq!(out.mesh, fit.mesh().unwrap());
}
