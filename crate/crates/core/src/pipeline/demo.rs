//! A self-contained synthetic scenario: a head-like ground-truth mesh with a
//! procedural texture, its reference supervision, a sphere to start from and
//! a config tying them together.

use std::path::{Path, PathBuf};

use super::config::{PathsConfig, PipelineConfig, ProviderSpec};
use crate::guidance::conditions::DEFAULT_IDENTITY_DIM;
use crate::guidance::oracle::render_target;
use crate::guidance::{derive_identity, write_identity, TargetAppearance};
use crate::render::{camera_from_spherical, Camera, RasterImage};
use crate::sculpt::{GeometryStageConfig, ReferenceSupervision};
use crate::tetra::mesh::{compute_vertex_normals, icosphere, read_obj, write_obj, TriMesh};
use crate::texture::{build_texel_map, dilate, unwrap_uv, TextureStageConfig};
use crate::{Error, Result, Vec3};

pub const DEMO_CONFIG: &str = "config.toml";

#[derive(Debug, Clone)]
pub struct DemoSpec {
    pub seed: u64,
    /// Square size of the reference view.
    pub reference_size: usize,
    /// Atlas size of the ground-truth texture.
    pub gt_atlas: usize,
    pub gt_subdivisions: usize,
    pub initial_radius: f64,
    pub render_resolution: i64,
    pub geometry: GeometryStageConfig,
    pub texture: TextureStageConfig,
}

impl DemoSpec {
    /// Grid 32, 600 geometry and 400 texture steps, 128² renders.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            reference_size: 128,
            gt_atlas: 512,
            gt_subdivisions: 4,
            initial_radius: 0.5,
            render_resolution: 128,
            geometry: GeometryStageConfig::desk(),
            texture: TextureStageConfig::desk(),
        }
    }

    /// A few seconds end to end; for smoke and determinism checks.
    pub fn tiny() -> Self {
        let geometry = GeometryStageConfig {
            grid_resolution: 16,
            fit_iterations: 20,
            fit_render_size: 32,
            refine_iterations: 30,
            checkpoint_every: 10,
            ..GeometryStageConfig::desk()
        };
        let texture = TextureStageConfig {
            atlas_size: 128,
            refinement_steps: 20,
            ..TextureStageConfig::desk()
        };
        Self {
            seed: 0,
            reference_size: 48,
            gt_atlas: 256,
            gt_subdivisions: 3,
            initial_radius: 0.5,
            render_resolution: 32,
            geometry,
            texture,
        }
    }
}

/// Ellipsoid of a head's proportions with a nose bump toward +z.
pub fn head_mesh(subdivisions: usize) -> TriMesh {
    let sphere = icosphere(1.0, subdivisions);
    let nose = Vec3::new(0.0, -0.1, 1.0).normalize();
    compute_vertex_normals(&sphere.transformed(|p| {
        let d = p.normalize();
        let bump = 0.12 * (-(d - nose).norm_squared() / 0.03).exp();
        Vec3::new(0.55 * d.x, 0.7 * d.y, 0.6 * d.z) + d * bump
    }))
}

/// Skin tones with darker hair on top and soft stripes.
pub fn head_color(p: &Vec3) -> [f64; 3] {
    let hair = 1.0 / (1.0 + (-(p.y - 0.35) * 25.0).exp());
    let stripe = 0.08 * (9.0 * p.x + 4.0 * p.y).sin() + 0.05 * (7.0 * p.z - 3.0 * p.y).cos();
    let skin = [0.78 + stripe, 0.58 + 0.8 * stripe, 0.47 + 0.5 * stripe];
    let hair_c = [0.28, 0.18 + 0.5 * stripe, 0.1];
    [0, 1, 2].map(|k| (skin[k] * (1.0 - hair) + hair_c[k] * hair).clamp(0.0, 1.0))
}

/// The front view the supervision is rendered from.
pub fn reference_camera(size: usize) -> Result<Camera> {
    camera_from_spherical(0.0, 0.0, 3.0, 40.0, Vec3::zeros(), (size, size))
}

/// Landmarks on the ground-truth surface: eyes, nose tip, mouth corners.
fn landmark_text(gt: &TriMesh) -> String {
    let dirs = [
        Vec3::new(-0.35, 0.2, 1.0),
        Vec3::new(0.35, 0.2, 1.0),
        Vec3::new(0.0, -0.1, 1.0),
        Vec3::new(-0.25, -0.45, 1.0),
        Vec3::new(0.25, -0.45, 1.0),
    ];
    let mut s = String::from("# x y z\n");
    for d in dirs {
        let d = d.normalize();
        let p = gt
            .positions
            .iter()
            .max_by(|a, b| a.normalize().dot(&d).total_cmp(&b.normalize().dot(&d)))
            .expect("non-empty mesh");
        s.push_str(&format!("{:.9} {:.9} {:.9}\n", p.x, p.y, p.z));
    }
    s
}

/// Writes the scenario into `dir` and returns the config path. Meshes and
/// the texture are read back before rendering so the supervision matches
/// what a run loads.
pub fn write_demo_assets(dir: &Path, spec: &DemoSpec) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (gt, _) = unwrap_uv(&head_mesh(spec.gt_subdivisions), spec.gt_atlas, 2)?;
    let map = build_texel_map(&gt, spec.gt_atlas)?;
    let mut texels = RasterImage::new(spec.gt_atlas, spec.gt_atlas, 3);
    let occupied: Vec<bool> = (0..map.face.len()).map(|t| map.occupied(t)).collect();
    for (t, &occ) in occupied.iter().enumerate() {
        if occ {
            texels
                .pixel_mut(t)
                .copy_from_slice(&head_color(&map.position[t]));
        }
    }
    let gt_path = dir.join("gt_mesh.obj");
    let tex_path = dir.join("gt_texture.png");
    write_obj(&gt, &gt_path)?;
    dilate(&texels, &occupied, 4).write_png(&tex_path)?;
    let gt = read_obj(&gt_path)?;
    let texture = RasterImage::read_png(&tex_path)?.truncate_channels(3);

    let camera = reference_camera(spec.reference_size)?;
    let image = render_target(&gt, &TargetAppearance::Texture(texture), &camera)?;
    ReferenceSupervision::from_mesh(&gt, &camera, Some(image.clone()))?
        .save_dir(&dir.join("supervision"))?;
    write_obj(
        &compute_vertex_normals(&icosphere(spec.initial_radius, 3)),
        &dir.join("initial.obj"),
    )?;
    write_identity(
        &derive_identity(&image, DEFAULT_IDENTITY_DIM, spec.seed),
        &dir.join("identity.bin"),
    )?;
    let lm_path = dir.join("landmarks.txt");
    std::fs::write(&lm_path, landmark_text(&gt)).map_err(|e| Error::io(&lm_path, e))?;

    let config = PipelineConfig {
        seed: spec.seed,
        render_resolution: spec.render_resolution,
        text_tag: "a portrait of a person".into(),
        paths: PathsConfig {
            initial_mesh: "initial.obj".into(),
            supervision_dir: "supervision".into(),
            identity: Some("identity.bin".into()),
            landmarks: Some("landmarks.txt".into()),
            gt_mesh: Some("gt_mesh.obj".into()),
            gt_texture: Some("gt_texture.png".into()),
            output_dir: "out".into(),
        },
        provider: ProviderSpec::default(),
        geometry: spec.geometry.clone(),
        texture: spec.texture.clone(),
    };
    let path = dir.join(DEMO_CONFIG);
    std::fs::write(&path, config.to_canonical_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
