//! Run configuration: TOML parsing with strict keys, defaults, path
//! resolution, validation and the canonical form used for hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sculpt::config::field_error;
use crate::sculpt::GeometryStageConfig;
use crate::texture::TextureStageConfig;
use crate::{Error, Result};

pub const DEFAULT_RENDER_RESOLUTION: i64 = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub initial_mesh: PathBuf,
    /// Directory in the reference supervision layout.
    pub supervision_dir: PathBuf,
    /// Identity vector file; derived from the reference image when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<PathBuf>,
    /// 3D landmarks, one `x y z` per line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<PathBuf>,
    /// Ground-truth scene for the synthetic oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mesh: Option<PathBuf>,
    /// Ground-truth texture laid out on the UVs of `gt_mesh`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_texture: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    /// Analytic denoiser over the ground-truth scene in `paths`.
    Oracle {
        /// Inpainting blur in pixels.
        #[serde(default = "default_blur")]
        blur: f64,
        /// Required identity length; 0 accepts any.
        #[serde(default)]
        identity_dim: i64,
    },
    /// Plug-in process speaking the provider protocol on stdin/stdout.
    External { command: Vec<String> },
}

fn default_blur() -> f64 {
    1.0
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Oracle {
            blur: default_blur(),
            identity_dim: 0,
        }
    }
}

fn default_render_resolution() -> i64 {
    DEFAULT_RENDER_RESOLUTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Global seed; the stage seeds are derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Square size of turntable renders.
    #[serde(default = "default_render_resolution")]
    pub render_resolution: i64,
    #[serde(default)]
    pub text_tag: String,
    pub paths: PathsConfig,
    #[serde(default)]
    pub provider: ProviderSpec,
    #[serde(default)]
    pub geometry: GeometryStageConfig,
    #[serde(default)]
    pub texture: TextureStageConfig,
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |i| before.len() - i - 1)
        + 1;
    (line, column)
}

/// Parses without touching the file system.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        Error::ConfigParse {
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

/// Reads, parses, resolves relative paths against the file's directory and
/// validates.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = parse_config(&text)?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    config.validate()?;
    Ok(config)
}

fn stage_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt
}

const GEOMETRY_SEED_SALT: u64 = 0;
const TEXTURE_SEED_SALT: u64 = 0x7e47_0e5e_ed00_0001;

impl PipelineConfig {
    /// A config with default stages around the given paths.
    pub fn with_paths(paths: PathsConfig) -> Self {
        Self {
            seed: 0,
            render_resolution: DEFAULT_RENDER_RESOLUTION,
            text_tag: String::new(),
            paths,
            provider: ProviderSpec::default(),
            geometry: GeometryStageConfig::default(),
            texture: TextureStageConfig::default(),
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [
            &mut p.initial_mesh,
            &mut p.supervision_dir,
            &mut p.output_dir,
        ] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        for path in [
            &mut p.identity,
            &mut p.landmarks,
            &mut p.gt_mesh,
            &mut p.gt_texture,
        ]
        .into_iter()
        .flatten()
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    /// Field errors are named by their dotted TOML path.
    pub fn validate(&self) -> Result<()> {
        if self.render_resolution < 1 {
            return Err(field_error(
                "render_resolution",
                format!("must be at least 1, got {}", self.render_resolution),
            ));
        }
        self.geometry.validate_with_prefix("geometry.")?;
        self.texture.validate_with_prefix("texture.")?;
        match &self.provider {
            ProviderSpec::Oracle { blur, identity_dim } => {
                if !(blur.is_finite() && *blur >= 0.0) {
                    return Err(field_error(
                        "provider.blur",
                        "must be finite and non-negative",
                    ));
                }
                if *identity_dim < 0 {
                    return Err(field_error("provider.identity_dim", "must be non-negative"));
                }
                if self.paths.gt_mesh.is_none() {
                    return Err(field_error(
                        "paths.gt_mesh",
                        "the oracle provider needs a ground-truth mesh",
                    ));
                }
            }
            ProviderSpec::External { command } => {
                if command.is_empty() || command[0].is_empty() {
                    return Err(field_error("provider.command", "must name a program"));
                }
            }
        }
        let p = &self.paths;
        let required: [(&str, Option<&PathBuf>, bool); 6] = [
            ("paths.initial_mesh", Some(&p.initial_mesh), false),
            ("paths.supervision_dir", Some(&p.supervision_dir), true),
            ("paths.identity", p.identity.as_ref(), false),
            ("paths.landmarks", p.landmarks.as_ref(), false),
            ("paths.gt_mesh", p.gt_mesh.as_ref(), false),
            ("paths.gt_texture", p.gt_texture.as_ref(), false),
        ];
        for (field, path, dir) in required {
            let Some(path) = path else { continue };
            let ok = if dir { path.is_dir() } else { path.is_file() };
            if !ok {
                let what = if dir { "directory" } else { "file" };
                return Err(field_error(
                    field,
                    format!("{what} {} does not exist", path.display()),
                ));
            }
        }
        Ok(())
    }

    /// Canonical TOML: every field present, stable order.
    pub fn to_canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the canonical form with the output directory blanked, since
    /// where results go does not change them.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.paths.output_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(
            c.to_canonical_toml()?.as_bytes(),
        )))
    }

    /// Geometry config with the derived seed.
    pub fn geometry_config(&self) -> GeometryStageConfig {
        GeometryStageConfig {
            seed: stage_seed(self.seed, GEOMETRY_SEED_SALT),
            ..self.geometry.clone()
        }
    }

    /// Texture config with the derived seed.
    pub fn texture_config(&self) -> TextureStageConfig {
        TextureStageConfig {
            seed: stage_seed(self.seed, TEXTURE_SEED_SALT),
            ..self.texture.clone()
        }
    }
}
