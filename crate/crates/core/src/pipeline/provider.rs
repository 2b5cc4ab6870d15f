//! Building the guidance provider named by a config: the in-process oracle
//! pair or a plug-in child process.

use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use rand_chacha::ChaCha8Rng;

use super::config::{PipelineConfig, ProviderSpec};
use crate::guidance::{
    Capabilities, ConditionBundle, DiffusionSchedule, EpsilonPrediction, ExternalProvider,
    GuidanceProvider, SyntheticTargetOracle, TargetAppearance,
};
use crate::render::{Camera, RasterImage};
use crate::tetra::mesh::read_obj;
use crate::{Error, Result};

/// Sends RGBA queries (normal-plus-alpha renders) to the geometry provider
/// and everything else to the texture provider.
pub struct StageRouter {
    pub geometry: Box<dyn GuidanceProvider>,
    pub texture: Option<Box<dyn GuidanceProvider>>,
}

impl StageRouter {
    fn route(&self, channels: usize) -> Result<&dyn GuidanceProvider> {
        if channels == 4 {
            return Ok(self.geometry.as_ref());
        }
        self.texture
            .as_deref()
            .ok_or_else(|| Error::MissingTarget("no texture target is configured".into()))
    }
}

impl GuidanceProvider for StageRouter {
    fn capabilities(&self) -> Capabilities {
        self.geometry.capabilities()
    }

    fn identity_dim(&self) -> usize {
        self.geometry.identity_dim()
    }

    fn conditioning_channels(&self) -> Vec<String> {
        self.geometry.conditioning_channels()
    }

    fn predict_epsilon(
        &self,
        x_t: &RasterImage,
        t: usize,
        camera: &Camera,
        conditions: &ConditionBundle,
        schedule: &DiffusionSchedule,
    ) -> Result<EpsilonPrediction> {
        self.route(x_t.channels)?
            .predict_epsilon(x_t, t, camera, conditions, schedule)
    }

    fn inpaint(
        &self,
        partial: &RasterImage,
        known: &[bool],
        camera: &Camera,
        conditions: &ConditionBundle,
    ) -> Result<RasterImage> {
        self.route(partial.channels)?
            .inpaint(partial, known, camera, conditions)
    }

    fn refine(
        &self,
        x0: &RasterImage,
        t: usize,
        camera: &Camera,
        conditions: &ConditionBundle,
        schedule: &DiffusionSchedule,
        rng: &mut ChaCha8Rng,
    ) -> Result<RasterImage> {
        self.route(x0.channels)?
            .refine(x0, t, camera, conditions, schedule, rng)
    }
}

/// Oracle pair over the configured ground truth: normal-plus-alpha targets
/// for geometry and, when a GT texture is given, textured targets.
pub fn build_oracle(config: &PipelineConfig) -> Result<StageRouter> {
    let (blur, identity_dim) = match &config.provider {
        ProviderSpec::Oracle { blur, identity_dim } => (*blur, *identity_dim as usize),
        ProviderSpec::External { .. } => (1.0, 0),
    };
    let gt_path = config
        .paths
        .gt_mesh
        .as_deref()
        .ok_or_else(|| Error::ConfigValidation {
            field: "paths.gt_mesh".into(),
            message: "the oracle provider needs a ground-truth mesh".into(),
        })?;
    let gt = read_obj(gt_path)?;
    let geometry = SyntheticTargetOracle::from_scene(
        &gt,
        TargetAppearance::NormalAlpha {
            sharpness: config.geometry.sharpness,
        },
        blur,
        identity_dim,
    )?;
    let texture = match &config.paths.gt_texture {
        Some(path) => {
            let tex = RasterImage::read_png(path)?;
            let oracle = SyntheticTargetOracle::from_scene(
                &gt,
                TargetAppearance::Texture(tex.truncate_channels(3)),
                blur,
                identity_dim,
            )
            .map_err(|e| Error::invalid(format!("{}: {e}", gt_path.display())))?;
            Some(Box::new(oracle) as Box<dyn GuidanceProvider>)
        }
        None => None,
    };
    Ok(StageRouter {
        geometry: Box::new(geometry),
        texture,
    })
}

/// Stdin/stdout of a plug-in process. Closing drops the child's stdin so it
/// sees end of stream, then reaps it.
pub struct ChildTransport {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
}

impl ChildTransport {
    pub fn spawn(command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::invalid("plug-in command is empty"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Provider(format!("cannot start plug-in `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            child,
            stdin: Some(BufWriter::new(stdin)),
            stdout: BufReader::new(stdout),
        })
    }
}

impl Write for ChildTransport {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.stdin.as_mut().expect("open until drop").write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.stdin.as_mut().expect("open until drop").flush()
    }
}

impl Read for ChildTransport {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        self.flush()?;
        self.stdout.read(buf)
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        if let Some(mut stdin) = self.stdin.take() {
            let _ = stdin.flush();
            drop(stdin);
        }
        let _ = self.child.wait();
    }
}

/// The provider a run uses.
pub fn build_provider(config: &PipelineConfig) -> Result<Box<dyn GuidanceProvider>> {
    match &config.provider {
        ProviderSpec::Oracle { .. } => Ok(Box::new(build_oracle(config)?)),
        ProviderSpec::External { command } => {
            let transport = ChildTransport::spawn(command)?;
            Ok(Box::new(ExternalProvider::connect(transport)?))
        }
    }
}

/// Serves the configured oracle over a byte stream until the peer closes it.
pub fn serve_oracle<T: Read + Write>(config: &PipelineConfig, transport: T) -> Result<()> {
    let oracle = build_oracle(config)?;
    crate::guidance::serve(&oracle, transport)
}
