//! `sculptd`: run the reconstruction pipeline, single stages, metrics,
//! turntable renders, demo scenes and the oracle plug-in server.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sculptd_core::pipeline::{
    chamfer_distance, load_config, psnr, render_turntable, run_pipeline, serve_oracle,
    turntable_cameras, write_demo_assets, DemoSpec, PipelineConfig, RunOptions, StageSelection,
};
use sculptd_core::render::{camera_from_spherical, RasterImage};
use sculptd_core::tetra::mesh::read_obj;
use sculptd_core::{Error, Vec3};

const EXIT_CONFIG: u8 = 2;
const EXIT_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "sculptd",
    version,
    about = "Single-image 3D head reconstruction with pluggable guidance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected stages, compute metrics and export assets.
    Run {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long, default_value = "all", value_parser = parse_stage)]
        stage: StageSelection,
    },
    /// Run the geometry stage only.
    Geometry(RunArgs),
    /// Run the texture stage from an existing geometry checkpoint.
    Texture(RunArgs),
    /// Compare meshes (Chamfer) and optionally images (PSNR); prints JSON.
    Metrics {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, requires = "reference")]
        image: Option<PathBuf>,
        #[arg(long, requires = "image")]
        reference: Option<PathBuf>,
    },
    /// Render eight views around a mesh, textured when a texture is given.
    RenderTurntable {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        texture: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        elevation: f64,
        #[arg(long, default_value_t = 3.0)]
        distance: f64,
        #[arg(long, default_value_t = 40.0)]
        fovy: f64,
    },
    /// Write a synthetic scene (ground truth, supervision, config) to a directory.
    DemoAssets {
        #[arg(long)]
        out: PathBuf,
        /// `desk` (grid 32, 600 + 400 steps) or `tiny` (seconds).
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the config's oracle over stdin/stdout for the external provider.
    ServeOracle {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    debug_dumps: bool,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_stage(s: &str) -> Result<StageSelection, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    error: Error,
}

fn config_failure(error: Error) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error,
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match error {
            Error::ConfigParse { .. } | Error::ConfigValidation { .. } => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure { code, error }
    }
}

fn load(args: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut config = load_config(&args.config).map_err(config_failure)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.paths.output_dir = out.clone();
    }
    Ok(config)
}

fn run(args: &RunArgs, stage: StageSelection) -> Result<(), Failure> {
    let config = load(args)?;
    let outcome = run_pipeline(
        &config,
        &RunOptions {
            stage,
            debug_dumps: args.debug_dumps,
        },
    )?;
    let r = &outcome.report;
    for s in &r.stages {
        let time = s
            .wall_clock_seconds
            .map(|t| format!(" in {t:.1} s"))
            .unwrap_or_default();
        println!(
            "{}: {:?}, {} iterations{time}",
            s.name, s.status, s.iterations
        );
    }
    let m = &r.metrics;
    let show = |name: &str, v: Option<f64>| {
        if let Some(v) = v {
            println!("{name}: {v:.6}");
        }
    };
    show("chamfer", m.chamfer);
    show("chamfer_initial", m.chamfer_initial);
    show("mask_iou", m.mask_iou);
    show("reference_psnr", m.reference_psnr);
    show("coverage", m.coverage);
    println!("report hash: {}", outcome.manifest.report_hash);
    println!(
        "{} files written to {}",
        outcome.manifest.files.len(),
        outcome.output_dir.display()
    );
    Ok(())
}

fn metrics(
    mesh: &Path,
    gt: &Path,
    samples: usize,
    images: Option<(&Path, &Path)>,
) -> Result<(), Failure> {
    let a = read_obj(mesh)?;
    let b = read_obj(gt)?;
    let mut out = format!("{{\n  \"chamfer\": {}", chamfer_distance(&a, &b, samples)?);
    if let Some((image, reference)) = images {
        let x = RasterImage::read_png(image)?.truncate_channels(3);
        let y = RasterImage::read_png(reference)?.truncate_channels(3);
        out.push_str(&format!(",\n  \"psnr\": {}", psnr(&x, &y, None)?));
    }
    out.push_str("\n}");
    println!("{out}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn turntable(
    mesh: &Path,
    texture: Option<&Path>,
    out: &Path,
    resolution: usize,
    elevation: f64,
    distance: f64,
    fovy: f64,
) -> Result<(), Failure> {
    let m = read_obj(mesh)?;
    let tex = texture
        .map(RasterImage::read_png)
        .transpose()?
        .map(|t| t.truncate_channels(3));
    if tex.is_some() && m.uvs.is_none() {
        return Err(
            Error::invalid(format!("{} has no texture coordinates", mesh.display())).into(),
        );
    }
    let reference = camera_from_spherical(
        0.0,
        elevation,
        distance,
        fovy,
        Vec3::zeros(),
        (resolution, resolution),
    )?;
    let views = render_turntable(
        &m,
        tex.as_ref(),
        &turntable_cameras(&reference, resolution)?,
    );
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (k, v) in views.iter().enumerate() {
        v.write_png(&out.join(format!("turntable_{k:02}.png")))?;
    }
    println!("{} views written to {}", views.len(), out.display());
    Ok(())
}

/// Stdin and stdout as one duplex stream; replies are flushed as written.
struct StdStream {
    input: std::io::Stdin,
    output: std::io::Stdout,
}

impl Read for StdStream {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        self.input.read(buf)
    }
}

impl Write for StdStream {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.output.write(buf)?;
        self.output.flush()?;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.output.flush()
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { common, stage } => run(&common, stage),
        Command::Geometry(args) => run(&args, StageSelection::Geometry),
        Command::Texture(args) => run(&args, StageSelection::Texture),
        Command::Metrics {
            mesh,
            gt,
            samples,
            image,
            reference,
        } => metrics(
            &mesh,
            &gt,
            samples,
            image.as_deref().zip(reference.as_deref()),
        ),
        Command::RenderTurntable {
            mesh,
            texture,
            out,
            resolution,
            elevation,
            distance,
            fovy,
        } => turntable(
            &mesh,
            texture.as_deref(),
            &out,
            resolution,
            elevation,
            distance,
            fovy,
        ),
        Command::DemoAssets { out, scale, seed } => {
            let mut spec = match scale.as_str() {
                "desk" => DemoSpec::desk(),
                "tiny" => DemoSpec::tiny(),
                other => {
                    return Err(config_failure(Error::invalid(format!(
                        "unknown scale `{other}`; expected desk or tiny"
                    ))))
                }
            };
            spec.seed = seed;
            let path = write_demo_assets(&out, &spec)?;
            println!("demo config written to {}", path.display());
            Ok(())
        }
        Command::ServeOracle { config } => {
            let config = load_config(&config).map_err(config_failure)?;
            let stream = StdStream {
                input: std::io::stdin(),
                output: std::io::stdout(),
            };
            Ok(serve_oracle(&config, stream)?)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("SCULPTD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            config_failure(Error::invalid(format!(
                "SCULPTD_THREADS must be a positive integer, got `{value}`"
            )))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::from(Error::invalid(format!("cannot size the thread pool: {e}"))))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|()| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            let mut source = std::error::Error::source(&f.error);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(f.code)
        }
    }
}
