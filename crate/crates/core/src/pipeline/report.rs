//! Run report, turntable renders and asset export with a hashed manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::render::{camera_from_spherical, rasterize, shade_texture, Camera, RasterImage};
use crate::tetra::mesh::{write_obj_to, TriMesh};
use crate::texture::{dilate, normal_condition, TextureState};
use crate::{Error, Result};

pub const TURNTABLE_VIEWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    /// Not run; its outputs were loaded from a previous run's checkpoint.
    Resumed,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub status: StageStatus,
    pub iterations: u64,
    pub loss_curve: Vec<CurvePoint>,
    /// Left out of the content hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl StageReport {
    pub fn skipped(name: &str) -> Self {
        Self {
            name: name.into(),
            status: StageStatus::Skipped,
            iterations: 0,
            loss_curve: vec![],
            wall_clock_seconds: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// Final mesh against the ground truth.
    pub chamfer: Option<f64>,
    /// Initial mesh against the ground truth.
    pub chamfer_initial: Option<f64>,
    /// Silhouette IoU with the reference mask.
    pub mask_iou: Option<f64>,
    /// Textured render against the reference image over pixels both cover.
    pub reference_psnr: Option<f64>,
    /// Fraction of occupied texels colored.
    pub coverage: Option<f64>,
    /// Coverage after each trajectory camera.
    pub coverage_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageReport>,
    pub metrics: FinalMetrics,
}

impl RunReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("cannot serialize report: {e}")))
    }

    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for s in &mut r.stages {
            s.wall_clock_seconds = None;
        }
        r
    }

    /// SHA-256 of the JSON form without wall-clock times.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(
            self.without_timings().to_json()?.as_bytes(),
        )))
    }

    /// Wall-clock seconds per stage that ran.
    pub fn timings_json(&self) -> Result<String> {
        let map: std::collections::BTreeMap<&str, f64> = self
            .stages
            .iter()
            .filter_map(|s| s.wall_clock_seconds.map(|t| (s.name.as_str(), t)))
            .collect();
        serde_json::to_string_pretty(&map).map_err(|e| Error::invalid(e.to_string()))
    }
}

/// Cameras circling the reference view at its elevation in 45° steps.
pub fn turntable_cameras(reference: &Camera, resolution: usize) -> Result<Vec<Camera>> {
    (0..TURNTABLE_VIEWS)
        .map(|k| {
            camera_from_spherical(
                reference.azimuth + 45.0 * k as f64,
                reference.elevation,
                reference.distance,
                reference.fovy,
                reference.look_at(),
                (resolution, resolution),
            )
        })
        .collect()
}

/// Textured views when a texture is given, otherwise normal-shaded ones.
pub fn render_turntable(
    mesh: &TriMesh,
    texture: Option<&RasterImage>,
    cameras: &[Camera],
) -> Vec<RasterImage> {
    cameras
        .iter()
        .map(|c| {
            let gb = rasterize(mesh, c);
            match texture {
                Some(t) => shade_texture(&gb, t).0.map(|v| v.clamp(0.0, 1.0)),
                None => normal_condition(&gb),
            }
        })
        .collect()
}

/// Texels as exported: gaps grown by `dilation` and clamped to [0, 1].
pub fn export_texels(state: &TextureState, dilation: usize) -> RasterImage {
    dilate(&state.texels, &state.coverage, dilation).map(|v| v.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub report_hash: String,
    /// Sorted by path.
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn entry(&self, path: &str) -> Option<&ManifestEntry> {
        self.files.iter().find(|e| e.path == path)
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";
/// Wall-clock times; outside the manifest since they vary between runs.
pub const TIMINGS_NAME: &str = "timings.json";

/// What a run hands to [`export_assets`].
pub struct ExportBundle<'a> {
    pub mesh: &'a TriMesh,
    /// Exported texels and their coverage mask.
    pub texture: Option<(&'a RasterImage, &'a [bool])>,
    pub turntable: &'a [RasterImage],
    /// Extra text files by name, such as loss CSVs.
    pub text_files: Vec<(String, String)>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn obj_bytes(mesh: &TriMesh, material: bool) -> Vec<u8> {
    let mut buf = Vec::new();
    if material {
        buf.extend_from_slice(b"mtllib mesh.mtl\nusemtl texture\n");
    }
    write_obj_to(mesh, &mut buf).expect("writing to memory");
    buf
}

/// Files only a textured export writes; removed from untextured exports so
/// an output directory never mixes runs.
const TEXTURE_FILES: [&str; 4] = [
    "mesh.mtl",
    "texture.png",
    "coverage.png",
    "texture_refine.csv",
];

const MTL: &str = "newmtl texture\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd texture.png\n";

/// Writes the mesh (with material when textured), texture and coverage PNGs,
/// turntable PNGs, report (without timings) and text files, then
/// `manifest.json` listing a SHA-256 for each, then `timings.json`.
pub fn export_assets(
    report: &RunReport,
    bundle: &ExportBundle,
    out_dir: &Path,
) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    files.push((
        "mesh.obj".into(),
        obj_bytes(bundle.mesh, bundle.texture.is_some()),
    ));
    if let Some((texels, coverage)) = bundle.texture {
        files.push(("mesh.mtl".into(), MTL.as_bytes().to_vec()));
        files.push(("texture.png".into(), texels.to_png_bytes()?));
        let mask = RasterImage::from_mask(texels.width, texels.height, coverage);
        files.push(("coverage.png".into(), mask.to_png_bytes()?));
    }
    if bundle.texture.is_none() {
        for stale in TEXTURE_FILES {
            let path = out_dir.join(stale);
            match std::fs::remove_file(&path) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => {
                    return Err(Error::io(&path, e))
                }
                _ => {}
            }
        }
    }
    for (k, img) in bundle.turntable.iter().enumerate() {
        files.push((format!("turntable_{k:02}.png"), img.to_png_bytes()?));
    }
    files.push((
        "report.json".into(),
        report.without_timings().to_json()?.into_bytes(),
    ));
    for (name, text) in &bundle.text_files {
        files.push((name.clone(), text.as_bytes().to_vec()));
    }
    let mut entries = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        write_file(&out_dir.join(name), bytes)?;
        entries.push(ManifestEntry {
            path: name.clone(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        report_hash: report.content_hash()?,
        files: entries,
    };
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    write_file(&out_dir.join(MANIFEST_NAME), text.as_bytes())?;
    write_file(
        &out_dir.join(TIMINGS_NAME),
        report.timings_json()?.as_bytes(),
    )?;
    Ok(manifest)
}

pub fn read_manifest(out_dir: &Path) -> Result<Manifest> {
    let path: PathBuf = out_dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tetra::mesh::{compute_vertex_normals, icosphere, read_obj};
    use crate::Vec3;

    fn report() -> RunReport {
        RunReport {
            config_hash: "abc".into(),
            seed: 3,
            stages: vec![
                StageReport {
                    name: "geometry".into(),
                    status: StageStatus::Completed,
                    iterations: 2,
                    loss_curve: vec![CurvePoint {
                        iteration: 1,
                        loss: 0.5,
                    }],
                    wall_clock_seconds: Some(1.25),
                },
                StageReport::skipped("texture"),
            ],
            metrics: FinalMetrics {
                chamfer: Some(0.01),
                ..Default::default()
            },
        }
    }

    fn reference() -> Camera {
        camera_from_spherical(10.0, 5.0, 3.0, 40.0, Vec3::zeros(), (64, 64)).unwrap()
    }

    #[test]
    fn content_hash_ignores_wall_clock() {
        let a = report();
        let mut b = a.clone();
        b.stages[0].wall_clock_seconds = Some(99.0);
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        b.seed = 4;
        assert_ne!(a.content_hash().unwrap(), b.content_hash().unwrap());
        let back: RunReport = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn turntable_circles_the_reference() {
        let cams = turntable_cameras(&reference(), 32).unwrap();
        assert_eq!(cams.len(), 8);
        for (k, c) in cams.iter().enumerate() {
            assert_eq!(c.azimuth, 10.0 + 45.0 * k as f64);
            assert_eq!((c.elevation, c.distance, c.width), (5.0, 3.0, 32));
        }
        let mesh = compute_vertex_normals(&icosphere(0.7, 2));
        let views = render_turntable(&mesh, None, &cams);
        for v in &views {
            assert_eq!((v.width, v.channels), (32, 3));
            assert!(v.data.iter().all(|x| (0.0..=1.0).contains(x)));
            assert!(v.data.iter().any(|&x| x > 0.0));
        }
    }

    #[test]
    fn export_writes_a_complete_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = compute_vertex_normals(&icosphere(0.7, 1));
        let cams = turntable_cameras(&reference(), 16).unwrap();
        let views = render_turntable(&mesh, None, &cams);
        let texels = RasterImage::filled(8, 8, 3, 0.5);
        let coverage = vec![true; 64];
        let bundle = ExportBundle {
            mesh: &mesh,
            texture: Some((&texels, &coverage)),
            turntable: &views,
            text_files: vec![("loss.csv".into(), "a,b\n".into())],
        };
        let r = report();
        let m = export_assets(&r, &bundle, dir.path()).unwrap();
        assert_eq!(m.files.len(), 14);
        assert!(m.files.windows(2).all(|w| w[0].path < w[1].path));
        for e in &m.files {
            let bytes = std::fs::read(dir.path().join(&e.path)).unwrap();
            assert_eq!(e.bytes, bytes.len() as u64);
            assert_eq!(e.sha256, hex::encode(Sha256::digest(&bytes)));
        }
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert_eq!(m.report_hash, r.content_hash().unwrap());
        let back = read_obj(&dir.path().join("mesh.obj")).unwrap();
        assert_eq!(back.faces, mesh.faces);
        let again = export_assets(&r, &bundle, dir.path()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn export_error_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let out = blocker.join("out");
        let mesh = icosphere(0.5, 0);
        let bundle = ExportBundle {
            mesh: &mesh,
            texture: None,
            turntable: &[],
            text_files: vec![],
        };
        match export_assets(&report(), &bundle, &out) {
            Err(Error::Io { path, .. }) => assert_eq!(path, out),
            other => panic!("{other:?}"),
        }
    }
}
