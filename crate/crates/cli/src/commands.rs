//! Command implementations. Each returns a [`CliError`] carrying the exit code.

use std::path::{Path, PathBuf};

use mhi_core::bench::{run_benchmark, write_report, REPORT_JSON};
use mhi_core::blend::{BlendScheme, DEFAULT_SOFT_SHARPNESS};
use mhi_core::estimate::{estimate_mhi, StereoInput};
use mhi_core::geometry::Intrinsics;
use mhi_core::mhi::{load_mhi, save_mhi, Mhi};
use mhi_core::orbit::frame_file_name;
use mhi_core::raster::{load_color_png, ColorImage};
use mhi_core::render::RenderRequest;
use mhi_core::synth::{generate_suite, load_suite, save_suite, PoseRecord, SuiteConfig};
use mhi_core::view::{synthesize_view, weight_png, BlendParams, View};
use mhi_core::{par, raster};
use serde::Serialize;

use crate::error::CliError;
use crate::schema::{read_bench_config, read_json, CamsFile, ConfigFile, OrbitFile, PoseFile, PoseSpec, SCHEMA_VERSION};

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load_image(flag: &str, path: &Path) -> Result<ColorImage, CliError> {
    load_color_png(path).map_err(|e| CliError::usage(format!("--{flag} {}: {e}", path.display())))
}

fn open_mhi(dir: &Path) -> Result<Mhi, CliError> {
    load_mhi(dir).map_err(|e| CliError::usage(format!("--mhi {}: {e}", dir.display())))
}

fn size(d: (usize, usize)) -> String {
    format!("{}x{}", d.0, d.1)
}

/// The synthesized view for `pose`, shared by `render` and the service.
pub fn render_view(
    mhi: &Mhi,
    pose: &PoseSpec,
    intrinsics: Option<Intrinsics>,
    params: &BlendParams,
) -> Result<View, CliError> {
    pose.validate()?;
    let cam = intrinsics.unwrap_or(*mhi.config().ref_intrinsics());
    let req = RenderRequest::new(cam, pose.to_pose());
    Ok(synthesize_view(mhi, &req, params)?)
}

pub fn view_png(view: &View) -> Result<Vec<u8>, CliError> {
    Ok(raster::encode_color_png(&view.image)?)
}

pub fn weight_file_name(normal_index: usize) -> String {
    format!("weight_{normal_index:02}.png")
}

pub struct EstimateArgs {
    pub left: PathBuf,
    pub right: PathBuf,
    pub cams: PathBuf,
    pub config: PathBuf,
    pub out: PathBuf,
}

pub fn estimate(a: &EstimateArgs) -> Result<(), CliError> {
    let cams: CamsFile = read_json(&a.cams)?;
    cams.validate().map_err(|e| e.in_file(&a.cams))?;
    let cfg: ConfigFile = read_json(&a.config)?;
    cfg.validate().map_err(|e| e.in_file(&a.config))?;

    let left = load_image("left", &a.left)?;
    let right = load_image("right", &a.right)?;
    if left.dims() != right.dims() {
        return Err(CliError::usage(format!(
            "image sizes differ: --left is {} but --right is {}",
            size(left.dims()),
            size(right.dims())
        )));
    }
    for (field, cam) in [("reference", &cams.reference), ("second", &cams.second)] {
        if cam.dims() != left.dims() {
            return Err(CliError::field(
                &format!("{field}.width/height"),
                format!("camera is {} but the images are {}", size(cam.dims()), size(left.dims())),
            )
            .in_file(&a.cams));
        }
    }

    let input = StereoInput::new(
        left,
        right,
        cams.reference,
        cams.second,
        cams.second_to_reference.to_pose(),
    )?;
    let pipeline = cfg.pipeline();
    let mhi = estimate_mhi(&input, &pipeline.mhi_config(cams.reference)?, pipeline.estimator)?;
    save_mhi(&mhi, &a.out, cfg.bit_depth)
        .map_err(|e| CliError::usage(format!("--out {}: {e}", a.out.display())))
}

pub struct RenderArgs {
    pub mhi: PathBuf,
    pub pose: PathBuf,
    pub scheme: BlendScheme,
    pub soft_sharpness: f64,
    pub out: PathBuf,
    pub weights_out: Option<PathBuf>,
}

pub fn render(a: &RenderArgs) -> Result<(), CliError> {
    let pose: PoseFile = read_json(&a.pose)?;
    pose.validate().map_err(|e| e.in_file(&a.pose))?;
    let mhi = open_mhi(&a.mhi)?;
    let params = BlendParams {
        scheme: a.scheme,
        soft_sharpness: a.soft_sharpness,
    };
    let view = render_view(&mhi, &pose.pose(), pose.intrinsics, &params)?;
    write_file(&a.out, &view_png(&view)?)?;
    if let Some(dir) = &a.weights_out {
        create_dir(dir)?;
        for i in 0..view.weights.len() {
            write_file(&dir.join(weight_file_name(i)), &weight_png(&view, i)?)?;
        }
    }
    Ok(())
}

pub struct OrbitArgs {
    pub mhi: PathBuf,
    pub spec: PathBuf,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct OrbitIndex {
    format_version: u32,
    frames: Vec<OrbitFrame>,
}

#[derive(Serialize)]
struct OrbitFrame {
    file: String,
    angle_deg: f64,
    pose: PoseRecord,
}

pub const ORBIT_INDEX: &str = "frames.json";

/// Writes `frame_NNNN.png` for each orbit pose and a `frames.json` index.
pub fn orbit(a: &OrbitArgs) -> Result<(), CliError> {
    let file: OrbitFile = read_json(&a.spec)?;
    file.validate().map_err(|e| e.in_file(&a.spec))?;
    let mhi = open_mhi(&a.mhi)?;
    let spec = file.spec();
    let poses = spec.poses()?;
    let cam = *mhi.config().ref_intrinsics();
    let params = file.blend_params();
    create_dir(&a.out)?;
    let mut frames = Vec::with_capacity(poses.len());
    for (k, pose) in poses.iter().enumerate() {
        let view = synthesize_view(&mhi, &RenderRequest::new(cam, *pose), &params)?;
        let name = frame_file_name(k);
        write_file(&a.out.join(&name), &view_png(&view)?)?;
        frames.push(OrbitFrame {
            file: name,
            angle_deg: spec.angle_deg(k),
            pose: pose.into(),
        });
    }
    let index = OrbitIndex {
        format_version: SCHEMA_VERSION,
        frames,
    };
    let json = serde_json::to_string_pretty(&index).map_err(|e| CliError::runtime(e.to_string()))?;
    write_file(&a.out.join(ORBIT_INDEX), json.as_bytes())
}

pub struct BenchArgs {
    pub suite: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
}

/// Runs the benchmark and returns the report path.
pub fn bench(a: &BenchArgs) -> Result<PathBuf, CliError> {
    let pipelines = match &a.config {
        Some(p) => read_bench_config(p)?,
        None => vec![Default::default()],
    };
    let suite = load_suite(&a.suite)
        .map_err(|e| CliError::usage(format!("--suite {}: {e}", a.suite.display())))?;
    let report = run_benchmark(&suite, &pipelines);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_report(&report, &a.out).map_err(|e| CliError::usage(format!("--out {}: {e}", a.out.display())))?;
    Ok(a.out.join(REPORT_JSON))
}

pub struct GenSuiteArgs {
    pub config: SuiteConfig,
    pub out: PathBuf,
}

pub fn gen_suite(a: &GenSuiteArgs) -> Result<(), CliError> {
    let suite = generate_suite(&a.config)?;
    create_dir(&a.out)?;
    save_suite(&suite, &a.out).map_err(|e| CliError::usage(format!("--out {}: {e}", a.out.display())))
}

/// Caps worker threads for the duration of `f`; 0 keeps the default pool.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    par::with_threads(threads, f)
}

pub fn default_sharpness() -> f64 {
    DEFAULT_SOFT_SHARPNESS
}
