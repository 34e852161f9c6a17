//! Rotation-binned benchmark over a synthetic suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blend::{BlendScheme, DEFAULT_SOFT_SHARPNESS};
use crate::error::{Error, Result};
use crate::estimate::{estimate_mhi, EstimatorMode};
use crate::geometry::Intrinsics;
use crate::metrics::{l1, psnr, ssim, Psnr};
use crate::mhi::{normals_for_count, Mhi, MhiConfig};
use crate::par;
use crate::render::RenderRequest;
use crate::synth::{RotationBin, SceneSample, Suite, SuiteConfig};
use crate::view::{synthesize_view, BlendParams};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_SVG: &str = "psnr_vs_rotation.svg";

fn default_near() -> f64 {
    1.0
}
fn default_far() -> f64 {
    100.0
}
fn default_sharpness() -> f64 {
    DEFAULT_SOFT_SHARPNESS
}

/// One estimation + rendering + blending configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub normals: usize,
    pub distances: usize,
    #[serde(default = "default_near")]
    pub near_depth: f64,
    #[serde(default = "default_far")]
    pub far_depth: f64,
    #[serde(default)]
    pub scheme: BlendScheme,
    #[serde(default = "default_sharpness")]
    pub soft_sharpness: f64,
    #[serde(default)]
    pub estimator: EstimatorMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            normals: 5,
            distances: 32,
            near_depth: default_near(),
            far_depth: default_far(),
            scheme: BlendScheme::Soft,
            soft_sharpness: DEFAULT_SOFT_SHARPNESS,
            estimator: EstimatorMode::default(),
        }
    }
}

impl PipelineConfig {
    pub fn new(normals: usize, distances: usize, scheme: BlendScheme) -> Self {
        PipelineConfig {
            normals,
            distances,
            scheme,
            ..Default::default()
        }
    }

    pub fn mhi_config(&self, intrinsics: Intrinsics) -> Result<MhiConfig> {
        MhiConfig::new(
            normals_for_count(self.normals)?,
            self.near_depth,
            self.far_depth,
            self.distances,
            intrinsics,
        )
    }

    pub fn blend_params(&self) -> BlendParams {
        BlendParams {
            scheme: self.scheme,
            soft_sharpness: self.soft_sharpness,
        }
    }

    pub fn label(&self) -> String {
        format!("N={} D={} {} {}", self.normals, self.distances, self.scheme, self.estimator.name())
    }

    fn estimation_key(&self) -> (usize, usize, u64, u64, String) {
        (
            self.normals,
            self.distances,
            self.near_depth.to_bits(),
            self.far_depth.to_bits(),
            self.estimator.name(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub config_index: usize,
    pub sample_id: String,
    pub target_index: usize,
    pub rotation_bin: RotationBin,
    pub rotation_deg: f64,
    pub extrapolation: bool,
    /// `None` when the images are identical or the sample failed.
    pub psnr_db: Option<f64>,
    pub identical: bool,
    pub ssim: Option<f64>,
    pub l1: Option<f64>,
    pub valid_fraction: f64,
    pub error: Option<String>,
}

impl SampleMetrics {
    fn capped_psnr(&self) -> Option<f64> {
        if self.identical {
            Some(Psnr::Identical.capped_db())
        } else {
            self.psnr_db
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub config_index: usize,
    /// `None` aggregates over all bins.
    pub rotation_bin: Option<RotationBin>,
    pub count: usize,
    pub failed: usize,
    pub identical: usize,
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_l1: Option<f64>,
    pub mean_valid_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEntry {
    pub label: String,
    pub config: PipelineConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    pub suite: SuiteConfig,
    pub num_samples: usize,
    pub configs: Vec<ConfigEntry>,
    pub samples: Vec<SampleMetrics>,
    pub aggregates: Vec<Aggregate>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn aggregate(&self, config_index: usize, bin: Option<RotationBin>) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.config_index == config_index && a.rotation_bin == bin)
    }

    pub fn mean_psnr(&self, config_index: usize, bin: Option<RotationBin>) -> Option<f64> {
        self.aggregate(config_index, bin).and_then(|a| a.mean_psnr_db)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn evaluate_target(
    mhi: &Mhi,
    sample: &SceneSample,
    target_index: usize,
    config: &PipelineConfig,
) -> Result<(Psnr, f64, f64)> {
    let t = &sample.targets[target_index];
    let view = synthesize_view(mhi, &RenderRequest::new(t.intrinsics, t.pose), &config.blend_params())?;
    let mask = Some(&t.valid_mask);
    Ok((
        psnr(&view.image, &t.image, mask)?,
        ssim(&view.image, &t.image, mask)?,
        l1(&view.image, &t.image, mask)?,
    ))
}

fn evaluate_sample(sample: &SceneSample, configs: &[PipelineConfig]) -> Vec<SampleMetrics> {
    let mut cache: BTreeMap<(usize, usize, u64, u64, String), Result<Mhi, String>> = BTreeMap::new();
    let mut out = Vec::new();
    for (ci, config) in configs.iter().enumerate() {
        let mhi = cache.entry(config.estimation_key()).or_insert_with(|| {
            config
                .mhi_config(sample.input.ref_cam)
                .and_then(|c| estimate_mhi(&sample.input, &c, config.estimator))
                .map_err(|e| e.to_string())
        });
        for (ti, t) in sample.targets.iter().enumerate() {
            let result = match mhi {
                Ok(m) => evaluate_target(m, sample, ti, config).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            let pixels = t.valid_mask.data().len().max(1);
            let mut m = SampleMetrics {
                config_index: ci,
                sample_id: sample.id.clone(),
                target_index: ti,
                rotation_bin: sample.rotation_bin,
                rotation_deg: t.rotation_deg,
                extrapolation: t.extrapolation,
                psnr_db: None,
                identical: false,
                ssim: None,
                l1: None,
                valid_fraction: t.valid_mask.count() as f64 / pixels as f64,
                error: None,
            };
            match result {
                Ok((p, s, a)) => {
                    m.identical = p.is_identical();
                    m.psnr_db = match p {
                        Psnr::Db(v) => Some(v),
                        Psnr::Identical => None,
                    };
                    m.ssim = Some(s);
                    m.l1 = Some(a);
                }
                Err(e) => m.error = Some(e),
            }
            out.push(m);
        }
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(samples: &[SampleMetrics], config_index: usize, bin: Option<RotationBin>) -> Aggregate {
    let rows: Vec<&SampleMetrics> = samples
        .iter()
        .filter(|s| s.config_index == config_index && bin.map_or(true, |b| s.rotation_bin == b))
        .collect();
    let ok: Vec<&&SampleMetrics> = rows.iter().filter(|s| s.error.is_none()).collect();
    Aggregate {
        config_index,
        rotation_bin: bin,
        count: ok.len(),
        failed: rows.len() - ok.len(),
        identical: ok.iter().filter(|s| s.identical).count(),
        mean_psnr_db: mean(ok.iter().filter_map(|s| s.capped_psnr())),
        mean_ssim: mean(ok.iter().filter_map(|s| s.ssim)),
        mean_l1: mean(ok.iter().filter_map(|s| s.l1)),
        mean_valid_fraction: mean(ok.iter().map(|s| s.valid_fraction)),
    }
}

/// Runs every configuration on every sample. Per-sample failures are
/// recorded in the report rather than aborting the run.
pub fn run_benchmark(suite: &Suite, configs: &[PipelineConfig]) -> MetricReport {
    let per_sample = par::map_range(suite.samples.len(), |i| evaluate_sample(&suite.samples[i], configs));
    let samples: Vec<SampleMetrics> = per_sample.into_iter().flatten().collect();

    let mut warnings = Vec::new();
    if suite.samples.is_empty() {
        warnings.push("suite contains no samples".to_string());
    }
    if configs.is_empty() {
        warnings.push("no pipeline configurations given".to_string());
    }
    let failed = samples.iter().filter(|s| s.error.is_some()).count();
    if failed > 0 {
        warnings.push(format!("{failed} evaluations failed"));
    }
    let mut aggregates = Vec::new();
    for ci in 0..configs.len() {
        for bin in RotationBin::ALL {
            aggregates.push(aggregate(&samples, ci, Some(bin)));
        }
        aggregates.push(aggregate(&samples, ci, None));
    }
    MetricReport {
        format_version: REPORT_FORMAT_VERSION,
        suite: suite.config,
        num_samples: suite.samples.len(),
        configs: configs
            .iter()
            .map(|c| ConfigEntry {
                label: c.label(),
                config: *c,
            })
            .collect(),
        samples,
        aggregates,
        warnings,
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.digits$}"))
}

/// Plain-text table with one row per configuration and bin.
pub fn format_table(report: &MetricReport) -> String {
    let mut s = String::new();
    let width = report.configs.iter().map(|c| c.label.len()).max().unwrap_or(6).max(6);
    let _ = writeln!(
        s,
        "{:<width$}  {:>5}  {:>4}  {:>6}  {:>9}  {:>7}  {:>7}",
        "config", "bin", "n", "failed", "PSNR(dB)", "SSIM", "L1"
    );
    for (ci, c) in report.configs.iter().enumerate() {
        let bins = RotationBin::ALL.map(Some).into_iter().chain([None]);
        for bin in bins {
            let Some(a) = report.aggregate(ci, bin) else { continue };
            let _ = writeln!(
                s,
                "{:<width$}  {:>5}  {:>4}  {:>6}  {:>9}  {:>7}  {:>7}",
                c.label,
                bin.map_or("all", |b| b.label()),
                a.count,
                a.failed,
                fmt_opt(a.mean_psnr_db, 2),
                fmt_opt(a.mean_ssim, 4),
                fmt_opt(a.mean_l1, 4),
            );
        }
    }
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// PSNR against target rotation: per-sample points plus a line through the
/// bin means of each configuration.
pub fn format_svg(report: &MetricReport) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let psnrs: Vec<f64> = report.samples.iter().filter_map(|s| s.capped_psnr()).collect();
    let (mut lo, mut hi) = psnrs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 50.0);
    }
    lo = (lo / 5.0).floor() * 5.0;
    hi = ((hi / 5.0).ceil() * 5.0).max(lo + 5.0);
    let sx = |theta: f64| m + theta / 8.0 * (w - 2.0 * m);
    let sy = |db: f64| h - m - (db - lo) / (hi - lo) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = h - m,
        r = w - m
    );
    for t in [0.0, 2.0, 4.0, 6.0, 8.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#,
            sx(t),
            h - m + 16.0
        );
    }
    let mut db = lo;
    while db <= hi + 1e-9 {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{db}</text>"#, m - 6.0, sy(db) + 4.0);
        db += 5.0;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">rotation (deg)</text>"#,
        w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">PSNR (dB)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (ci, c) in report.configs.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        for smp in report.samples.iter().filter(|x| x.config_index == ci) {
            if let Some(v) = smp.capped_psnr() {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="2" fill="{color}" fill-opacity="0.35"/>"#,
                    sx(smp.rotation_deg),
                    sy(v)
                );
            }
        }
        let points: Vec<String> = RotationBin::ALL
            .iter()
            .filter_map(|&b| {
                let (l, u) = b.bounds();
                report
                    .mean_psnr(ci, Some(b))
                    .map(|v| format!("{:.1},{:.1}", sx((l + u) / 2.0), sy(v)))
            })
            .collect();
        if !points.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                points.join(" ")
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            w - m - 200.0,
            m + 14.0 * (ci as f64 + 1.0),
            c.label
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the JSON report, the text table and the SVG plot into `dir`.
pub fn write_report(report: &MetricReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write(REPORT_JSON, report.to_json()?)?;
    write(REPORT_TABLE, format_table(report))?;
    write(REPORT_SVG, format_svg(report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_suite;

    #[test]
    fn empty_suite_warns() {
        let suite = Suite {
            config: SuiteConfig::default(),
            samples: vec![],
        };
        let r = run_benchmark(&suite, &[PipelineConfig::default()]);
        assert_eq!(r.num_samples, 0);
        assert!(r.samples.is_empty());
        assert!(!r.warnings.is_empty());
        assert_eq!(r.aggregate(0, None).unwrap().count, 0);
        assert!(r.mean_psnr(0, None).is_none());
        assert!(format_table(&r).contains("warning"));
        assert!(format_svg(&r).starts_with("<svg"));
    }

    #[test]
    fn scheme_sweep_rows_and_failures() {
        let cfg = SuiteConfig {
            scenes_per_bin: 1,
            width: 48,
            height: 48,
            ..Default::default()
        };
        let suite = generate_suite(&cfg).unwrap();
        let mut configs: Vec<PipelineConfig> = BlendScheme::ALL
            .iter()
            .map(|&s| PipelineConfig::new(2, 4, s))
            .collect();
        // Four normals has no default set, so this one fails per sample.
        configs.push(PipelineConfig::new(4, 4, BlendScheme::Soft));
        let r = run_benchmark(&suite, &configs);
        assert_eq!(r.samples.len(), 3 * 4);
        for ci in 0..3 {
            for b in RotationBin::ALL {
                let a = r.aggregate(ci, Some(b)).unwrap();
                assert_eq!((a.count, a.failed), (1, 0));
                assert!(a.mean_psnr_db.unwrap().is_finite());
            }
        }
        assert_eq!(r.aggregate(3, None).unwrap().failed, 3);
        assert!(r.warnings.iter().any(|w| w.contains("failed")));
        let table = format_table(&r);
        assert_eq!(table.lines().filter(|l| l.contains("4-8")).count(), 4);
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
