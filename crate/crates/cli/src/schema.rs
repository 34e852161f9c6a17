//! Versioned JSON input files: cameras, poses, pipeline configuration, orbits.
//!
//! Every file carries `format_version`. Parse and validation errors are
//! reported as `file: field.path: message`.

use std::path::Path;

use mhi_core::bench::PipelineConfig;
use mhi_core::blend::{BlendScheme, DEFAULT_SOFT_SHARPNESS};
use mhi_core::estimate::EstimatorMode;
use mhi_core::geometry::{Intrinsics, Pose};
use mhi_core::mhi::{normals_for_count, BitDepth};
use mhi_core::orbit::OrbitSpec;
use mhi_core::view::BlendParams;
use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Euler angles are limited to this closed range, in degrees.
pub const MAX_ANGLE_DEG: f64 = 180.0;

/// Reads and deserializes `path`, naming the offending field on failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    parse_json(&text).map_err(|e| e.in_file(path))
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::field(&path, e.into_inner().to_string())
    })
}

fn check_version(v: u32) -> Result<(), CliError> {
    if v != SCHEMA_VERSION {
        return Err(CliError::field(
            "format_version",
            format!("unsupported version {v} (expected {SCHEMA_VERSION})"),
        ));
    }
    Ok(())
}

fn check_intrinsics(field: &str, k: &Intrinsics) -> Result<(), CliError> {
    k.validate().map_err(|e| CliError::field(field, e.to_string()))
}

/// Pose of a camera relative to the reference: intrinsic XYZ Euler angles in
/// degrees (`R = Rx * Ry * Rz`) and the camera center in reference
/// coordinates, in meters. It maps camera points into the reference frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSpec {
    #[serde(default)]
    pub euler_xyz_deg: [f64; 3],
    #[serde(default)]
    pub translation: [f64; 3],
}

impl PoseSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, a) in ["rx", "ry", "rz"].iter().zip(self.euler_xyz_deg) {
            if !(a.is_finite() && (-MAX_ANGLE_DEG..=MAX_ANGLE_DEG).contains(&a)) {
                return Err(CliError::field(
                    &format!("euler_xyz_deg.{name}"),
                    format!("angle {a} outside [-180, 180]"),
                ));
            }
        }
        for (name, t) in ["tx", "ty", "tz"].iter().zip(self.translation) {
            if !t.is_finite() {
                return Err(CliError::field(&format!("translation.{name}"), "must be finite"));
            }
        }
        Ok(())
    }

    pub fn to_pose(&self) -> Pose {
        Pose::from_euler_xyz_deg(self.euler_xyz_deg, Vector3::from(self.translation))
    }
}

/// `cams.json`: the two input cameras and the second-to-reference pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamsFile {
    pub format_version: u32,
    pub reference: Intrinsics,
    pub second: Intrinsics,
    pub second_to_reference: PoseSpec,
}

impl CamsFile {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.format_version)?;
        check_intrinsics("reference", &self.reference)?;
        check_intrinsics("second", &self.second)?;
        self.second_to_reference
            .validate()
            .map_err(|e| e.under("second_to_reference"))
    }
}

/// `pose.json`: a target view. Intrinsics default to the reference camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub format_version: u32,
    #[serde(default)]
    pub euler_xyz_deg: [f64; 3],
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub intrinsics: Option<Intrinsics>,
}

impl PoseFile {
    pub fn pose(&self) -> PoseSpec {
        PoseSpec {
            euler_xyz_deg: self.euler_xyz_deg,
            translation: self.translation,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.format_version)?;
        self.pose().validate()?;
        if let Some(k) = &self.intrinsics {
            check_intrinsics("intrinsics", k)?;
        }
        Ok(())
    }
}

fn default_normals() -> usize {
    5
}
fn default_distances() -> usize {
    32
}
fn default_near() -> f64 {
    1.0
}
fn default_far() -> f64 {
    100.0
}
fn default_sharpness() -> f64 {
    DEFAULT_SOFT_SHARPNESS
}
fn default_bit_depth() -> BitDepth {
    BitDepth::Eight
}

/// `config.json`: one estimation and blending configuration.
///
/// `scheme` and `soft_sharpness` only matter to `bench`; `bit_depth` only to
/// `estimate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub format_version: u32,
    #[serde(default = "default_normals")]
    pub normals: usize,
    #[serde(default = "default_distances")]
    pub distances: usize,
    #[serde(default = "default_near")]
    pub near_depth: f64,
    #[serde(default = "default_far")]
    pub far_depth: f64,
    #[serde(default)]
    pub estimator: EstimatorMode,
    #[serde(default)]
    pub scheme: BlendScheme,
    #[serde(default = "default_sharpness")]
    pub soft_sharpness: f64,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: BitDepth,
}

impl ConfigFile {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            normals: self.normals,
            distances: self.distances,
            near_depth: self.near_depth,
            far_depth: self.far_depth,
            scheme: self.scheme,
            soft_sharpness: self.soft_sharpness,
            estimator: self.estimator,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.format_version)?;
        validate_pipeline(&self.pipeline())
    }
}

pub fn validate_pipeline(p: &PipelineConfig) -> Result<(), CliError> {
    normals_for_count(p.normals).map_err(|e| CliError::field("normals", e.to_string()))?;
    if p.distances < 2 {
        return Err(CliError::field(
            "distances",
            format!("need at least 2 distances per normal, got {}", p.distances),
        ));
    }
    if !(p.near_depth > 0.0 && p.near_depth.is_finite()) {
        return Err(CliError::field("near_depth", format!("must be positive, got {}", p.near_depth)));
    }
    if !(p.far_depth > p.near_depth && p.far_depth.is_finite()) {
        return Err(CliError::field(
            "far_depth",
            format!("must be finite and exceed near_depth {}, got {}", p.near_depth, p.far_depth),
        ));
    }
    if let EstimatorMode::Softmin { tau } = p.estimator {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(CliError::field("estimator.tau", format!("must be positive, got {tau}")));
        }
    }
    if !(p.soft_sharpness >= 0.0 && p.soft_sharpness.is_finite()) {
        return Err(CliError::field(
            "soft_sharpness",
            format!("must be finite and nonnegative, got {}", p.soft_sharpness),
        ));
    }
    Ok(())
}

/// Benchmark configuration: a list of pipelines. A single [`ConfigFile`] is
/// also accepted and treated as a one-element list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    pub format_version: u32,
    pub pipelines: Vec<PipelineConfig>,
}

impl BenchFile {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.format_version)?;
        if self.pipelines.is_empty() {
            return Err(CliError::field("pipelines", "at least one pipeline is required"));
        }
        for (i, p) in self.pipelines.iter().enumerate() {
            validate_pipeline(p).map_err(|e| e.under(&format!("pipelines[{i}]")))?;
        }
        Ok(())
    }
}

/// Reads either a [`BenchFile`] or a single [`ConfigFile`].
pub fn read_bench_config(path: &Path) -> Result<Vec<PipelineConfig>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let is_list = serde_json::from_str::<serde_json::Value>(&text)
        .map(|v| v.get("pipelines").is_some())
        .unwrap_or(false);
    let result = if is_list {
        parse_json::<BenchFile>(&text).and_then(|b| b.validate().map(|_| b.pipelines))
    } else {
        parse_json::<ConfigFile>(&text).and_then(|c| c.validate().map(|_| vec![c.pipeline()]))
    };
    result.map_err(|e| e.in_file(path))
}

/// `orbit.json`: a circular camera path plus the blend used for every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitFile {
    pub format_version: u32,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_step", alias = "step")]
    pub step_deg: f64,
    pub count: usize,
    #[serde(default)]
    pub center: Option<[f64; 3]>,
    #[serde(default)]
    pub scheme: BlendScheme,
    #[serde(default = "default_sharpness")]
    pub soft_sharpness: f64,
}

fn default_radius() -> f64 {
    2.0
}
fn default_step() -> f64 {
    2.0
}

impl OrbitFile {
    pub fn spec(&self) -> OrbitSpec {
        OrbitSpec {
            radius: self.radius,
            step_deg: self.step_deg,
            count: self.count,
            center: self.center,
        }
    }

    pub fn blend_params(&self) -> BlendParams {
        BlendParams {
            scheme: self.scheme,
            soft_sharpness: self.soft_sharpness,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.format_version)?;
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(CliError::field("radius", format!("must be positive, got {}", self.radius)));
        }
        if self.step_deg == 0.0 || !self.step_deg.is_finite() {
            return Err(CliError::field("step_deg", format!("must be nonzero, got {}", self.step_deg)));
        }
        if self.count == 0 {
            return Err(CliError::field("count", "must be at least 1"));
        }
        if let Some(c) = self.center {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(CliError::field("center", "must be finite"));
            }
        }
        if !(self.soft_sharpness >= 0.0 && self.soft_sharpness.is_finite()) {
            return Err(CliError::field("soft_sharpness", "must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_name_the_field() {
        let e = parse_json::<CamsFile>(
            r#"{"format_version":1,"reference":{"fx":"a"},"second":{},"second_to_reference":{}}"#,
        )
        .unwrap_err();
        assert!(e.message.contains("reference.fx"), "{}", e.message);

        let e = parse_json::<ConfigFile>(r#"{"format_version":1,"distance":3}"#).unwrap_err();
        assert!(e.message.contains("distance"), "{}", e.message);
    }

    #[test]
    fn validation_names_the_field() {
        let c: ConfigFile = parse_json(r#"{"format_version":1,"distances":1}"#).unwrap();
        assert!(c.validate().unwrap_err().message.starts_with("distances:"));
        let c: ConfigFile = parse_json(r#"{"format_version":2}"#).unwrap();
        assert!(c.validate().unwrap_err().message.starts_with("format_version:"));
        let p = PoseFile {
            format_version: 1,
            euler_xyz_deg: [0.0, 361.0, 0.0],
            translation: [0.0; 3],
            intrinsics: None,
        };
        assert!(p.validate().unwrap_err().message.starts_with("euler_xyz_deg.ry:"));
    }

    #[test]
    fn config_defaults_match_the_default_pipeline() {
        let c: ConfigFile = parse_json(r#"{"format_version":1}"#).unwrap();
        c.validate().unwrap();
        assert_eq!(c.pipeline(), PipelineConfig::default());
    }

    #[test]
    fn orbit_accepts_step_alias() {
        let o: OrbitFile = parse_json(r#"{"format_version":1,"count":5,"step":3}"#).unwrap();
        o.validate().unwrap();
        assert_eq!(o.spec().step_deg, 3.0);
        assert_eq!(o.spec().radius, 2.0);
    }

    #[test]
    fn pose_angles_are_bounded() {
        let mut p = PoseSpec::default();
        p.euler_xyz_deg = [180.0, -180.0, 0.0];
        p.validate().unwrap();
        p.euler_xyz_deg[2] = 180.5;
        assert!(p.validate().is_err());
        p.euler_xyz_deg[2] = f64::NAN;
        assert!(p.validate().is_err());
    }
}
