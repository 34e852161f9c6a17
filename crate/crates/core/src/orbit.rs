//! Circular camera orbits around a look-at point.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::mhi::Mhi;
use crate::raster::ColorImage;
use crate::render::RenderRequest;
use crate::view::{synthesize_view, BlendParams};

fn default_radius() -> f64 {
    2.0
}

fn default_step() -> f64 {
    2.0
}

/// `count` cameras on a horizontal circle of `radius` meters around
/// `center`, `step_deg` apart and symmetric about the reference camera.
/// The center defaults to the point `radius` meters ahead of the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_step")]
    pub step_deg: f64,
    pub count: usize,
    #[serde(default)]
    pub center: Option<[f64; 3]>,
}

impl OrbitSpec {
    pub fn new(count: usize) -> Self {
        OrbitSpec {
            radius: default_radius(),
            step_deg: default_step(),
            count,
            center: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidConfig(format!("radius must be positive, got {}", self.radius)));
        }
        if self.step_deg == 0.0 || !self.step_deg.is_finite() {
            return Err(Error::InvalidConfig(format!("step_deg must be nonzero, got {}", self.step_deg)));
        }
        if let Some(c) = self.center {
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidConfig("center must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center.map_or(Vector3::new(0.0, 0.0, self.radius), Vector3::from)
    }

    /// Orbit angle of frame `k` in degrees.
    pub fn angle_deg(&self, k: usize) -> f64 {
        (k as f64 - (self.count as f64 - 1.0) / 2.0) * self.step_deg
    }

    pub fn poses(&self) -> Result<Vec<Pose>> {
        self.validate()?;
        let c = self.center();
        Ok((0..self.count)
            .map(|k| {
                let a = self.angle_deg(k).to_radians();
                let r = Pose::from_axis_angle(Vector3::y(), a, Vector3::zeros());
                let t = c - r.rotation() * Vector3::new(0.0, 0.0, self.radius);
                Pose::from_axis_angle(Vector3::y(), a, t)
            })
            .collect())
    }
}

/// Renders every orbit frame with the reference intrinsics unless others are given.
pub fn render_orbit(
    mhi: &Mhi,
    spec: &OrbitSpec,
    params: &BlendParams,
    intrinsics: Option<Intrinsics>,
) -> Result<Vec<ColorImage>> {
    let cam = intrinsics.unwrap_or(*mhi.config().ref_intrinsics());
    spec.poses()?
        .into_iter()
        .map(|pose| Ok(synthesize_view(mhi, &RenderRequest::new(cam, pose), params)?.image))
        .collect()
}

pub fn frame_file_name(k: usize) -> String {
    format!("frame_{k:04}.png")
}
