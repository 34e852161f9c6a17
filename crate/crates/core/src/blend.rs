//! Angle cost between rotated layer normals and viewing rays, and the
//! weighted blend of multi-normal images into one opaque view.
//!
//! Multi-normal images are premultiplied by their accumulated alpha, so the
//! blend divides by the coverage-weighted weight sum:
//!
//! ```text
//! I = sum_i w_i m_i C_i / sum_i w_i m_i A_i
//! ```
//!
//! with `m_i` the in-bounds mask and `A_i` the accumulated alpha. For fully
//! opaque inputs (`A_i = 1`) this is the plain normalized weighted mean.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PixelCoord};
use crate::par;
use crate::raster::{ColorImage, Grid, Mask, ScalarImage};
use crate::render::MultiNormalImage;

pub const DEFAULT_SOFT_SHARPNESS: f64 = 3.0;
/// Lower bound of the weight normalizer.
pub const NORMALIZER_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendScheme {
    Hard,
    #[default]
    Soft,
    Average,
}

impl BlendScheme {
    pub const ALL: [BlendScheme; 3] = [BlendScheme::Average, BlendScheme::Hard, BlendScheme::Soft];

    pub fn as_str(self) -> &'static str {
        match self {
            BlendScheme::Hard => "hard",
            BlendScheme::Soft => "soft",
            BlendScheme::Average => "average",
        }
    }
}

impl fmt::Display for BlendScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlendScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(BlendScheme::Hard),
            "soft" => Ok(BlendScheme::Soft),
            "average" | "avg" => Ok(BlendScheme::Average),
            other => Err(Error::InvalidConfig(format!(
                "unknown blend scheme {other:?} (expected hard, soft or average)"
            ))),
        }
    }
}

/// Per-normal blend weights, one map per normal.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendWeights {
    pub scheme: BlendScheme,
    pub maps: Vec<ScalarImage>,
}

impl BlendWeights {
    pub fn num_normals(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps.first().map(|m| m.dims()).unwrap_or((0, 0))
    }

    /// Nonnegative, finite, and positive somewhere at every pixel.
    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        for m in &self.maps {
            m.ensure_dims(dims)?;
        }
        let n = dims.0 * dims.1;
        for p in 0..n {
            let mut any = false;
            for m in &self.maps {
                let w = m.data()[p];
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::InvariantViolation(format!("blend weight {w} at pixel {p}")));
                }
                any |= w > 0.0;
            }
            if !any {
                return Err(Error::InvariantViolation(format!("all blend weights zero at pixel {p}")));
            }
        }
        Ok(())
    }
}

/// `|cos|` of the angle between `R^T n` and the target ray through `pixel`.
/// Translation plays no part.
pub fn angle_cost(normal: &Vector3<f64>, pixel: PixelCoord, tgt_cam: &Intrinsics, rel_rotation: &Matrix3<f64>) -> f64 {
    let n = rel_rotation.transpose() * normal;
    let ray = tgt_cam.backproject(pixel);
    (n.dot(&ray).abs() / (n.norm() * ray.norm())).min(1.0)
}

/// Angle costs of every normal at every target pixel.
pub fn angle_costs(normals: &[Vector3<f64>], tgt_cam: &Intrinsics, rel_rotation: &Matrix3<f64>) -> Vec<ScalarImage> {
    let (w, h) = tgt_cam.dims();
    normals
        .iter()
        .map(|n| {
            let rows = par::map_range(h, |y| {
                (0..w)
                    .map(|x| angle_cost(n, PixelCoord::new(x as f64, y as f64), tgt_cam, rel_rotation) as f32)
                    .collect::<Vec<_>>()
            });
            Grid::from_vec(w, h, rows.concat()).expect("row lengths match")
        })
        .collect()
}

fn ensure_same_dims(costs: &[ScalarImage]) -> Result<(usize, usize)> {
    let dims = costs
        .first()
        .map(|c| c.dims())
        .ok_or_else(|| Error::InvalidConfig("no cost maps".into()))?;
    for c in costs {
        c.ensure_dims(dims)?;
    }
    Ok(dims)
}

/// One-hot weights on the largest cost; ties go to the smallest normal index.
pub fn hard_weights(costs: &[ScalarImage]) -> Result<BlendWeights> {
    let (w, h) = ensure_same_dims(costs)?;
    let mut maps = vec![Grid::filled(w, h, 0.0f32); costs.len()];
    for p in 0..w * h {
        let mut best = 0;
        for (i, c) in costs.iter().enumerate().skip(1) {
            if c.data()[p] > costs[best].data()[p] {
                best = i;
            }
        }
        maps[best].data_mut()[p] = 1.0;
    }
    Ok(BlendWeights {
        scheme: BlendScheme::Hard,
        maps,
    })
}

/// `exp(sharpness * (2 delta - 1))`.
#[inline]
pub fn soft_weight(delta: f64, sharpness: f64) -> f64 {
    (sharpness * (2.0 * delta - 1.0)).exp()
}

pub fn soft_weights(costs: &[ScalarImage], sharpness: f64) -> Result<BlendWeights> {
    ensure_same_dims(costs)?;
    Ok(BlendWeights {
        scheme: BlendScheme::Soft,
        maps: costs
            .iter()
            .map(|c| c.map(|&d| soft_weight(d as f64, sharpness) as f32))
            .collect(),
    })
}

pub fn average_weights(num_normals: usize, width: usize, height: usize) -> BlendWeights {
    BlendWeights {
        scheme: BlendScheme::Average,
        maps: vec![Grid::filled(width, height, 1.0); num_normals],
    }
}

/// Replaces the cost of every normal whose multi-normal image has no coverage
/// at a pixel by -1, so argmax-based schemes only pick covered normals.
pub fn mask_uncovered_costs(costs: &[ScalarImage], multi: &[MultiNormalImage]) -> Vec<ScalarImage> {
    costs
        .iter()
        .zip(multi)
        .map(|(c, m)| {
            let data = c
                .data()
                .iter()
                .zip(m.valid_mask.data().iter().zip(m.accumulated_alpha.data()))
                .map(|(&d, (&ok, &a))| if ok && a > 0.0 { d } else { -1.0 })
                .collect();
            Grid::from_vec(c.width(), c.height(), data).expect("same dims")
        })
        .collect()
}

/// Blended view plus bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Blended {
    pub image: ColorImage,
    /// Pixels with no covered, in-bounds contributor.
    pub hole_mask: Mask,
    /// Normalized per-normal contributions actually used at each pixel.
    pub effective_weights: Vec<ScalarImage>,
}

/// Blends `N` multi-normal images with `weights`.
///
/// Weights are masked by each image's in-bounds mask and scaled by its
/// accumulated alpha before normalization. A pixel where nothing remains is a
/// hole: it gets the unmasked weighted mean and is flagged in `hole_mask`.
/// Every output value lies within the per-channel range of the colors that
/// contributed to it.
pub fn blend(multi: &[MultiNormalImage], weights: &BlendWeights) -> Result<Blended> {
    if multi.len() != weights.num_normals() || multi.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: (multi.len(), 1),
            found: (weights.num_normals(), 1),
        });
    }
    let dims = multi[0].dims();
    for m in multi {
        m.color.ensure_dims(dims)?;
        m.accumulated_alpha.ensure_dims(dims)?;
        m.valid_mask.ensure_dims(dims)?;
    }
    for w in &weights.maps {
        w.ensure_dims(dims)?;
    }
    let (w, h) = dims;
    let n = multi.len();

    let rows = par::map_range(h, |y| {
        let mut image = Vec::with_capacity(w);
        let mut holes = Vec::with_capacity(w);
        let mut eff = vec![0.0f32; n * w];
        for x in 0..w {
            let p = y * w + x;
            let (px, hole) = blend_pixel(multi, weights, p, |i, e| eff[i * w + x] = e);
            image.push(px);
            holes.push(hole);
        }
        (image, holes, eff)
    });

    let mut image = Vec::with_capacity(w * h);
    let mut hole_mask = Vec::with_capacity(w * h);
    let mut eff: Vec<Vec<f32>> = vec![Vec::with_capacity(w * h); n];
    for (img_row, hole_row, eff_row) in rows {
        image.extend(img_row);
        hole_mask.extend(hole_row);
        for (i, e) in eff.iter_mut().enumerate() {
            e.extend_from_slice(&eff_row[i * w..(i + 1) * w]);
        }
    }
    Ok(Blended {
        image: Grid::from_vec(w, h, image)?,
        hole_mask: Grid::from_vec(w, h, hole_mask)?,
        effective_weights: eff
            .into_iter()
            .map(|e| Grid::from_vec(w, h, e))
            .collect::<Result<_>>()?,
    })
}

#[inline]
fn blend_pixel(
    multi: &[MultiNormalImage],
    weights: &BlendWeights,
    p: usize,
    mut record: impl FnMut(usize, f32),
) -> ([f32; 3], bool) {
    let mut num = [0.0f64; 3];
    let mut den = 0.0f64;
    for (m, wm) in multi.iter().zip(&weights.maps) {
        if !m.valid_mask.data()[p] {
            continue;
        }
        let wi = wm.data()[p] as f64;
        let c = m.color.data()[p];
        for k in 0..3 {
            num[k] += wi * c[k] as f64;
        }
        den += wi * m.accumulated_alpha.data()[p] as f64;
    }

    if den > NORMALIZER_EPS {
        // Bounds are the unpremultiplied f32 colors of the contributors.
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for (i, (m, wm)) in multi.iter().zip(&weights.maps).enumerate() {
            let a = m.accumulated_alpha.data()[p];
            let share = if m.valid_mask.data()[p] { wm.data()[p] as f64 * a as f64 } else { 0.0 };
            record(i, (share / den) as f32);
            if share > 0.0 {
                let c = m.color.data()[p];
                for k in 0..3 {
                    let v = c[k] / a;
                    lo[k] = lo[k].min(v);
                    hi[k] = hi[k].max(v);
                }
            }
        }
        let mut out = [0.0f32; 3];
        for k in 0..3 {
            out[k] = ((num[k] / den) as f32).clamp(lo[k], hi[k]);
        }
        return (out, false);
    }

    // Hole: unmasked weighted mean of the premultiplied colors.
    let mut num = [0.0f64; 3];
    let mut sum = 0.0f64;
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for (m, wm) in multi.iter().zip(&weights.maps) {
        let wi = wm.data()[p] as f64;
        let c = m.color.data()[p];
        sum += wi;
        if wi > 0.0 {
            for k in 0..3 {
                num[k] += wi * c[k] as f64;
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
    }
    let norm = sum.max(NORMALIZER_EPS);
    for (i, wm) in weights.maps.iter().enumerate() {
        record(i, (wm.data()[p] as f64 / norm) as f32);
    }
    let mut out = [0.0f32; 3];
    for k in 0..3 {
        out[k] = if lo[k] <= hi[k] {
            ((num[k] / norm) as f32).clamp(lo[k], hi[k])
        } else {
            0.0
        };
    }
    (out, true)
}
