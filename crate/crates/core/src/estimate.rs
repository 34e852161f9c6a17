//! Photoconsistency estimation of MHI alphas from a stereo pair.
//!
//! For every layer plane the second image is warped into the reference view
//! through the plane homography and compared with the reference image. The
//! stack of per-layer comparisons is the oriented cost volume; layers sharing
//! a normal form an ordinary plane-sweep volume. Alphas are then assigned per
//! reference pixel from the costs, and every layer's color is the reference
//! image itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{front_of_target_form, homography_target_to_reference, Intrinsics, Pose};
use crate::mhi::{Mhi, MhiConfig};
use crate::par;
use crate::raster::{ColorImage, Footprint, Grid};

/// Default softmin temperature, in mean-absolute-difference units.
pub const DEFAULT_SOFTMIN_TAU: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct StereoInput {
    pub reference: ColorImage,
    pub second: ColorImage,
    pub ref_cam: Intrinsics,
    pub sec_cam: Intrinsics,
    /// Maps second-camera points into the reference frame.
    pub rel_pose_sec: Pose,
}

impl StereoInput {
    pub fn new(
        reference: ColorImage,
        second: ColorImage,
        ref_cam: Intrinsics,
        sec_cam: Intrinsics,
        rel_pose_sec: Pose,
    ) -> Result<Self> {
        reference.ensure_dims(ref_cam.dims())?;
        second.ensure_dims(sec_cam.dims())?;
        Ok(StereoInput {
            reference,
            second,
            ref_cam,
            sec_cam,
            rel_pose_sec,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrientedCostVolume {
    config: MhiConfig,
    reference: ColorImage,
    /// Layer-major, each layer a row-major `W x H` cost map.
    costs: Vec<f32>,
    /// Whether the cost at the same position came from in-bounds samples.
    valid: Vec<bool>,
}

impl OrientedCostVolume {
    pub fn config(&self) -> &MhiConfig {
        &self.config
    }

    pub fn reference(&self) -> &ColorImage {
        &self.reference
    }

    pub fn layer_costs(&self, layer: usize) -> &[f32] {
        let n = self.config.width() * self.config.height();
        &self.costs[layer * n..(layer + 1) * n]
    }

    pub fn layer_valid(&self, layer: usize) -> &[bool] {
        let n = self.config.width() * self.config.height();
        &self.valid[layer * n..(layer + 1) * n]
    }

    pub fn cost(&self, normal_index: usize, distance_index: usize, x: usize, y: usize) -> f32 {
        self.layer_costs(self.config.layer_index(normal_index, distance_index))[y * self.config.width() + x]
    }

    /// Pixels with an in-bounds sample in at least one layer.
    pub fn observed(&self) -> Vec<bool> {
        let n = self.config.width() * self.config.height();
        (0..n)
            .map(|p| (0..self.config.num_layers()).any(|k| self.valid[k * n + p]))
            .collect()
    }

    /// Flat layer index of the smallest cost at each pixel; ties go to the
    /// smallest index.
    pub fn argmin(&self) -> Grid<usize> {
        let (w, h) = self.config.dims();
        let n = w * h;
        let layers = self.config.num_layers();
        Grid::from_fn(w, h, |x, y| {
            let p = y * w + x;
            let mut best = 0;
            for k in 1..layers {
                if self.costs[k * n + p] < self.costs[best * n + p] {
                    best = k;
                }
            }
            best
        })
    }
}

/// Warps the second image into the reference view for every layer plane and
/// records the 3x3 box-aggregated mean absolute RGB difference.
///
/// Samples falling outside the second image, and every pixel of a layer whose
/// plane is degenerate for the pair, carry the largest valid cost of the volume.
pub fn build_ocv(input: &StereoInput, config: &MhiConfig) -> Result<OrientedCostVolume> {
    if config.ref_intrinsics() != &input.ref_cam {
        return Err(Error::InvalidConfig(
            "configuration intrinsics differ from the reference camera".into(),
        ));
    }
    input.reference.ensure_dims(config.dims())?;
    let (w, h) = config.dims();
    let ref_to_sec = input.rel_pose_sec.inverse();
    let per_layer: Vec<(Vec<f32>, Vec<bool>)> = par::map_range(config.num_layers(), |k| {
        let d = config.distances_per_normal();
        let plane = config.plane(k / d, k % d);
        let local = plane.in_source_frame(&input.rel_pose_sec);
        let maps = homography_target_to_reference(&input.sec_cam, &input.ref_cam, &ref_to_sec, &local)
            .and_then(|hm| Ok((hm, front_of_target_form(&input.ref_cam, &ref_to_sec, &local)?)));
        match maps {
            Ok((hm, front)) => layer_cost(input, &hm, &front, w, h),
            Err(_) => (vec![f32::NAN; w * h], vec![false; w * h]),
        }
    });

    let sentinel = per_layer
        .iter()
        .flat_map(|(c, _)| c.iter())
        .filter(|c| !c.is_nan())
        .fold(0.0f32, |m, &c| m.max(c));
    let mut costs = Vec::with_capacity(w * h * config.num_layers());
    let mut valid = Vec::with_capacity(costs.capacity());
    for (c, v) in per_layer {
        costs.extend(c.into_iter().map(|x| if x.is_nan() { sentinel } else { x }));
        valid.extend(v);
    }
    Ok(OrientedCostVolume {
        config: config.clone(),
        reference: input.reference.clone(),
        costs,
        valid,
    })
}

/// Cost map of one layer; NaN marks invalid pixels, including those whose
/// plane point is behind either camera.
fn layer_cost(
    input: &StereoInput,
    ref_to_sec: &nalgebra::Matrix3<f64>,
    front: &nalgebra::Vector3<f64>,
    w: usize,
    h: usize,
) -> (Vec<f32>, Vec<bool>) {
    let sec = &input.second;
    let m = ref_to_sec;
    let mut raw = vec![f32::NAN; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let s = m[(2, 0)] * xf + m[(2, 1)] * yf + m[(2, 2)];
            let u = (m[(0, 0)] * xf + m[(0, 1)] * yf + m[(0, 2)]) / s;
            let v = (m[(1, 0)] * xf + m[(1, 1)] * yf + m[(1, 2)]) / s;
            if !(s > 0.0 && front.x * xf + front.y * yf + front.z > 0.0) {
                continue;
            }
            if let Some(fp) = Footprint::new(u, v, sec.width(), sec.height()) {
                let a = input.reference.get(x, y);
                let b = fp.sample(sec.data(), sec.width());
                raw[y * w + x] = ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0;
            }
        }
    }
    let valid: Vec<bool> = raw.iter().map(|c| !c.is_nan()).collect();
    (box_mean_valid(&raw, w, h), valid)
}

/// 3x3 mean over the non-NaN entries of the window; NaN where the center is NaN.
fn box_mean_valid(raw: &[f32], w: usize, h: usize) -> Vec<f32> {
    let r = 1;
    let mut out = vec![f32::NAN; w * h];
    for y in 0..h {
        for x in 0..w {
            if raw[y * w + x].is_nan() {
                continue;
            }
            let mut sum = 0.0f32;
            let mut count = 0u32;
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    let c = raw[yy * w + xx];
                    if !c.is_nan() {
                        sum += c;
                        count += 1;
                    }
                }
            }
            out[y * w + x] = sum / count as f32;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EstimatorMode {
    WinnerTakeAll,
    Softmin {
        #[serde(default = "default_tau")]
        tau: f64,
    },
}

fn default_tau() -> f64 {
    DEFAULT_SOFTMIN_TAU
}

impl Default for EstimatorMode {
    fn default() -> Self {
        EstimatorMode::Softmin { tau: DEFAULT_SOFTMIN_TAU }
    }
}

impl EstimatorMode {
    pub fn name(&self) -> String {
        match self {
            EstimatorMode::WinnerTakeAll => "wta".into(),
            EstimatorMode::Softmin { tau } => format!("softmin({tau})"),
        }
    }
}

/// Assigns alphas from the cost volume and copies the reference image into
/// every layer's color.
///
/// * Winner-take-all: alpha 1 on the layer with the smallest cost over all
///   `N x D` layers, 0 elsewhere.
/// * Softmin: `exp(-cost / tau)` normalized over all layers at the pixel,
///   then rescaled so the alphas of each normal group sum to one. Every group
///   thus holds a complete soft plane sweep whose over-composite is bounded by 1.
///
/// In both modes a pixel whose dominant layer differs from all of its
/// neighbors' takes its neighbors' assignment (the most common neighbor
/// winner for winner-take-all, the mean neighbor alpha vector for softmin).
/// Pixels without a single in-bounds sample copy the assignment of the
/// nearest pixel that has one.
pub fn estimate_alphas(ocv: &OrientedCostVolume, mode: EstimatorMode) -> Result<Mhi> {
    let cfg = &ocv.config;
    let (w, h) = cfg.dims();
    let layers = cfg.num_layers();
    let n = w * h;
    let src = nearest_observed(&ocv.observed(), w, h);

    let alphas: Vec<Vec<f32>> = match mode {
        EstimatorMode::WinnerTakeAll => {
            let labels = suppress_isolated_labels(&ocv.argmin());
            let labels: Vec<usize> = (0..n).map(|p| labels.data()[src[p].unwrap_or(p)]).collect();
            (0..layers)
                .map(|k| labels.iter().map(|&l| if l == k { 1.0 } else { 0.0 }).collect())
                .collect()
        }
        EstimatorMode::Softmin { tau } => {
            let probs = softmin_distribution(ocv, tau)?;
            let mut probs = smooth_isolated_distributions(&probs, w, h);
            let d = cfg.distances_per_normal();
            for v in probs.iter_mut() {
                for g in v.chunks_mut(d) {
                    let s: f32 = g.iter().sum();
                    if s > 0.0 {
                        g.iter_mut().for_each(|a| *a /= s);
                    }
                }
            }
            (0..layers)
                .map(|k| (0..n).map(|p| probs[src[p].unwrap_or(p)][k]).collect())
                .collect()
        }
    };

    let reference = ocv.reference.data();
    let rgba: Vec<Grid<[f32; 4]>> = alphas
        .into_iter()
        .map(|a| {
            let data = reference
                .iter()
                .zip(&a)
                .map(|(c, &al)| [c[0], c[1], c[2], al.clamp(0.0, 1.0)])
                .collect();
            Grid::from_vec(w, h, data)
        })
        .collect::<Result<_>>()?;
    Mhi::from_rgba(cfg.clone(), rgba)
}

/// Per-pixel `exp(-cost / tau)` normalized over all layers, pixel-major, before
/// any neighborhood smoothing or group rescaling.
pub fn softmin_distribution(ocv: &OrientedCostVolume, tau: f64) -> Result<Vec<Vec<f32>>> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidConfig(format!("softmin tau must be positive, got {tau}")));
    }
    let layers = ocv.config.num_layers();
    let n = ocv.config.width() * ocv.config.height();
    Ok(par::map_range(n, |p| {
        let cmin = (0..layers).map(|k| ocv.costs[k * n + p]).fold(f32::INFINITY, f32::min) as f64;
        let e: Vec<f64> = (0..layers)
            .map(|k| (-(ocv.costs[k * n + p] as f64 - cmin) / tau).exp())
            .collect();
        let sum: f64 = e.iter().sum();
        e.iter().map(|v| (v / sum) as f32).collect()
    }))
}

/// Cost volume and alpha estimation in one call.
pub fn estimate_mhi(input: &StereoInput, config: &MhiConfig, mode: EstimatorMode) -> Result<Mhi> {
    estimate_alphas(&build_ocv(input, config)?, mode)
}

/// For every pixel, the nearest observed pixel by 4-connected distance, found
/// by a breadth-first sweep seeded in row-major order. Observed pixels map to
/// themselves; everything maps to `None` when nothing is observed.
pub fn nearest_observed(observed: &[bool], w: usize, h: usize) -> Vec<Option<usize>> {
    let mut src: Vec<Option<usize>> = (0..w * h).map(|p| observed[p].then_some(p)).collect();
    let mut queue: std::collections::VecDeque<usize> = (0..w * h).filter(|&p| observed[p]).collect();
    while let Some(p) = queue.pop_front() {
        let (x, y) = (p % w, p / w);
        let around = [
            (x > 0).then(|| p - 1),
            (x + 1 < w).then(|| p + 1),
            (y > 0).then(|| p - w),
            (y + 1 < h).then(|| p + w),
        ];
        for q in around.into_iter().flatten() {
            if src[q].is_none() {
                src[q] = src[p];
                queue.push_back(q);
            }
        }
    }
    src
}

fn neighbors(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let ys = y.saturating_sub(1)..=(y + 1).min(h - 1);
    ys.flat_map(move |yy| {
        (x.saturating_sub(1)..=(x + 1).min(w - 1)).map(move |xx| (xx, yy))
    })
    .filter(move |&(xx, yy)| (xx, yy) != (x, y))
}

/// Relabels pixels whose label appears in none of their neighbors with the
/// most common neighbor label (ties to the smallest label).
pub fn suppress_isolated_labels(labels: &Grid<usize>) -> Grid<usize> {
    let (w, h) = labels.dims();
    Grid::from_fn(w, h, |x, y| {
        let own = *labels.get(x, y);
        let mut counts: Vec<(usize, usize)> = Vec::with_capacity(8);
        for (xx, yy) in neighbors(x, y, w, h) {
            let l = *labels.get(xx, yy);
            if l == own {
                return own;
            }
            match counts.iter_mut().find(|(k, _)| *k == l) {
                Some((_, c)) => *c += 1,
                None => counts.push((l, 1)),
            }
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map_or(own, |(l, _)| l)
    })
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

fn smooth_isolated_distributions(probs: &[Vec<f32>], w: usize, h: usize) -> Vec<Vec<f32>> {
    let labels: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    par::map_range(w * h, |p| {
        let (x, y) = (p % w, p / w);
        let own = labels[p];
        let mut count = 0usize;
        let mut isolated = true;
        for (xx, yy) in neighbors(x, y, w, h) {
            count += 1;
            if labels[yy * w + xx] == own {
                isolated = false;
                break;
            }
        }
        if !isolated || count == 0 {
            return probs[p].clone();
        }
        let mut mean = vec![0.0f64; probs[p].len()];
        for (xx, yy) in neighbors(x, y, w, h) {
            for (m, &v) in mean.iter_mut().zip(&probs[yy * w + xx]) {
                *m += v as f64;
            }
        }
        mean.iter().map(|m| (m / count as f64) as f32).collect()
    })
}
