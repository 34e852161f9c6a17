//! Backward warping of MHI layers and per-normal over-compositing.
//!
//! Every target pixel is mapped into the reference image with the layer's
//! plane homography and sampled bilinearly. Samples outside the reference
//! image, or whose plane point lies behind either camera, contribute nothing
//! and leave the in-bounds flag clear. Within a normal
//! group, layer `j` is weighted by `alpha_j * prod_{k<j} (1 - alpha_k)` with
//! `j = 0` the nearest plane, accumulated in index order.

use crate::error::Result;
use crate::geometry::{front_of_target_form, homography_target_to_reference, Intrinsics, Pose};
use crate::mhi::{AlphaTiles, Mhi, MhiLayer};
use crate::par;
use crate::raster::{ColorImage, Footprint, Grid, Mask, ScalarImage};

/// Target camera and its pose relative to the reference (target to reference).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderRequest {
    pub tgt_intrinsics: Intrinsics,
    pub rel_pose: Pose,
}

impl RenderRequest {
    pub fn new(tgt_intrinsics: Intrinsics, rel_pose: Pose) -> Self {
        RenderRequest {
            tgt_intrinsics,
            rel_pose,
        }
    }

    /// The reference view itself.
    pub fn identity(intrinsics: Intrinsics) -> Self {
        RenderRequest::new(intrinsics, Pose::identity())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.tgt_intrinsics.dims()
    }
}

/// A layer resampled into the target view.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedLayer {
    pub color: ColorImage,
    pub alpha: ScalarImage,
    pub in_bounds: Mask,
}

/// Over-composite of one normal group in the target view. `color` is
/// premultiplied: it is the group's colors weighted by their per-layer
/// opacities, with nothing behind the last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiNormalImage {
    pub normal_index: usize,
    pub color: ColorImage,
    pub accumulated_alpha: ScalarImage,
    pub valid_mask: Mask,
}

impl MultiNormalImage {
    pub fn dims(&self) -> (usize, usize) {
        self.color.dims()
    }
}

/// Front-to-back over accumulator for one pixel. After any sequence of pushes,
/// `accumulated + transmittance` is 1 up to rounding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Over {
    pub color: [f32; 3],
    pub accumulated: f32,
    pub transmittance: f32,
}

impl Over {
    pub const EMPTY: Over = Over {
        color: [0.0; 3],
        accumulated: 0.0,
        transmittance: 1.0,
    };

    #[inline(always)]
    pub fn push(&mut self, color: [f32; 3], alpha: f32) {
        let opacity = alpha * self.transmittance;
        self.color[0] += color[0] * opacity;
        self.color[1] += color[1] * opacity;
        self.color[2] += color[2] * opacity;
        self.accumulated += opacity;
        self.transmittance *= 1.0 - alpha;
    }
}

/// Row-major target-to-reference homography of a layer plus the linear form
/// that is positive where the target ray hits the plane in front of the camera.
#[derive(Clone, Copy, Debug)]
struct LayerMap {
    h: [f64; 9],
    front: [f64; 3],
}

impl LayerMap {
    fn new(layer: &MhiLayer, req: &RenderRequest, ref_cam: &Intrinsics) -> Result<Self> {
        let h = homography_target_to_reference(ref_cam, &req.tgt_intrinsics, &req.rel_pose, layer.plane())?;
        let f = front_of_target_form(&req.tgt_intrinsics, &req.rel_pose, layer.plane())?;
        Ok(LayerMap {
            h: [
                h[(0, 0)],
                h[(0, 1)],
                h[(0, 2)],
                h[(1, 0)],
                h[(1, 1)],
                h[(1, 2)],
                h[(2, 0)],
                h[(2, 1)],
                h[(2, 2)],
            ],
            front: [f.x, f.y, f.z],
        })
    }

    /// Reference coordinates of target pixel `(x, y)`; `None` when the plane
    /// point lies behind either camera.
    #[inline(always)]
    fn map(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let h = &self.h;
        let f = &self.front;
        let w = h[6] * x + h[7] * y + h[8];
        if !(w > 0.0 && f[0] * x + f[1] * y + f[2] > 0.0) {
            return None;
        }
        let u = h[0] * x + h[1] * y + h[2];
        let v = h[3] * x + h[4] * y + h[5];
        let r = 1.0 / w;
        Some((u * r, v * r))
    }
}

/// Pixels per row chunk tested as a whole against a layer's alpha tiles.
const CHUNK: usize = 16;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Chunk {
    /// No pixel of the chunk lands inside the reference image.
    Outside,
    /// Pixels may land inside, but only on zero alpha.
    Clear,
    MayCover,
}

impl LayerMap {
    /// Conservative classification of pixels `x0..=x1` of row `y`. With
    /// positive `w` at both ends the row segment maps onto the straight
    /// segment between the mapped ends.
    fn classify_chunk(&self, tiles: &AlphaTiles, x0: usize, x1: usize, y: f64, lw: usize, lh: usize) -> Chunk {
        let h = &self.h;
        let end = |x: f64| {
            let w = h[6] * x + h[7] * y + h[8];
            (w, (h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w)
        };
        let (wa, ua, va) = end(x0 as f64);
        let (wb, ub, vb) = end(x1 as f64);
        if !(wa > 0.0 && wb > 0.0 && ua.is_finite() && ub.is_finite() && va.is_finite() && vb.is_finite()) {
            return Chunk::MayCover;
        }
        // One texel of margin on each side covers rounding and snapping.
        let range = |a: f64, b: f64, n: usize| {
            let lo = (a.min(b).floor() - 1.0).max(0.0);
            let hi = (a.max(b).floor() + 1.0).min((n - 1) as f64);
            (lo <= hi).then_some((lo as usize, hi as usize))
        };
        match (range(ua, ub, lw), range(va, vb, lh)) {
            (Some((tx0, tx1)), Some((ty0, ty1))) if tiles.any_in(tx0, ty0, tx1, ty1) => Chunk::MayCover,
            (Some(_), Some(_)) => Chunk::Clear,
            _ => Chunk::Outside,
        }
    }
}

/// Samples the RGBA of `layer` seen through target pixel `(x, y)`.
#[inline(always)]
fn sample_layer(layer: &MhiLayer, m: &LayerMap, x: f64, y: f64) -> Option<[f32; 4]> {
    let (u, v) = m.map(x, y)?;
    let g = layer.rgba();
    Footprint::new(u, v, g.width(), g.height()).map(|fp| fp.sample(g.data(), g.width()))
}

/// Resamples one layer into the target view.
pub fn warp_layer(layer: &MhiLayer, req: &RenderRequest, ref_cam: &Intrinsics) -> Result<WarpedLayer> {
    let m = LayerMap::new(layer, req, ref_cam)?;
    let (w, ht) = req.dims();
    let rows = par::map_range(ht, |y| {
        (0..w)
            .map(|x| sample_layer(layer, &m, x as f64, y as f64))
            .collect::<Vec<_>>()
    });
    let samples: Vec<Option<[f32; 4]>> = rows.into_iter().flatten().collect();
    let color = samples
        .iter()
        .map(|s| s.map_or([0.0; 3], |p| [p[0], p[1], p[2]]))
        .collect();
    let alpha = samples.iter().map(|s| s.map_or(0.0, |p| p[3])).collect();
    let in_bounds = samples.iter().map(Option::is_some).collect();
    Ok(WarpedLayer {
        color: Grid::from_vec(w, ht, color)?,
        alpha: Grid::from_vec(w, ht, alpha)?,
        in_bounds: Grid::from_vec(w, ht, in_bounds)?,
    })
}

/// Over-composites warped layers of one normal, nearest first.
pub fn composite_normal_group(layers: &[WarpedLayer], normal_index: usize) -> Result<MultiNormalImage> {
    let dims = layers
        .first()
        .map(|l| l.color.dims())
        .unwrap_or((0, 0));
    for l in layers {
        l.color.ensure_dims(dims)?;
        l.alpha.ensure_dims(dims)?;
        l.in_bounds.ensure_dims(dims)?;
    }
    let (w, h) = dims;
    let n = w * h;
    let mut color = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for p in 0..n {
        let mut over = Over::EMPTY;
        let mut any = false;
        for l in layers {
            any |= l.in_bounds.data()[p];
            over.push(l.color.data()[p], l.alpha.data()[p]);
        }
        color.push(over.color);
        acc.push(over.accumulated);
        valid.push(any);
    }
    Ok(MultiNormalImage {
        normal_index,
        color: Grid::from_vec(w, h, color)?,
        accumulated_alpha: Grid::from_vec(w, h, acc)?,
        valid_mask: Grid::from_vec(w, h, valid)?,
    })
}

struct GroupRow {
    color: Vec<[f32; 3]>,
    acc: Vec<f32>,
    valid: Vec<bool>,
}

/// Renders one output row of one normal group. Produces exactly the values
/// of [`composite_normal_group`] over [`warp_layer`]: samples that read only
/// zero alphas are skipped (pushing them changes nothing), and pixels whose
/// transmittance is exactly zero cannot change any more.
fn render_group_row(group: &[MhiLayer], maps: &[LayerMap], y: usize, width: usize) -> GroupRow {
    let mut over = vec![Over::EMPTY; width];
    let mut valid = vec![false; width];
    let yf = y as f64;
    for (layer, m) in group.iter().zip(maps) {
        let g = layer.rgba();
        let (lw, lh) = g.dims();
        let tiles = layer.alpha_tiles();
        let mut live = false;
        for x0 in (0..width).step_by(CHUNK) {
            let x1 = (x0 + CHUNK).min(width);
            if over[x0..x1].iter().all(|o| o.transmittance == 0.0) {
                continue;
            }
            live = true;
            let sample = match m.classify_chunk(tiles, x0, x1 - 1, yf, lw, lh) {
                Chunk::Outside => continue,
                Chunk::Clear => false,
                Chunk::MayCover => true,
            };
            for x in x0..x1 {
                let o = &mut over[x];
                if o.transmittance == 0.0 || (!sample && valid[x]) {
                    continue;
                }
                let Some((u, v)) = m.map(x as i64 as f64, yf) else {
                    continue;
                };
                let Some(fp) = Footprint::new(u, v, lw, lh) else {
                    continue;
                };
                valid[x] = true;
                if sample && tiles.may_cover(fp.x0, fp.y0) {
                    let p = fp.sample(g.data(), lw);
                    o.push([p[0], p[1], p[2]], p[3]);
                }
            }
        }
        if !live {
            break;
        }
    }
    GroupRow {
        color: over.iter().map(|o| o.color).collect(),
        acc: over.iter().map(|o| o.accumulated).collect(),
        valid,
    }
}

/// Warps and composites every normal group of `mhi` into the target view.
pub fn render_multi_normal_images(mhi: &Mhi, req: &RenderRequest) -> Result<Vec<MultiNormalImage>> {
    let cfg = mhi.config();
    let ref_cam = cfg.ref_intrinsics();
    let n = cfg.num_normals();
    let maps: Vec<Vec<LayerMap>> = (0..n)
        .map(|i| {
            mhi.group(i)
                .iter()
                .map(|l| LayerMap::new(l, req, ref_cam))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let (w, h) = req.dims();
    let rows = par::map_range(n * h, |k| {
        let (i, y) = (k / h, k % h);
        render_group_row(mhi.group(i), &maps[i], y, w)
    });
    let mut out = Vec::with_capacity(n);
    for (i, group_rows) in rows.chunks(h.max(1)).enumerate().take(n) {
        let mut color = Vec::with_capacity(w * h);
        let mut acc = Vec::with_capacity(w * h);
        let mut valid = Vec::with_capacity(w * h);
        for r in group_rows {
            color.extend_from_slice(&r.color);
            acc.extend_from_slice(&r.acc);
            valid.extend_from_slice(&r.valid);
        }
        out.push(MultiNormalImage {
            normal_index: i,
            color: Grid::from_vec(w, h, color)?,
            accumulated_alpha: Grid::from_vec(w, h, acc)?,
            valid_mask: Grid::from_vec(w, h, valid)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Plane;
    use crate::mhi::MhiConfig;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn warped(color: [f32; 3], alpha: f32, w: usize, h: usize) -> WarpedLayer {
        WarpedLayer {
            color: Grid::filled(w, h, color),
            alpha: Grid::filled(w, h, alpha),
            in_bounds: Grid::filled(w, h, true),
        }
    }

    #[test]
    fn single_opaque_layer() {
        let m = composite_normal_group(&[warped([0.2, 0.4, 0.6], 1.0, 3, 2)], 0).unwrap();
        assert!(m.color.data().iter().all(|c| *c == [0.2, 0.4, 0.6]));
        assert!(m.accumulated_alpha.data().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn two_layer_arithmetic() {
        let c1 = [1.0, 0.0, 0.5];
        let c2 = [0.0, 1.0, 0.25];
        let m = composite_normal_group(&[warped(c1, 0.6, 2, 2), warped(c2, 1.0, 2, 2)], 0).unwrap();
        for c in m.color.data() {
            for k in 0..3 {
                assert!((c[k] - (0.6 * c1[k] + 0.4 * c2[k])).abs() < 1e-6);
            }
        }
        assert!(m.accumulated_alpha.data().iter().all(|&a| (a - 1.0).abs() < 1e-6));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let r = composite_normal_group(&[warped([0.0; 3], 1.0, 2, 2), warped([0.0; 3], 1.0, 3, 2)], 0);
        assert!(matches!(r, Err(crate::Error::DimensionMismatch { .. })));
    }

    #[test]
    fn order_matters_unless_supports_are_disjoint() {
        let a = warped([1.0, 0.0, 0.0], 0.5, 1, 1);
        let b = warped([0.0, 0.0, 1.0], 0.5, 1, 1);
        let ab = composite_normal_group(&[a.clone(), b.clone()], 0).unwrap();
        let ba = composite_normal_group(&[b, a], 0).unwrap();
        assert_ne!(ab.color, ba.color);

        let mut left = warped([1.0, 0.0, 0.0], 1.0, 2, 1);
        left.alpha.data_mut()[1] = 0.0;
        let mut right = warped([0.0, 1.0, 0.0], 1.0, 2, 1);
        right.alpha.data_mut()[0] = 0.0;
        let lr = composite_normal_group(&[left.clone(), right.clone()], 0).unwrap();
        let rl = composite_normal_group(&[right, left], 0).unwrap();
        assert_eq!(lr.color, rl.color);
        assert_eq!(lr.accumulated_alpha, rl.accumulated_alpha);
    }

    fn random_mhi(seed: u64, normals: usize, distances: usize, w: usize, h: usize) -> Mhi {
        let k = Intrinsics::from_hfov(w, h, 90.0).unwrap();
        let cfg = MhiConfig::with_counts(k, normals, distances).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..cfg.num_layers())
            .map(|_| Grid::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen(), rng.gen::<f32>() * 0.5]))
            .collect();
        Mhi::from_rgba(cfg, layers).unwrap()
    }

    #[test]
    fn identity_warp_reproduces_layer() {
        let mhi = random_mhi(1, 1, 2, 9, 7);
        let layer = &mhi.layers()[1];
        let req = RenderRequest::identity(*mhi.config().ref_intrinsics());
        let w = warp_layer(layer, &req, mhi.config().ref_intrinsics()).unwrap();
        assert_eq!(w.color, layer.color());
        assert_eq!(w.alpha, layer.alpha());
        assert!(w.in_bounds.data().iter().all(|&b| b));
    }

    #[test]
    fn fused_path_equals_warp_then_composite() {
        let mhi = random_mhi(7, 5, 6, 20, 16);
        let req = RenderRequest::new(
            *mhi.config().ref_intrinsics(),
            Pose::from_euler_xyz_deg([2.0, -3.0, 1.0], Vector3::new(0.05, -0.02, 0.03)),
        );
        let fused = render_multi_normal_images(&mhi, &req).unwrap();
        for (i, m) in fused.iter().enumerate() {
            let warped: Vec<_> = mhi
                .group(i)
                .iter()
                .map(|l| warp_layer(l, &req, mhi.config().ref_intrinsics()).unwrap())
                .collect();
            let slow = composite_normal_group(&warped, i).unwrap();
            assert_eq!(&slow, m);
        }
    }

    #[test]
    fn chunk_skipping_matches_warp_on_sparse_layers() {
        let k = Intrinsics::from_hfov(97, 71, 85.0).unwrap();
        let cfg = MhiConfig::with_counts(k, 3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layers = (0..cfg.num_layers())
            .map(|_| {
                let (cx, cy, r) = (rng.gen_range(0..97), rng.gen_range(0..71), rng.gen_range(2..20));
                Grid::from_fn(97, 71, |x, y| {
                    let inside = (x as i64 - cx).abs() < r && (y as i64 - cy).abs() < r;
                    let a = if inside { rng.gen_range(0.3..=1.0) } else { 0.0 };
                    [rng.gen(), rng.gen(), rng.gen(), a]
                })
            })
            .collect();
        let mhi = Mhi::from_rgba(cfg, layers).unwrap();
        for pose in [
            Pose::from_euler_xyz_deg([4.0, -9.0, 2.0], Vector3::new(0.3, -0.1, 0.2)),
            Pose::from_euler_xyz_deg([-20.0, 30.0, 0.0], Vector3::new(-0.5, 0.2, -0.4)),
        ] {
            let req = RenderRequest::new(k, pose);
            let fused = render_multi_normal_images(&mhi, &req).unwrap();
            for (i, m) in fused.iter().enumerate() {
                let warped: Vec<_> = mhi.group(i).iter().map(|l| warp_layer(l, &req, &k).unwrap()).collect();
                assert_eq!(&composite_normal_group(&warped, i).unwrap(), m);
            }
        }
    }

    #[test]
    fn degenerate_plane_propagates() {
        let k = Intrinsics::from_hfov(8, 8, 90.0).unwrap();
        let cfg = MhiConfig::with_counts(k, 1, 2).unwrap();
        let mhi = Mhi::from_rgba(cfg, vec![Grid::filled(8, 8, [0.5; 4]); 2]).unwrap();
        // Target camera center placed on the nearest plane (z = 1).
        let req = RenderRequest::new(k, Pose::from_translation(Vector3::new(0.0, 0.0, 1.0)));
        assert!(render_multi_normal_images(&mhi, &req).is_err());
        let plane = Plane::through_axis_depth(Vector3::z(), 1.0).unwrap();
        assert_eq!(plane, *mhi.layers()[0].plane());
    }
}
