//! Independent reference implementations and random generators shared by the
//! integration tests. Nothing here calls the code paths under test except for
//! plain data constructors.
#![allow(dead_code)]

use mhi_core::geometry::{Intrinsics, Plane, Pose};
use mhi_core::mhi::{Mhi, MhiConfig};
use mhi_core::raster::{ColorImage, Grid, Mask};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_intrinsics(rng: &mut impl Rng) -> Intrinsics {
    let w = rng.gen_range(32..=512);
    let h = rng.gen_range(32..=512);
    let f = rng.gen_range(0.5..2.0) * w as f64;
    let fy = f * rng.gen_range(0.9..1.1);
    let cx = (w as f64 - 1.0) / 2.0 + rng.gen_range(-5.0..5.0);
    let cy = (h as f64 - 1.0) / 2.0 + rng.gen_range(-5.0..5.0);
    Intrinsics::new(f, fy, cx, cy, w, h).unwrap()
}

/// Rotation of at most `max_deg` about a random axis and a translation of at
/// most `max_t` meters.
pub fn random_pose(rng: &mut impl Rng, max_deg: f64, max_t: f64) -> Pose {
    let axis = random_unit(rng);
    let angle = rng.gen_range(0.0..=max_deg).to_radians();
    let t = random_unit(rng) * rng.gen_range(0.0..=max_t);
    Pose::from_axis_angle(axis, angle, t)
}

/// A plane in front of the reference camera: normal with a positive z part,
/// crossing the optical axis between 1 and 20 meters.
pub fn random_plane(rng: &mut impl Rng) -> Plane {
    let n = loop {
        let n = random_unit(rng);
        if n.z > 0.3 {
            break n;
        }
    };
    Plane::through_axis_depth(n, rng.gen_range(1.0..20.0)).unwrap()
}

/// Reference pixel seen through target pixel `(u, v)` on `plane`, by explicit
/// ray casting with matrices built here. `pose` maps target points into the
/// reference frame; `plane` is `n . X + d = 0` in the reference frame.
/// Returns the pixel and the hit depths in both frames.
pub fn ray_plane_oracle(
    ref_cam: &Intrinsics,
    tgt_cam: &Intrinsics,
    pose: &Pose,
    plane: &Plane,
    u: f64,
    v: f64,
) -> Option<((f64, f64), f64, f64)> {
    let r = pose.rotation();
    let t = pose.translation();
    // Target camera center and ray direction in the reference frame.
    let center = *t;
    let dir_t = Vector3::new((u - tgt_cam.cx) / tgt_cam.fx, (v - tgt_cam.cy) / tgt_cam.fy, 1.0);
    let dir = r * dir_t;
    let n = plane.normal();
    let denom = n.dot(&dir);
    if denom.abs() < 1e-12 {
        return None;
    }
    let s = -(n.dot(&center) + plane.offset()) / denom;
    let x = center + dir * s;
    if s <= 0.0 || x.z <= 0.0 {
        return None;
    }
    let px = ref_cam.fx * x.x / x.z + ref_cam.cx;
    let py = ref_cam.fy * x.y / x.z + ref_cam.cy;
    Some(((px, py), s, x.z))
}

/// Cosine between the target ray and the plane normal.
pub fn incidence(tgt_cam: &Intrinsics, pose: &Pose, plane: &Plane, u: f64, v: f64) -> f64 {
    let dir = pose.rotation() * Vector3::new((u - tgt_cam.cx) / tgt_cam.fx, (v - tgt_cam.cy) / tgt_cam.fy, 1.0);
    (plane.normal().dot(&dir) / dir.norm()).abs()
}

/// Bilinear sample over the domain `[0, w-1] x [0, h-1]` in f64, with a 1e-6
/// border allowance. Neighbors past the last row or column are not read.
pub fn bilinear_oracle<const C: usize>(data: &[[f32; C]], w: usize, h: usize, u: f64, v: f64) -> Option<[f64; C]> {
    let slack = 1e-6;
    if !(u >= -slack && v >= -slack && u <= (w - 1) as f64 + slack && v <= (h - 1) as f64 + slack) {
        return None;
    }
    let u = u.clamp(0.0, (w - 1) as f64);
    let v = v.clamp(0.0, (h - 1) as f64);
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let mut out = [0.0; C];
    for (c, o) in out.iter_mut().enumerate() {
        let p = |x: usize, y: usize| data[y * w + x][c] as f64;
        *o = (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0)) + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1));
    }
    Some(out)
}

/// Over-composite written as the literal sum
/// `C = sum_j c_j a_j prod_{k<j} (1 - a_k)`, each product recomputed from scratch.
/// Returns the color, the sum of opacities and the final transmittance.
pub fn eq2_oracle(samples: &[([f64; 3], f64)]) -> ([f64; 3], f64, f64) {
    let mut color = [0.0; 3];
    let mut acc = 0.0;
    for (j, (c, a)) in samples.iter().enumerate() {
        let mut trans = 1.0;
        for (_, ak) in &samples[..j] {
            trans *= 1.0 - ak;
        }
        let op = a * trans;
        for k in 0..3 {
            color[k] += c[k] * op;
        }
        acc += op;
    }
    let final_t: f64 = samples.iter().map(|(_, a)| 1.0 - a).product();
    (color, acc, final_t)
}

/// Random RGBA layers. Alphas are zero with probability `sparsity`, otherwise
/// uniform in `[0, 1]`.
pub fn random_mhi(cfg: &MhiConfig, seed: u64, sparsity: f64) -> Mhi {
    let mut r = rng(seed);
    let (w, h) = cfg.dims();
    let layers = (0..cfg.num_layers())
        .map(|_| {
            Grid::from_fn(w, h, |_, _| {
                let a = if r.gen_bool(sparsity) { 0.0 } else { r.gen_range(0.0..=1.0f32) };
                [r.gen(), r.gen(), r.gen(), a]
            })
        })
        .collect();
    Mhi::from_rgba(cfg.clone(), layers).unwrap()
}

pub fn random_image(w: usize, h: usize, seed: u64) -> ColorImage {
    let mut r = rng(seed);
    ColorImage::from_fn(w, h, |_, _| [r.gen(), r.gen(), r.gen()])
}

/// Rotation matrix for `angle_deg` about `axis`, built with nalgebra directly.
pub fn rotation(axis: Vector3<f64>, angle_deg: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle_deg.to_radians()).into_inner()
}

pub fn mse_oracle(a: &ColorImage, b: &ColorImage, mask: &Mask) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if *mask.get(x, y) {
                for c in 0..3 {
                    let d = a.get(x, y)[c] as f64 - b.get(x, y)[c] as f64;
                    sum += d * d;
                    n += 1.0;
                }
            }
        }
    }
    sum / n
}

/// Direct windowed SSIM: full 2-D Gaussian window, centered second moments.
pub fn ssim_oracle(a: &ColorImage, b: &ColorImage, mask: &Mask) -> f64 {
    let r = 5i64;
    let g: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * 1.5 * 1.5)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (w, h) = (a.width() as i64, a.height() as i64);
    let mut total = 0.0;
    for c in 0..3 {
        let mut sum = 0.0;
        let mut count = 0.0;
        for cy in r..h - r {
            for cx in r..w - r {
                if !*mask.get(cx as usize, cy as usize) {
                    continue;
                }
                let px = |img: &ColorImage, dx: i64, dy: i64| img.get((cx + dx) as usize, (cy + dy) as usize)[c] as f64;
                let wt = |dx: i64, dy: i64| g[(dx + r) as usize] * g[(dy + r) as usize] / (gs * gs);
                let (mut mx, mut my) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        mx += wt(dx, dy) * px(a, dx, dy);
                        my += wt(dx, dy) * px(b, dx, dy);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (u, v) = (px(a, dx, dy) - mx, px(b, dx, dy) - my);
                        vx += wt(dx, dy) * u * u;
                        vy += wt(dx, dy) * v * v;
                        cov += wt(dx, dy) * u * v;
                    }
                }
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        total += sum / count;
    }
    total / 3.0
}
