//! Image quality metrics over masked pixels, with a peak value of 1.0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ColorImage, Mask};

/// Value substituted for identical images when averaging PSNRs.
pub const IDENTICAL_PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psnr {
    Db(f64),
    /// Zero mean squared error.
    Identical,
}

impl Psnr {
    pub fn is_identical(&self) -> bool {
        matches!(self, Psnr::Identical)
    }

    /// Decibels, with identical images reported as [`IDENTICAL_PSNR_CAP_DB`].
    pub fn capped_db(&self) -> f64 {
        match *self {
            Psnr::Db(v) => v.min(IDENTICAL_PSNR_CAP_DB),
            Psnr::Identical => IDENTICAL_PSNR_CAP_DB,
        }
    }
}

fn check_inputs(a: &ColorImage, b: &ColorImage, mask: Option<&Mask>) -> Result<()> {
    b.ensure_dims(a.dims())?;
    if let Some(m) = mask {
        m.ensure_dims(a.dims())?;
        if m.count() == 0 {
            return Err(Error::EmptyMask);
        }
    } else if a.data().is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

fn selected(mask: Option<&Mask>, p: usize) -> bool {
    mask.map_or(true, |m| m.data()[p])
}

/// Mean squared error over the selected pixels and all three channels.
pub fn mse(a: &ColorImage, b: &ColorImage, mask: Option<&Mask>) -> Result<f64> {
    check_inputs(a, b, mask)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (p, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        if selected(mask, p) {
            for c in 0..3 {
                let d = x[c] as f64 - y[c] as f64;
                sum += d * d;
            }
            count += 3;
        }
    }
    Ok(sum / count as f64)
}

pub fn psnr(a: &ColorImage, b: &ColorImage, mask: Option<&Mask>) -> Result<Psnr> {
    let m = mse(a, b, mask)?;
    if m == 0.0 {
        Ok(Psnr::Identical)
    } else {
        Ok(Psnr::Db(10.0 * (1.0 / m).log10()))
    }
}

/// Mean absolute difference over the selected pixels and channels.
pub fn l1(a: &ColorImage, b: &ColorImage, mask: Option<&Mask>) -> Result<f64> {
    check_inputs(a, b, mask)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (p, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        if selected(mask, p) {
            for c in 0..3 {
                sum += (x[c] as f64 - y[c] as f64).abs();
            }
            count += 3;
        }
    }
    Ok(sum / count as f64)
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - r;
        *t = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable Gaussian filter over the positions where the whole window fits.
/// Output is `(w - 10) x (h - 10)`, indexed by the window's top-left corner.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                s += t * src[y * w + x + k];
            }
            rows[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                s += t * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean local SSIM, per channel then averaged, over selected pixels whose
/// full window lies inside the image. Windows include unselected pixels.
pub fn ssim(a: &ColorImage, b: &ColorImage, mask: Option<&Mask>) -> Result<f64> {
    check_inputs(a, b, mask)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::EmptyMask);
    }
    let half = SSIM_WINDOW / 2;
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let centers: Vec<usize> = (0..ow * oh)
        .filter(|&q| selected(mask, (q / ow + half) * w + q % ow + half))
        .collect();
    if centers.is_empty() {
        return Err(Error::EmptyMask);
    }
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.data().iter().map(|p| p[c] as f64).collect();
        let y: Vec<f64> = b.data().iter().map(|p| p[c] as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let [mx, my, exx, eyy, exy] = [&x, &y, &xx, &yy, &xy].map(|s| filter_valid(s, w, h, &taps));
        let mut sum = 0.0;
        for &q in &centers {
            let (ux, uy) = (mx[q], my[q]);
            let vx = exx[q] - ux * ux;
            let vy = eyy[q] - uy * uy;
            let cov = exy[q] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / centers.len() as f64;
    }
    Ok(total / 3.0)
}
