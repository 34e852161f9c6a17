//! Row-major pixel grids, bilinear sampling and PNG conversion.
//!
//! Color values are linear in [0, 1]; 8-bit files map byte `b` to `b / 255`
//! with no transfer curve.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageBuffer, ImageFormat, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type ColorImage = Grid<[f32; 3]>;
pub type ScalarImage = Grid<f32>;
pub type Mask = Grid<bool>;
pub type DepthMap = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (data.len(), 1),
            });
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: self.dims(),
            });
        }
        Ok(())
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        debug_assert_eq!(self.dims(), other.dims());
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

/// Snap threshold for coordinates that are integers up to rounding noise.
const SNAP_EPS: f64 = 1e-9;
/// Slack on the image border before a sample counts as out of bounds.
const BORDER_EPS: f64 = 1e-6;

/// Bilinear footprint of a continuous sample position.
///
/// Pixel centers sit at integer coordinates, so the sampling domain of a
/// `width x height` image is `[0, width-1] x [0, height-1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub fx: f32,
    pub fy: f32,
}

impl Footprint {
    #[inline]
    pub fn new(u: f64, v: f64, width: usize, height: usize) -> Option<Footprint> {
        let (x0, x1, fx) = axis(u, width)?;
        let (y0, y1, fy) = axis(v, height)?;
        Some(Footprint {
            x0,
            y0,
            x1,
            y1,
            fx,
            fy,
        })
    }

    #[inline]
    pub fn sample<const C: usize>(&self, data: &[[f32; C]], width: usize) -> [f32; C] {
        let row0 = &data[self.y0 * width..][..width];
        let row1 = &data[self.y1 * width..][..width];
        let (p00, p10, p01, p11) = (row0[self.x0], row0[self.x1], row1[self.x0], row1[self.x1]);
        let (fx, fy) = (self.fx, self.fy);
        std::array::from_fn(|c| {
            let a = p00[c] + fx * (p10[c] - p00[c]);
            let b = p01[c] + fx * (p11[c] - p01[c]);
            a + fy * (b - a)
        })
    }

    #[inline]
    pub fn sample_scalar(&self, data: &[f32], width: usize) -> f32 {
        let r0 = self.y0 * width;
        let r1 = self.y1 * width;
        let a = data[r0 + self.x0] + self.fx * (data[r0 + self.x1] - data[r0 + self.x0]);
        let b = data[r1 + self.x0] + self.fx * (data[r1 + self.x1] - data[r1 + self.x0]);
        a + self.fy * (b - a)
    }
}

#[inline]
fn axis(u: f64, n: usize) -> Option<(usize, usize, f32)> {
    // Signed casts compile to single instructions; unsigned ones do not.
    let last = (n - 1) as i64 as f64;
    // NaN fails both comparisons and is rejected here too.
    if !(u >= -BORDER_EPS && u <= last + BORDER_EPS) {
        return None;
    }
    let mut u = u.max(0.0).min(last);
    // `u` is non-negative, so truncation is floor.
    let mut f = u as i64 as f64;
    if u - f < SNAP_EPS {
        u = f;
    } else if f + 1.0 - u < SNAP_EPS {
        f += 1.0;
        u = f;
    }
    if f >= last {
        return Some((n - 1, n - 1, 0.0));
    }
    let i0 = f as i64 as usize;
    Some((i0, i0 + 1, (u - f) as f32))
}

/// Bilinear sample of a color image; `None` outside the sampling domain.
pub fn sample_color(img: &ColorImage, u: f64, v: f64) -> Option<[f32; 3]> {
    Footprint::new(u, v, img.width, img.height).map(|fp| fp.sample(&img.data, img.width))
}

#[inline]
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn to_word(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Rounds every channel to the nearest 8-bit level.
pub fn quantize_8bit(img: &ColorImage) -> ColorImage {
    img.map(|p| p.map(|c| to_byte(c) as f32 / 255.0))
}

fn read_image(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(image::load_from_memory_with_format(&bytes, ImageFormat::Png)?)
}

pub fn load_color_png(path: impl AsRef<Path>) -> Result<ColorImage> {
    let rgb = read_image(path.as_ref())?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb
        .pixels()
        .map(|p| p.0.map(|b| b as f32 / 255.0))
        .collect();
    Grid::from_vec(w as usize, h as usize, data)
}

pub fn load_mask_png(path: impl AsRef<Path>) -> Result<Mask> {
    let g = read_image(path.as_ref())?.to_luma8();
    let (w, h) = g.dimensions();
    Grid::from_vec(w as usize, h as usize, g.pixels().map(|p| p.0[0] >= 128).collect())
}

fn rgb_buffer(img: &ColorImage) -> RgbImage {
    ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        Rgb(img.get(x as usize, y as usize).map(to_byte))
    })
}

fn gray_buffer(img: &ScalarImage) -> GrayImage {
    ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        Luma([to_byte(*img.get(x as usize, y as usize))])
    })
}

fn encode<P, C>(buf: &ImageBuffer<P, C>) -> Result<Vec<u8>>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_color_png(img: &ColorImage) -> Result<Vec<u8>> {
    encode(&rgb_buffer(img))
}

pub fn encode_gray_png(img: &ScalarImage) -> Result<Vec<u8>> {
    encode(&gray_buffer(img))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_color_png(img: &ColorImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_color_png(img)?)
}

pub fn save_gray_png(img: &ScalarImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_gray_png(img)?)
}

pub fn save_mask_png(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let g = mask.map(|&b| if b { 1.0 } else { 0.0 });
    save_gray_png(&g, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_samples_are_exact() {
        let img = ColorImage::from_fn(4, 3, |x, y| [x as f32 * 0.1, y as f32 * 0.3, 0.7]);
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(sample_color(&img, x as f64, y as f64).unwrap(), *img.get(x, y));
            }
        }
    }

    #[test]
    fn near_integer_noise_snaps() {
        let img = ColorImage::from_fn(3, 3, |x, _| [x as f32, 0.0, 0.0]);
        assert_eq!(sample_color(&img, -1e-13, 0.0).unwrap(), [0.0, 0.0, 0.0]);
        assert_eq!(sample_color(&img, 2.0 + 1e-12, 1.0).unwrap(), [2.0, 0.0, 0.0]);
    }

    #[test]
    fn out_of_domain_is_none() {
        let img = ColorImage::filled(3, 3, [1.0; 3]);
        assert!(sample_color(&img, -0.01, 0.0).is_none());
        assert!(sample_color(&img, 0.0, 2.01).is_none());
        assert!(sample_color(&img, f64::NAN, 0.0).is_none());
    }

    #[test]
    fn midpoint_interpolates() {
        let img = ColorImage::from_fn(2, 2, |x, y| [(x + 2 * y) as f32, 0.0, 0.0]);
        let s = sample_color(&img, 0.5, 0.5).unwrap();
        assert!((s[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn single_pixel_image_samples() {
        let img = ColorImage::filled(1, 1, [0.25; 3]);
        assert_eq!(sample_color(&img, 0.0, 0.0), Some([0.25; 3]));
    }

    #[test]
    fn png_roundtrip_is_exact_on_byte_levels() {
        let img = ColorImage::from_fn(5, 4, |x, y| {
            [(x * 40) as f32 / 255.0, (y * 60) as f32 / 255.0, 1.0]
        });
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        save_color_png(&img, &p).unwrap();
        assert_eq!(load_color_png(&p).unwrap(), img);
    }
}
