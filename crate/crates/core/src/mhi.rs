//! The layered scene representation and its directory format.
//!
//! An [`Mhi`] holds `N x D` RGBA layers. Layer `(i, j)` lies on the plane with
//! normal `i` that crosses the reference optical axis at depth `j`; depths are
//! spaced evenly in disparity between `near_depth` and `far_depth`, and `j = 0`
//! is the nearest. Indices are zero-based throughout, file names included.
//!
//! On disk an MHI is a directory with an `mhi.json` manifest and one RGBA PNG
//! per layer named `layer_{i:02}_{j:03}.png`, alpha in the PNG alpha channel.

use std::path::Path;

use image::{ImageBuffer, ImageFormat, Rgba};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Plane};
use crate::raster::{to_byte, to_word, ColorImage, Grid, ScalarImage};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "mhi.json";

const UNIT_EPS: f64 = 1e-9;

/// The five layer normals used by default, as `(x, y, z)` in the reference frame.
pub fn default_normals() -> [Vector3<f64>; 5] {
    let h2 = std::f64::consts::FRAC_1_SQRT_2;
    let h3 = 3f64.sqrt() / 2.0;
    [
        Vector3::new(h2, 0.0, h2),
        Vector3::new(0.0, -h3, 0.5),
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(0.0, h3, 0.5),
        Vector3::new(-h2, 0.0, h2),
    ]
}

/// Normal subsets for `N` in {1, 2, 3, 5}. `N = 1` is the fronto-parallel
/// (multi-plane image) case; 2 and 3 keep the horizontal pair `n1, n5` plus
/// the frontal normal for 3.
pub fn normals_for_count(n: usize) -> Result<Vec<Vector3<f64>>> {
    let all = default_normals();
    Ok(match n {
        1 => vec![all[2]],
        2 => vec![all[0], all[4]],
        3 => vec![all[0], all[2], all[4]],
        5 => all.to_vec(),
        _ => {
            return Err(Error::InvalidConfig(format!(
                "no default normal set with {n} normals (use 1, 2, 3 or 5)"
            )))
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhiConfig {
    normals: Vec<Vector3<f64>>,
    near_depth: f64,
    far_depth: f64,
    distances_per_normal: usize,
    ref_intrinsics: Intrinsics,
}

impl MhiConfig {
    pub fn new(
        normals: Vec<Vector3<f64>>,
        near_depth: f64,
        far_depth: f64,
        distances_per_normal: usize,
        ref_intrinsics: Intrinsics,
    ) -> Result<Self> {
        let cfg = MhiConfig {
            normals,
            near_depth,
            far_depth,
            distances_per_normal,
            ref_intrinsics,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Five normals, 32 distances, 1 m to 100 m.
    pub fn default_config(ref_intrinsics: Intrinsics) -> Self {
        MhiConfig::with_counts(ref_intrinsics, 5, 32).expect("default configuration is valid")
    }

    pub fn with_counts(ref_intrinsics: Intrinsics, normals: usize, distances: usize) -> Result<Self> {
        MhiConfig::new(normals_for_count(normals)?, 1.0, 100.0, distances, ref_intrinsics)
    }

    fn validate(&self) -> Result<()> {
        self.ref_intrinsics.validate()?;
        if self.normals.is_empty() {
            return Err(Error::InvalidConfig("at least one normal is required".into()));
        }
        if self.distances_per_normal < 2 {
            return Err(Error::InvalidConfig(format!(
                "distances_per_normal must be >= 2, got {}",
                self.distances_per_normal
            )));
        }
        if !(self.near_depth > 0.0 && self.near_depth < self.far_depth && self.far_depth.is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "need 0 < near_depth < far_depth, got {} and {}",
                self.near_depth, self.far_depth
            )));
        }
        for (i, n) in self.normals.iter().enumerate() {
            if !((n.norm() - 1.0).abs() <= UNIT_EPS) {
                return Err(Error::InvariantViolation(format!(
                    "normal {i} has length {}",
                    n.norm()
                )));
            }
            if n.z.abs() < 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "normal {i} is perpendicular to the optical axis"
                )));
            }
            if self.normals[..i].iter().any(|m| (m - n).norm() < UNIT_EPS) {
                return Err(Error::InvalidConfig(format!("normal {i} is duplicated")));
            }
        }
        Ok(())
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn num_normals(&self) -> usize {
        self.normals.len()
    }

    pub fn distances_per_normal(&self) -> usize {
        self.distances_per_normal
    }

    pub fn num_layers(&self) -> usize {
        self.normals.len() * self.distances_per_normal
    }

    pub fn near_depth(&self) -> f64 {
        self.near_depth
    }

    pub fn far_depth(&self) -> f64 {
        self.far_depth
    }

    pub fn ref_intrinsics(&self) -> &Intrinsics {
        &self.ref_intrinsics
    }

    pub fn width(&self) -> usize {
        self.ref_intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.ref_intrinsics.height
    }

    pub fn dims(&self) -> (usize, usize) {
        self.ref_intrinsics.dims()
    }

    /// Inverse depth of distance index `j`, linear in `j`.
    pub fn disparity(&self, j: usize) -> f64 {
        let near = 1.0 / self.near_depth;
        let far = 1.0 / self.far_depth;
        near - j as f64 * (near - far) / (self.distances_per_normal - 1) as f64
    }

    /// Axis depth of distance index `j`; the end points are exactly `near_depth`
    /// and `far_depth`.
    pub fn depth(&self, j: usize) -> f64 {
        if j == 0 {
            self.near_depth
        } else if j + 1 == self.distances_per_normal {
            self.far_depth
        } else {
            1.0 / self.disparity(j)
        }
    }

    pub fn depths(&self) -> Vec<f64> {
        (0..self.distances_per_normal).map(|j| self.depth(j)).collect()
    }

    pub fn plane(&self, normal_index: usize, distance_index: usize) -> Plane {
        Plane::through_axis_depth(self.normals[normal_index], self.depth(distance_index))
            .expect("validated normals and depths form valid planes")
    }

    #[inline]
    pub fn layer_index(&self, normal_index: usize, distance_index: usize) -> usize {
        normal_index * self.distances_per_normal + distance_index
    }
}

/// One RGBA layer. Color and alpha are stored interleaved for sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct MhiLayer {
    plane: Plane,
    normal_index: usize,
    distance_index: usize,
    rgba: Grid<[f32; 4]>,
    tiles: AlphaTiles,
}

/// Coarse map of where a layer's alpha is nonzero, in square tiles.
///
/// Tile `(tx, ty)` is set when any texel with nonzero alpha lies in the
/// tile or in the row and column just past it, so a bilinear footprint whose
/// top-left texel is in a clear tile reads only zero alphas.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlphaTiles {
    tiles_w: usize,
    set: Vec<bool>,
    // Summed-area table over `set`, one extra leading row and column.
    sat: Vec<u32>,
}

const TILE_SHIFT: u32 = 3;

impl AlphaTiles {
    fn new(rgba: &Grid<[f32; 4]>) -> Self {
        let (w, h) = rgba.dims();
        let tiles_w = (w >> TILE_SHIFT) + 1;
        let tiles_h = (h >> TILE_SHIFT) + 1;
        let mut set = vec![false; tiles_w * tiles_h];
        let size = 1usize << TILE_SHIFT;
        for y in 0..h {
            for x in 0..w {
                if rgba.get(x, y)[3] == 0.0 {
                    continue;
                }
                let (tx, ty) = (x >> TILE_SHIFT, y >> TILE_SHIFT);
                let left = x % size == 0 && tx > 0;
                let up = y % size == 0 && ty > 0;
                set[ty * tiles_w + tx] = true;
                if left {
                    set[ty * tiles_w + tx - 1] = true;
                }
                if up {
                    set[(ty - 1) * tiles_w + tx] = true;
                }
                if left && up {
                    set[(ty - 1) * tiles_w + tx - 1] = true;
                }
            }
        }
        let mut sat = vec![0u32; (tiles_w + 1) * (tiles_h + 1)];
        for ty in 0..tiles_h {
            for tx in 0..tiles_w {
                let i = (ty + 1) * (tiles_w + 1) + tx + 1;
                sat[i] = set[ty * tiles_w + tx] as u32 + sat[i - 1] + sat[i - tiles_w - 1] - sat[i - tiles_w - 2];
            }
        }
        AlphaTiles { tiles_w, set, sat }
    }

    /// Whether any tile holding a texel of the inclusive rectangle is set.
    pub fn any_in(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> bool {
        let s = self.tiles_w + 1;
        let (a, b) = (x0 >> TILE_SHIFT, (x1 >> TILE_SHIFT) + 1);
        let (c, d) = (y0 >> TILE_SHIFT, (y1 >> TILE_SHIFT) + 1);
        self.sat[d * s + b] + self.sat[c * s + a] > self.sat[c * s + b] + self.sat[d * s + a]
    }

    /// False only if every texel in `[x, x+1] x [y, y+1]` has zero alpha.
    #[inline(always)]
    pub fn may_cover(&self, x: usize, y: usize) -> bool {
        self.set[(y >> TILE_SHIFT) * self.tiles_w + (x >> TILE_SHIFT)]
    }

    pub fn is_empty(&self) -> bool {
        !self.set.iter().any(|&b| b)
    }
}

impl MhiLayer {
    pub fn new(
        plane: Plane,
        normal_index: usize,
        distance_index: usize,
        color: &ColorImage,
        alpha: &ScalarImage,
    ) -> Result<Self> {
        alpha.ensure_dims(color.dims())?;
        let data = color
            .data()
            .iter()
            .zip(alpha.data())
            .map(|(c, &a)| [c[0], c[1], c[2], a])
            .collect();
        let rgba = Grid::from_vec(color.width(), color.height(), data)?;
        Ok(MhiLayer::from_rgba(plane, normal_index, distance_index, rgba))
    }

    pub fn from_rgba(
        plane: Plane,
        normal_index: usize,
        distance_index: usize,
        rgba: Grid<[f32; 4]>,
    ) -> Self {
        let tiles = AlphaTiles::new(&rgba);
        MhiLayer {
            plane,
            normal_index,
            distance_index,
            rgba,
            tiles,
        }
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn normal_index(&self) -> usize {
        self.normal_index
    }

    pub fn distance_index(&self) -> usize {
        self.distance_index
    }

    pub fn rgba(&self) -> &Grid<[f32; 4]> {
        &self.rgba
    }

    pub fn dims(&self) -> (usize, usize) {
        self.rgba.dims()
    }

    pub fn alpha_tiles(&self) -> &AlphaTiles {
        &self.tiles
    }

    pub fn color(&self) -> ColorImage {
        self.rgba.map(|p| [p[0], p[1], p[2]])
    }

    pub fn alpha(&self) -> ScalarImage {
        self.rgba.map(|p| p[3])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mhi {
    config: MhiConfig,
    layers: Vec<MhiLayer>,
}

impl Mhi {
    /// Takes layers ordered normal-major, nearest distance first, and checks
    /// every structural and value invariant.
    pub fn new(config: MhiConfig, layers: Vec<MhiLayer>) -> Result<Self> {
        if layers.len() != config.num_layers() {
            return Err(Error::InvariantViolation(format!(
                "expected {} layers, got {}",
                config.num_layers(),
                layers.len()
            )));
        }
        for (k, layer) in layers.iter().enumerate() {
            let (i, j) = (k / config.distances_per_normal, k % config.distances_per_normal);
            if layer.normal_index != i || layer.distance_index != j {
                return Err(Error::InvariantViolation(format!(
                    "layer {k} is labelled ({}, {}) but sits at ({i}, {j})",
                    layer.normal_index, layer.distance_index
                )));
            }
            let expected = config.plane(i, j);
            if (layer.plane.normal() - expected.normal()).norm() > 1e-9
                || (layer.plane.offset() - expected.offset()).abs()
                    > 1e-9 * expected.offset().abs().max(1.0)
            {
                return Err(Error::InvariantViolation(format!(
                    "layer ({i}, {j}) plane does not match the sampling schedule"
                )));
            }
            layer.rgba.ensure_dims(config.dims())?;
            if let Some(bad) = layer
                .rgba
                .data()
                .iter()
                .flatten()
                .find(|v| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::InvariantViolation(format!(
                    "layer ({i}, {j}) has value {bad} outside [0, 1]"
                )));
            }
        }
        Ok(Mhi { config, layers })
    }

    /// Builds layers from per-layer RGBA grids in normal-major order.
    pub fn from_rgba(config: MhiConfig, rgba: Vec<Grid<[f32; 4]>>) -> Result<Self> {
        let d = config.distances_per_normal;
        let layers = rgba
            .into_iter()
            .enumerate()
            .map(|(k, g)| MhiLayer::from_rgba(config.plane(k / d, k % d), k / d, k % d, g))
            .collect();
        Mhi::new(config, layers)
    }

    pub fn config(&self) -> &MhiConfig {
        &self.config
    }

    pub fn layers(&self) -> &[MhiLayer] {
        &self.layers
    }

    pub fn layer(&self, normal_index: usize, distance_index: usize) -> &MhiLayer {
        &self.layers[self.config.layer_index(normal_index, distance_index)]
    }

    /// The `D` layers of normal `i`, nearest first.
    pub fn group(&self, normal_index: usize) -> &[MhiLayer] {
        let d = self.config.distances_per_normal;
        &self.layers[normal_index * d..(normal_index + 1) * d]
    }

    /// Per pixel, the flat index of the layer with the largest alpha; ties go
    /// to the smallest index.
    pub fn argmax_alpha(&self) -> Grid<usize> {
        let (w, h) = self.config.dims();
        Grid::from_fn(w, h, |x, y| {
            let mut best = 0;
            let mut best_a = f32::NEG_INFINITY;
            for (k, layer) in self.layers.iter().enumerate() {
                let a = layer.rgba.get(x, y)[3];
                if a > best_a {
                    best = k;
                    best_a = a;
                }
            }
            best
        })
    }
}

/// Bits per channel of layer PNGs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn step(self) -> f32 {
        match self {
            BitDepth::Eight => 1.0 / 255.0,
            BitDepth::Sixteen => 1.0 / 65535.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    intrinsics: Intrinsics,
    near_depth: f64,
    far_depth: f64,
    distances_per_normal: usize,
    normals: Vec<[f64; 3]>,
    depths: Vec<f64>,
    bit_depth: BitDepth,
    layers: Vec<ManifestLayer>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestLayer {
    normal_index: usize,
    distance_index: usize,
    file: String,
}

pub fn layer_file_name(normal_index: usize, distance_index: usize) -> String {
    format!("layer_{normal_index:02}_{distance_index:03}.png")
}

/// Writes `mhi` into directory `dir`, creating it if needed.
pub fn save_mhi(mhi: &Mhi, dir: impl AsRef<Path>, bit_depth: BitDepth) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = &mhi.config;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        intrinsics: cfg.ref_intrinsics,
        near_depth: cfg.near_depth,
        far_depth: cfg.far_depth,
        distances_per_normal: cfg.distances_per_normal,
        normals: cfg.normals.iter().map(|n| [n.x, n.y, n.z]).collect(),
        depths: cfg.depths(),
        bit_depth,
        layers: mhi
            .layers
            .iter()
            .map(|l| ManifestLayer {
                normal_index: l.normal_index,
                distance_index: l.distance_index,
                file: layer_file_name(l.normal_index, l.distance_index),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let written: Vec<Result<()>> = crate::par::map_range(mhi.layers.len(), |k| {
        let layer = &mhi.layers[k];
        let path = dir.join(layer_file_name(layer.normal_index, layer.distance_index));
        let (w, h) = layer.dims();
        let g = &layer.rgba;
        let res = match bit_depth {
            BitDepth::Eight => {
                let buf: ImageBuffer<Rgba<u8>, Vec<u8>> =
                    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                        Rgba(g.get(x as usize, y as usize).map(to_byte))
                    });
                buf.save_with_format(&path, ImageFormat::Png)
            }
            BitDepth::Sixteen => {
                let buf: ImageBuffer<Rgba<u16>, Vec<u16>> =
                    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                        Rgba(g.get(x as usize, y as usize).map(to_word))
                    });
                buf.save_with_format(&path, ImageFormat::Png)
            }
        };
        res.map_err(Error::from)
    });
    written.into_iter().collect()
}

/// Reads an MHI directory and validates it.
pub fn load_mhi(dir: impl AsRef<Path>) -> Result<Mhi> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("cannot read manifest {}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("corrupt manifest {}: {e}", path.display())))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    for (i, n) in m.normals.iter().enumerate() {
        let len = Vector3::from(*n).norm();
        if !((len - 1.0).abs() <= UNIT_EPS) {
            return Err(Error::InvariantViolation(format!(
                "manifest normal {i} has length {len}"
            )));
        }
    }
    let config = MhiConfig::new(
        m.normals.iter().map(|n| Vector3::from(*n)).collect(),
        m.near_depth,
        m.far_depth,
        m.distances_per_normal,
        m.intrinsics,
    )?;
    let depths = config.depths();
    if m.depths.len() != depths.len()
        || m.depths
            .iter()
            .zip(&depths)
            .any(|(a, b)| (a - b).abs() > 1e-9 * b)
    {
        return Err(Error::InvariantViolation(
            "manifest depths do not follow the disparity schedule".into(),
        ));
    }
    if m.layers.len() != config.num_layers() {
        return Err(Error::Format(format!(
            "manifest lists {} layers, expected {}",
            m.layers.len(),
            config.num_layers()
        )));
    }
    let (w, h) = config.dims();
    let rgba: Vec<Result<Grid<[f32; 4]>>> = crate::par::map_range(m.layers.len(), |k| {
        let entry = &m.layers[k];
        let (i, j) = (k / config.distances_per_normal, k % config.distances_per_normal);
        if entry.normal_index != i || entry.distance_index != j {
            return Err(Error::Format(format!(
                "manifest layer {k} is ({}, {}), expected ({i}, {j})",
                entry.normal_index, entry.distance_index
            )));
        }
        let path = dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| {
            Error::Format(format!(
                "missing layer ({i}, {j}) file {}: {e}",
                path.display()
            ))
        })?;
        let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| {
            Error::Format(format!("corrupt layer ({i}, {j}) file {}: {e}", path.display()))
        })?;
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(Error::Format(format!(
                "layer ({i}, {j}) is {}x{}, expected {w}x{h}",
                img.width(),
                img.height()
            )));
        }
        let data: Vec<[f32; 4]> = match m.bit_depth {
            BitDepth::Eight => img
                .to_rgba8()
                .pixels()
                .map(|p| p.0.map(|b| b as f32 / 255.0))
                .collect(),
            BitDepth::Sixteen => img
                .to_rgba16()
                .pixels()
                .map(|p| p.0.map(|b| b as f32 / 65535.0))
                .collect(),
        };
        Grid::from_vec(w, h, data)
    });
    let rgba = rgba.into_iter().collect::<Result<Vec<_>>>()?;
    Mhi::from_rgba(config, rgba)
}
