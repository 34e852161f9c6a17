//! Piecewise-planar textured scenes, an exact ray-casting renderer for them,
//! and seeded stereo/target suites binned by target rotation.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::StereoInput;
use crate::geometry::{Intrinsics, PixelCoord, Plane, Pose};
use crate::par;
use crate::raster::{
    load_color_png, load_mask_png, quantize_8bit, save_color_png, save_mask_png, ColorImage, DepthMap, Footprint,
    Grid, Mask,
};

pub const SUITE_FORMAT_VERSION: u32 = 1;
pub const SUITE_MANIFEST: &str = "suite.json";

/// Relative depth agreement required by the cross-visibility test.
pub const VISIBILITY_REL_TOL: f64 = 0.03;
/// Largest allowed source parallax in pixels.
pub const MAX_PARALLAX_PX: f64 = 64.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextureKind {
    Checkerboard { cell: usize, colors: [[f32; 3]; 2] },
    /// Smoothly interpolated random lattice, one value per channel and node.
    ValueNoise { cell: usize, seed: u64 },
}

impl TextureKind {
    pub fn texels(&self, width: usize, height: usize) -> ColorImage {
        match *self {
            TextureKind::Checkerboard { cell, colors } => {
                let cell = cell.max(1);
                ColorImage::from_fn(width, height, |x, y| colors[(x / cell + y / cell) % 2])
            }
            TextureKind::ValueNoise { cell, seed } => {
                let cell = cell.max(1);
                let (lw, lh) = (width / cell + 2, height / cell + 2);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let lattice: Vec<[f32; 3]> = (0..lw * lh).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
                let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
                ColorImage::from_fn(width, height, |x, y| {
                    let (gx, gy) = (x / cell, y / cell);
                    let tx = smooth((x % cell) as f32 / cell as f32);
                    let ty = smooth((y % cell) as f32 / cell as f32);
                    let at = |i: usize, j: usize| lattice[j * lw + i];
                    let mut out = [0.0; 3];
                    for (c, o) in out.iter_mut().enumerate() {
                        let a = at(gx, gy)[c] + tx * (at(gx + 1, gy)[c] - at(gx, gy)[c]);
                        let b = at(gx, gy + 1)[c] + tx * (at(gx + 1, gy + 1)[c] - at(gx, gy + 1)[c]);
                        *o = a + ty * (b - a);
                    }
                    out
                })
            }
        }
    }
}

/// Serialized form of a textured rectangle.
///
/// The rectangle is centered at `center`, lies in the plane through it with
/// the given normal, and carries `texels_u x texels_v` texels spaced
/// `texel_size` meters apart, texel centers on the rectangle's edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub texels_u: usize,
    pub texels_v: usize,
    pub texel_size: f64,
    pub texture: TextureKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quad {
    spec: QuadSpec,
    plane: Plane,
    origin: Vector3<f64>,
    axis_u: Vector3<f64>,
    axis_v: Vector3<f64>,
    texels: ColorImage,
}

/// In-plane basis: `u` follows the x axis projected onto the plane, `v`
/// completes it and points down the image.
fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let x = Vector3::x();
    let mut u = x - n * n.dot(&x);
    if u.norm() < 1e-6 {
        let y = Vector3::y();
        u = y - n * n.dot(&y);
    }
    let u = u.normalize();
    let mut v = n.cross(&u);
    if v.y < 0.0 {
        v = -v;
    }
    (u, v)
}

impl Quad {
    pub fn new(spec: QuadSpec) -> Result<Quad> {
        if spec.texels_u < 2 || spec.texels_v < 2 || !(spec.texel_size > 0.0 && spec.texel_size.is_finite()) {
            return Err(Error::InvalidConfig("quad needs at least 2x2 texels of positive size".into()));
        }
        let n = Vector3::from(spec.normal);
        let c = Vector3::from(spec.center);
        let plane = Plane::new(n, 0.0)?;
        let n = *plane.normal();
        let plane = Plane::new(n, -n.dot(&c))?;
        let (axis_u, axis_v) = plane_basis(&n);
        let half_u = (spec.texels_u - 1) as f64 * spec.texel_size / 2.0;
        let half_v = (spec.texels_v - 1) as f64 * spec.texel_size / 2.0;
        let origin = c - axis_u * half_u - axis_v * half_v;
        let texels = spec.texture.texels(spec.texels_u, spec.texels_v);
        Ok(Quad {
            spec,
            plane,
            origin,
            axis_u,
            axis_v,
            texels,
        })
    }

    pub fn spec(&self) -> &QuadSpec {
        &self.spec
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn texels(&self) -> &ColorImage {
        &self.texels
    }

    /// The four corners in order origin, +u, +u+v, +v.
    pub fn corners(&self) -> [Vector3<f64>; 4] {
        let eu = self.axis_u * ((self.spec.texels_u - 1) as f64 * self.spec.texel_size);
        let ev = self.axis_v * ((self.spec.texels_v - 1) as f64 * self.spec.texel_size);
        [self.origin, self.origin + eu, self.origin + eu + ev, self.origin + ev]
    }

    /// Texture sample at a point of the plane, `None` off the rectangle.
    pub fn texture_at(&self, x: &Vector3<f64>) -> Option<[f32; 3]> {
        let d = x - self.origin;
        let s = d.dot(&self.axis_u) / self.spec.texel_size;
        let t = d.dot(&self.axis_v) / self.spec.texel_size;
        Footprint::new(s, t, self.texels.width(), self.texels.height())
            .map(|fp| fp.sample(self.texels.data(), self.texels.width()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub quads: Vec<QuadSpec>,
    pub background: [f32; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanarScene {
    pub quads: Vec<Quad>,
    pub background: [f32; 3],
}

impl PlanarScene {
    pub fn from_spec(spec: &SceneSpec) -> Result<PlanarScene> {
        Ok(PlanarScene {
            quads: spec.quads.iter().cloned().map(Quad::new).collect::<Result<_>>()?,
            background: spec.background,
        })
    }

    pub fn spec(&self) -> SceneSpec {
        SceneSpec {
            quads: self.quads.iter().map(|q| q.spec.clone()).collect(),
            background: self.background,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRender {
    pub image: ColorImage,
    /// Camera-frame depth of the nearest hit, infinite on misses.
    pub depth: DepthMap,
}

/// Nearest hit along one camera ray; returns depth and color.
fn cast(scene: &PlanarScene, cam: &Intrinsics, pose: &Pose, x: usize, y: usize) -> Option<(f64, [f32; 3])> {
    let ray = cam.backproject(PixelCoord::new(x as f64, y as f64));
    let mut best: Option<(f64, [f32; 3])> = None;
    for q in &scene.quads {
        let local = q.plane.in_source_frame(pose);
        let denom = local.normal().dot(&ray);
        if denom.abs() <= 1e-12 {
            continue;
        }
        let s = -local.offset() / denom;
        if !(s > 0.0) || best.is_some_and(|(b, _)| b <= s) {
            continue;
        }
        if let Some(c) = q.texture_at(&pose.transform_point(&(ray * s))) {
            best = Some((s, c));
        }
    }
    best
}

/// Renders `scene` by casting one ray per pixel; `pose` maps camera points
/// into the scene frame.
pub fn render_oracle(scene: &PlanarScene, cam: &Intrinsics, pose: &Pose) -> OracleRender {
    let (w, h) = cam.dims();
    let rows = par::map_range(h, |y| (0..w).map(|x| cast(scene, cam, pose, x, y)).collect::<Vec<_>>());
    let hits: Vec<_> = rows.into_iter().flatten().collect();
    OracleRender {
        image: Grid::from_fn(w, h, |x, y| hits[y * w + x].map_or(scene.background, |(_, c)| c)),
        depth: Grid::from_fn(w, h, |x, y| hits[y * w + x].map_or(f64::INFINITY, |(d, _)| d)),
    }
}

/// Pixels of a view that are also visible from the reference camera.
///
/// Each hit is moved into the reference frame and projected; it counts as
/// visible when it lands inside the reference image and all four surrounding
/// reference depths agree with its depth within [`VISIBILITY_REL_TOL`].
pub fn cross_visibility(
    ref_cam: &Intrinsics,
    ref_depth: &DepthMap,
    cam: &Intrinsics,
    pose: &Pose,
    depth: &DepthMap,
) -> Mask {
    let (w, h) = cam.dims();
    let (rw, rh) = ref_cam.dims();
    Mask::from_fn(w, h, |x, y| {
        let z = *depth.get(x, y);
        if !z.is_finite() {
            return false;
        }
        let p = pose.transform_point(&(cam.backproject(PixelCoord::new(x as f64, y as f64)) * z));
        if p.z <= 0.0 {
            return false;
        }
        let q = ref_cam.project(&p);
        let Some(fp) = Footprint::new(q.u, q.v, rw, rh) else {
            return false;
        };
        [(fp.x0, fp.y0), (fp.x1, fp.y0), (fp.x0, fp.y1), (fp.x1, fp.y1)]
            .iter()
            .all(|&(i, j)| (ref_depth.get(i, j) - p.z).abs() <= VISIBILITY_REL_TOL * p.z)
    })
}

/// Largest displacement, over reference hits, between where a point lands in
/// the second view and where the rotation alone would put it.
pub fn max_parallax(ref_cam: &Intrinsics, ref_depth: &DepthMap, sec_cam: &Intrinsics, rel_pose_sec: &Pose) -> f64 {
    let to_sec = rel_pose_sec.inverse();
    let mut worst = 0.0f64;
    for y in 0..ref_cam.height {
        for x in 0..ref_cam.width {
            let z = *ref_depth.get(x, y);
            if !z.is_finite() {
                continue;
            }
            let ray = ref_cam.backproject(PixelCoord::new(x as f64, y as f64));
            let full = sec_cam.project(&to_sec.transform_point(&(ray * z)));
            let rot = sec_cam.project(&(to_sec.rotation() * ray));
            worst = worst.max(full.distance(&rot));
        }
    }
    worst
}

/// Pixels whose 3x3 neighborhood spans more than `threshold` in some channel.
pub fn textured_mask(img: &ColorImage, threshold: f32) -> Mask {
    let (w, h) = img.dims();
    Mask::from_fn(w, h, |x, y| {
        let mut lo = [f32::INFINITY; 3];
        let mut hi = [f32::NEG_INFINITY; 3];
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                let p = img.get(xx, yy);
                for c in 0..3 {
                    lo[c] = lo[c].min(p[c]);
                    hi[c] = hi[c].max(p[c]);
                }
            }
        }
        (0..3).any(|c| hi[c] - lo[c] > threshold)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RotationBin {
    #[serde(rename = "0-2")]
    UpTo2,
    #[serde(rename = "2-4")]
    From2To4,
    #[serde(rename = "4-8")]
    From4To8,
}

impl RotationBin {
    pub const ALL: [RotationBin; 3] = [RotationBin::UpTo2, RotationBin::From2To4, RotationBin::From4To8];

    /// Half-open degree interval `(lo, hi]`.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            RotationBin::UpTo2 => (0.0, 2.0),
            RotationBin::From2To4 => (2.0, 4.0),
            RotationBin::From4To8 => (4.0, 8.0),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RotationBin::UpTo2 => "0-2",
            RotationBin::From2To4 => "2-4",
            RotationBin::From4To8 => "4-8",
        }
    }

    pub fn contains(self, theta_deg: f64) -> bool {
        let (lo, hi) = self.bounds();
        theta_deg > lo && theta_deg <= hi
    }

    pub fn classify(theta_deg: f64) -> Option<RotationBin> {
        RotationBin::ALL.into_iter().find(|b| b.contains(theta_deg))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetView {
    pub intrinsics: Intrinsics,
    /// Maps target-camera points into the reference frame.
    pub pose: Pose,
    pub image: ColorImage,
    pub valid_mask: Mask,
    pub rotation_deg: f64,
    pub extrapolation: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub id: String,
    pub seed: u64,
    pub rotation_bin: RotationBin,
    pub scene: PlanarScene,
    pub input: StereoInput,
    pub targets: Vec<TargetView>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub scenes_per_bin: usize,
    pub slant_range_deg: f64,
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            scenes_per_bin: 10,
            slant_range_deg: 60.0,
            width: 128,
            height: 128,
            hfov_deg: 90.0,
        }
    }
}

impl SuiteConfig {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Ok(Intrinsics::from_hfov(self.width, self.height, self.hfov_deg)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Suite {
    pub config: SuiteConfig,
    pub samples: Vec<SceneSample>,
}

/// Camera on a circular orbit around `center`: rotation by `angle_deg` about
/// `axis`, positioned so that `center` stays fixed.
pub fn orbit_pose(axis: &Vector3<f64>, center: &Vector3<f64>, angle_deg: f64) -> Pose {
    let r = Pose::from_axis_angle(*axis, angle_deg.to_radians(), Vector3::zeros());
    let t = center - r.rotation() * center;
    Pose::from_axis_angle(*axis, angle_deg.to_radians(), t)
}

/// Texel spacing and noise cell size keep suite textures band-limited: the
/// finest features span several pixels in every camera of a sample.
const SUITE_TEXEL_PX: f64 = 2.0;

fn suite_texture(rng: &mut ChaCha8Rng) -> TextureKind {
    TextureKind::ValueNoise {
        cell: rng.gen_range(4..=8),
        seed: rng.gen(),
    }
}

fn random_quad(rng: &mut ChaCha8Rng, cam: &Intrinsics, slant_range_deg: f64) -> QuadSpec {
    let z = rng.gen_range(2.0..5.0);
    let half_fov_x = (cam.width as f64 - 1.0) / 2.0 / cam.fx;
    let half_fov_y = (cam.height as f64 - 1.0) / 2.0 / cam.fy;
    let center = [
        z * half_fov_x * rng.gen_range(-0.6..0.6),
        z * half_fov_y * rng.gen_range(-0.6..0.6),
        z,
    ];
    // Wall- and floor-like tilts: about a vertical or a horizontal axis.
    let slant = (slant_range_deg * rng.gen::<f64>()).to_radians();
    let azimuth = std::f64::consts::FRAC_PI_2 * rng.gen_range(0..4) as f64;
    let normal = [slant.sin() * azimuth.cos(), slant.sin() * azimuth.sin(), -slant.cos()];
    let texel_size = SUITE_TEXEL_PX * z / cam.fx;
    let extent = z * half_fov_x * rng.gen_range(0.5..0.9);
    let texels = ((2.0 * extent / texel_size).round() as usize).max(2);
    QuadSpec {
        center,
        normal,
        texels_u: texels,
        texels_v: texels,
        texel_size,
        texture: suite_texture(rng),
    }
}

fn random_scene(rng: &mut ChaCha8Rng, cam: &Intrinsics, slant_range_deg: f64) -> SceneSpec {
    let zb = rng.gen_range(8.0..12.0);
    let texel_size = SUITE_TEXEL_PX * zb / cam.fx;
    // Wide enough to fill every camera of the orbit.
    let extent = 2.0 * zb * (cam.width.max(cam.height) as f64 / 2.0 / cam.fx.min(cam.fy)) + 4.0;
    let texels = (2.0 * extent / texel_size).round() as usize;
    let mut quads = vec![QuadSpec {
        center: [0.0, 0.0, zb],
        normal: [0.0, 0.0, -1.0],
        texels_u: texels,
        texels_v: texels,
        texel_size,
        texture: suite_texture(rng),
    }];
    let count = rng.gen_range(2..=4);
    for _ in 0..count {
        quads.push(random_quad(rng, cam, slant_range_deg));
    }
    SceneSpec {
        quads,
        background: [0.0; 3],
    }
}

/// Draws one sample of `bin`; odd indices extrapolate, even ones interpolate.
pub fn generate_sample(config: &SuiteConfig, bin: RotationBin, index: usize, seed: u64) -> Result<SceneSample> {
    let cam = config.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Rejection on parallax; the bound is loose so this rarely loops.
    for _ in 0..64 {
        let spec = random_scene(&mut rng, &cam, config.slant_range_deg);
        let scene = PlanarScene::from_spec(&spec)?;
        let radius = rng.gen_range(2.0..3.0);
        let center = Vector3::new(0.0, 0.0, radius);
        let psi = rng.gen_range(-45.0f64..45.0).to_radians();
        let axis = Vector3::new(psi.sin(), psi.cos(), 0.0);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let phi_s = sign * rng.gen_range(8.5..10.0);
        let (lo, hi) = bin.bounds();
        let mag = lo + (hi - lo) * rng.gen_range(0.02..0.98);
        let extrapolation = index % 2 == 1;
        let phi_t = if extrapolation { -sign * mag } else { sign * mag };

        let sec_pose = orbit_pose(&axis, &center, phi_s);
        let tgt_pose = orbit_pose(&axis, &center, phi_t);
        let reference = render_oracle(&scene, &cam, &Pose::identity());
        if max_parallax(&cam, &reference.depth, &cam, &sec_pose) > MAX_PARALLAX_PX {
            continue;
        }
        let second = render_oracle(&scene, &cam, &sec_pose);
        let target = render_oracle(&scene, &cam, &tgt_pose);
        let rotation_deg = tgt_pose.rotation_angle_deg();
        debug_assert!(bin.contains(rotation_deg));
        let valid_mask = cross_visibility(&cam, &reference.depth, &cam, &tgt_pose, &target.depth);
        let input = StereoInput::new(
            quantize_8bit(&reference.image),
            quantize_8bit(&second.image),
            cam,
            cam,
            sec_pose,
        )?;
        return Ok(SceneSample {
            id: format!("{}_{index:03}", bin.label().replace('-', "_")),
            seed,
            rotation_bin: bin,
            scene,
            input,
            targets: vec![TargetView {
                intrinsics: cam,
                pose: tgt_pose,
                image: quantize_8bit(&target.image),
                valid_mask,
                rotation_deg,
                extrapolation,
            }],
        });
    }
    Err(Error::InvalidConfig("could not draw a scene within the parallax bound".into()))
}

/// Seeded suite with `scenes_per_bin` samples in each rotation bin.
pub fn generate_suite(config: &SuiteConfig) -> Result<Suite> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let jobs: Vec<(RotationBin, usize, u64)> = RotationBin::ALL
        .into_iter()
        .flat_map(|b| (0..config.scenes_per_bin).map(move |k| (b, k)))
        .map(|(b, k)| (b, k, rng.gen()))
        .collect();
    let samples = par::map_range(jobs.len(), |i| {
        let (b, k, s) = jobs[i];
        generate_sample(config, b, k, s)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    Ok(Suite {
        config: *config,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let r = p.rotation();
        PoseRecord {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [p.translation().x, p.translation().y, p.translation().z],
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<Pose> {
        let r = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        Ok(Pose::new(r, Vector3::from(self.translation))?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TargetRecord {
    intrinsics: Intrinsics,
    pose: PoseRecord,
    rotation_deg: f64,
    extrapolation: bool,
    image: String,
    mask: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    seed: u64,
    rotation_bin: RotationBin,
    scene: SceneSpec,
    ref_intrinsics: Intrinsics,
    sec_intrinsics: Intrinsics,
    rel_pose_sec: PoseRecord,
    reference: String,
    second: String,
    targets: Vec<TargetRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SuiteManifest {
    format_version: u32,
    config: SuiteConfig,
    samples: Vec<SampleRecord>,
}

/// Writes `suite.json` plus one directory of PNGs per sample.
pub fn save_suite(suite: &Suite, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let mut records = Vec::with_capacity(suite.samples.len());
    for s in &suite.samples {
        let sub = dir.join(&s.id);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let rel = |name: &str| format!("{}/{name}", s.id);
        save_color_png(&s.input.reference, dir.join(rel("reference.png")))?;
        save_color_png(&s.input.second, dir.join(rel("second.png")))?;
        let mut targets = Vec::new();
        for (k, t) in s.targets.iter().enumerate() {
            let image = rel(&format!("target_{k}.png"));
            let mask = rel(&format!("target_{k}_mask.png"));
            save_color_png(&t.image, dir.join(&image))?;
            save_mask_png(&t.valid_mask, dir.join(&mask))?;
            targets.push(TargetRecord {
                intrinsics: t.intrinsics,
                pose: (&t.pose).into(),
                rotation_deg: t.rotation_deg,
                extrapolation: t.extrapolation,
                image,
                mask,
            });
        }
        records.push(SampleRecord {
            id: s.id.clone(),
            seed: s.seed,
            rotation_bin: s.rotation_bin,
            scene: s.scene.spec(),
            ref_intrinsics: s.input.ref_cam,
            sec_intrinsics: s.input.sec_cam,
            rel_pose_sec: (&s.input.rel_pose_sec).into(),
            reference: rel("reference.png"),
            second: rel("second.png"),
            targets,
        });
    }
    let manifest = SuiteManifest {
        format_version: SUITE_FORMAT_VERSION,
        config: suite.config,
        samples: records,
    };
    let path = dir.join(SUITE_MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_suite(dir: impl AsRef<Path>) -> Result<Suite> {
    let dir = dir.as_ref();
    let path = dir.join(SUITE_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SuiteManifest = serde_json::from_str(&text)?;
    if manifest.format_version != SUITE_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported suite format_version {}",
            manifest.format_version
        )));
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for r in manifest.samples {
        let input = StereoInput::new(
            load_color_png(dir.join(&r.reference))?,
            load_color_png(dir.join(&r.second))?,
            r.ref_intrinsics,
            r.sec_intrinsics,
            r.rel_pose_sec.to_pose()?,
        )?;
        let targets = r
            .targets
            .iter()
            .map(|t| {
                let image = load_color_png(dir.join(&t.image))?;
                image.ensure_dims(t.intrinsics.dims())?;
                Ok(TargetView {
                    intrinsics: t.intrinsics,
                    pose: t.pose.to_pose()?,
                    image,
                    valid_mask: load_mask_png(dir.join(&t.mask))?,
                    rotation_deg: t.rotation_deg,
                    extrapolation: t.extrapolation,
                })
            })
            .collect::<Result<_>>()?;
        samples.push(SceneSample {
            id: r.id,
            seed: r.seed,
            rotation_bin: r.rotation_bin,
            scene: PlanarScene::from_spec(&r.scene)?,
            input,
            targets,
        });
    }
    Ok(Suite {
        config: manifest.config,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cam() -> Intrinsics {
        Intrinsics::from_hfov(32, 24, 90.0).unwrap()
    }

    fn frontal(z: f64, texture: TextureKind, k: &Intrinsics) -> QuadSpec {
        let c = k.backproject(k.principal_point()) * z;
        QuadSpec {
            center: [c.x, c.y, c.z],
            normal: [0.0, 0.0, -1.0],
            texels_u: k.width,
            texels_v: k.height,
            texel_size: z / k.fx,
            texture,
        }
    }

    #[test]
    fn identity_render_reproduces_texture() {
        let k = cam();
        let q = frontal(5.0, TextureKind::ValueNoise { cell: 3, seed: 7 }, &k);
        let scene = PlanarScene::from_spec(&SceneSpec {
            quads: vec![q],
            background: [0.0; 3],
        })
        .unwrap();
        let out = render_oracle(&scene, &k, &Pose::identity());
        assert_eq!(out.image, *scene.quads[0].texels());
        for &d in out.depth.data() {
            assert_relative_eq!(d, 5.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn corners_lie_on_plane() {
        let q = Quad::new(QuadSpec {
            center: [0.3, -0.2, 3.0],
            normal: [0.4, 0.2, -0.9],
            texels_u: 17,
            texels_v: 9,
            texel_size: 0.05,
            texture: TextureKind::Checkerboard {
                cell: 2,
                colors: [[0.0; 3], [1.0; 3]],
            },
        })
        .unwrap();
        for c in q.corners() {
            assert!(q.plane().signed_distance(&c).abs() < 1e-9);
        }
    }

    #[test]
    fn nearest_hit_wins() {
        let k = cam();
        let tex = |s| TextureKind::ValueNoise { cell: 2, seed: s };
        let mut near = frontal(2.0, tex(1), &k);
        near.center[0] -= 0.5;
        near.texels_u /= 2;
        let far = frontal(4.0, tex(2), &k);
        let both = PlanarScene::from_spec(&SceneSpec {
            quads: vec![far.clone(), near.clone()],
            background: [0.0; 3],
        })
        .unwrap();
        let only = |q: QuadSpec| {
            let s = PlanarScene::from_spec(&SceneSpec {
                quads: vec![q],
                background: [0.0; 3],
            })
            .unwrap();
            render_oracle(&s, &k, &Pose::identity()).depth
        };
        let (dn, df) = (only(near), only(far));
        let db = render_oracle(&both, &k, &Pose::identity()).depth;
        for i in 0..db.data().len() {
            assert_eq!(db.data()[i], dn.data()[i].min(df.data()[i]));
        }
    }

    #[test]
    fn pure_rotation_matches_infinite_homography() {
        let k = Intrinsics::from_hfov(48, 48, 90.0).unwrap();
        let mut q = frontal(5.0, TextureKind::ValueNoise { cell: 24, seed: 3 }, &k);
        q.texels_u *= 3;
        q.texels_v *= 3;
        let scene = PlanarScene::from_spec(&SceneSpec {
            quads: vec![q],
            background: [0.0; 3],
        })
        .unwrap();
        let pose = Pose::from_euler_xyz_deg([1.0, 3.0, 0.5], Vector3::zeros());
        let a = render_oracle(&scene, &k, &Pose::identity()).image;
        let b = render_oracle(&scene, &k, &pose).image;
        let h = k.as_matrix() * pose.rotation() * k.inverse_matrix().unwrap();
        let (mut sum, mut n) = (0.0f64, 0usize);
        for y in 0..48 {
            for x in 0..48 {
                let p = crate::geometry::apply_homography(&h, PixelCoord::new(x as f64, y as f64));
                if let Some(c) = crate::raster::sample_color(&a, p.u, p.v) {
                    let d = b.get(x, y);
                    for ch in 0..3 {
                        sum += ((c[ch] - d[ch]) as f64).powi(2);
                    }
                    n += 3;
                }
            }
        }
        let rms = (sum / n as f64).sqrt();
        assert!(n > 3000 && rms < 0.5 / 255.0, "rms {rms}");
    }

    #[test]
    fn bins_are_half_open() {
        assert_eq!(RotationBin::classify(2.0), Some(RotationBin::UpTo2));
        assert_eq!(RotationBin::classify(2.0 + 1e-12), Some(RotationBin::From2To4));
        assert_eq!(RotationBin::classify(0.0), None);
        assert_eq!(RotationBin::classify(8.5), None);
    }

    #[test]
    fn orbit_pose_fixes_center() {
        let axis = Vector3::new(0.3, 0.9, 0.0).normalize();
        let c = Vector3::new(0.0, 0.0, 2.5);
        let p = orbit_pose(&axis, &c, 7.0);
        assert_relative_eq!(p.transform_point(&c), c, epsilon = 1e-12);
        assert_relative_eq!(p.rotation_angle_deg(), 7.0, epsilon = 1e-9);
    }

    #[test]
    fn textured_mask_flags_edges_only() {
        let img = ColorImage::from_fn(6, 3, |x, _| if x < 3 { [0.0; 3] } else { [1.0; 3] });
        let m = textured_mask(&img, 0.1);
        assert!(!*m.get(0, 1) && *m.get(2, 1) && *m.get(3, 1) && !*m.get(5, 1));
    }
}
