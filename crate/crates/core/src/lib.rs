//! Multiple homography images (MHI) for novel view synthesis.
//!
//! An MHI discretizes the scene seen from a reference camera into RGBA layers
//! lying on planes with a fixed set of normals and, per normal, a fixed set of
//! disparity-spaced distances. Rendering a new view warps every layer with its
//! plane-induced homography, over-composites the layers of each normal into a
//! *multi-normal image*, and blends the multi-normal images with weights
//! derived from the angle between the rotated normals and the viewing rays.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: pinhole intrinsics, rigid poses, planes, plane homographies.
//! * [`mhi`]: the layered representation, its sampling schedule and on-disk format.
//! * [`render`]: backward warping and per-normal over-compositing.
//! * [`blend`]: angle cost and hard/soft/average blending.
//! * [`estimate`]: oriented cost volume and photoconsistency alpha estimation.
//! * [`view`]: the end-to-end view synthesis path shared by the CLI and service.
//! * [`synth`]: procedural planar scenes, ray-cast ground truth and test suites.
//! * [`metrics`] and [`bench`]: PSNR/SSIM/L1 and the rotation-binned benchmark.
//! * [`orbit`]: circular camera paths.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iteration otherwise.

pub mod bench;
pub mod blend;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod metrics;
pub mod mhi;
pub mod orbit;
pub mod par;
pub mod raster;
pub mod render;
pub mod synth;
pub mod view;

pub use error::{Error, Result};
