//! End-to-end view synthesis from an MHI: warp, composite, weight, blend.

use serde::{Deserialize, Serialize};

use crate::blend::{
    angle_costs, average_weights, blend, hard_weights, mask_uncovered_costs, soft_weights,
    BlendScheme, BlendWeights, DEFAULT_SOFT_SHARPNESS,
};
use crate::error::{Error, Result};
use crate::mhi::Mhi;
use crate::raster::{encode_color_png, encode_gray_png, ColorImage, Mask, ScalarImage};
use crate::render::{render_multi_normal_images, MultiNormalImage, RenderRequest};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlendParams {
    pub scheme: BlendScheme,
    #[serde(default = "default_sharpness")]
    pub soft_sharpness: f64,
}

fn default_sharpness() -> f64 {
    DEFAULT_SOFT_SHARPNESS
}

impl Default for BlendParams {
    fn default() -> Self {
        BlendParams {
            scheme: BlendScheme::Soft,
            soft_sharpness: DEFAULT_SOFT_SHARPNESS,
        }
    }
}

impl BlendParams {
    pub fn with_scheme(scheme: BlendScheme) -> Self {
        BlendParams {
            scheme,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct View {
    pub image: ColorImage,
    pub hole_mask: Mask,
    /// Normalized contribution of each normal, as used by the blend.
    pub weights: Vec<ScalarImage>,
    pub multi_normal: Vec<MultiNormalImage>,
}

/// Scheme weights for a set of rendered multi-normal images. The hard scheme
/// picks the best-aligned normal among those with coverage at each pixel.
pub fn scheme_weights(
    mhi: &Mhi,
    req: &RenderRequest,
    params: &BlendParams,
    multi: &[MultiNormalImage],
) -> Result<BlendWeights> {
    let (w, h) = req.dims();
    let normals = mhi.config().normals();
    match params.scheme {
        BlendScheme::Average => Ok(average_weights(normals.len(), w, h)),
        BlendScheme::Soft => {
            let costs = angle_costs(normals, &req.tgt_intrinsics, req.rel_pose.rotation());
            soft_weights(&costs, params.soft_sharpness)
        }
        BlendScheme::Hard => {
            let costs = angle_costs(normals, &req.tgt_intrinsics, req.rel_pose.rotation());
            hard_weights(&mask_uncovered_costs(&costs, multi))
        }
    }
}

pub fn synthesize_view(mhi: &Mhi, req: &RenderRequest, params: &BlendParams) -> Result<View> {
    if !(params.soft_sharpness.is_finite() && params.soft_sharpness >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "soft_sharpness must be finite and nonnegative, got {}",
            params.soft_sharpness
        )));
    }
    let multi = render_multi_normal_images(mhi, req)?;
    let weights = scheme_weights(mhi, req, params, &multi)?;
    let blended = blend(&multi, &weights)?;
    Ok(View {
        image: blended.image,
        hole_mask: blended.hole_mask,
        weights: blended.effective_weights,
        multi_normal: multi,
    })
}

/// PNG bytes of the synthesized view.
pub fn render_png(mhi: &Mhi, req: &RenderRequest, params: &BlendParams) -> Result<Vec<u8>> {
    encode_color_png(&synthesize_view(mhi, req, params)?.image)
}

/// Grayscale PNG of the normalized weight of `normal_index`.
pub fn weight_png(view: &View, normal_index: usize) -> Result<Vec<u8>> {
    let map = view.weights.get(normal_index).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "normal index {normal_index} out of range (0..{})",
            view.weights.len()
        ))
    })?;
    encode_gray_png(map)
}
