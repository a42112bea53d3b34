//! Class-activation-map methods adapted to segmentation.
//!
//! Each method maps `(model, image, class c, region M, layer)` to a
//! [`SaliencyMap`]. The gradient-based methods differentiate the summed
//! class-`c` logit over `M`; the gradient-free ones score forward passes by
//! the mean class-`c` probability over `M`.

mod ablation;
mod eigen;
mod gradient;
mod score;

use std::fmt;
use std::str::FromStr;

pub use ablation::{ablation_weights, seg_ablation_cam};
pub use eigen::{eigen_projection, leading_right_singular_vector, seg_eigen_cam, EigenFactors};
pub use gradient::{combine_tap, grad_cam_pp_weights, grad_cam_weights, seg_grad_cam, seg_grad_cam_pp, seg_xgrad_cam, xgrad_cam_weights};
pub use score::{score_cam_confidences, seg_score_cam};

use crate::error::{Error, Result};
use crate::ops;
use crate::pixels::PixelSet;
use crate::segnet::{ForwardHooks, Model, SegmentationOutput};
use crate::tensor::Tensor;

/// Added to denominators that may vanish.
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    GradCam,
    GradCamPlusPlus,
    XGradCam,
    ScoreCam,
    AblationCam,
    EigenCam,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::GradCam,
        Method::GradCamPlusPlus,
        Method::XGradCam,
        Method::ScoreCam,
        Method::EigenCam,
        Method::AblationCam,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::GradCam => "seg-grad-cam",
            Method::GradCamPlusPlus => "seg-grad-cam-pp",
            Method::XGradCam => "seg-xgrad-cam",
            Method::ScoreCam => "seg-score-cam",
            Method::AblationCam => "seg-ablation-cam",
            Method::EigenCam => "seg-eigen-cam",
        }
    }

    pub fn is_gradient_free(self) -> bool {
        matches!(self, Method::ScoreCam | Method::AblationCam | Method::EigenCam)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// Normalised saliency at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    /// `H × W`, values in `[0, 1]`.
    pub values: Tensor,
    pub method: String,
    pub layer_name: String,
    pub region: PixelSet,
}

/// Per-method quantities behind a saliency map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CamIntermediates {
    pub channel_weights: Vec<f64>,
    /// Grad-CAM++ per-pixel coefficients, `K × h × w`.
    pub pixel_coefficients: Option<Tensor>,
    /// Score-CAM increase in confidence per channel.
    pub confidences: Option<Vec<f64>>,
    /// Ablation-CAM score with each channel zeroed.
    pub ablation_scores: Option<Vec<f64>>,
    pub eigen: Option<EigenFactors>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CamOptions {
    /// Run Score-CAM / Ablation-CAM channel passes on the rayon pool.
    pub parallel: bool,
}

impl Default for CamOptions {
    fn default() -> Self {
        CamOptions { parallel: true }
    }
}

/// Validated inputs shared by every method.
pub(crate) struct CamRequest<'a> {
    pub model: &'a Model,
    pub image: &'a Tensor,
    pub class: usize,
    pub region: &'a PixelSet,
    pub layer: &'a str,
    pub options: CamOptions,
}

impl<'a> CamRequest<'a> {
    pub(crate) fn new(
        model: &'a Model,
        image: &'a Tensor,
        class: usize,
        region: &'a PixelSet,
        layer: &'a str,
        options: CamOptions,
    ) -> Result<Self> {
        if !model.has_layer(layer) {
            return Err(Error::UnknownLayer(layer.to_string()));
        }
        if class >= model.num_classes() {
            return Err(Error::ClassOutOfRange { class, num_classes: model.num_classes() });
        }
        let cfg = model.config();
        if region.bounds() != (cfg.height, cfg.width) {
            return Err(Error::shape(
                "cam",
                format!("region bounds {:?} vs model input {}×{}", region.bounds(), cfg.height, cfg.width),
            ));
        }
        Ok(CamRequest { model, image, class, region, layer, options })
    }

    pub(crate) fn target(&self) -> (usize, usize) {
        let cfg = self.model.config();
        (cfg.height, cfg.width)
    }

    /// Activations of the requested layer from a plain forward pass.
    pub(crate) fn activations(&self) -> Result<Tensor> {
        let trace = self.model.trace(self.image, ForwardHooks::default())?;
        Ok(trace.graph.value(trace.layers[self.layer]).clone())
    }

    pub(crate) fn finish(&self, method: Method, raw: &Tensor) -> Result<SaliencyMap> {
        let values = postprocess_saliency(raw, self.target())?;
        Ok(SaliencyMap {
            values,
            method: method.id().to_string(),
            layer_name: self.layer.to_string(),
            region: self.region.clone(),
        })
    }
}

/// Mean class-`class` probability over `region`.
pub fn region_score(output: &SegmentationOutput, region: &PixelSet, class: usize) -> Result<f64> {
    if region.is_empty() {
        return Err(Error::EmptyRegion("score region"));
    }
    let (h, w) = output.size();
    if region.bounds() != (h, w) {
        return Err(Error::shape("region_score", format!("region bounds {:?} vs {h}×{w}", region.bounds())));
    }
    if class >= output.num_classes() {
        return Err(Error::ClassOutOfRange { class, num_classes: output.num_classes() });
    }
    let p = &output.probabilities.data()[class * h * w..(class + 1) * h * w];
    let total = region.flat_indices().fold(0.0, |acc, i| acc + p[i]);
    Ok(total / region.len() as f64)
}

/// `ReLU(Σ_k α_k A^k)` for `K × h × w` activations.
pub fn weighted_combination(activations: &Tensor, weights: &[f64]) -> Result<Tensor> {
    let (k, h, w) = activations.chw()?;
    if weights.len() != k {
        return Err(Error::shape("weighted_combination", format!("{} weights for {k} channels", weights.len())));
    }
    let plane = h * w;
    let a = activations.data();
    let mut out = vec![0.0; plane];
    for (ch, &alpha) in weights.iter().enumerate() {
        for (o, &v) in out.iter_mut().zip(&a[ch * plane..(ch + 1) * plane]) {
            *o += alpha * v;
        }
    }
    Ok(ops::relu(&Tensor::checked("weighted_combination", vec![h, w], out)?))
}

/// ReLU, corner-aligned bilinear upsampling to `target`, then min-max
/// normalisation. An identically zero map stays zero.
pub fn postprocess_saliency(raw: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let rectified = ops::relu(raw);
    let upsampled = ops::bilinear_upsample(&rectified, target)?;
    Ok(ops::min_max_normalize(&upsampled))
}

/// Runs one method with default options.
pub fn explain(
    model: &Model,
    image: &Tensor,
    method: Method,
    class: usize,
    region: &PixelSet,
    layer: &str,
) -> Result<(SaliencyMap, CamIntermediates)> {
    explain_with(model, image, method, class, region, layer, CamOptions::default())
}

pub fn explain_with(
    model: &Model,
    image: &Tensor,
    method: Method,
    class: usize,
    region: &PixelSet,
    layer: &str,
    options: CamOptions,
) -> Result<(SaliencyMap, CamIntermediates)> {
    let req = CamRequest::new(model, image, class, region, layer, options)?;
    match method {
        Method::GradCam => gradient::run(&req, Method::GradCam),
        Method::GradCamPlusPlus => gradient::run(&req, Method::GradCamPlusPlus),
        Method::XGradCam => gradient::run(&req, Method::XGradCam),
        Method::ScoreCam => score::run(&req),
        Method::AblationCam => ablation::run(&req),
        Method::EigenCam => eigen::run(&req),
    }
}
