//! Seg-Ablation-CAM: channel weights from the relative score drop when a
//! channel of the inspected layer is zeroed during the forward pass.

use rayon::prelude::*;

use super::{region_score, weighted_combination, CamIntermediates, CamOptions, CamRequest, Method, SaliencyMap, EPSILON};
use crate::error::{Error, Result};
use crate::pixels::PixelSet;
use crate::segnet::{ForwardHooks, Model};
use crate::tensor::Tensor;

/// Region scores below this make the relative drop meaningless.
pub const MIN_BASELINE_SCORE: f64 = 1e-6;

/// Returns `(α, y^c_k)` with `α_k = (y^c − y^c_k) / (y^c + ε)`.
pub fn ablation_weights(
    model: &Model,
    image: &Tensor,
    class: usize,
    region: &PixelSet,
    layer: &str,
    parallel: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let trace = model.trace(image, ForwardHooks::default())?;
    let channels = trace
        .layers
        .get(layer)
        .map(|&n| trace.graph.value(n).shape()[0])
        .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
    let baseline = region_score(&model.forward(image)?, region, class)?;
    if baseline < MIN_BASELINE_SCORE {
        return Err(Error::DegenerateBaseline { score: baseline });
    }
    let ablated = |k: usize| -> Result<f64> {
        let hooks = ForwardHooks { ablate: Some((layer, k)), ..Default::default() };
        region_score(&model.forward_with(image, hooks)?, region, class)
    };
    let scores: Vec<f64> = if parallel {
        (0..channels).into_par_iter().map(ablated).collect::<Result<_>>()?
    } else {
        (0..channels).map(ablated).collect::<Result<_>>()?
    };
    let weights = scores.iter().map(|&s| (baseline - s) / (baseline + EPSILON)).collect();
    Ok((weights, scores))
}

pub(super) fn run(req: &CamRequest) -> Result<(SaliencyMap, CamIntermediates)> {
    let (weights, scores) =
        ablation_weights(req.model, req.image, req.class, req.region, req.layer, req.options.parallel)?;
    let raw = weighted_combination(&req.activations()?, &weights)?;
    let inter = CamIntermediates { channel_weights: weights, ablation_scores: Some(scores), ..Default::default() };
    Ok((req.finish(Method::AblationCam, &raw)?, inter))
}

pub fn seg_ablation_cam(model: &Model, image: &Tensor, class: usize, region: &PixelSet, layer: &str) -> Result<SaliencyMap> {
    let req = CamRequest::new(model, image, class, region, layer, CamOptions::default())?;
    run(&req).map(|(map, _)| map)
}
