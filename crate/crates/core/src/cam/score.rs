//! Seg-Score-CAM: channel weights from the increase in confidence when the
//! input is masked by each upsampled, normalised feature map.

use rayon::prelude::*;

use super::{region_score, weighted_combination, CamIntermediates, CamOptions, CamRequest, Method, SaliencyMap};
use crate::error::Result;
use crate::ops;
use crate::pixels::PixelSet;
use crate::segnet::Model;
use crate::tensor::Tensor;

/// `C(A^k) = s_k − b` for every channel, where `s_k` is the region score of
/// the input masked by normalised upsampled `A^k` and `b` the score of an
/// all-zero image.
pub fn score_cam_confidences(
    model: &Model,
    image: &Tensor,
    activations: &Tensor,
    class: usize,
    region: &PixelSet,
    parallel: bool,
) -> Result<Vec<f64>> {
    let (k, _, _) = activations.chw()?;
    let (c, h, w) = image.chw()?;
    let baseline = region_score(&model.forward(&Tensor::zeros(&[c, h, w]))?, region, class)?;
    let channel_score = |ch: usize| -> Result<f64> {
        let up = ops::bilinear_upsample(&activations.channel(ch)?, (h, w))?;
        let mask = ops::min_max_normalize(&up);
        let plane = h * w;
        let masked = Tensor::from_fn(&[c, h, w], |i| image.data()[i] * mask.data()[i % plane])?;
        Ok(region_score(&model.forward(&masked)?, region, class)? - baseline)
    };
    if parallel {
        (0..k).into_par_iter().map(channel_score).collect()
    } else {
        (0..k).map(channel_score).collect()
    }
}

pub(crate) fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total = exps.iter().fold(0.0, |acc, v| acc + v);
    exps.into_iter().map(|e| e / total).collect()
}

pub(super) fn run(req: &CamRequest) -> Result<(SaliencyMap, CamIntermediates)> {
    let activations = req.activations()?;
    let confidences =
        score_cam_confidences(req.model, req.image, &activations, req.class, req.region, req.options.parallel)?;
    let weights = softmax(&confidences);
    let raw = weighted_combination(&activations, &weights)?;
    let inter = CamIntermediates { channel_weights: weights, confidences: Some(confidences), ..Default::default() };
    Ok((req.finish(Method::ScoreCam, &raw)?, inter))
}

pub fn seg_score_cam(model: &Model, image: &Tensor, class: usize, region: &PixelSet, layer: &str) -> Result<SaliencyMap> {
    let req = CamRequest::new(model, image, class, region, layer, CamOptions::default())?;
    run(&req).map(|(map, _)| map)
}
