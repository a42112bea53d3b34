//! Seg-Grad-CAM, Seg-Grad-CAM++ and Seg-XGrad-CAM.

use super::{weighted_combination, CamIntermediates, CamOptions, CamRequest, Method, SaliencyMap, EPSILON};
use crate::error::Result;
use crate::pixels::PixelSet;
use crate::segnet::{FeatureTap, Model};
use crate::tensor::Tensor;

/// `α_k = (1/N) Σ_{u,v} G^k_{u,v}`.
pub fn grad_cam_weights(tap: &FeatureTap) -> Result<Vec<f64>> {
    let (k, h, w) = tap.gradients.chw()?;
    let plane = h * w;
    let g = tap.gradients.data();
    Ok((0..k)
        .map(|ch| g[ch * plane..(ch + 1) * plane].iter().fold(0.0, |acc, v| acc + v) / plane as f64)
        .collect())
}

/// Grad-CAM++ weights and per-pixel coefficients.
///
/// `w = G² / (2G² + (Σ_{u,v} A)·G³ + ε)`, with `w = 1/N` wherever
/// `2G² + (Σ_{u,v} A)·G³` is below `ε`; then `α_k = Σ_{u,v} w · ReLU(G)`.
pub fn grad_cam_pp_weights(tap: &FeatureTap) -> Result<(Vec<f64>, Tensor)> {
    let (k, h, w) = tap.gradients.chw()?;
    let plane = h * w;
    let (a, g) = (tap.activations.data(), tap.gradients.data());
    let mut coeffs = vec![0.0; k * plane];
    let mut alphas = Vec::with_capacity(k);
    for ch in 0..k {
        let range = ch * plane..(ch + 1) * plane;
        let activation_sum = a[range.clone()].iter().fold(0.0, |acc, v| acc + v);
        let mut alpha = 0.0;
        for i in range {
            let g2 = g[i] * g[i];
            let g3 = g2 * g[i];
            let denom = 2.0 * g2 + activation_sum * g3;
            let coeff = if denom < EPSILON { 1.0 / plane as f64 } else { g2 / (denom + EPSILON) };
            coeffs[i] = coeff;
            alpha += coeff * g[i].max(0.0);
        }
        alphas.push(alpha);
    }
    Ok((alphas, Tensor::checked("grad_cam_pp", vec![k, h, w], coeffs)?))
}

/// `α_k = Σ_{u,v} (A^k_{u,v} / (Σ_{u,v} A^k + ε)) · G^k_{u,v}`.
pub fn xgrad_cam_weights(tap: &FeatureTap) -> Result<Vec<f64>> {
    let (k, h, w) = tap.gradients.chw()?;
    let plane = h * w;
    let (a, g) = (tap.activations.data(), tap.gradients.data());
    Ok((0..k)
        .map(|ch| {
            let range = ch * plane..(ch + 1) * plane;
            let denom = a[range.clone()].iter().fold(0.0, |acc, v| acc + v) + EPSILON;
            range.fold(0.0, |acc, i| acc + a[i] / denom * g[i])
        })
        .collect())
}

/// Raw map and intermediates of a gradient method applied to an existing tap.
pub fn combine_tap(tap: &FeatureTap, method: Method) -> Result<(Tensor, CamIntermediates)> {
    let mut inter = CamIntermediates::default();
    inter.channel_weights = match method {
        Method::GradCam => grad_cam_weights(tap)?,
        Method::GradCamPlusPlus => {
            let (alphas, coeffs) = grad_cam_pp_weights(tap)?;
            inter.pixel_coefficients = Some(coeffs);
            alphas
        }
        Method::XGradCam => xgrad_cam_weights(tap)?,
        other => unreachable!("{other} is not gradient-based"),
    };
    let raw = weighted_combination(&tap.activations, &inter.channel_weights)?;
    Ok((raw, inter))
}

pub(super) fn run(req: &CamRequest, method: Method) -> Result<(SaliencyMap, CamIntermediates)> {
    let tap = req.model.tap_forward_backward(req.image, req.class, req.region, req.layer)?;
    let (raw, inter) = combine_tap(&tap, method)?;
    Ok((req.finish(method, &raw)?, inter))
}

fn run_one(model: &Model, image: &Tensor, class: usize, region: &PixelSet, layer: &str, method: Method) -> Result<SaliencyMap> {
    let req = CamRequest::new(model, image, class, region, layer, CamOptions::default())?;
    run(&req, method).map(|(map, _)| map)
}

pub fn seg_grad_cam(model: &Model, image: &Tensor, class: usize, region: &PixelSet, layer: &str) -> Result<SaliencyMap> {
    run_one(model, image, class, region, layer, Method::GradCam)
}

pub fn seg_grad_cam_pp(model: &Model, image: &Tensor, class: usize, region: &PixelSet, layer: &str) -> Result<SaliencyMap> {
    run_one(model, image, class, region, layer, Method::GradCamPlusPlus)
}

pub fn seg_xgrad_cam(model: &Model, image: &Tensor, class: usize, region: &PixelSet, layer: &str) -> Result<SaliencyMap> {
    run_one(model, image, class, region, layer, Method::XGradCam)
}
