use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Three-stop linear ramp: blue at 0, green at 0.5, red at 1. Returns RGB in `[0, 1]`.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.5 {
        let t = v / 0.5;
        [0.0, t, 1.0 - t]
    } else {
        let t = (v - 0.5) / 0.5;
        [t, 1.0 - t, 0.0]
    }
}

/// Blends `image` (`3 × H × W`) with the colour-mapped `saliency` (`H × W`):
/// `(1 − αv)·image + αv·colormap(v)`.
pub fn render_overlay(image: &Tensor, saliency: &Tensor, alpha: f64) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::shape("render_overlay", format!("image needs 3 channels, got {c}")));
    }
    if saliency.shape() != [h, w] {
        return Err(Error::shape("render_overlay", format!("saliency {:?} vs image {h}×{w}", saliency.shape())));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} not in [0, 1]")));
    }
    let plane = h * w;
    let mut out = image.data().to_vec();
    for (px, &v) in saliency.data().iter().enumerate() {
        let weight = alpha * v;
        let color = colormap(v);
        for ch in 0..3 {
            let i = ch * plane + px;
            out[i] = (1.0 - weight) * out[i] + weight * color[ch];
        }
    }
    Tensor::new(vec![3, h, w], out)
}
