#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segcam::pixels::PixelSet;
use segcam::segnet::{Model, NetworkConfig};
use segcam::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_config(seed: u64) -> NetworkConfig {
    NetworkConfig {
        input_channels: 3,
        num_classes: 2,
        encoder_widths: vec![4, 6],
        decoder_widths: vec![6, 4],
        height: 12,
        width: 12,
        seed,
    }
}

pub fn small_model(seed: u64) -> Model {
    Model::build(small_config(seed)).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, config: &NetworkConfig) -> Tensor {
    Tensor::from_fn(&[config.input_channels, config.height, config.width], |_| rng.gen_range(0.0..1.0)).unwrap()
}

pub fn random_region(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> PixelSet {
    let mut pixels: Vec<(usize, usize)> =
        (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).filter(|_| rng.gen_bool(p)).collect();
    if pixels.is_empty() {
        pixels.push((h / 2, w / 2));
    }
    PixelSet::new(h, w, pixels).unwrap()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi)).unwrap()
}

/// Mean class-`class` probability over `region`, recomputed from logits.
pub fn mean_probability(model: &Model, image: &Tensor, class: usize, region: &PixelSet) -> f64 {
    let out = model.forward(image).unwrap();
    let (h, w) = out.size();
    let plane = h * w;
    let l = out.num_classes();
    let logits = out.logits.data();
    let mut total = 0.0;
    for p in region.flat_indices() {
        let m = (0..l).map(|c| logits[c * plane + p]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..l).map(|c| (logits[c * plane + p] - m).exp()).sum();
        total += (logits[class * plane + p] - m).exp() / z;
    }
    total / region.len() as f64
}

pub fn argmax(values: &[f64]) -> usize {
    values.iter().enumerate().fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}
