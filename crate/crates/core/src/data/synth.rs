//! Synthetic "rooftop" scenes: bright rectangles on a value-noise background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MIN_FOREGROUND: f64 = 0.02;
const MAX_FOREGROUND: f64 = 0.60;
const MAX_ATTEMPTS: usize = 1000;
const NOISE_CELL: usize = 8;

/// Rectangle in pixel units; may extend past the image and is clipped when rasterised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSceneConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of rectangles per image.
    pub rects_per_image: (usize, usize),
    /// Inclusive range of rectangle side lengths.
    pub rect_size: (usize, usize),
    /// Background value noise lies in `[0, texture_amplitude]`.
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        SyntheticSceneConfig {
            height: 64,
            width: 64,
            rects_per_image: (1, 4),
            rect_size: (6, 20),
            texture_amplitude: 0.35,
            seed: 7,
        }
    }
}

impl SyntheticSceneConfig {
    fn validate(&self) -> Result<()> {
        let (rmin, rmax) = self.rects_per_image;
        let (smin, smax) = self.rect_size;
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.height == 0 || self.width == 0 {
            return fail("image size must be nonzero".into());
        }
        if rmin == 0 || rmin > rmax {
            return fail(format!("rectangle count range {rmin}..={rmax} must start at 1 or more"));
        }
        if smin == 0 || smin > smax {
            return fail(format!("rectangle size range {smin}..={smax} is empty"));
        }
        if !(0.0..=1.0).contains(&self.texture_amplitude) {
            return fail(format!("texture amplitude {} not in [0, 1]", self.texture_amplitude));
        }
        Ok(())
    }
}

/// Generates `count` scenes deterministically from `config.seed`.
///
/// Each scene has at least one rectangle and a foreground fraction in
/// `[2%, 60%]`; scenes outside that band are redrawn, and a config that
/// cannot meet it is an error.
pub fn generate_synthetic(config: &SyntheticSceneConfig, count: usize) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples = (0..count).map(|_| generate_scene(config, &mut rng)).collect::<Result<Vec<_>>>()?;
    Dataset::new(samples)
}

fn generate_scene(config: &SyntheticSceneConfig, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let (h, w) = (config.height, config.width);
    for _ in 0..MAX_ATTEMPTS {
        let n = rng.gen_range(config.rects_per_image.0..=config.rects_per_image.1);
        let rects: Vec<Rect> = (0..n)
            .map(|_| Rect {
                x: rng.gen_range(0..w),
                y: rng.gen_range(0..h),
                width: rng.gen_range(config.rect_size.0..=config.rect_size.1),
                height: rng.gen_range(config.rect_size.0..=config.rect_size.1),
            })
            .collect();
        let mask = rasterize(h, w, &rects);
        let fraction = mask.iter().filter(|&&l| l == 1).count() as f64 / (h * w) as f64;
        if !(MIN_FOREGROUND..=MAX_FOREGROUND).contains(&fraction) {
            continue;
        }
        let image = paint(config, rng, &rects, &mask)?;
        return Ok(Sample { image, mask, rects });
    }
    Err(Error::InvalidArgument(format!(
        "no scene with foreground fraction in [{MIN_FOREGROUND}, {MAX_FOREGROUND}] after {MAX_ATTEMPTS} attempts"
    )))
}

fn rasterize(h: usize, w: usize, rects: &[Rect]) -> Vec<u8> {
    let mut mask = vec![0u8; h * w];
    for r in rects {
        for row in r.y..(r.y + r.height).min(h) {
            mask[row * w + r.x..row * w + (r.x + r.width).min(w)].fill(1);
        }
    }
    mask
}

/// Bilinearly interpolated lattice noise in `[0, 1]`.
fn value_noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gh = h / NOISE_CELL + 2;
    let gw = w / NOISE_CELL + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (gy, ty) = (y / NOISE_CELL, smooth((y % NOISE_CELL) as f64 / NOISE_CELL as f64));
        for x in 0..w {
            let (gx, tx) = (x / NOISE_CELL, smooth((x % NOISE_CELL) as f64 / NOISE_CELL as f64));
            let at = |r: usize, c: usize| lattice[r * gw + c];
            let top = at(gy, gx) + tx * (at(gy, gx + 1) - at(gy, gx));
            let bottom = at(gy + 1, gx) + tx * (at(gy + 1, gx + 1) - at(gy + 1, gx));
            out.push(top + ty * (bottom - top));
        }
    }
    out
}

fn paint(config: &SyntheticSceneConfig, rng: &mut ChaCha8Rng, rects: &[Rect], mask: &[u8]) -> Result<Tensor> {
    let (h, w) = (config.height, config.width);
    let plane = h * w;
    let noise = value_noise(h, w, rng);
    const GROUND: [f64; 3] = [0.20, 0.32, 0.16];
    const TINT: [f64; 3] = [0.8, 1.0, 0.7];
    let mut data = vec![0.0; 3 * plane];
    for px in 0..plane {
        let grain = rng.gen_range(-0.03..0.03);
        for ch in 0..3 {
            data[ch * plane + px] = GROUND[ch] + config.texture_amplitude * noise[px] * TINT[ch] + grain;
        }
    }
    // later rectangles paint over earlier ones
    for r in rects {
        let level = rng.gen_range(0.60..0.95);
        let roof = [level, level * 0.88, level * 0.80];
        for row in r.y..(r.y + r.height).min(h) {
            for col in r.x..(r.x + r.width).min(w) {
                let px = row * w + col;
                debug_assert_eq!(mask[px], 1);
                let grain = rng.gen_range(-0.04..0.04);
                for ch in 0..3 {
                    data[ch * plane + px] = roof[ch] + grain;
                }
            }
        }
    }
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(vec![3, h, w], data)
}
