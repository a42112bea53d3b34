//! Datasets, synthetic scene generation and image file handling.

mod netpbm;
mod overlay;
mod synth;

use std::fs;
use std::path::Path;

pub use netpbm::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, quantize, read_mask, read_pgm, read_ppm, write_mask,
    write_pgm, write_ppm, GrayImage,
};
pub use overlay::{colormap, render_overlay};
pub use synth::{generate_synthetic, Rect, SyntheticSceneConfig};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::tensor::Tensor;

/// Writes the report CSV. An empty report gives a header-only file.
pub fn export_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    report.export(path)
}

/// One image with its per-pixel class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `3 × H × W`, values in `[0, 1]`.
    pub image: Tensor,
    /// Row-major class labels.
    pub mask: Vec<u8>,
    /// Generating rectangles, when the sample is synthetic and in memory.
    pub rects: Vec<Rect>,
}

impl Sample {
    pub fn new(image: Tensor, mask: Vec<u8>) -> Result<Self> {
        let (_, h, w) = image.chw()?;
        if mask.len() != h * w {
            return Err(Error::shape("Sample", format!("mask has {} labels for a {h}×{w} image", mask.len())));
        }
        Ok(Sample { image, mask, rects: Vec::new() })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.mask.iter().map(|&l| l as usize).collect()
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let size = first.size();
            if let Some(bad) = samples.iter().position(|s| s.size() != size) {
                return Err(Error::shape("Dataset", format!("sample {bad} differs in size from sample 0")));
            }
        }
        Ok(Dataset { samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if let Some(&bad) = s.mask.iter().find(|&&l| l as usize >= num_classes) {
                return Err(Error::InvalidArgument(format!("sample {i} has label {bad} >= {num_classes}")));
            }
        }
        Ok(())
    }

    /// Splits off the samples from `at` onward.
    pub fn split_at(mut self, at: usize) -> (Dataset, Dataset) {
        let tail = self.samples.split_off(at.min(self.samples.len()));
        (self, Dataset { samples: tail })
    }

    /// Per-channel mean over every pixel of every image.
    pub fn channel_means(&self) -> Vec<f64> {
        let Some(first) = self.samples.first() else { return Vec::new() };
        let (c, h, w) = first.image.chw().expect("dataset images are C×H×W");
        let plane = h * w;
        let mut sums = vec![0.0; c];
        for s in &self.samples {
            for (ch, sum) in sums.iter_mut().enumerate() {
                *sum += s.image.data()[ch * plane..(ch + 1) * plane].iter().fold(0.0, |a, v| a + v);
            }
        }
        let n = (self.samples.len() * plane) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    /// Writes `img_NNNN.ppm` and `mask_NNNN.pgm` pairs into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, s) in self.samples.iter().enumerate() {
            write_ppm(dir.join(format!("img_{i:04}.ppm")), &s.image)?;
            let (h, w) = s.size();
            write_mask(dir.join(format!("mask_{i:04}.pgm")), h, w, &s.mask)?;
        }
        Ok(())
    }

    /// Reads the `img_NNNN.ppm` / `mask_NNNN.pgm` pairs written by
    /// [`Dataset::save_dir`], in index order.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let mut indices = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(idx) = name.strip_prefix("img_").and_then(|r| r.strip_suffix(".ppm")) {
                if let Ok(i) = idx.parse::<usize>() {
                    indices.push((i, idx.to_string()));
                }
            }
        }
        indices.sort();
        let samples = indices
            .into_iter()
            .map(|(_, idx)| {
                let image = read_ppm(dir.join(format!("img_{idx}.ppm")))?;
                let mask = read_mask(dir.join(format!("mask_{idx}.pgm")))?;
                let (_, h, w) = image.chw()?;
                if (mask.height, mask.width) != (h, w) {
                    return Err(Error::shape("load_dir", format!("mask {idx} size differs from its image")));
                }
                Sample::new(image, mask.pixels)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples)
    }
}
