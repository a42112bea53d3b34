//! Dataset-level evaluation: every explainer × methodology on every image.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    e_xai, perturb_image, pixel_entropy_map, segmentation_score, threshold_values, EvalReport, FillRule, Methodology,
    PerturbationPolicy, ReportRow, RowError, ThresholdRule,
};
use crate::cam::{explain_with, postprocess_saliency, CamOptions, Method};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::pixels::PixelSet;
use crate::segnet::Model;
use crate::tensor::Tensor;

/// Source of the saliency map being evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExplainerKind {
    Cam(Method),
    /// Indicator of the dilated target region. A sanity upper reference.
    Oracle,
    /// Seeded smooth noise. A sanity lower reference.
    Random,
}

impl ExplainerKind {
    pub fn id(self) -> &'static str {
        match self {
            ExplainerKind::Cam(m) => m.id(),
            ExplainerKind::Oracle => "oracle-saliency",
            ExplainerKind::Random => "random-saliency",
        }
    }

    /// The six CAM methods.
    pub fn all_cams() -> Vec<ExplainerKind> {
        Method::ALL.into_iter().map(ExplainerKind::Cam).collect()
    }
}

impl fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle-saliency" => Ok(ExplainerKind::Oracle),
            "random-saliency" => Ok(ExplainerKind::Random),
            _ => s.parse().map(ExplainerKind::Cam),
        }
    }
}

/// Region `M` whose score the CAM explains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RegionMode {
    /// Pixels the model assigns to the class.
    #[default]
    Predicted,
    /// Ground-truth pixels of the class.
    GroundTruth,
    /// Fixed rectangle `(x, y, width, height)`.
    Rect(usize, usize, usize, usize),
}

/// Target set `T` over which scores and entropies are measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TargetMode {
    #[default]
    GroundTruth,
    Predicted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub explainers: Vec<ExplainerKind>,
    pub methodologies: Vec<Methodology>,
    pub threshold: ThresholdRule,
    pub class: usize,
    /// Inspected layer; `None` uses the network default.
    pub layer: Option<String>,
    pub region: RegionMode,
    pub target: TargetMode,
    pub fill: FillRule,
    /// Images evaluated concurrently. Output order never depends on it.
    pub workers: usize,
    /// Seed of the random reference saliency.
    pub seed: u64,
    /// Chebyshev radius of the oracle saliency around `T`.
    pub oracle_dilation: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            explainers: ExplainerKind::all_cams(),
            methodologies: Methodology::ALL.to_vec(),
            threshold: ThresholdRule::default(),
            class: 1,
            layer: None,
            region: RegionMode::Predicted,
            target: TargetMode::GroundTruth,
            fill: FillRule::Zeros,
            workers: 1,
            seed: 0,
            oracle_dilation: 1,
        }
    }
}

/// Name of the `index`-th image in reports.
pub fn image_name(index: usize) -> String {
    format!("img_{index:04}")
}

/// Evaluates every explainer under every methodology. Images are processed
/// on `workers` threads and merged back in dataset order; failing
/// (image, explainer) pairs are recorded as errors and left out of the means.
pub fn run_benchmark(model: &Model, dataset: &Dataset, config: &BenchmarkConfig) -> Result<EvalReport> {
    config.threshold.validate()?;
    if config.workers == 0 {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    if config.class >= model.num_classes() {
        return Err(Error::ClassOutOfRange { class: config.class, num_classes: model.num_classes() });
    }
    let layer = config.layer.clone().unwrap_or_else(|| model.config().default_layer().to_string());
    if !model.has_layer(&layer) {
        return Err(Error::UnknownLayer(layer));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let per_image: Vec<(Vec<ReportRow>, Vec<RowError>)> = pool.install(|| {
        dataset
            .samples()
            .par_iter()
            .enumerate()
            .map(|(i, sample)| evaluate_image(model, i, sample, &layer, config))
            .collect()
    });
    let (mut rows, mut errors) = (Vec::new(), Vec::new());
    for (r, e) in per_image {
        rows.extend(r);
        errors.extend(e);
    }
    EvalReport::from_rows(rows, errors)
}

fn evaluate_image(
    model: &Model,
    index: usize,
    sample: &Sample,
    layer: &str,
    config: &BenchmarkConfig,
) -> (Vec<ReportRow>, Vec<RowError>) {
    let name = image_name(index);
    let fail = |method: &str, e: Error| RowError { image: name.clone(), method: method.to_string(), message: e.to_string() };
    let baseline = match Baseline::new(model, sample, config) {
        Ok(b) => b,
        Err(e) => {
            let message = e.to_string();
            let errors = config
                .explainers
                .iter()
                .map(|x| RowError { image: name.clone(), method: x.id().to_string(), message: message.clone() })
                .collect();
            return (Vec::new(), errors);
        }
    };
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &explainer in &config.explainers {
        let result = saliency(model, index, sample, explainer, &baseline, layer, config)
            .and_then(|values| threshold_values(&values, config.threshold))
            .and_then(|phi| {
                config
                    .methodologies
                    .iter()
                    .map(|&mode| measure(model, sample, &name, explainer, mode, &phi, &baseline, config))
                    .collect::<Result<Vec<_>>>()
            });
        match result {
            Ok(r) => rows.extend(r),
            Err(e) => errors.push(fail(explainer.id(), e)),
        }
    }
    (rows, errors)
}

/// Unperturbed quantities of one image.
struct Baseline {
    region: PixelSet,
    target: PixelSet,
    ss: f64,
    exai: (f64, f64),
}

impl Baseline {
    fn new(model: &Model, sample: &Sample, config: &BenchmarkConfig) -> Result<Self> {
        let (h, w) = sample.size();
        let output = model.forward(&sample.image)?;
        let truth = PixelSet::from_bitmap(h, w, &sample.mask.iter().map(|&m| m as usize == config.class).collect::<Vec<_>>())?;
        let predicted = output.predicted_pixels(config.class);
        let region = match config.region {
            RegionMode::Predicted => predicted.clone(),
            RegionMode::GroundTruth => truth.clone(),
            RegionMode::Rect(x, y, rw, rh) => PixelSet::rect(h, w, x, y, rw, rh),
        };
        let target = match config.target {
            TargetMode::GroundTruth => truth,
            TargetMode::Predicted => predicted,
        };
        if target.is_empty() {
            return Err(Error::EmptyRegion("target set"));
        }
        let ss = segmentation_score(&output, &target, config.class)?;
        let ex = e_xai(&pixel_entropy_map(&output.probabilities)?, &target)?;
        Ok(Baseline { region, target, ss, exai: (ex.mean, ex.sum) })
    }
}

fn saliency(
    model: &Model,
    index: usize,
    sample: &Sample,
    explainer: ExplainerKind,
    baseline: &Baseline,
    layer: &str,
    config: &BenchmarkConfig,
) -> Result<Tensor> {
    let (h, w) = sample.size();
    match explainer {
        ExplainerKind::Cam(method) => {
            // images already run in parallel; keep channel passes sequential
            let options = CamOptions { parallel: false };
            explain_with(model, &sample.image, method, config.class, &baseline.region, layer, options)
                .map(|(map, _)| map.values)
        }
        ExplainerKind::Oracle => {
            let phi = baseline.target.dilate(config.oracle_dilation);
            let bitmap = phi.to_bitmap();
            Tensor::from_fn(&[h, w], |i| if bitmap[i] { 1.0 } else { 0.0 })
        }
        ExplainerKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(index as u64);
            let coarse = Tensor::from_fn(&[8, 8], |_| rng.gen::<f64>())?;
            postprocess_saliency(&coarse, (h, w))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn measure(
    model: &Model,
    sample: &Sample,
    name: &str,
    explainer: ExplainerKind,
    mode: Methodology,
    phi: &PixelSet,
    baseline: &Baseline,
    config: &BenchmarkConfig,
) -> Result<ReportRow> {
    let policy = PerturbationPolicy { mode, fill: config.fill.clone() };
    let perturbed = perturb_image(&sample.image, phi, &baseline.target, &policy)?;
    let output = model.forward(&perturbed)?;
    let ss = segmentation_score(&output, &baseline.target, config.class)?;
    let ex = e_xai(&pixel_entropy_map(&output.probabilities)?, &baseline.target)?;
    ReportRow::new(name.to_string(), explainer.id().to_string(), mode, baseline.ss, ss, baseline.exai, (ex.mean, ex.sum))
}
