//! Evaluation protocol: thresholding, the three perturbation methodologies,
//! segmentation score, pixel-wise entropy and benchmark aggregation.

mod benchmark;
mod report;

use std::fmt;
use std::str::FromStr;

pub use benchmark::{image_name, run_benchmark, BenchmarkConfig, ExplainerKind, RegionMode, TargetMode};
pub use report::{format_sig6, parse_report_csv, EvalReport, MeanRow, ReportRow, RowError, CSV_HEADER};

use crate::cam::SaliencyMap;
use crate::error::{Error, Result};
use crate::pixels::PixelSet;
use crate::segnet::SegmentationOutput;
use crate::tensor::Tensor;

/// How a saliency map is turned into the highlighted set Φ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdRule {
    /// Keep pixels with value `>= τ`.
    Absolute(f64),
    /// Keep the `⌈q·H·W⌉` highest-valued pixels, earlier row-major index first on ties.
    TopQuantile(f64),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Absolute(0.5)
    }
}

impl fmt::Display for ThresholdRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdRule::Absolute(t) => write!(f, "{t}"),
            ThresholdRule::TopQuantile(q) => write!(f, "q:{q}"),
        }
    }
}

impl FromStr for ThresholdRule {
    type Err = Error;

    /// `0.5` for an absolute threshold, `q:0.25` for a top quantile.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |v: &str| v.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad threshold `{s}`")));
        let rule = match s.strip_prefix("q:") {
            Some(q) => ThresholdRule::TopQuantile(parse(q)?),
            None => ThresholdRule::Absolute(parse(s)?),
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl ThresholdRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdRule::Absolute(t) if !(0.0..=1.0).contains(&t) => {
                Err(Error::InvalidArgument(format!("threshold τ = {t} not in [0, 1]")))
            }
            ThresholdRule::TopQuantile(q) if !(q > 0.0 && q <= 1.0) => {
                Err(Error::InvalidArgument(format!("quantile q = {q} not in (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

/// Highlighted set Φ of a saliency map.
pub fn threshold_saliency(map: &SaliencyMap, rule: ThresholdRule) -> Result<PixelSet> {
    threshold_values(&map.values, rule)
}

pub fn threshold_values(values: &Tensor, rule: ThresholdRule) -> Result<PixelSet> {
    rule.validate()?;
    let (h, w) = values.hw()?;
    let v = values.data();
    match rule {
        ThresholdRule::Absolute(tau) => {
            let bitmap: Vec<bool> = v.iter().map(|&x| x >= tau).collect();
            PixelSet::from_bitmap(h, w, &bitmap)
        }
        ThresholdRule::TopQuantile(q) => {
            let keep = ((q * (h * w) as f64).ceil() as usize).min(h * w);
            let mut order: Vec<usize> = (0..h * w).collect();
            // stable sort keeps row-major order among equal values
            order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
            PixelSet::new(h, w, order[..keep].iter().map(|&i| (i / w, i % w)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Methodology {
    /// Keep Ω ∖ Φ.
    BackgroundOnly,
    /// Keep Φ.
    HighlightedOnly,
    /// Keep Φ ∪ T.
    HighlightedPlusTarget,
}

impl Methodology {
    pub const ALL: [Methodology; 3] =
        [Methodology::BackgroundOnly, Methodology::HighlightedOnly, Methodology::HighlightedPlusTarget];

    pub fn id(self) -> &'static str {
        match self {
            Methodology::BackgroundOnly => "m1",
            Methodology::HighlightedOnly => "m2",
            Methodology::HighlightedPlusTarget => "m3",
        }
    }
}

impl fmt::Display for Methodology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Methodology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Methodology::ALL
            .into_iter()
            .find(|m| m.id() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown methodology `{s}` (expected m1, m2 or m3)")))
    }
}

/// Value given to removed pixels.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum FillRule {
    #[default]
    Zeros,
    /// One value per channel, typically the dataset mean.
    ChannelMean(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationPolicy {
    pub mode: Methodology,
    pub fill: FillRule,
}

impl PerturbationPolicy {
    pub fn new(mode: Methodology) -> Self {
        PerturbationPolicy { mode, fill: FillRule::Zeros }
    }

    pub fn kept_set(&self, highlighted: &PixelSet, target: &PixelSet) -> Result<PixelSet> {
        match self.mode {
            Methodology::BackgroundOnly => Ok(highlighted.complement()),
            Methodology::HighlightedOnly => Ok(highlighted.clone()),
            Methodology::HighlightedPlusTarget => highlighted.union(target),
        }
    }
}

/// Copies kept pixels from `image` and fills the rest.
pub fn perturb_image(
    image: &Tensor,
    highlighted: &PixelSet,
    target: &PixelSet,
    policy: &PerturbationPolicy,
) -> Result<Tensor> {
    let (c, h, w) = image.chw()?;
    for set in [highlighted, target] {
        if set.bounds() != (h, w) {
            return Err(Error::shape("perturb_image", format!("pixel set bounds {:?} vs image {h}×{w}", set.bounds())));
        }
    }
    let fill: Vec<f64> = match &policy.fill {
        FillRule::Zeros => vec![0.0; c],
        FillRule::ChannelMean(m) if m.len() == c => m.clone(),
        FillRule::ChannelMean(m) => {
            return Err(Error::shape("perturb_image", format!("{} fill values for {c} channels", m.len())))
        }
    };
    let kept = policy.kept_set(highlighted, target)?.to_bitmap();
    let plane = h * w;
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if kept[i % plane] { v } else { fill[i / plane] })
        .collect();
    Tensor::new(vec![c, h, w], data)
}

/// Mean class-`class` softmax probability over `region`.
pub fn segmentation_score(output: &SegmentationOutput, region: &PixelSet, class: usize) -> Result<f64> {
    crate::cam::region_score(output, region, class)
}

/// Normalised Shannon entropy per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyMap {
    /// `H × W`, values in `[0, 1]`.
    pub values: Tensor,
    pub num_classes: usize,
}

/// `E = −(1/ln L) Σ_l P ln P` per pixel, with `0·ln 0 = 0`.
pub fn pixel_entropy_map(probabilities: &Tensor) -> Result<EntropyMap> {
    let (l, h, w) = probabilities.chw()?;
    if l < 2 {
        return Err(Error::shape("pixel_entropy_map", format!("need at least 2 classes, got {l}")));
    }
    let plane = h * w;
    let p = probabilities.data();
    let norm = (l as f64).ln();
    let mut out = Vec::with_capacity(plane);
    for px in 0..plane {
        let mut sum = 0.0;
        let mut acc = 0.0;
        for c in 0..l {
            let v = p[c * plane + px];
            if v < 0.0 {
                return Err(Error::NotADistribution { row: px / w, col: px % w, sum: f64::NAN });
            }
            sum += v;
            if v > 0.0 {
                acc += v * v.ln();
            }
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::NotADistribution { row: px / w, col: px % w, sum });
        }
        out.push((-acc / norm).clamp(0.0, 1.0));
    }
    Ok(EntropyMap { values: Tensor::checked("pixel_entropy_map", vec![h, w], out)?, num_classes: l })
}

/// Entropy aggregated over the target set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExaiScore {
    /// Mean entropy over T (the reported figure).
    pub mean: f64,
    /// Raw sum over T.
    pub sum: f64,
}

pub fn e_xai(entropy: &EntropyMap, target: &PixelSet) -> Result<ExaiScore> {
    if target.is_empty() {
        return Err(Error::EmptyRegion("E_XAI target set"));
    }
    let (h, w) = entropy.values.hw()?;
    if target.bounds() != (h, w) {
        return Err(Error::shape("e_xai", format!("target bounds {:?} vs {h}×{w}", target.bounds())));
    }
    let v = entropy.values.data();
    let sum = target.flat_indices().fold(0.0, |acc, i| acc + v[i]);
    Ok(ExaiScore { mean: sum / target.len() as f64, sum })
}

/// `100·(baseline − perturbed)/baseline`.
pub fn percent_drop(baseline: f64, perturbed: f64) -> Result<f64> {
    check_baseline(baseline)?;
    Ok(100.0 * (baseline - perturbed) / baseline)
}

/// `100·(perturbed − baseline)/baseline`.
pub fn percent_increase(baseline: f64, perturbed: f64) -> Result<f64> {
    check_baseline(baseline)?;
    Ok(100.0 * (perturbed - baseline) / baseline)
}

/// The perturbed value implied by a baseline and a percent drop.
pub fn perturbed_from_drop(baseline: f64, drop_pct: f64) -> Result<f64> {
    check_baseline(baseline)?;
    Ok(baseline * (1.0 - drop_pct / 100.0))
}

fn check_baseline(baseline: f64) -> Result<()> {
    if baseline > 0.0 && baseline.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("percent change needs a positive baseline, got {baseline}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, values: Vec<f64>) -> SaliencyMap {
        SaliencyMap {
            values: Tensor::new(vec![h, w], values).unwrap(),
            method: "test".into(),
            layer_name: "dec0".into(),
            region: PixelSet::empty(h, w),
        }
    }

    #[test]
    fn absolute_threshold() {
        let m = map(1, 2, vec![0.2, 0.7]);
        assert_eq!(threshold_saliency(&m, ThresholdRule::Absolute(0.5)).unwrap().pixels(), [(0, 1)]);
        assert!(threshold_saliency(&m, ThresholdRule::Absolute(0.9)).unwrap().is_empty());
        assert!(threshold_saliency(&m, ThresholdRule::Absolute(1.1)).is_err());
        assert!(threshold_saliency(&m, ThresholdRule::TopQuantile(0.0)).is_err());
    }

    #[test]
    fn top_quantile_picks_max_and_breaks_ties_row_major() {
        let m = map(2, 2, vec![0.1, 0.9, 0.4, 0.3]);
        assert_eq!(threshold_saliency(&m, ThresholdRule::TopQuantile(0.25)).unwrap().pixels(), [(0, 1)]);
        let ties = map(2, 2, vec![0.5, 0.5, 0.5, 0.5]);
        assert_eq!(threshold_saliency(&ties, ThresholdRule::TopQuantile(0.5)).unwrap().pixels(), [(0, 0), (0, 1)]);
    }

    #[test]
    fn threshold_rule_parsing() {
        assert_eq!("0.3".parse::<ThresholdRule>().unwrap(), ThresholdRule::Absolute(0.3));
        assert_eq!("q:0.1".parse::<ThresholdRule>().unwrap(), ThresholdRule::TopQuantile(0.1));
        assert!("q:1.5".parse::<ThresholdRule>().is_err());
        assert!("abc".parse::<ThresholdRule>().is_err());
    }

    #[test]
    fn perturbation_identities() {
        let img = Tensor::from_fn(&[3, 3, 3], |i| i as f64 / 27.0).unwrap();
        let empty = PixelSet::empty(3, 3);
        let all = PixelSet::full(3, 3);
        let m1 = PerturbationPolicy::new(Methodology::BackgroundOnly);
        let m2 = PerturbationPolicy::new(Methodology::HighlightedOnly);
        assert_eq!(perturb_image(&img, &empty, &empty, &m1).unwrap(), img);
        assert_eq!(perturb_image(&img, &all, &empty, &m2).unwrap(), img);
        let phi = PixelSet::new(3, 3, [(0, 0), (1, 1)]).unwrap();
        let t = PixelSet::new(3, 3, [(1, 1), (2, 2)]).unwrap();
        let m3 = PerturbationPolicy::new(Methodology::HighlightedPlusTarget);
        assert_eq!(m3.kept_set(&phi, &t).unwrap().len(), 2 + 2 - 1);
        let out = perturb_image(&img, &phi, &t, &m3).unwrap();
        assert_eq!(out.data()[0], img.data()[0]);
        assert_eq!(out.data()[1], 0.0);
        let mean = PerturbationPolicy { mode: Methodology::HighlightedOnly, fill: FillRule::ChannelMean(vec![0.1, 0.2, 0.3]) };
        let out = perturb_image(&img, &phi, &t, &mean).unwrap();
        assert_eq!((out.data()[1], out.data()[10], out.data()[19]), (0.1, 0.2, 0.3));
        assert!(perturb_image(&img, &PixelSet::empty(2, 3), &t, &m1).is_err());
    }

    #[test]
    fn entropy_cases() {
        let uniform = Tensor::full(&[4, 2, 2], 0.25);
        let e = pixel_entropy_map(&uniform).unwrap();
        assert!(e.values.data().iter().all(|&v| (v - 1.0).abs() <= 1e-12));
        let one_hot = Tensor::new(vec![2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(pixel_entropy_map(&one_hot).unwrap().values.data(), [0.0, 0.0]);
        let p = Tensor::new(vec![2, 1, 1], vec![0.9, 0.1]).unwrap();
        let direct = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln()) / 2f64.ln();
        let got = pixel_entropy_map(&p).unwrap().values.data()[0];
        assert!((got - direct).abs() < 1e-15);
        assert!((got - 0.46900).abs() < 1e-5);
        let bad = Tensor::new(vec![2, 1, 1], vec![0.5, 0.6]).unwrap();
        assert!(matches!(pixel_entropy_map(&bad), Err(Error::NotADistribution { .. })));
    }

    #[test]
    fn exai_mean_and_sum() {
        let e = EntropyMap { values: Tensor::new(vec![1, 4], vec![0.2, 0.4, 0.6, 0.9]).unwrap(), num_classes: 2 };
        let t = PixelSet::new(1, 4, [(0, 0), (0, 1), (0, 2)]).unwrap();
        let s = e_xai(&e, &t).unwrap();
        assert!((s.mean - 0.4).abs() < 1e-15);
        assert!((s.sum - 1.2).abs() < 1e-15);
        assert!(e_xai(&e, &PixelSet::empty(1, 4)).is_err());
    }

    #[test]
    fn percent_arithmetic() {
        assert_eq!(percent_drop(0.5, 0.25).unwrap(), 50.0);
        assert_eq!(percent_drop(0.7, 0.7).unwrap(), 0.0);
        assert_eq!(percent_increase(0.5, 0.75).unwrap(), 50.0);
        assert!(percent_drop(0.0, 0.1).is_err());
        assert!(percent_increase(-1.0, 0.1).is_err());
    }
}
