//! Finite-difference verification of every backward rule and of the layer
//! taps of a small network.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{DiffGraph, NodeId, Primitive};
use crate::ops::ConvParams;
use crate::pixels::PixelSet;
use crate::segnet::{ForwardHooks, Model, NetworkConfig};
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const TAP_TOLERANCE: f64 = 1e-5;
/// Upper bound on the elements of any checked tensor.
pub const MAX_ELEMENTS: usize = 200;
/// Inputs this close to a ReLU kink are redrawn.
const KINK_MARGIN: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub seed: u64,
    /// Negate one primitive's backward rule; the check must then fail.
    pub inject_fault: Option<Primitive>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { trials: 50, seed: 0, inject_fault: None }
    }
}

/// Worst mismatch seen by one check.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub trial: usize,
    /// Name of the differentiated input.
    pub input: String,
    /// Flat element index within that input.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    /// Primitive name, or `tap:<layer>` for network taps.
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub worst: Option<Mismatch>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "ok" } else { "FAIL" };
        write!(
            f,
            "{:<14} trials={:<4} max_rel_err={:.3e} tol={:.0e} {status}",
            self.name, self.trials, self.max_rel_error, self.tolerance
        )?;
        if let (false, Some(w)) = (self.passed(), &self.worst) {
            write!(
                f,
                " (trial {}, {}[{}]: analytic {:.9e} vs numeric {:.9e})",
                w.trial, w.input, w.index, w.analytic, w.numeric
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed())
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

/// `max|a − n| / max(max|a|, max|n|)`, with the index of the largest
/// absolute difference. Two zero tensors have error 0.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    let (worst, diff) = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .enumerate()
        .fold((0, 0.0), |best, (i, d)| if d > best.1 { (i, d) } else { best });
    if scale == 0.0 {
        (0.0, worst)
    } else {
        (diff / scale, worst)
    }
}

/// Central differences of `f` with respect to every element of `x`.
pub fn numeric_gradient(x: &Tensor, mut f: impl FnMut(&Tensor) -> Result<f64>) -> Result<Tensor> {
    let mut data = x.data().to_vec();
    let mut grad = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let orig = data[i];
        data[i] = orig + FD_STEP;
        let plus = f(&Tensor::new(x.shape().to_vec(), data.clone())?)?;
        data[i] = orig - FD_STEP;
        let minus = f(&Tensor::new(x.shape().to_vec(), data.clone())?)?;
        data[i] = orig;
        grad.push((plus - minus) / (2.0 * FD_STEP));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Runs every primitive check followed by the network tap checks.
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    if config.trials == 0 {
        return Err(Error::InvalidArgument("gradcheck needs at least one trial".into()));
    }
    let mut results: Vec<CheckResult> =
        Primitive::ALL.iter().map(|&p| check_primitive(p, config)).collect::<Result<_>>()?;
    results.extend(check_layer_taps(config)?);
    Ok(GradcheckReport { results })
}

/// Random inputs and fixed arguments for one primitive trial.
struct Case {
    inputs: Vec<Tensor>,
    conv: ConvParams,
    factor: f64,
    channel: usize,
    pixels: Vec<(usize, usize)>,
    labels: Vec<usize>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Result<Tensor> {
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = rng.gen_range(-1.0..1.0);
        if v.abs() > KINK_MARGIN {
            break v;
        }
    })
}

fn draw_case(p: Primitive, rng: &mut ChaCha8Rng) -> Result<Case> {
    let c = rng.gen_range(1..=3);
    let h = rng.gen_range(1..=6);
    let w = rng.gen_range(1..=6);
    let mut case = Case {
        inputs: Vec::new(),
        conv: ConvParams { stride: 1, padding: 0 },
        factor: rng.gen_range(-2.0..2.0),
        channel: 0,
        pixels: Vec::new(),
        labels: Vec::new(),
    };
    case.inputs = match p {
        Primitive::Conv2d => {
            let k = if rng.gen_bool(0.5) { 1 } else { 3 };
            let padding = rng.gen_range(0..=1);
            let stride = rng.gen_range(1..=2);
            let (h, w) = (rng.gen_range(k.max(2)..=6), rng.gen_range(k.max(2)..=6));
            let co = rng.gen_range(1..=3);
            case.conv = ConvParams { stride, padding };
            vec![uniform(rng, &[c, h, w])?, uniform(rng, &[co, c, k, k])?, uniform(rng, &[co])?]
        }
        Primitive::Relu => vec![away_from_zero(rng, &[c, h, w])?],
        Primitive::Add | Primitive::Mul => vec![uniform(rng, &[c, h, w])?, uniform(rng, &[c, h, w])?],
        Primitive::Scale | Primitive::Upsample | Primitive::Sum => vec![uniform(rng, &[c, h, w])?],
        Primitive::Concat => {
            let c2 = rng.gen_range(1..=3);
            vec![uniform(rng, &[c, h, w])?, uniform(rng, &[c2, h, w])?]
        }
        Primitive::Softmax | Primitive::CrossEntropy => {
            let c = rng.gen_range(2..=4);
            case.labels = (0..h * w).map(|_| rng.gen_range(0..c)).collect();
            vec![uniform(rng, &[c, h, w])?]
        }
        Primitive::RegionSum => {
            case.channel = rng.gen_range(0..c);
            case.pixels = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).filter(|_| rng.gen_bool(0.5)).collect();
            vec![uniform(rng, &[c, h, w])?]
        }
    };
    debug_assert!(case.inputs.iter().all(|t| t.numel() <= MAX_ELEMENTS));
    Ok(case)
}

/// Applies `p` to leaves holding `inputs`; returns the graph, the leaves and
/// the output node.
fn apply(p: Primitive, case: &Case, inputs: &[Tensor], fault: Option<Primitive>) -> Result<(DiffGraph, NodeId)> {
    let mut g = DiffGraph::new();
    if let Some(f) = fault {
        g.inject_sign_flip(f);
    }
    let mut ids = Vec::with_capacity(inputs.len());
    for (i, t) in inputs.iter().enumerate() {
        let n = g.leaf(t.clone());
        g.tap(format!("x{i}"), n)?;
        ids.push(n);
    }
    let out = match p {
        Primitive::Conv2d => g.conv2d(ids[0], ids[1], ids[2], case.conv)?,
        Primitive::Relu => g.relu(ids[0])?,
        Primitive::Add => g.add(ids[0], ids[1])?,
        Primitive::Mul => g.mul(ids[0], ids[1])?,
        Primitive::Scale => g.scale(ids[0], case.factor)?,
        Primitive::Upsample => g.upsample(ids[0], 2)?,
        Primitive::Concat => g.concat(&[ids[0], ids[1]])?,
        Primitive::Softmax => g.softmax(ids[0])?,
        Primitive::RegionSum => g.region_sum(ids[0], case.channel, &case.pixels)?,
        Primitive::Sum => g.sum(ids[0])?,
        Primitive::CrossEntropy => g.cross_entropy(ids[0], &case.labels)?,
    };
    Ok((g, out))
}

/// `Σ projection · out`, computed outside the graph so that only the
/// primitive under test contributes a backward rule.
fn project(out: &Tensor, projection: &Tensor) -> f64 {
    out.data().iter().zip(projection.data()).fold(0.0, |acc, (o, w)| acc + o * w)
}

fn check_primitive(p: Primitive, config: &GradcheckConfig) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(p as u64 + 1);
    let mut result =
        CheckResult { name: p.name().to_string(), trials: config.trials, max_rel_error: 0.0, tolerance: PRIMITIVE_TOLERANCE, worst: None };
    for trial in 0..config.trials {
        let case = draw_case(p, &mut rng)?;
        let (g, out) = apply(p, &case, &case.inputs, config.inject_fault)?;
        let projection = if g.value(out).is_scalar() {
            Tensor::full(g.value(out).shape(), 1.0)
        } else {
            uniform(&mut rng, g.value(out).shape())?
        };
        let grads = g.backward_with(out, &projection)?;
        for (i, x) in case.inputs.iter().enumerate() {
            let numeric = numeric_gradient(x, |xi| {
                let mut inputs = case.inputs.clone();
                inputs[i] = xi.clone();
                let (g, out) = apply(p, &case, &inputs, None)?;
                Ok(project(g.value(out), &projection))
            })?;
            let name = format!("x{i}");
            record(&mut result, trial, &name, grads.get(&name)?, &numeric);
        }
    }
    Ok(result)
}

fn record(result: &mut CheckResult, trial: usize, input: &str, analytic: &Tensor, numeric: &Tensor) {
    let (err, index) = relative_error(analytic.data(), numeric.data());
    if err > result.max_rel_error || result.worst.is_none() {
        result.max_rel_error = result.max_rel_error.max(err);
        result.worst = Some(Mismatch {
            trial,
            input: input.to_string(),
            index,
            analytic: analytic.data().get(index).copied().unwrap_or(0.0),
            numeric: numeric.data().get(index).copied().unwrap_or(0.0),
        });
    }
}

/// Network small enough that every tapped activation stays within
/// [`MAX_ELEMENTS`].
pub fn gradcheck_network(seed: u64) -> NetworkConfig {
    NetworkConfig {
        input_channels: 2,
        num_classes: 2,
        encoder_widths: vec![2, 4],
        decoder_widths: vec![4, 2],
        height: 8,
        width: 8,
        seed,
    }
}

/// Gradient of the summed class logit over a region with respect to each
/// layer's output, against differences taken by replacing that output.
fn check_layer_taps(config: &GradcheckConfig) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let layers = gradcheck_network(0).layer_names();
    let mut results: Vec<CheckResult> = layers
        .iter()
        .map(|l| CheckResult {
            name: format!("tap:{l}"),
            trials: config.trials,
            max_rel_error: 0.0,
            tolerance: TAP_TOLERANCE,
            worst: None,
        })
        .collect();
    let mut trial = 0;
    while trial < config.trials {
        let net = gradcheck_network(rng.gen());
        let model = Model::build(net.clone())?;
        let image = Tensor::from_fn(&[net.input_channels, net.height, net.width], |_| rng.gen_range(0.0..1.0))?;
        let trace = model.trace(&image, ForwardHooks::default())?;
        // a perturbation could cross a ReLU kink; redraw instead
        let near_kink =
            trace.pre_activations.iter().any(|&n| trace.graph.value(n).data().iter().any(|v| v.abs() < KINK_MARGIN));
        if near_kink {
            continue;
        }
        let class = rng.gen_range(0..net.num_classes);
        let mut pixels: Vec<(usize, usize)> =
            (0..net.height).flat_map(|i| (0..net.width).map(move |j| (i, j))).filter(|_| rng.gen_bool(0.3)).collect();
        if pixels.is_empty() {
            pixels.push((0, 0));
        }
        let region = PixelSet::new(net.height, net.width, pixels)?;
        for (layer, result) in layers.iter().zip(results.iter_mut()) {
            let base = trace.graph.value(trace.layers[layer.as_str()]).clone();
            debug_assert!(base.numel() <= MAX_ELEMENTS);
            let hooks = ForwardHooks { replace: Some((layer, &base)), ..Default::default() };
            let analytic = model.tap_with(&image, class, &region, layer, hooks)?.gradients;
            let numeric = numeric_gradient(&base, |a| {
                let hooks = ForwardHooks { replace: Some((layer, a)), ..Default::default() };
                let logits = model.forward_with(&image, hooks)?.logits;
                let plane = net.height * net.width;
                Ok(region.flat_indices().fold(0.0, |acc, i| acc + logits.data()[class * plane + i]))
            })?;
            record(result, trial, layer, &analytic, &numeric);
        }
        trial += 1;
    }
    Ok(results)
}
