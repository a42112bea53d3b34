//! A small UNet-style encoder–decoder with named, tappable layers.
//!
//! Layout for encoder widths `[e0, …, e(n-1)]` and decoder widths
//! `[d0, …, d(n-1)]`:
//!
//! - `enc0`: 3×3 conv, stride 1, at full resolution
//! - `enc{i}`: 3×3 conv, stride 2 (downsampling), for `i ≥ 1`
//! - `dec0`: 3×3 conv at the coarsest resolution
//! - `dec{j}`: ×2 nearest upsample of `dec{j-1}`, concatenated with
//!   `enc{n-1-j}`, then a 3×3 conv, for `j ≥ 1`
//! - `head`: 1×1 conv to the class logits
//!
//! Every block except `head` ends in a ReLU; the tapped activation of a
//! block is its post-ReLU output, and `head` taps the logits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{DiffGraph, NodeId};
use crate::ops::{self, ConvParams};
use crate::pixels::PixelSet;
use crate::tensor::{self, Tensor};

pub const MODEL_MAGIC: &[u8; 8] = b"SXMODEL\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub num_classes: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_channels: 3,
            num_classes: 2,
            encoder_widths: vec![8, 16],
            decoder_widths: vec![16, 8],
            height: 64,
            width: 64,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.input_channels == 0 {
            return bad("input_channels must be >= 1".into());
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.len() != self.decoder_widths.len() {
            return bad(format!(
                "encoder and decoder depth must match and be nonzero ({} vs {})",
                self.encoder_widths.len(),
                self.decoder_widths.len()
            ));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return bad("layer widths must be nonzero".into());
        }
        let factor = 1usize << (self.encoder_widths.len() - 1);
        if self.height == 0 || self.width == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return bad(format!(
                "input size {}×{} must be a nonzero multiple of {factor}",
                self.height, self.width
            ));
        }
        Ok(())
    }

    /// Layer names in declaration order.
    pub fn layer_names(&self) -> Vec<String> {
        let depth = self.encoder_widths.len();
        (0..depth)
            .map(|i| format!("enc{i}"))
            .chain((0..depth).map(|j| format!("dec{j}")))
            .chain(std::iter::once("head".to_string()))
            .collect()
    }

    /// The default inspected layer: the first decoder block.
    pub fn default_layer(&self) -> &'static str {
        "dec0"
    }

    fn layer_specs(&self) -> Vec<LayerSpec> {
        let depth = self.encoder_widths.len();
        let mut specs = Vec::with_capacity(2 * depth + 1);
        let mut prev = self.input_channels;
        for (i, &width) in self.encoder_widths.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            specs.push(LayerSpec { name: format!("enc{i}"), in_ch: prev, out_ch: width, kernel: 3, stride, padding: 1 });
            prev = width;
        }
        for (j, &width) in self.decoder_widths.iter().enumerate() {
            let in_ch = if j == 0 { prev } else { prev + self.encoder_widths[depth - 1 - j] };
            specs.push(LayerSpec { name: format!("dec{j}"), in_ch, out_ch: width, kernel: 3, stride: 1, padding: 1 });
            prev = width;
        }
        specs.push(LayerSpec {
            name: "head".into(),
            in_ch: prev,
            out_ch: self.num_classes,
            kernel: 1,
            stride: 1,
            padding: 0,
        });
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_specs().iter().map(|s| s.out_ch * s.in_ch * s.kernel * s.kernel + s.out_ch).sum()
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let put = |w: &mut W, v: usize| w.write_all(&(v as u32).to_le_bytes());
        put(w, self.input_channels)?;
        put(w, self.num_classes)?;
        put(w, self.encoder_widths.len())?;
        for &e in &self.encoder_widths {
            put(w, e)?;
        }
        put(w, self.decoder_widths.len())?;
        for &d in &self.decoder_widths {
            put(w, d)?;
        }
        put(w, self.height)?;
        put(w, self.width)?;
        w.write_all(&self.seed.to_le_bytes())
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let get = |r: &mut R| tensor::read_u32(r).map(|v| v as usize);
        let input_channels = get(r)?;
        let num_classes = get(r)?;
        let widths = |r: &mut R| -> Result<Vec<usize>> {
            let n = tensor::read_u32(r)? as usize;
            if n > 64 {
                return Err(Error::format("model", format!("implausible depth {n}")));
            }
            (0..n).map(|_| tensor::read_u32(r).map(|v| v as usize)).collect()
        };
        let encoder_widths = widths(r)?;
        let decoder_widths = widths(r)?;
        let height = tensor::read_u32(r)? as usize;
        let width = tensor::read_u32(r)? as usize;
        let seed = tensor::read_u64(r)?;
        let config = NetworkConfig { input_channels, num_classes, encoder_widths, decoder_widths, height, width, seed };
        config.validate().map_err(|e| Error::format("model", e.to_string()))?;
        Ok(config)
    }
}

#[derive(Clone, Debug)]
struct LayerSpec {
    name: String,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    name: String,
    weight: Tensor,
    bias: Tensor,
    params: ConvParams,
}

/// An immutable, shareable segmentation model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: NetworkConfig,
    layers: Vec<Layer>,
}

/// Output of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationOutput {
    pub logits: Tensor,
    pub probabilities: Tensor,
    /// Per-pixel argmax class, row-major; ties go to the lower class index.
    pub predicted_mask: Vec<usize>,
}

impl SegmentationOutput {
    pub fn from_logits(logits: Tensor) -> Result<Self> {
        let probabilities = ops::softmax_channels(&logits)?;
        let predicted_mask = argmax_channels(&logits)?;
        Ok(SegmentationOutput { logits, probabilities, predicted_mask })
    }

    pub fn num_classes(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.logits.shape()[1], self.logits.shape()[2])
    }

    /// Pixels predicted as `class`.
    pub fn predicted_pixels(&self, class: usize) -> PixelSet {
        let (h, w) = self.size();
        let bitmap: Vec<bool> = self.predicted_mask.iter().map(|&c| c == class).collect();
        PixelSet::from_bitmap(h, w, &bitmap).expect("mask has image size")
    }
}

/// Per-pixel argmax over the leading axis, ties toward the lower index.
pub fn argmax_channels(t: &Tensor) -> Result<Vec<usize>> {
    let (l, h, w) = t.chw()?;
    let plane = h * w;
    let x = t.data();
    Ok((0..plane)
        .map(|px| {
            let mut best = 0;
            for c in 1..l {
                if x[c * plane + px] > x[best * plane + px] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Activations and gradients captured at one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTap {
    pub layer_name: String,
    /// `K × h × w` activations.
    pub activations: Tensor,
    /// Gradient of the summed class logit over the region, same shape.
    pub gradients: Tensor,
}

/// Modifications applied to one layer's activation during a forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardHooks<'a> {
    /// Replace the named layer's activation with this tensor.
    pub replace: Option<(&'a str, &'a Tensor)>,
    /// Zero one channel of the named layer's activation.
    pub ablate: Option<(&'a str, usize)>,
}

/// A recorded forward pass.
pub struct Trace {
    pub graph: DiffGraph,
    pub layers: BTreeMap<String, NodeId>,
    /// Inputs of every ReLU, in layer order.
    pub pre_activations: Vec<NodeId>,
    pub logits: NodeId,
}

impl Model {
    pub fn build(config: NetworkConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .layer_specs()
            .into_iter()
            .map(|spec| {
                let fan_in = spec.in_ch * spec.kernel * spec.kernel;
                let bound = (1.0 / fan_in as f64).sqrt();
                let wshape = [spec.out_ch, spec.in_ch, spec.kernel, spec.kernel];
                let weight = Tensor::from_fn(&wshape, |_| rng.gen_range(-bound..=bound))?;
                let bias = Tensor::from_fn(&[spec.out_ch], |_| rng.gen_range(-bound..=bound))?;
                Ok(Layer {
                    name: spec.name,
                    weight,
                    bias,
                    params: ConvParams { stride: spec.stride, padding: spec.padding },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { config, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.numel() + l.bias.numel()).sum()
    }

    /// `(name, tensor)` pairs in declaration order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .flat_map(|l| [(format!("{}.weight", l.name), &l.weight), (format!("{}.bias", l.name), &l.bias)])
            .collect()
    }

    pub fn has_layer(&self, name: &str) -> bool {
        self.layers.iter().any(|l| l.name == name)
    }

    fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers.iter().position(|l| l.name == name).ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// Returns a copy whose named parameter has been replaced.
    pub fn with_parameter(&self, name: &str, value: Tensor) -> Result<Model> {
        let (layer, field) = name.rsplit_once('.').ok_or_else(|| Error::InvalidArgument(name.into()))?;
        let idx = self.layer_index(layer)?;
        let mut model = self.clone();
        let slot = match field {
            "weight" => &mut model.layers[idx].weight,
            "bias" => &mut model.layers[idx].bias,
            _ => return Err(Error::InvalidArgument(format!("no parameter `{name}`"))),
        };
        if slot.shape() != value.shape() {
            return Err(Error::shape("with_parameter", format!("{name}: {:?} vs {:?}", slot.shape(), value.shape())));
        }
        *slot = value;
        Ok(model)
    }

    pub fn parameter(&self, name: &str) -> Result<&Tensor> {
        let (layer, field) = name.rsplit_once('.').ok_or_else(|| Error::InvalidArgument(name.into()))?;
        let l = &self.layers[self.layer_index(layer)?];
        match field {
            "weight" => Ok(&l.weight),
            "bias" => Ok(&l.bias),
            _ => Err(Error::InvalidArgument(format!("no parameter `{name}`"))),
        }
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        let expected = [self.config.input_channels, self.config.height, self.config.width];
        if image.shape() != expected {
            return Err(Error::shape("forward", format!("image {:?}, model expects {:?}", image.shape(), expected)));
        }
        Ok(())
    }

    fn check_hooks(&self, hooks: &ForwardHooks) -> Result<()> {
        if let Some((name, _)) = hooks.replace {
            self.layer_index(name)?;
        }
        if let Some((name, _)) = hooks.ablate {
            self.layer_index(name)?;
        }
        Ok(())
    }

    /// Records a forward pass. Parameters enter the graph as leaves tapped
    /// as `<layer>.weight` / `<layer>.bias`; each layer's output is tapped
    /// under the layer name.
    pub fn trace(&self, image: &Tensor, hooks: ForwardHooks) -> Result<Trace> {
        self.check_image(image)?;
        self.check_hooks(&hooks)?;
        let depth = self.config.encoder_widths.len();
        let mut g = DiffGraph::new();
        let mut layer_nodes = BTreeMap::new();
        let mut pre_activations = Vec::with_capacity(2 * depth);
        let input = g.leaf(image.clone());
        let mut skips = Vec::with_capacity(depth);
        let mut x = input;
        for (idx, layer) in self.layers.iter().enumerate() {
            if idx > depth && idx < 2 * depth {
                let up = g.upsample(x, 2)?;
                x = g.concat(&[up, skips[2 * depth - 1 - idx]])?;
            }
            let w = g.leaf(layer.weight.clone());
            let b = g.leaf(layer.bias.clone());
            g.tap(format!("{}.weight", layer.name), w)?;
            g.tap(format!("{}.bias", layer.name), b)?;
            let conv = g.conv2d(x, w, b, layer.params)?;
            x = if layer.name == "head" {
                conv
            } else {
                pre_activations.push(conv);
                g.relu(conv)?
            };
            x = apply_hooks(&mut g, &layer.name, x, &hooks)?;
            g.tap(layer.name.clone(), x)?;
            layer_nodes.insert(layer.name.clone(), x);
            if idx < depth {
                skips.push(x);
            }
        }
        Ok(Trace { graph: g, layers: layer_nodes, pre_activations, logits: x })
    }

    pub fn forward(&self, image: &Tensor) -> Result<SegmentationOutput> {
        self.forward_with(image, ForwardHooks::default())
    }

    pub fn forward_with(&self, image: &Tensor, hooks: ForwardHooks) -> Result<SegmentationOutput> {
        let trace = self.trace(image, hooks)?;
        SegmentationOutput::from_logits(trace.graph.value(trace.logits).clone())
    }

    /// Activations of `layer` and the gradient of `Σ_{(i,j) ∈ region}` of the
    /// class-`class` logit with respect to them.
    pub fn tap_forward_backward(
        &self,
        image: &Tensor,
        class: usize,
        region: &PixelSet,
        layer: &str,
    ) -> Result<FeatureTap> {
        self.tap_with(image, class, region, layer, ForwardHooks::default())
    }

    pub fn tap_with(
        &self,
        image: &Tensor,
        class: usize,
        region: &PixelSet,
        layer: &str,
        hooks: ForwardHooks,
    ) -> Result<FeatureTap> {
        self.layer_index(layer)?;
        if class >= self.config.num_classes {
            return Err(Error::ClassOutOfRange { class, num_classes: self.config.num_classes });
        }
        if region.bounds() != (self.config.height, self.config.width) {
            return Err(Error::shape("tap_forward_backward", format!("region bounds {:?}", region.bounds())));
        }
        let mut trace = self.trace(image, hooks)?;
        let seed = trace.graph.region_sum(trace.logits, class, region.pixels())?;
        let mut grads = trace.graph.backward(seed)?;
        Ok(FeatureTap {
            layer_name: layer.to_string(),
            activations: trace.graph.value(trace.layers[layer]).clone(),
            gradients: grads.take(layer)?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
        self.config.write_to(w)?;
        let params = self.named_parameters();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for (name, t) in params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            t.write_to(&mut *w)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Model::read_from(&mut BufReader::new(file))
    }

    /// Loads a model and checks that it was built with `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &NetworkConfig) -> Result<Model> {
        let model = Model::load(path)?;
        if &model.config != expected {
            return Err(Error::ConfigMismatch(format!("file has {:?}, expected {:?}", model.config, expected)));
        }
        Ok(model)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Model> {
        let mut magic = [0u8; 8];
        tensor::read_exact(r, &mut magic, "model magic")?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format("model", "bad magic"));
        }
        let version = tensor::read_u32(r)?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::format("model", format!("unsupported version {version}")));
        }
        let config = NetworkConfig::read_from(r)?;
        let template = Model::build(config)?;
        let expected = template.named_parameters();
        let count = tensor::read_u32(r)? as usize;
        if count != expected.len() {
            return Err(Error::format("model", format!("{count} tensors, config implies {}", expected.len())));
        }
        let mut model = template.clone();
        for (expected_name, expected_tensor) in expected {
            let len = tensor::read_u32(r)? as usize;
            if len > 256 {
                return Err(Error::format("model", "implausible parameter name length"));
            }
            let mut name = vec![0u8; len];
            tensor::read_exact(r, &mut name, "parameter name")?;
            if name != expected_name.as_bytes() {
                return Err(Error::format(
                    "model",
                    format!("expected `{expected_name}`, found `{}`", String::from_utf8_lossy(&name)),
                ));
            }
            let t = Tensor::read_from(&mut *r)?;
            if t.shape() != expected_tensor.shape() {
                return Err(Error::format("model", format!("`{expected_name}` has shape {:?}", t.shape())));
            }
            model = model.with_parameter(&expected_name, t)?;
        }
        Ok(model)
    }
}

fn apply_hooks(g: &mut DiffGraph, layer: &str, x: NodeId, hooks: &ForwardHooks) -> Result<NodeId> {
    let mut x = x;
    if let Some((name, replacement)) = hooks.replace {
        if name == layer {
            if replacement.shape() != g.value(x).shape() {
                return Err(Error::shape(
                    "forward",
                    format!("replacement for `{layer}` is {:?}, expected {:?}", replacement.shape(), g.value(x).shape()),
                ));
            }
            x = g.leaf(replacement.clone());
        }
    }
    if let Some((name, channel)) = hooks.ablate {
        if name == layer {
            let value = g.value(x);
            let (k, h, w) = value.chw()?;
            if channel >= k {
                return Err(Error::shape("ablate", format!("channel {channel} of {k} in `{layer}`")));
            }
            let mut data = value.data().to_vec();
            data[channel * h * w..(channel + 1) * h * w].fill(0.0);
            x = g.leaf(Tensor::from_parts(value.shape().to_vec(), data));
        }
    }
    Ok(x)
}

/// SGD schedule for [`train_toy`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 4, learning_rate: 0.05, momentum: 0.9, seed: 7 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    /// Mean loss over the dataset under the initial weights.
    pub initial: f64,
    /// Per-step training loss, in step order.
    pub steps: Vec<f64>,
    /// Mean per-step loss of each epoch.
    pub epoch_means: Vec<f64>,
}

impl LossTrace {
    pub fn final_mean(&self) -> f64 {
        self.epoch_means.last().copied().unwrap_or(self.initial)
    }
}

pub fn dataset_loss(model: &Model, dataset: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for sample in dataset.samples() {
        let mut trace = model.trace(&sample.image, ForwardHooks::default())?;
        let labels = sample.labels();
        let loss = trace.graph.cross_entropy(trace.logits, &labels)?;
        total += trace.graph.value(loss).data()[0];
    }
    Ok(total / dataset.len().max(1) as f64)
}

/// Per-image SGD with momentum on the mean per-pixel cross-entropy.
pub fn train_toy(model: &Model, dataset: &Dataset, config: &TrainConfig) -> Result<(Model, LossTrace)> {
    train_toy_with_progress(model, dataset, config, |_, _| {})
}

pub fn train_toy_with_progress(
    model: &Model,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Model, LossTrace)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = model.clone();
    let mut velocity: Vec<Vec<f64>> =
        model.named_parameters().iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
    let mut trace = LossTrace { initial: dataset_loss(&model, dataset)?, ..Default::default() };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for &i in &order {
            let sample = &dataset.samples()[i];
            let mut fwd = model.trace(&sample.image, ForwardHooks::default())?;
            let loss = fwd.graph.cross_entropy(fwd.logits, &sample.labels())?;
            let loss_value = fwd.graph.value(loss).data()[0];
            let grads = fwd.graph.backward(loss)?;
            for (li, layer) in model.layers.iter_mut().enumerate() {
                let (wi, bi) = (2 * li, 2 * li + 1);
                let gw = grads.get(&format!("{}.weight", layer.name))?;
                let gb = grads.get(&format!("{}.bias", layer.name))?;
                layer.weight = sgd_step(&layer.weight, gw, &mut velocity[wi], config)?;
                layer.bias = sgd_step(&layer.bias, gb, &mut velocity[bi], config)?;
            }
            trace.steps.push(loss_value);
            epoch_total += loss_value;
        }
        let mean = epoch_total / order.len() as f64;
        trace.epoch_means.push(mean);
        on_epoch(epoch, mean);
    }
    Ok((model, trace))
}

fn sgd_step(param: &Tensor, grad: &Tensor, velocity: &mut [f64], config: &TrainConfig) -> Result<Tensor> {
    let data = param
        .data()
        .iter()
        .zip(grad.data())
        .zip(velocity.iter_mut())
        .map(|((&p, &g), v)| {
            *v = config.momentum * *v + g;
            p - config.learning_rate * *v
        })
        .collect();
    Tensor::checked("sgd_step", param.shape().to_vec(), data)
}

/// Intersection-over-union of the predicted and true foreground (class 1)
/// pooled over the whole dataset.
pub fn foreground_iou(model: &Model, dataset: &Dataset) -> Result<f64> {
    let (mut inter, mut union) = (0usize, 0usize);
    for sample in dataset.samples() {
        let out = model.forward(&sample.image)?;
        for (&pred, &truth) in out.predicted_mask.iter().zip(sample.mask.iter()) {
            let (p, t) = (pred == 1, truth == 1);
            inter += (p && t) as usize;
            union += (p || t) as usize;
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
