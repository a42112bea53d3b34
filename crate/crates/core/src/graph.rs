//! Record-and-replay reverse-mode differentiation.
//!
//! A [`DiffGraph`] records each primitive applied during one forward pass.
//! [`DiffGraph::backward`] replays the records in exact reverse order and
//! returns the gradient of a scalar seed for every named tap.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::ops::{self, ConvParams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable primitives known to the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Conv2d,
    Relu,
    Add,
    Mul,
    Scale,
    Upsample,
    Concat,
    Softmax,
    RegionSum,
    Sum,
    CrossEntropy,
}

impl Primitive {
    pub const ALL: [Primitive; 11] = [
        Primitive::Conv2d,
        Primitive::Relu,
        Primitive::Add,
        Primitive::Mul,
        Primitive::Scale,
        Primitive::Upsample,
        Primitive::Concat,
        Primitive::Softmax,
        Primitive::RegionSum,
        Primitive::Sum,
        Primitive::CrossEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Conv2d => "conv2d",
            Primitive::Relu => "relu",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::Upsample => "upsample",
            Primitive::Concat => "concat",
            Primitive::Softmax => "softmax",
            Primitive::RegionSum => "region_sum",
            Primitive::Sum => "sum",
            Primitive::CrossEntropy => "cross_entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<Primitive> {
        Primitive::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { input: NodeId, kernels: NodeId, bias: NodeId, params: ConvParams },
    Relu { input: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { input: NodeId, factor: f64 },
    Upsample { input: NodeId, factor: usize },
    Concat { inputs: Vec<NodeId> },
    Softmax { input: NodeId },
    /// Sum of one channel over a set of flat pixel indices.
    RegionSum { input: NodeId, channel: usize, pixels: Vec<usize> },
    Sum { input: NodeId },
    /// Mean per-pixel cross-entropy of logits against integer labels.
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
}

impl Op {
    fn primitive(&self) -> Option<Primitive> {
        Some(match self {
            Op::Leaf => return None,
            Op::Conv2d { .. } => Primitive::Conv2d,
            Op::Relu { .. } => Primitive::Relu,
            Op::Add { .. } => Primitive::Add,
            Op::Mul { .. } => Primitive::Mul,
            Op::Scale { .. } => Primitive::Scale,
            Op::Upsample { .. } => Primitive::Upsample,
            Op::Concat { .. } => Primitive::Concat,
            Op::Softmax { .. } => Primitive::Softmax,
            Op::RegionSum { .. } => Primitive::RegionSum,
            Op::Sum { .. } => Primitive::Sum,
            Op::CrossEntropy { .. } => Primitive::CrossEntropy,
        })
    }
}

#[derive(Clone, Debug)]
struct Record {
    op: Op,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct DiffGraph {
    records: Vec<Record>,
    taps: BTreeMap<String, NodeId>,
    sign_flip: Option<Primitive>,
}

/// Gradients of one seed with respect to every tap of the graph.
#[derive(Clone, Debug)]
pub struct TapGradients {
    grads: BTreeMap<String, Tensor>,
    visit_order: Vec<usize>,
}

impl TapGradients {
    pub fn get(&self, tap: &str) -> Result<&Tensor> {
        self.grads.get(tap).ok_or_else(|| Error::UnknownTap(tap.to_string()))
    }

    pub fn take(&mut self, tap: &str) -> Result<Tensor> {
        self.grads.remove(tap).ok_or_else(|| Error::UnknownTap(tap.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Record indices in the order the backward pass visited them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }
}

impl DiffGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test fixture: negates the input gradients produced by one primitive's
    /// backward rule, so that gradient checks can be shown to catch it.
    #[doc(hidden)]
    pub fn inject_sign_flip(&mut self, primitive: Primitive) {
        self.sign_flip = Some(primitive);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.records[node.0].value
    }

    fn check(&self, node: NodeId) -> Result<&Tensor> {
        self.records.get(node.0).map(|r| &r.value).ok_or(Error::UnknownNode(node.0))
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.records.push(Record { op, value });
        NodeId(self.records.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Names a node so that [`DiffGraph::backward`] reports its gradient.
    pub fn tap(&mut self, name: impl Into<String>, node: NodeId) -> Result<()> {
        self.check(node)?;
        self.taps.insert(name.into(), node);
        Ok(())
    }

    pub fn tapped(&self, name: &str) -> Result<NodeId> {
        self.taps.get(name).copied().ok_or_else(|| Error::UnknownTap(name.to_string()))
    }

    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, bias: NodeId, params: ConvParams) -> Result<NodeId> {
        let value = ops::conv2d(self.check(input)?, self.check(kernels)?, self.check(bias)?, params)?;
        Ok(self.push(Op::Conv2d { input, kernels, bias, params }, value))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let value = ops::relu(self.check(input)?);
        Ok(self.push(Op::Relu { input }, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::add(self.check(a)?, self.check(b)?)?;
        Ok(self.push(Op::Add { a, b }, value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::mul(self.check(a)?, self.check(b)?)?;
        Ok(self.push(Op::Mul { a, b }, value))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let value = ops::scale(self.check(input)?, factor)?;
        Ok(self.push(Op::Scale { input, factor }, value))
    }

    pub fn upsample(&mut self, input: NodeId, factor: usize) -> Result<NodeId> {
        let value = ops::upsample_nearest(self.check(input)?, factor)?;
        Ok(self.push(Op::Upsample { input, factor }, value))
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let parts = inputs.iter().map(|&n| self.check(n)).collect::<Result<Vec<_>>>()?;
        let value = ops::concat_channels(&parts)?;
        Ok(self.push(Op::Concat { inputs: inputs.to_vec() }, value))
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let value = ops::softmax_channels(self.check(input)?)?;
        Ok(self.push(Op::Softmax { input }, value))
    }

    /// Scalar sum of channel `channel` over the given `(row, col)` pixels.
    pub fn region_sum(&mut self, input: NodeId, channel: usize, pixels: &[(usize, usize)]) -> Result<NodeId> {
        let (c, h, w) = self.check(input)?.chw()?;
        if channel >= c {
            return Err(Error::shape("region_sum", format!("channel {channel} of {c}")));
        }
        let mut flat = Vec::with_capacity(pixels.len());
        for &(r, col) in pixels {
            if r >= h || col >= w {
                return Err(Error::shape("region_sum", format!("pixel ({r}, {col}) outside {h}×{w}")));
            }
            flat.push(r * w + col);
        }
        let x = self.value(input).data();
        let base = channel * h * w;
        let total = flat.iter().fold(0.0, |acc, &i| acc + x[base + i]);
        let value = Tensor::checked("region_sum", vec![], vec![total])?;
        Ok(self.push(Op::RegionSum { input, channel, pixels: flat }, value))
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let total = self.check(input)?.sum();
        let value = Tensor::checked("sum", vec![], vec![total])?;
        Ok(self.push(Op::Sum { input }, value))
    }

    /// Mean over pixels of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (l, h, w) = self.check(logits)?.chw()?;
        if labels.len() != h * w {
            return Err(Error::shape("cross_entropy", format!("{} labels for {h}×{w} pixels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= l) {
            return Err(Error::ClassOutOfRange { class: bad, num_classes: l });
        }
        let x = self.value(logits).data();
        let plane = h * w;
        let mut total = 0.0;
        for (px, &label) in labels.iter().enumerate() {
            let max = (0..l).map(|c| x[c * plane + px]).fold(f64::NEG_INFINITY, f64::max);
            let lse = (0..l).fold(0.0, |acc, c| acc + (x[c * plane + px] - max).exp()).ln() + max;
            total += lse - x[label * plane + px];
        }
        let value = Tensor::checked("cross_entropy", vec![], vec![total / plane as f64])?;
        Ok(self.push(Op::CrossEntropy { logits, labels: labels.to_vec() }, value))
    }

    /// Gradient of the scalar `seed` with respect to every tap.
    pub fn backward(&self, seed: NodeId) -> Result<TapGradients> {
        let seed_value = self.check(seed)?;
        if !seed_value.is_scalar() {
            return Err(Error::SeedNotScalar(seed.0));
        }
        self.backward_with(seed, &Tensor::full(seed_value.shape(), 1.0))
    }

    /// Vector-Jacobian product: propagates `upstream`, shaped like `output`,
    /// back to every tap.
    pub fn backward_with(&self, output: NodeId, upstream: &Tensor) -> Result<TapGradients> {
        let seed = output;
        let seed_value = self.check(seed)?;
        if seed_value.shape() != upstream.shape() {
            return Err(Error::shape(
                "backward_with",
                format!("upstream {:?} vs output {:?}", upstream.shape(), seed_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(upstream.data().to_vec());
        let mut visit_order = Vec::with_capacity(seed.0 + 1);

        for index in (0..=seed.0).rev() {
            visit_order.push(index);
            let Some(upstream) = grads[index].take() else { continue };
            let record = &self.records[index];
            let upstream = Tensor::checked("backward", record.value.shape().to_vec(), upstream)?;
            let mut contributions = self.local_backward(&record.op, &record.value, &upstream)?;
            if self.sign_flip.is_some() && self.sign_flip == record.op.primitive() {
                for (_, g) in contributions.iter_mut() {
                    *g = ops::scale(g, -1.0)?;
                }
            }
            for (node, g) in contributions {
                accumulate(&mut grads[node.0], g);
            }
            // keep the upstream gradient of tapped nodes
            grads[index] = Some(upstream.into_data());
        }

        let mut out = BTreeMap::new();
        for (name, &node) in &self.taps {
            let shape = self.records[node.0].value.shape();
            let tensor = match grads.get(node.0).and_then(|g| g.clone()) {
                Some(g) => Tensor::checked("backward", shape.to_vec(), g)?,
                None => Tensor::zeros(shape),
            };
            out.insert(name.clone(), tensor);
        }
        Ok(TapGradients { grads: out, visit_order })
    }

    fn local_backward(&self, op: &Op, value: &Tensor, upstream: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        Ok(match op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { input, kernels, bias, params } => {
                let (dx, dw, db) = ops::conv2d_backward(
                    self.value(*input),
                    self.value(*kernels),
                    self.value(*bias),
                    *params,
                    upstream,
                )?;
                vec![(*input, dx), (*kernels, dw), (*bias, db)]
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let g = upstream.data().iter().zip(x).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect();
                vec![(*input, Tensor::from_parts(value.shape().to_vec(), g))]
            }
            Op::Add { a, b } => vec![(*a, upstream.clone()), (*b, upstream.clone())],
            Op::Mul { a, b } => vec![
                (*a, ops::mul(upstream, self.value(*b))?),
                (*b, ops::mul(upstream, self.value(*a))?),
            ],
            Op::Scale { input, factor } => vec![(*input, ops::scale(upstream, *factor)?)],
            Op::Upsample { input, factor } => vec![(*input, ops::upsample_nearest_backward(upstream, *factor)?)],
            Op::Concat { inputs } => {
                let mut offset = 0;
                let mut parts = Vec::with_capacity(inputs.len());
                for &node in inputs {
                    let shape = self.value(node).shape().to_vec();
                    let n = self.value(node).numel();
                    parts.push((node, Tensor::from_parts(shape, upstream.data()[offset..offset + n].to_vec())));
                    offset += n;
                }
                parts
            }
            Op::Softmax { input } => vec![(*input, ops::softmax_channels_backward(value, upstream)?)],
            Op::RegionSum { input, channel, pixels } => {
                let x = self.value(*input);
                let (_, h, w) = x.chw()?;
                let g = upstream.data()[0];
                let mut d = vec![0.0; x.numel()];
                for &px in pixels {
                    d[channel * h * w + px] += g;
                }
                vec![(*input, Tensor::from_parts(x.shape().to_vec(), d))]
            }
            Op::Sum { input } => {
                let x = self.value(*input);
                vec![(*input, Tensor::full(x.shape(), upstream.data()[0]))]
            }
            Op::CrossEntropy { logits, labels } => {
                let probs = ops::softmax_channels(self.value(*logits))?;
                let (_, h, w) = probs.chw()?;
                let plane = h * w;
                let scale = upstream.data()[0] / plane as f64;
                let mut d: Vec<f64> = probs.data().iter().map(|p| p * scale).collect();
                for (px, &label) in labels.iter().enumerate() {
                    d[label * plane + px] -= scale;
                }
                vec![(*logits, Tensor::checked("cross_entropy_backward", probs.shape().to_vec(), d)?)]
            }
        })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g.data()) {
                *a += v;
            }
        }
        None => *slot = Some(g.into_data()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_sum_gradient_is_ones_for_positive_input() {
        let mut g = DiffGraph::new();
        let x = g.leaf(Tensor::new(vec![2, 2], vec![0.5, 1.0, 2.0, 3.0]).unwrap());
        g.tap("x", x).unwrap();
        let r = g.relu(x).unwrap();
        let s = g.sum(r).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), [1.0; 4]);
    }

    #[test]
    fn backward_visits_in_reverse() {
        let mut g = DiffGraph::new();
        let x = g.leaf(Tensor::full(&[3], 1.0));
        let y = g.scale(x, 2.0).unwrap();
        let z = g.add(x, y).unwrap();
        let s = g.sum(z).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.visit_order(), [3, 2, 1, 0]);
    }

    #[test]
    fn seed_errors() {
        let mut g = DiffGraph::new();
        let x = g.leaf(Tensor::full(&[3], 1.0));
        assert!(matches!(g.backward(x), Err(Error::SeedNotScalar(0))));
        assert!(matches!(g.backward(NodeId(7)), Err(Error::UnknownNode(7))));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(matches!(grads.get("nope"), Err(Error::UnknownTap(_))));
    }

    #[test]
    fn unreached_tap_gets_zeros_of_its_shape() {
        let mut g = DiffGraph::new();
        let a = g.leaf(Tensor::full(&[2, 3], 1.0));
        let b = g.leaf(Tensor::full(&[4], 1.0));
        g.tap("a", a).unwrap();
        let s = g.sum(b).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get("a").unwrap(), &Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn sign_flip_fixture_negates_one_rule() {
        let mut g = DiffGraph::new();
        let x = g.leaf(Tensor::full(&[2], 1.0));
        g.tap("x", x).unwrap();
        let y = g.scale(x, 3.0).unwrap();
        let s = g.sum(y).unwrap();
        assert_eq!(g.backward(s).unwrap().get("x").unwrap().data(), [3.0, 3.0]);
        g.inject_sign_flip(Primitive::Scale);
        assert_eq!(g.backward(s).unwrap().get("x").unwrap().data(), [-3.0, -3.0]);
    }

    #[test]
    fn region_sum_rejects_out_of_bounds() {
        let mut g = DiffGraph::new();
        let x = g.leaf(Tensor::zeros(&[2, 3, 3]));
        assert!(g.region_sum(x, 2, &[]).is_err());
        assert!(g.region_sum(x, 0, &[(3, 0)]).is_err());
        let s = g.region_sum(x, 1, &[]).unwrap();
        assert_eq!(g.value(s).item(), Some(0.0));
    }
}
