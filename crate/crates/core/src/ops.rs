//! Forward and backward kernels on plain tensors.
//!
//! Every reduction accumulates sequentially in ascending index order so that
//! identical inputs give bit-identical outputs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams { stride: 1, padding: 0 }
    }
}

fn conv_geometry(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    params: ConvParams,
) -> Result<[usize; 9]> {
    let (c, h, w) = input.chw().map_err(|_| {
        Error::shape("conv2d", format!("input must be C×H×W, got {:?}", input.shape()))
    })?;
    let [k, kc, kh, kw] = kernels.shape()[..] else {
        return Err(Error::shape(
            "conv2d",
            format!("kernels must be K×C×kh×kw, got {:?}", kernels.shape()),
        ));
    };
    if kc != c {
        return Err(Error::shape("conv2d", format!("channels: input has {c}, kernels expect {kc}")));
    }
    if bias.shape() != [k] {
        return Err(Error::shape("conv2d", format!("bias: expected [{k}], got {:?}", bias.shape())));
    }
    if params.stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    if kh == 0 || kh > h + 2 * params.padding {
        return Err(Error::shape(
            "conv2d",
            format!("height: kernel {kh} vs padded input {}", h + 2 * params.padding),
        ));
    }
    if kw == 0 || kw > w + 2 * params.padding {
        return Err(Error::shape(
            "conv2d",
            format!("width: kernel {kw} vs padded input {}", w + 2 * params.padding),
        ));
    }
    let oh = (h + 2 * params.padding - kh) / params.stride + 1;
    let ow = (w + 2 * params.padding - kw) / params.stride + 1;
    Ok([c, h, w, k, kh, kw, oh, ow, 0])
}

/// Discrete cross-correlation plus bias.
///
/// Each output value starts at its bias and accumulates `w · x` over
/// (input channel, kernel row, kernel column) in ascending order.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor, params: ConvParams) -> Result<Tensor> {
    let [c, h, w, k, kh, kw, oh, ow, _] = conv_geometry(input, kernels, bias, params)?;
    let (s, p) = (params.stride, params.padding);
    let x = input.data();
    let wt = kernels.data();
    let mut out = vec![0.0; k * oh * ow];
    for ko in 0..k {
        let out_plane = &mut out[ko * oh * ow..(ko + 1) * oh * ow];
        out_plane.fill(bias.data()[ko]);
        for ci in 0..c {
            let in_plane = &x[ci * h * w..(ci + 1) * h * w];
            for di in 0..kh {
                for dj in 0..kw {
                    let weight = wt[((ko * c + ci) * kh + di) * kw + dj];
                    for oy in 0..oh {
                        let iy = (oy * s + di) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * s + dj) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                *o += weight * in_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::checked("conv2d", vec![k, oh, ow], out)
}

/// Gradients of a convolution: `(d_input, d_kernels, d_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    params: ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [c, h, w, k, kh, kw, oh, ow, _] = conv_geometry(input, kernels, bias, params)?;
    if grad_out.shape() != [k, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream gradient {:?} vs output [{k}, {oh}, {ow}]", grad_out.shape()),
        ));
    }
    let (s, p) = (params.stride, params.padding);
    let x = input.data();
    let wt = kernels.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; c * h * w];
    let mut dw = vec![0.0; k * c * kh * kw];
    let mut db = vec![0.0; k];
    for ko in 0..k {
        let g_plane = &g[ko * oh * ow..(ko + 1) * oh * ow];
        db[ko] = g_plane.iter().fold(0.0, |acc, v| acc + v);
        for ci in 0..c {
            let in_plane = &x[ci * h * w..(ci + 1) * h * w];
            let dx_plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for di in 0..kh {
                for dj in 0..kw {
                    let widx = ((ko * c + ci) * kh + di) * kw + dj;
                    let weight = wt[widx];
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = (oy * s + di) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * s + dj) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                let go = g_plane[oy * ow + ox];
                                acc += go * in_plane[row + ix as usize];
                                dx_plane[row + ix as usize] += go * weight;
                            }
                        }
                    }
                    dw[widx] = acc;
                }
            }
        }
    }
    Ok((
        Tensor::checked("conv2d_backward", vec![c, h, w], dx)?,
        Tensor::checked("conv2d_backward", vec![k, c, kh, kw], dw)?,
        Tensor::checked("conv2d_backward", vec![k], db)?,
    ))
}

/// Pointwise operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Mul,
    Relu,
    Scale(f64),
}

/// Applies a pointwise operation. `Add` and `Mul` take two operands of equal
/// shape, `Relu` and `Scale` take one.
pub fn elementwise(op: Elementwise, operands: &[&Tensor]) -> Result<Tensor> {
    match (op, operands) {
        (Elementwise::Add, [a, b]) => zip_with("add", a, b, |x, y| x + y),
        (Elementwise::Mul, [a, b]) => zip_with("mul", a, b, |x, y| x * y),
        (Elementwise::Relu, [a]) => a.map("relu", |x| if x > 0.0 { x } else { 0.0 }),
        (Elementwise::Scale(factor), [a]) => a.map("scale", |x| factor * x),
        (op, operands) => Err(Error::InvalidArgument(format!(
            "{op:?} does not take {} operand(s)",
            operands.len()
        ))),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(Elementwise::Add, &[a, b])
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    elementwise(Elementwise::Mul, &[a, b])
}

pub fn relu(a: &Tensor) -> Tensor {
    // relu of finite values is finite
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect())
}

pub fn scale(a: &Tensor, factor: f64) -> Result<Tensor> {
    elementwise(Elementwise::Scale(factor), &[a])
}

fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Tensor::checked(
        op,
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// Per-pixel softmax across the leading (class) axis of an `L × H × W` tensor.
pub fn softmax_channels(logits: &Tensor) -> Result<Tensor> {
    let (l, h, w) = logits.chw()?;
    if l < 2 {
        return Err(Error::shape("softmax_channels", format!("need at least 2 classes, got {l}")));
    }
    let plane = h * w;
    let x = logits.data();
    let mut out = vec![0.0; x.len()];
    for px in 0..plane {
        let max = (0..l).map(|c| x[c * plane + px]).fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for c in 0..l {
            let e = (x[c * plane + px] - max).exp();
            out[c * plane + px] = e;
            denom += e;
        }
        for c in 0..l {
            out[c * plane + px] /= denom;
        }
    }
    Tensor::checked("softmax_channels", logits.shape().to_vec(), out)
}

/// Vector-Jacobian product of [`softmax_channels`] given its output.
pub fn softmax_channels_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (l, h, w) = probs.chw()?;
    if grad_out.shape() != probs.shape() {
        return Err(Error::shape("softmax_backward", format!("{:?} vs {:?}", grad_out.shape(), probs.shape())));
    }
    let plane = h * w;
    let (p, g) = (probs.data(), grad_out.data());
    let mut out = vec![0.0; p.len()];
    for px in 0..plane {
        let dot = (0..l).fold(0.0, |acc, c| acc + g[c * plane + px] * p[c * plane + px]);
        for c in 0..l {
            let i = c * plane + px;
            out[i] = p[i] * (g[i] - dot);
        }
    }
    Tensor::checked("softmax_backward", probs.shape().to_vec(), out)
}

/// Corner-aligned bilinear resize of an `h × w` map up to `H × W`.
pub fn bilinear_upsample(map: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (h, w) = map.hw()?;
    let (th, tw) = target;
    if h == 0 || w == 0 {
        return Err(Error::shape("bilinear_upsample", "source map is empty"));
    }
    if th < h || tw < w {
        return Err(Error::shape(
            "bilinear_upsample",
            format!("target {th}×{tw} is smaller than source {h}×{w}"),
        ));
    }
    let (lo, hi) = (map.min(), map.max());
    let src = map.data();
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (pos.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, pos - i0 as f64)
    };
    let lerp = |a: f64, b: f64, t: f64| a + t * (b - a);
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let (y0, y1, ty) = coord(y, th, h);
        for x in 0..tw {
            let (x0, x1, tx) = coord(x, tw, w);
            let top = lerp(src[y0 * w + x0], src[y0 * w + x1], tx);
            let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], tx);
            out.push(lerp(top, bottom, ty).clamp(lo, hi));
        }
    }
    Tensor::checked("bilinear_upsample", vec![th, tw], out)
}

/// Nearest-neighbour upsampling of a `C × H × W` tensor by an integer factor.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            let row = &x[(ci * h + oy / factor) * w..(ci * h + oy / factor + 1) * w];
            out.extend((0..ow).map(|ox| row[ox / factor]));
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

pub fn upsample_nearest_backward(grad_out: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, oh, ow) = grad_out.chw()?;
    if factor == 0 || oh % factor != 0 || ow % factor != 0 {
        return Err(Error::shape("upsample_backward", format!("{:?} not divisible by {factor}", grad_out.shape())));
    }
    let (h, w) = (oh / factor, ow / factor);
    let g = grad_out.data();
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[(ci * h + oy / factor) * w + ox / factor] += g[(ci * oh + oy) * ow + ox];
            }
        }
    }
    Tensor::checked("upsample_backward", vec![c, h, w], out)
}

/// Stacks `C_i × H × W` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
    let (_, h, w) = first.chw()?;
    let mut channels = 0;
    let mut data = Vec::new();
    for part in parts {
        let (c, ph, pw) = part.chw()?;
        if (ph, pw) != (h, w) {
            return Err(Error::shape("concat_channels", format!("spatial {ph}×{pw} vs {h}×{w}")));
        }
        channels += c;
        data.extend_from_slice(part.data());
    }
    Ok(Tensor::from_parts(vec![channels, h, w], data))
}

/// Min-max normalisation to `[0, 1]`. A constant map becomes all ones if its
/// value is nonzero and all zeros otherwise.
pub fn min_max_normalize(map: &Tensor) -> Tensor {
    let (lo, hi) = (map.min(), map.max());
    let range = hi - lo;
    let data = if map.numel() == 0 {
        Vec::new()
    } else if range > 0.0 {
        map.data().iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else if hi != 0.0 {
        vec![1.0; map.numel()]
    } else {
        vec![0.0; map.numel()]
    };
    Tensor::from_parts(map.shape().to_vec(), data)
}
