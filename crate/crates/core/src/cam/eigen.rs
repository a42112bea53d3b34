//! Seg-Eigen-CAM: projection of the layer activations onto their first
//! right singular vector. Class and region play no role.

use super::{CamIntermediates, CamOptions, CamRequest, Method, SaliencyMap};
use crate::error::{Error, Result};
use crate::pixels::PixelSet;
use crate::segnet::Model;
use crate::tensor::Tensor;

pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITERATIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenFactors {
    /// `(h·w) × K` activation matrix.
    pub o: Tensor,
    /// Singular values of `O`, non-increasing.
    pub singular_values: Vec<f64>,
    /// First right singular vector, unit length.
    pub v1: Vec<f64>,
    pub iterations: usize,
}

/// Reshapes `K × h × w` activations to the `(h·w) × K` matrix `O`.
pub fn activation_matrix(activations: &Tensor) -> Result<Tensor> {
    let (k, h, w) = activations.chw()?;
    let plane = h * w;
    let a = activations.data();
    let data = (0..plane).flat_map(|p| (0..k).map(move |ch| a[ch * plane + p])).collect();
    Tensor::new(vec![plane, k], data)
}

fn gram(o: &Tensor) -> Vec<f64> {
    let [n, k] = o.shape()[..] else { unreachable!("O is a matrix") };
    let d = o.data();
    let mut g = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let v = (0..n).fold(0.0, |acc, p| acc + d[p * k + i] * d[p * k + j]);
            g[i * k + j] = v;
            g[j * k + i] = v;
        }
    }
    g
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let k = v.len();
    (0..k).map(|i| (0..k).fold(0.0, |acc, j| acc + m[i * k + j] * v[j])).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x).sqrt()
}

/// Power iteration on `OᵀO`. Returns the unit vector and iteration count,
/// or `None` when `O` is identically zero.
pub fn leading_right_singular_vector(o: &Tensor) -> Result<Option<(Vec<f64>, usize)>> {
    let k = o.shape()[1];
    let g = gram(o);
    if g.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let mut v = vec![1.0 / (k as f64).sqrt(); k];
    if norm(&mat_vec(&g, &v)) == 0.0 {
        // start vector in the null space: restart from the heaviest coordinate
        let j = (0..k).max_by(|&a, &b| g[a * k + a].total_cmp(&g[b * k + b])).expect("k >= 1");
        v = vec![0.0; k];
        v[j] = 1.0;
    }
    let mut delta = f64::INFINITY;
    for iteration in 1..=POWER_MAX_ITERATIONS {
        let next = mat_vec(&g, &v);
        let n = norm(&next);
        let next: Vec<f64> = next.iter().map(|x| x / n).collect();
        delta = norm(&next.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        v = next;
        if delta < POWER_TOLERANCE {
            return Ok(Some((v, iteration)));
        }
    }
    Err(Error::NoConvergence { iterations: POWER_MAX_ITERATIONS, last_delta: delta })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(mut m: Vec<f64>, k: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let off = (0..k).flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)));
        let off_norm: f64 = off.map(|(i, j)| m[i * k + j] * m[i * k + j]).sum();
        let scale: f64 = (0..k).map(|i| m[i * k + i] * m[i * k + i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off_norm <= 1e-30 * scale {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = m[p * k + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * k + q] - m[p * k + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let (mrp, mrq) = (m[r * k + p], m[r * k + q]);
                    m[r * k + p] = c * mrp - s * mrq;
                    m[r * k + q] = s * mrp + c * mrq;
                }
                for r in 0..k {
                    let (mpr, mqr) = (m[p * k + r], m[q * k + r]);
                    m[p * k + r] = c * mpr - s * mqr;
                    m[q * k + r] = s * mpr + c * mqr;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..k).map(|i| m[i * k + i]).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// `O·V1` reshaped to `h × w`, sign-fixed so that its largest-magnitude
/// entry is positive.
pub fn eigen_projection(activations: &Tensor) -> Result<(Tensor, EigenFactors)> {
    let (k, h, w) = activations.chw()?;
    let o = activation_matrix(activations)?;
    let Some((v1, iterations)) = leading_right_singular_vector(&o)? else {
        let factors = EigenFactors { o, singular_values: vec![0.0; k], v1: vec![0.0; k], iterations: 0 };
        return Ok((Tensor::zeros(&[h, w]), factors));
    };
    let d = o.data();
    let mut proj: Vec<f64> = (0..h * w).map(|p| (0..k).fold(0.0, |acc, ch| acc + d[p * k + ch] * v1[ch])).collect();
    let pivot = proj.iter().enumerate().fold(0, |best, (i, v)| if v.abs() > proj[best].abs() { i } else { best });
    let (v1, proj) = if proj[pivot] < 0.0 {
        proj.iter_mut().for_each(|v| *v = -*v);
        (v1.iter().map(|v| -v).collect(), proj)
    } else {
        (v1, proj)
    };
    let singular_values = symmetric_eigenvalues(gram(&o), k).into_iter().map(|l| l.max(0.0).sqrt()).collect();
    let map = Tensor::checked("eigen_projection", vec![h, w], proj)?;
    Ok((map, EigenFactors { o, singular_values, v1, iterations }))
}

pub(super) fn run(req: &CamRequest) -> Result<(SaliencyMap, CamIntermediates)> {
    let (raw, factors) = eigen_projection(&req.activations()?)?;
    let inter = CamIntermediates { channel_weights: factors.v1.clone(), eigen: Some(factors), ..Default::default() };
    Ok((req.finish(Method::EigenCam, &raw)?, inter))
}

pub fn seg_eigen_cam(model: &Model, image: &Tensor, class: usize, region: &PixelSet, layer: &str) -> Result<SaliencyMap> {
    let req = CamRequest::new(model, image, class, region, layer, CamOptions::default())?;
    run(&req).map(|(map, _)| map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_projects_onto_u() {
        // O = 3 · u vᵀ with u ≥ 0
        let u = [0.1, 0.5, 0.0, 0.9, 0.3, 0.2];
        let v = [0.6, -0.8];
        let a = Tensor::from_fn(&[2, 2, 3], |i| 3.0 * v[i / 6] * u[i % 6]).unwrap();
        let (map, f) = eigen_projection(&a).unwrap();
        assert!((norm(&f.v1) - 1.0).abs() < 1e-10);
        assert!((f.singular_values[0] - 3.0 * norm(&u) * norm(&v)).abs() < 1e-9);
        assert!(f.singular_values[1].abs() < 1e-6);
        let scale = map.data()[3] / u[3];
        for (m, x) in map.data().iter().zip(u) {
            assert!((m - scale * x).abs() < 1e-12);
        }
    }

    #[test]
    fn negation_flips_nothing() {
        let a = Tensor::from_fn(&[3, 4, 4], |i| ((i * 37) % 11) as f64 / 7.0).unwrap();
        let neg = a.map("neg", |v| -v).unwrap();
        assert_eq!(eigen_projection(&a).unwrap().0, eigen_projection(&neg).unwrap().0);
    }

    #[test]
    fn zero_activations_give_zero_map() {
        let (map, f) = eigen_projection(&Tensor::zeros(&[2, 3, 3])).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
        assert_eq!(f.singular_values, [0.0, 0.0]);
    }

    #[test]
    fn singular_values_are_sorted() {
        let a = Tensor::from_fn(&[4, 3, 3], |i| (((i * 7919) % 13) as f64 - 6.0) / 5.0).unwrap();
        let (_, f) = eigen_projection(&a).unwrap();
        assert!(f.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(f.singular_values.iter().all(|&s| s >= 0.0));
    }
}
