//! Pure tensor kernels. The tape in [`super::tape`] records the same kernels,
//! so a forward value computed with or without a tape is bit-identical.

use rand::Rng;

use super::params::{named_rng, MlpSpec, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};

/// Default epsilon of both normalizations.
pub const NORM_EPS: f64 = 1e-6;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::dim("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Row softmax with max subtraction.
pub fn softmax_rows(a: &Tensor) -> Tensor {
    softmax_rows_masked(a, None)
}

/// Row softmax where columns with `mask[c] == false` get probability zero.
/// A row with no valid column is all zeros.
pub fn softmax_rows_masked(a: &Tensor, mask: Option<&[bool]>) -> Tensor {
    let n = a.last_dim();
    let mut out = a.clone();
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        let valid = |c: usize| mask.is_none_or(|m| m[c]);
        let mut max = f64::NEG_INFINITY;
        for (c, &x) in row.iter().enumerate() {
            if valid(c) && x > max {
                max = x;
            }
        }
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        for (c, x) in row.iter_mut().enumerate().take(n) {
            if valid(c) {
                *x = (*x - max).exp();
                sum += *x;
            } else {
                *x = 0.0;
            }
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Logistic function, clamped so the result is strictly inside (0, 1) even
/// where `f64` would round to an endpoint.
pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(sigmoid_scalar)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    const HI: f64 = 1.0 - f64::EPSILON / 2.0;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, HI)
}

fn check_affine(op: &'static str, a: &Tensor, v: &Tensor) -> Result<()> {
    if v.len() != a.last_dim() {
        return Err(Error::dim(
            op,
            format!("last dim {} vs parameter length {}", a.last_dim(), v.len()),
        ));
    }
    Ok(())
}

/// Per-row statistics of layer norm: `(mean, 1/sqrt(var + eps))`.
pub(crate) fn layer_norm_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub fn layer_norm(a: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    check_affine("layer_norm", a, gain)?;
    check_affine("layer_norm", a, bias)?;
    let mut out = a.clone();
    for r in 0..a.rows() {
        let (mean, rstd) = layer_norm_stats(a.row(r), eps);
        for ((x, g), b) in out.row_mut(r).iter_mut().zip(gain.data()).zip(bias.data()) {
            *x = (*x - mean) * rstd * g + b;
        }
    }
    Ok(out)
}

/// `1/sqrt(mean(x^2) + eps)` of one row.
pub(crate) fn rms_inv(row: &[f64], eps: f64) -> f64 {
    let ms = row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64;
    1.0 / (ms + eps).sqrt()
}

pub fn rms_norm(a: &Tensor, gain: &Tensor, eps: f64) -> Result<Tensor> {
    check_affine("rms_norm", a, gain)?;
    let mut out = a.clone();
    for r in 0..a.rows() {
        let inv = rms_inv(a.row(r), eps);
        for (x, g) in out.row_mut(r).iter_mut().zip(gain.data()) {
            *x = *x * inv * g;
        }
    }
    Ok(out)
}

/// Adds `bias` (length = last dim) to every row.
pub fn add_row(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_affine("add_row", a, bias)?;
    let mut out = a.clone();
    for r in 0..a.rows() {
        for (x, b) in out.row_mut(r).iter_mut().zip(bias.data()) {
            *x += b;
        }
    }
    Ok(out)
}

/// Row-wise linear map `a · weight + bias` on a `rows x C` view of `a`.
pub fn linear(a: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let flat = a.reshape(&[a.rows(), a.last_dim()])?;
    let y = matmul(&flat, weight)?;
    match bias {
        Some(b) => add_row(&y, b),
        None => Ok(y),
    }
}

/// Fully connected stack with ReLU between layers and none after the last.
/// The leading shape of `a` is kept; only the last dimension changes.
pub fn mlp(a: &Tensor, params: &ParamSet, spec: &MlpSpec) -> Result<Tensor> {
    if a.last_dim() != spec.input_width() {
        return Err(Error::dim(
            "mlp",
            format!("input width {} vs {}", a.last_dim(), spec.input_width()),
        ));
    }
    let mut x = a.reshape(&[a.rows(), a.last_dim()])?;
    for i in 0..spec.layers() {
        let p = spec.layer_prefix(i);
        let w = params.get(&format!("{p}.weight"))?;
        let b = params.get(&format!("{p}.bias"))?;
        x = linear(&x, w, Some(b))?;
        if i + 1 < spec.layers() {
            x = relu(&x);
        }
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = spec.output_width();
    x.reshape(&shape)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropoutMode {
    #[default]
    Eval,
    Train,
}

/// Inverted-dropout keep mask: entries are `0` or `1/(1-rate)`. In
/// [`DropoutMode::Eval`] the mask is all ones.
pub fn dropout_mask(shape: &[usize], rate: f64, seed: u64, mode: DropoutMode) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == DropoutMode::Eval || rate == 0.0 {
        return Ok(Tensor::ones(shape));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = named_rng(seed, "dropout");
    Ok(Tensor::from_fn(shape, |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    }))
}
