//! Reverse-mode tape over the kernel set in [`super::ops`].
//!
//! Values are recorded eagerly; [`GradTape::backward`] walks the node list in
//! reverse. Only the operations the fusion blocks need are supported.

use std::collections::BTreeMap;

use super::ops::{self, layer_norm_stats, rms_inv};
use super::params::{MlpSpec, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Sparse row-combination weights: output row `i` is `Σ w * input[j]` over
/// the `(j, w)` pairs of `rows[i]`. An empty entry yields a zero row.
pub type RowWeights = Vec<Vec<(usize, f64)>>;

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { a: Var, gain: Var, bias: Var, eps: f64 },
    RmsNorm { a: Var, gain: Var, eps: f64 },
    CombineRows { a: Var, weights: RowWeights },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    Reshape(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation graph for one forward pass. Single owner; build a
/// fresh tape per evaluation.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    matmul_grad_fault: Option<f64>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scales the left-operand gradient of every matmul by `factor`.
    /// Negative-control fixture for the gradient checker.
    pub fn corrupt_matmul_backward(&mut self, factor: f64) {
        self.matmul_grad_fault = Some(factor);
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of parameters touched so far, in sorted order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records parameter `name`; repeated lookups return the same handle so
    /// gradients from every use accumulate on one node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = params.get(name)?.clone();
        let v = self.push(value, Op::Param);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let y = self.value(a).transpose2()?;
        Ok(self.push(y, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).sub(self.value(b))?;
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).mul(self.value(b))?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let y = self.value(a).scale(s);
        self.push(y, Op::Scale(a, s))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let y = ops::add_row(self.value(a), self.value(bias))?;
        Ok(self.push(y, Op::AddRow(a, bias)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = ops::relu(self.value(a));
        self.push(y, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = ops::sigmoid(self.value(a));
        self.push(y, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        self.softmax_rows_masked(a, None)
    }

    pub fn softmax_rows_masked(&mut self, a: Var, mask: Option<&[bool]>) -> Var {
        let y = ops::softmax_rows_masked(self.value(a), mask);
        self.push(y, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let y = ops::layer_norm(self.value(a), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(y, Op::LayerNorm { a, gain, bias, eps }))
    }

    pub fn rms_norm(&mut self, a: Var, gain: Var, eps: f64) -> Result<Var> {
        let y = ops::rms_norm(self.value(a), self.value(gain), eps)?;
        Ok(self.push(y, Op::RmsNorm { a, gain, eps }))
    }

    /// Output `i` is a weighted sum of input rows; see [`RowWeights`].
    /// Gathers, scatters, pooling and bilinear sampling are all expressed
    /// through this one op.
    pub fn combine_rows(&mut self, a: Var, weights: RowWeights) -> Result<Var> {
        let src = self.value(a);
        let (rows, c) = (src.rows(), src.last_dim());
        let mut out = vec![0.0; weights.len().max(1) * c];
        for (i, terms) in weights.iter().enumerate() {
            let orow = &mut out[i * c..(i + 1) * c];
            for &(j, w) in terms {
                if j >= rows {
                    return Err(Error::dim("combine_rows", format!("row index {j} out of {rows}")));
                }
                for (o, x) in orow.iter_mut().zip(src.row(j)) {
                    *o += w * x;
                }
            }
        }
        if weights.is_empty() {
            return Err(Error::dim("combine_rows", "no output rows"));
        }
        let y = Tensor::new(vec![weights.len(), c], out)?;
        Ok(self.push(y, Op::CombineRows { a, weights }))
    }

    /// Row gather; `None` produces a zero row.
    pub fn gather_rows(&mut self, a: Var, index: &[Option<usize>]) -> Result<Var> {
        let w = index
            .iter()
            .map(|i| i.map(|j| vec![(j, 1.0)]).unwrap_or_default())
            .collect();
        self.combine_rows(a, w)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let y = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(y, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.value(parts[0]).last_dim();
        if parts.iter().any(|&p| self.value(p).last_dim() != c) {
            return Err(Error::dim("concat_rows", "widths differ"));
        }
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
            rows += self.value(p).rows();
        }
        let y = Tensor::new(vec![rows, c], out)?;
        Ok(self.push(y, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let src = self.value(a);
        if start >= end || end > src.last_dim() {
            return Err(Error::dim(
                "slice_cols",
                format!("[{start}, {end}) of width {}", src.last_dim()),
            ));
        }
        let rows = src.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&src.row(r)[start..end]);
        }
        let y = Tensor::new(vec![rows, end - start], out)?;
        Ok(self.push(y, Op::SliceCols { a, start }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(a).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let y = Tensor::scalar(self.value(a).sum());
        self.push(y, Op::Sum(a))
    }

    /// `Σ a ⊙ w` for a constant weight tensor; a convenient scalar head.
    pub fn weighted_sum(&mut self, a: Var, w: &Tensor) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let w = self.leaf(w.reshape(&shape)?);
        let p = self.mul(a, w)?;
        Ok(self.sum(p))
    }

    /// `x · {prefix}.weight (+ {prefix}.bias)` on the row view of `x`.
    pub fn linear(&mut self, params: &ParamSet, x: Var, prefix: &str, bias: bool) -> Result<Var> {
        let t = self.value(x);
        let (rows, c) = (t.rows(), t.last_dim());
        let x2 = if t.rank() == 2 { x } else { self.reshape(x, &[rows, c])? };
        let w = self.param(params, &format!("{prefix}.weight"))?;
        let y = self.matmul(x2, w)?;
        if bias {
            let b = self.param(params, &format!("{prefix}.bias"))?;
            self.add_row(y, b)
        } else {
            Ok(y)
        }
    }

    /// MLP on the row view of `x`; returns `rows x out_width`.
    pub fn mlp(&mut self, params: &ParamSet, x: Var, spec: &MlpSpec) -> Result<Var> {
        if self.value(x).last_dim() != spec.input_width() {
            return Err(Error::dim(
                "mlp",
                format!("input width {} vs {}", self.value(x).last_dim(), spec.input_width()),
            ));
        }
        let mut h = x;
        for i in 0..spec.layers() {
            h = self.linear(params, h, &spec.layer_prefix(i), true)?;
            if i + 1 < spec.layers() {
                h = self.relu(h);
            }
        }
        Ok(h)
    }

    /// Layer norm with `{prefix}.gain` and `{prefix}.bias`.
    pub fn layer_norm_p(&mut self, params: &ParamSet, x: Var, prefix: &str, eps: f64) -> Result<Var> {
        let g = self.param(params, &format!("{prefix}.gain"))?;
        let b = self.param(params, &format!("{prefix}.bias"))?;
        self.layer_norm(x, g, b, eps)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mut da = ops::matmul(g, &bv.transpose2()?)?;
                if let Some(f) = self.matmul_grad_fault {
                    da = da.scale(f);
                }
                let db = ops::matmul(&av.transpose2()?, g)?;
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose2()?),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.mul(self.value(*b))?);
                accumulate(grads, *b, g.mul(self.value(*a))?);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::AddRow(a, b) => {
                accumulate(grads, *a, g.clone());
                let bv = self.value(*b);
                let mut db = Tensor::zeros(bv.shape());
                for r in 0..g.rows() {
                    for (d, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                accumulate(grads, *b, db);
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let da = g.zip_map(av, "relu", |gy, x| if x > 0.0 { gy } else { 0.0 })?;
                accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = g.zip_map(out, "sigmoid", |gy, s| gy * s * (1.0 - s))?;
                accumulate(grads, *a, da);
            }
            Op::Softmax(a) => {
                let mut da = g.clone();
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gy = g.row(r);
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for ((d, &yi), &gi) in da.row_mut(r).iter_mut().zip(y).zip(gy) {
                        *d = yi * (gi - dot);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LayerNorm { a, gain, bias, eps } => {
                let x = self.value(*a);
                let gv = self.value(*gain);
                let n = x.last_dim();
                let nf = n as f64;
                let mut dx = Tensor::zeros(x.shape());
                let mut dg = Tensor::zeros(gv.shape());
                let mut db = Tensor::zeros(gv.shape());
                let mut xhat = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let gy = g.row(r);
                    let (mean, rstd) = layer_norm_stats(row, *eps);
                    for c in 0..n {
                        xhat[c] = (row[c] - mean) * rstd;
                        dxhat[c] = gy[c] * gv.data()[c];
                        dg.data_mut()[c] += gy[c] * xhat[c];
                        db.data_mut()[c] += gy[c];
                    }
                    let s1: f64 = dxhat.iter().sum();
                    let s2: f64 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = rstd / nf * (nf * dxhat[c] - s1 - xhat[c] * s2);
                    }
                }
                accumulate(grads, *a, dx);
                accumulate(grads, *gain, dg);
                accumulate(grads, *bias, db);
            }
            Op::RmsNorm { a, gain, eps } => {
                let x = self.value(*a);
                let gv = self.value(*gain);
                let nf = x.last_dim() as f64;
                let mut dx = Tensor::zeros(x.shape());
                let mut dg = Tensor::zeros(gv.shape());
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let gy = g.row(r);
                    let inv = rms_inv(row, *eps);
                    let mut s = 0.0;
                    for c in 0..row.len() {
                        dg.data_mut()[c] += gy[c] * row[c] * inv;
                        s += gy[c] * gv.data()[c] * row[c];
                    }
                    let k = inv * inv * inv / nf * s;
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = inv * gv.data()[c] * gy[c] - row[c] * k;
                    }
                }
                accumulate(grads, *a, dx);
                accumulate(grads, *gain, dg);
            }
            Op::CombineRows { a, weights } => {
                let av = self.value(*a);
                let mut da = Tensor::zeros(av.shape());
                for (i, terms) in weights.iter().enumerate() {
                    let gy = g.row(i);
                    for &(j, w) in terms {
                        for (d, x) in da.row_mut(j).iter_mut().zip(gy) {
                            *d += w * x;
                        }
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.last_dim();
                    let mut dp = Tensor::zeros(pv.shape());
                    for r in 0..pv.rows() {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    offset += w;
                    accumulate(grads, p, dp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.len();
                    let dp = Tensor::new(pv.shape().to_vec(), g.data()[offset..offset + n].to_vec())?;
                    offset += n;
                    accumulate(grads, p, dp);
                }
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let w = g.last_dim();
                let mut da = Tensor::zeros(av.shape());
                for r in 0..g.rows() {
                    da.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, da);
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(grads, *a, g.reshape(&shape)?);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(grads, *a, Tensor::full(&shape, g.data()[0]));
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut grads[v.0] {
        Some(g) => {
            for (x, d) in g.data_mut().iter_mut().zip(delta.data()) {
                *x += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

/// Result of [`GradTape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient per parameter name. Parameters recorded on the tape but not
    /// reached from the loss get zeros of the parameter's shape.
    pub fn params(&self, tape: &GradTape) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = self
                    .wrt(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
