//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation as it is evaluated. Calling
//! [`Tape::backward_into`] walks the record in reverse and accumulates the
//! exact gradient of a scalar output into the [`ParamStore`] entries that were
//! pulled onto the tape with [`Tape::param`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Storage precision. `F32` rounds every recorded value to single precision;
/// gradient checking requires `F64`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FloatMode {
    #[default]
    F64,
    F32,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Matrix),
    ScalarMul(usize, usize),
    Recip(usize),
    ClampMin(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SelectRow(usize, usize),
    Sum(usize),
    SumSq(usize),
    Nll {
        probs: usize,
        targets: Vec<usize>,
        floor: f64,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, usize>,
    mode: FloatMode,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_mode(mode: FloatMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Matrix, op: Op) -> Var {
        if self.mode == FloatMode::F32 {
            for v in value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Records a constant; no gradient flows out of the tape for it.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Pulls a named parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&idx) = self.params.get(name) {
            return Ok(Var(idx));
        }
        let value = store.value(name)?.clone();
        let v = self.push(value, Op::Leaf);
        self.params.insert(name.to_string(), v.0);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a.0, b.0)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a.0, b.0)))
    }

    /// Adds a `1 x cols` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(value, Op::AddRow(a.0, bias.0)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a.0, s))
    }

    /// Elementwise product with a constant matrix (masks, fixed normalisers).
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        let value = self.value(a).hadamard(&c)?;
        Ok(self.push(value, Op::MulConst(a.0, c)))
    }

    /// Multiplies every entry of `a` by the 1x1 value `s`.
    pub fn scalar_mul(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(Error::Dimension {
                op: "scalar_mul",
                left: self.shape(a),
                right: self.shape(s),
            });
        }
        let value = self.value(a).scale(self.value(s).item());
        Ok(self.push(value, Op::ScalarMul(a.0, s.0)))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().contains(&0.0) {
            return Err(Error::NumericInput("recip"));
        }
        let value = self.value(a).map(|v| 1.0 / v);
        Ok(self.push(value, Op::Recip(a.0)))
    }

    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let value = self.value(a).map(|v| v.max(lo));
        self.push(value, Op::ClampMin(a.0, lo))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).softmax_rows()?;
        Ok(self.push(value, Op::Softmax(a.0)))
    }

    /// Row softmax over the entries where `mask` is non-zero; the rest are 0.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &Matrix) -> Result<Var> {
        let value = self.value(a).masked_softmax_rows(Some(mask))?;
        Ok(self.push(value, Op::Softmax(a.0)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::Config(format!("layer norm eps must be positive, got {eps}")));
        }
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        for p in [gain, bias] {
            if self.shape(p) != (1, cols) {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    left: (rows, cols),
                    right: self.shape(p),
                });
            }
        }
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gain).row(0).to_vec();
        let b = self.value(bias).row(0).to_vec();
        let mut value = xhat.clone();
        for r in 0..rows {
            for ((o, gv), bv) in value.row_mut(r).iter_mut().zip(&g).zip(&b) {
                *o = *o * gv + bv;
            }
        }
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_cols(&mats)?;
        Ok(self.push(value, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_rows(&mats)?;
        Ok(self.push(value, Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).slice_cols(start, len)?;
        Ok(self.push(value, Op::SliceCols(a.0, start)))
    }

    pub fn select_row(&mut self, a: Var, r: usize) -> Result<Var> {
        let value = self.value(a).select_row(r)?;
        Ok(self.push(value, Op::SelectRow(a.0, r)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a.0))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sq_norm());
        self.push(value, Op::SumSq(a.0))
    }

    /// Summed negative log-likelihood `-sum_i ln max(P[i, t_i], floor)`.
    pub fn nll_sum(&mut self, probs: Var, targets: &[usize], floor: f64) -> Result<Var> {
        let p = self.value(probs);
        if targets.len() != p.rows() {
            return Err(Error::Shape(format!(
                "{} targets for {} probability rows",
                targets.len(),
                p.rows()
            )));
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= p.cols() {
                return Err(Error::Shape(format!("target {t} out of range for {} classes", p.cols())));
            }
            total -= p.get(i, t).max(floor).ln();
        }
        Ok(self.push(
            Matrix::scalar(total),
            Op::Nll {
                probs: probs.0,
                targets: targets.to_vec(),
                floor,
            },
        ))
    }

    /// Gradients of `seed * output` with respect to every recorded node.
    pub fn gradients(&self, output: Var, seed: f64) -> Result<Vec<Option<Matrix>>> {
        if self.shape(output) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::new();
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Matrix::scalar(seed));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |i: usize| &self.nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_bt(val(*b))?;
                    let gb = val(*a).matmul_at(&g)?;
                    acc(&mut grads, *a, ga)?;
                    acc(&mut grads, *b, gb)?;
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose())?,
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone())?;
                    acc(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone())?;
                    acc(&mut grads, *b, g.scale(-1.0))?;
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(val(*b))?;
                    let gb = g.hadamard(val(*a))?;
                    acc(&mut grads, *a, ga)?;
                    acc(&mut grads, *b, gb)?;
                }
                Op::AddRow(a, bias) => {
                    acc(&mut grads, *bias, g.col_sums())?;
                    acc(&mut grads, *a, g)?;
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s))?,
                Op::MulConst(a, c) => acc(&mut grads, *a, g.hadamard(c)?)?,
                Op::ScalarMul(a, s) => {
                    let gs = Matrix::scalar(g.hadamard(val(*a))?.sum());
                    acc(&mut grads, *a, g.scale(val(*s).item()))?;
                    acc(&mut grads, *s, gs)?;
                }
                Op::Recip(a) => {
                    let ga = g.zip_map(&node.value, "recip", |gv, y| -gv * y * y)?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::ClampMin(a, lo) => {
                    let ga = g.zip_map(val(*a), "clamp", |gv, x| if x > *lo { gv } else { 0.0 })?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(val(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, "sigmoid", |gv, y| gv * y * (1.0 - y))?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, "tanh", |gv, y| gv * (1.0 - y * y))?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, &p), &q) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = p * (q - dot);
                        }
                    }
                    acc(&mut grads, *a, ga)?;
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gain_v = val(*gain).row(0);
                    let (rows, cols) = xhat.shape();
                    let n = cols as f64;
                    let mut gx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let xh = xhat.row(r);
                        let dxhat: Vec<f64> = g.row(r).iter().zip(gain_v).map(|(a, b)| a * b).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for ((o, d), h) in gx.row_mut(r).iter_mut().zip(&dxhat).zip(xh) {
                            *o = inv_std[r] / n * (n * d - s1 - h * s2);
                        }
                    }
                    acc(&mut grads, *gain, g.hadamard(xhat)?.col_sums())?;
                    acc(&mut grads, *bias, g.col_sums())?;
                    acc(&mut grads, *x, gx)?;
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        acc(&mut grads, p, g.slice_cols(start, w)?)?;
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut start = 0;
                    for &p in parts {
                        let h = val(p).rows();
                        let block = Matrix::from_vec(h, cols, g.data()[start * cols..(start + h) * cols].to_vec())?;
                        acc(&mut grads, p, block)?;
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let (rows, cols) = val(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga)?;
                }
                Op::SelectRow(a, r) => {
                    let (rows, cols) = val(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    ga.row_mut(*r).copy_from_slice(g.row(0));
                    acc(&mut grads, *a, ga)?;
                }
                Op::Sum(a) => {
                    let (rows, cols) = val(*a).shape();
                    acc(&mut grads, *a, Matrix::filled(rows, cols, g.item()))?;
                }
                Op::SumSq(a) => {
                    let s = 2.0 * g.item();
                    acc(&mut grads, *a, val(*a).scale(s))?;
                }
                Op::Nll { probs, targets, floor } => {
                    let p = val(*probs);
                    let mut gp = Matrix::zeros(p.rows(), p.cols());
                    for (i, &t) in targets.iter().enumerate() {
                        let pv = p.get(i, t);
                        if pv > *floor {
                            gp.set(i, t, -g.item() / pv);
                        }
                    }
                    acc(&mut grads, *probs, gp)?;
                }
            }
        }
        Ok(grads)
    }

    /// Back-propagates `seed * output` and adds the result to the gradient slots
    /// of every parameter used on this tape.
    pub fn backward_into(&self, output: Var, seed: f64, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(output, seed)?;
        for (name, &idx) in &self.params {
            if let Some(Some(g)) = grads.get(idx) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) -> Result<()> {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
