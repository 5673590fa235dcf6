//! Minimal dense numeric kernel.
//!
//! Vectors are plain `Vec<f64>`/`&[f64]`; matrices are row-major [`Matrix`]
//! values with fixed dimensions. The kernel provides exactly the operations
//! the model graph needs (sigmoid, linear map, two-layer feed-forward) with
//! hand-written reverse-mode gradients, plus a central finite-difference
//! gradient checker that validates them.

use crate::error::{Error, Result};

/// Sigmoid outputs are clamped into `[SIGMOID_FLOOR, SIGMOID_CEIL]` so they
/// stay strictly inside (0, 1) even where f64 rounding would saturate them,
/// keeping the `delta1 = 1` / `delta2 = 0` empty-change-set guarantee exact
/// for arbitrarily large finite scores. The bounds are asymmetric because
/// f64 saturation is: `1/(1+e^-x)` rounds to exactly 1.0 already near
/// x = 37, while the lower tail stays representable down to x ≈ -690.
pub const SIGMOID_FLOOR: f64 = 1e-300;
pub const SIGMOID_CEIL: f64 = 1.0 - 1e-15;

/// Dense row-major matrix with immutable dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from explicit rows, rejecting ragged or non-finite input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("matrix needs at least one row".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("non-finite entry in row {i}")));
                }
                data.push(v);
            }
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Column `c` as an owned vector.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// A learnable matrix: value plus accumulated gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatrix {
    pub value: Matrix,
    pub grad: Matrix,
}

impl ParamMatrix {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        ParamMatrix { value, grad }
    }
}

/// A learnable vector: value plus accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamVector {
    pub fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        ParamVector { value, grad }
    }
}

/// Flat access to every learnable entry of a parameter set, in a stable
/// order. Drives the optimizer and the gradient checker without either
/// knowing the concrete model layout.
pub trait ParamSet {
    /// All `(values, grads)` tensor pairs, in a stable documented order.
    fn tensors(&mut self) -> Vec<(&mut [f64], &mut [f64])>;

    fn flat_len(&mut self) -> usize {
        self.tensors().iter().map(|(v, _)| v.len()).sum()
    }

    fn zero_grad(&mut self) {
        for (_, g) in self.tensors() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn flat_get(&mut self, mut idx: usize) -> f64 {
        for (v, _) in self.tensors() {
            if idx < v.len() {
                return v[idx];
            }
            idx -= v.len();
        }
        panic!("flat index out of range");
    }

    fn flat_set(&mut self, mut idx: usize, value: f64) {
        for (v, _) in self.tensors() {
            if idx < v.len() {
                v[idx] = value;
                return;
            }
            idx -= v.len();
        }
        panic!("flat index out of range");
    }

    fn flat_grads(&mut self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, g) in self.tensors() {
            out.extend_from_slice(g);
        }
        out
    }
}

/// Single learnable vector, mainly a harness for gradient-checking losses
/// with respect to their inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct VecParam {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl VecParam {
    pub fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        VecParam { value, grad }
    }
}

impl ParamSet for VecParam {
    fn tensors(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        vec![(&mut self.value, &mut self.grad)]
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(SIGMOID_FLOOR, SIGMOID_CEIL)
}

/// Elementwise sigmoid. Output lies strictly inside (0, 1).
pub fn sigmoid(x: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("sigmoid: non-finite input at {i}")));
    }
    Ok(x.iter().map(|&v| sigmoid_scalar(v)).collect())
}

/// y = W x.
pub fn linear_apply(w: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(Error::Shape(format!(
            "linear_apply: matrix is {}x{}, input has length {}",
            w.rows(),
            w.cols(),
            x.len()
        )));
    }
    let mut y = vec![0.0; w.rows()];
    for r in 0..w.rows() {
        let row = w.row(r);
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        y[r] = acc;
    }
    Ok(y)
}

/// Reverse-mode step for `y = W x`: accumulates `dW += dy xᵀ` and returns
/// `dx = Wᵀ dy`.
pub fn linear_backward(w: &mut ParamMatrix, x: &[f64], dy: &[f64]) -> Vec<f64> {
    assert_eq!(w.value.cols(), x.len(), "linear_backward input length");
    assert_eq!(w.value.rows(), dy.len(), "linear_backward output length");
    let cols = w.value.cols();
    let mut dx = vec![0.0; cols];
    for (r, &dyr) in dy.iter().enumerate() {
        let grow = &mut w.grad.data_mut()[r * cols..(r + 1) * cols];
        for c in 0..cols {
            grow[c] += dyr * x[c];
        }
        let row = w.value.row(r);
        for c in 0..cols {
            dx[c] += row[c] * dyr;
        }
    }
    dx
}

/// Hidden-layer nonlinearity of the two-layer feed-forward network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// Pass-through, used by the linear test configuration.
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Two-layer feed-forward network `y = W2 act(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w1: ParamMatrix,
    pub b1: ParamVector,
    pub w2: ParamMatrix,
    pub b2: ParamVector,
    pub activation: Activation,
}

impl FfnParams {
    pub fn zeros(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        FfnParams {
            w1: ParamMatrix::new(Matrix::zeros(hidden, input)),
            b1: ParamVector::new(vec![0.0; hidden]),
            w2: ParamMatrix::new(Matrix::zeros(output, hidden)),
            b2: ParamVector::new(vec![0.0; output]),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.value.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.value.rows()
    }
}

impl ParamSet for FfnParams {
    fn tensors(&mut self) -> Vec<(&mut [f64], &mut [f64])> {
        vec![
            (self.w1.value.data_mut(), self.w1.grad.data_mut()),
            (&mut self.b1.value, &mut self.b1.grad),
            (self.w2.value.data_mut(), self.w2.grad.data_mut()),
            (&mut self.b2.value, &mut self.b2.grad),
        ]
    }
}

/// Intermediates cached by [`ffn_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct FfnCache {
    pub x: Vec<f64>,
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub y: Vec<f64>,
}

/// Forward pass retaining intermediates for [`ffn_backward`].
pub fn ffn_forward(p: &FfnParams, x: &[f64]) -> Result<FfnCache> {
    if x.len() != p.input_dim() {
        return Err(Error::Shape(format!(
            "ffn: input has length {}, expected {}",
            x.len(),
            p.input_dim()
        )));
    }
    let mut z1 = linear_apply(&p.w1.value, x)?;
    for (z, b) in z1.iter_mut().zip(&p.b1.value) {
        *z += b;
    }
    let a1: Vec<f64> = z1.iter().map(|&z| p.activation.apply(z)).collect();
    let mut y = linear_apply(&p.w2.value, &a1)?;
    for (yv, b) in y.iter_mut().zip(&p.b2.value) {
        *yv += b;
    }
    Ok(FfnCache {
        x: x.to_vec(),
        z1,
        a1,
        y,
    })
}

/// y = W2 act(W1 x + b1) + b2, without caching.
pub fn ffn_apply(p: &FfnParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(ffn_forward(p, x)?.y)
}

/// Reverse-mode step through the feed-forward network. Accumulates parameter
/// gradients and returns `dL/dx`.
pub fn ffn_backward(p: &mut FfnParams, cache: &FfnCache, dy: &[f64]) -> Vec<f64> {
    assert_eq!(dy.len(), p.output_dim(), "ffn_backward output length");
    for (g, d) in p.b2.grad.iter_mut().zip(dy) {
        *g += d;
    }
    let da1 = linear_backward(&mut p.w2, &cache.a1, dy);
    let dz1: Vec<f64> = da1
        .iter()
        .zip(&cache.z1)
        .map(|(&da, &z)| da * p.activation.derivative(z))
        .collect();
    for (g, d) in p.b1.grad.iter_mut().zip(&dz1) {
        *g += d;
    }
    linear_backward(&mut p.w1, &cache.x, &dz1)
}

/// Checks reverse-mode gradients against central finite differences.
///
/// `loss_fn` must accumulate gradients into `params` (which arrive zeroed)
/// and return the loss. Every parameter entry is perturbed by `±eps`; the
/// relative error uses denominator `max(|analytic|, |numeric|, 1e-8)`.
/// Returns the maximum relative error over all entries.
pub fn grad_check<P, F>(params: &mut P, mut loss_fn: F, eps: f64) -> Result<f64>
where
    P: ParamSet,
    F: FnMut(&mut P) -> Result<f64>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Config(format!(
            "grad_check: eps must be in (0, 1e-2], got {eps}"
        )));
    }
    params.zero_grad();
    let base = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("grad_check: non-finite loss {base}")));
    }
    let analytic = params.flat_grads();
    let n = analytic.len();

    let mut max_rel = 0.0f64;
    for i in 0..n {
        let orig = params.flat_get(i);

        params.flat_set(i, orig + eps);
        params.zero_grad();
        let plus = loss_fn(params)?;

        params.flat_set(i, orig - eps);
        params.zero_grad();
        let minus = loss_fn(params)?;

        params.flat_set(i, orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(
                "grad_check: non-finite loss under perturbation".into(),
            ));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    params.zero_grad();
    Ok(max_rel)
}
