//! Dense vectors, row-major matrices and the scalar activations shared by
//! every other module. Everything is `f64`; the models here are tiny and the
//! statistics downstream are sensitive to rounding.

use std::ops::{Deref, Index};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vec64(Vec<f64>);

impl Vec64 {
    /// Builds a vector, rejecting NaN and infinities.
    pub fn new(elements: Vec<f64>) -> Result<Self> {
        if elements.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("Vec64::new"));
        }
        Ok(Vec64(elements))
    }

    pub fn zeros(len: usize) -> Self {
        Vec64(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vec64(vec![value; len])
    }

    /// Internal constructor for values that are finite by construction or
    /// checked by the caller.
    pub(crate) fn from_raw(elements: Vec<f64>) -> Self {
        Vec64(elements)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Elementwise sum; both operands must have the same length.
    pub fn add(&self, other: &Vec64) -> Result<Vec64> {
        if self.len() != other.len() {
            return Err(Error::shape("Vec64::add", self.len(), other.len()));
        }
        Ok(Vec64(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }
}

impl Deref for Vec64 {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for Vec64 {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Vec64 {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vec64::new(v)
    }
}

impl<const N: usize> From<[f64; N]> for Vec64 {
    /// Panics on non-finite literals.
    fn from(a: [f64; N]) -> Self {
        Vec64::new(a.to_vec()).expect("finite literal")
    }
}

/// Row-major dense matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat64 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat64 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Mat64::new (rows*cols)", rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("Mat64::new"));
        }
        Ok(Mat64 { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat64 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat64::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape("Mat64::from_rows", c, row.len()));
            }
            data.extend_from_slice(row);
        }
        Mat64::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Matrix-vector product `m · v`.
pub fn matvec(m: &Mat64, v: &Vec64) -> Result<Vec64> {
    if v.len() != m.cols {
        return Err(Error::Shape {
            context: format!("matvec ({}x{} matrix)", m.rows, m.cols),
            expected: m.cols,
            got: v.len(),
        });
    }
    let mut out = vec![0.0; m.rows];
    gemv_acc(m, v, &mut out);
    Ok(Vec64(out))
}

/// `out += m · v`, no shape checks.
#[inline]
pub(crate) fn gemv_acc(m: &Mat64, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), m.cols);
    debug_assert_eq!(out.len(), m.rows);
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(m.cols.max(1))) {
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(v) {
            acc += w * x;
        }
        *o += acc;
    }
}

/// `out += mᵀ · v`, no shape checks.
#[inline]
pub(crate) fn gemv_t_acc(m: &Mat64, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), m.rows);
    debug_assert_eq!(out.len(), m.cols);
    if m.cols == 0 {
        return;
    }
    for (row, &vr) in m.data.chunks_exact(m.cols).zip(v) {
        if vr == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * vr;
        }
    }
}

/// `g += a ⊗ b` where `g` is a row-major `a.len() x b.len()` buffer.
#[inline]
pub(crate) fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    if cols == 0 {
        return;
    }
    for (row, &ar) in g.chunks_exact_mut(cols).zip(a) {
        if ar == 0.0 {
            continue;
        }
        for (gv, bv) in row.iter_mut().zip(b) {
            *gv += ar * bv;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

/// An elementwise nonlinearity `gain · f(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    pub gain: f64,
}

impl Activation {
    pub fn new(kind: ActivationKind, gain: f64) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "activation gain must be positive, got {gain}"
            )));
        }
        Ok(Activation { kind, gain })
    }

    pub const fn sigmoid() -> Self {
        Activation {
            kind: ActivationKind::Sigmoid,
            gain: 1.0,
        }
    }

    pub const fn tanh() -> Self {
        Activation {
            kind: ActivationKind::Tanh,
            gain: 1.0,
        }
    }

    pub const fn relu() -> Self {
        Activation {
            kind: ActivationKind::Relu,
            gain: 1.0,
        }
    }

    pub const fn identity() -> Self {
        Activation {
            kind: ActivationKind::Identity,
            gain: 1.0,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let f = match self.kind {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Identity => x,
        };
        self.gain * f
    }

    /// Derivative `gain · f'(x)`. The relu derivative at exactly zero is 0.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        let d = match self.kind {
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Identity => 1.0,
        };
        self.gain * d
    }

    /// Whether `f(0) = 0`, i.e. the origin is a root of the activation.
    pub fn vanishes_at_zero(&self) -> bool {
        !matches!(self.kind, ActivationKind::Sigmoid)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn apply_activation(a: Activation, v: &Vec64) -> Vec64 {
    Vec64(v.iter().map(|&x| a.eval(x)).collect())
}

pub fn activation_derivative(a: Activation, v: &Vec64) -> Vec64 {
    Vec64(v.iter().map(|&x| a.derivative(x)).collect())
}

/// Sign with `sign(0) = +1`, the convention used by every stabilizer.
#[inline]
pub fn sign_pos(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}
