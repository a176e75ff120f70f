//! LSTM parameters, the four architectures, and the caching forward pass.
//!
//! All four architectures share one parameter layout; a [`VariantSpec`]
//! decides which matrices are read. Inactive matrices stay zero and are
//! neither read by the forward pass nor trained.
//!
//! | architecture   | cell input `g`   | input gate      | forget gate | output gate     |
//! |----------------|------------------|-----------------|-------------|-----------------|
//! | standard       | `tanh(Wx+Uy+b)`  | `σ(Wx+Uy+b)`    | `σ(Wx+Uy+b)`| `σ(Wx+Uy+b)`    |
//! | nondecreasing  | `a_g σ(Wx+b)`    | `σ(Uy+b)`       | fixed 1     | `σ(Uy+b)`       |
//! | markov         | `a_g σ(Wx+b)`    | `σ(Uy+b)`       | fixed 1     | none (1)        |
//! | gateless       | `a_g σ(Wx+b)`    | none (1)        | fixed 1     | none (1)        |

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numeric::{gemv_acc, sigmoid, Activation, ActivationKind, Mat64, Vec64};

/// Identifies one trainable tensor of [`LstmParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamId {
    Wz,
    Wi,
    Wf,
    Wo,
    Uz,
    Ui,
    Uf,
    Uo,
    Bz,
    Bi,
    Bf,
    Bo,
    HeadW,
    HeadB,
}

impl ParamId {
    pub const ALL: [ParamId; 14] = [
        ParamId::Wz,
        ParamId::Wi,
        ParamId::Wf,
        ParamId::Wo,
        ParamId::Uz,
        ParamId::Ui,
        ParamId::Uf,
        ParamId::Uo,
        ParamId::Bz,
        ParamId::Bi,
        ParamId::Bf,
        ParamId::Bo,
        ParamId::HeadW,
        ParamId::HeadB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Wz => "w_z",
            ParamId::Wi => "w_i",
            ParamId::Wf => "w_f",
            ParamId::Wo => "w_o",
            ParamId::Uz => "u_z",
            ParamId::Ui => "u_i",
            ParamId::Uf => "u_f",
            ParamId::Uo => "u_o",
            ParamId::Bz => "b_z",
            ParamId::Bi => "b_i",
            ParamId::Bf => "b_f",
            ParamId::Bo => "b_o",
            ParamId::HeadW => "head_w",
            ParamId::HeadB => "head_b",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub head_bias: bool,
}

/// Weights of a single-layer LSTM plus its linear read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_z: Mat64,
    pub w_i: Mat64,
    pub w_f: Mat64,
    pub w_o: Mat64,
    pub u_z: Mat64,
    pub u_i: Mat64,
    pub u_f: Mat64,
    pub u_o: Mat64,
    pub b_z: Vec64,
    pub b_i: Vec64,
    pub b_f: Vec64,
    pub b_o: Vec64,
    pub head_w: Mat64,
    pub head_b: Option<Vec64>,
}

impl LstmParams {
    pub fn zeros(dims: Dims) -> Self {
        let Dims {
            input: d,
            hidden: h,
            output: k,
            head_bias,
        } = dims;
        LstmParams {
            w_z: Mat64::zeros(h, d),
            w_i: Mat64::zeros(h, d),
            w_f: Mat64::zeros(h, d),
            w_o: Mat64::zeros(h, d),
            u_z: Mat64::zeros(h, h),
            u_i: Mat64::zeros(h, h),
            u_f: Mat64::zeros(h, h),
            u_o: Mat64::zeros(h, h),
            b_z: Vec64::zeros(h),
            b_i: Vec64::zeros(h),
            b_f: Vec64::zeros(h),
            b_o: Vec64::zeros(h),
            head_w: Mat64::zeros(k, h),
            head_b: head_bias.then(|| Vec64::zeros(k)),
        }
    }

    /// Random initialization: active weights uniform in `[-0.5, 0.5]`, the
    /// read-out bias at zero. Architectures with a sigmoid cell input get the
    /// negative cell-input and input-gate biases that counter drift.
    pub fn init<R: Rng + ?Sized>(dims: Dims, variant: &VariantSpec, rng: &mut R) -> Self {
        let mut p = LstmParams::zeros(dims);
        for id in ParamId::ALL {
            if id == ParamId::HeadB || !variant.is_active(id) {
                continue;
            }
            for w in p.slice_mut(id) {
                *w = rng.gen_range(-0.5..=0.5);
            }
        }
        if variant.architecture != Architecture::Standard {
            p.b_z.as_mut_slice().fill(DEFAULT_CELL_INPUT_BIAS);
            if variant.connectivity.input_gate {
                p.b_i.as_mut_slice().fill(DEFAULT_INPUT_GATE_BIAS);
            }
        }
        p
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input: self.w_z.cols(),
            hidden: self.w_z.rows(),
            output: self.head_w.rows(),
            head_bias: self.head_b.is_some(),
        }
    }

    /// Checks every shape invariant and finiteness.
    pub fn validate(&self) -> Result<()> {
        let Dims {
            input: d,
            hidden: h,
            output: k,
            ..
        } = self.dims();
        let check = |name: &str, m: &Mat64, rows: usize, cols: usize| -> Result<()> {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
            Ok(())
        };
        for (name, m) in [("w_i", &self.w_i), ("w_f", &self.w_f), ("w_o", &self.w_o)] {
            check(name, m, h, d)?;
        }
        for (name, m) in [
            ("u_z", &self.u_z),
            ("u_i", &self.u_i),
            ("u_f", &self.u_f),
            ("u_o", &self.u_o),
        ] {
            check(name, m, h, h)?;
        }
        for (name, b) in [
            ("b_z", &self.b_z),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
        ] {
            if b.len() != h {
                return Err(Error::Dimension(format!(
                    "{name} has length {}, expected {h}",
                    b.len()
                )));
            }
        }
        if self.head_w.cols() != h {
            return Err(Error::Dimension(format!(
                "head_w has {} columns, expected hidden size {h}",
                self.head_w.cols()
            )));
        }
        if let Some(b) = &self.head_b {
            if b.len() != k {
                return Err(Error::Dimension(format!(
                    "head_b has length {}, expected {k}",
                    b.len()
                )));
            }
        }
        if ParamId::ALL.iter().any(|&id| self.slice(id).iter().any(|v| !v.is_finite())) {
            return Err(Error::non_finite("LstmParams"));
        }
        Ok(())
    }

    /// Row-major storage of one tensor. `HeadB` is empty when the head has no bias.
    pub fn slice(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::Wz => self.w_z.as_slice(),
            ParamId::Wi => self.w_i.as_slice(),
            ParamId::Wf => self.w_f.as_slice(),
            ParamId::Wo => self.w_o.as_slice(),
            ParamId::Uz => self.u_z.as_slice(),
            ParamId::Ui => self.u_i.as_slice(),
            ParamId::Uf => self.u_f.as_slice(),
            ParamId::Uo => self.u_o.as_slice(),
            ParamId::Bz => self.b_z.as_slice(),
            ParamId::Bi => self.b_i.as_slice(),
            ParamId::Bf => self.b_f.as_slice(),
            ParamId::Bo => self.b_o.as_slice(),
            ParamId::HeadW => self.head_w.as_slice(),
            ParamId::HeadB => self.head_b.as_ref().map_or(&[], |b| b.as_slice()),
        }
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [f64] {
        match id {
            ParamId::Wz => self.w_z.as_mut_slice(),
            ParamId::Wi => self.w_i.as_mut_slice(),
            ParamId::Wf => self.w_f.as_mut_slice(),
            ParamId::Wo => self.w_o.as_mut_slice(),
            ParamId::Uz => self.u_z.as_mut_slice(),
            ParamId::Ui => self.u_i.as_mut_slice(),
            ParamId::Uf => self.u_f.as_mut_slice(),
            ParamId::Uo => self.u_o.as_mut_slice(),
            ParamId::Bz => self.b_z.as_mut_slice(),
            ParamId::Bi => self.b_i.as_mut_slice(),
            ParamId::Bf => self.b_f.as_mut_slice(),
            ParamId::Bo => self.b_o.as_mut_slice(),
            ParamId::HeadW => self.head_w.as_mut_slice(),
            ParamId::HeadB => match self.head_b.as_mut() {
                Some(b) => b.as_mut_slice(),
                None => &mut [],
            },
        }
    }

    /// `(rows, cols)` of a tensor; vectors are `(len, 1)`.
    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let m = |m: &Mat64| (m.rows(), m.cols());
        match id {
            ParamId::Wz => m(&self.w_z),
            ParamId::Wi => m(&self.w_i),
            ParamId::Wf => m(&self.w_f),
            ParamId::Wo => m(&self.w_o),
            ParamId::Uz => m(&self.u_z),
            ParamId::Ui => m(&self.u_i),
            ParamId::Uf => m(&self.u_f),
            ParamId::Uo => m(&self.u_o),
            ParamId::HeadW => m(&self.head_w),
            _ => (self.slice(id).len(), 1),
        }
    }
}

pub const DEFAULT_CELL_INPUT_GAIN: f64 = 2.0;
pub const DEFAULT_CELL_STATE_GAIN: f64 = 1.0;
pub const DEFAULT_CELL_INPUT_BIAS: f64 = -3.0;
pub const DEFAULT_INPUT_GATE_BIAS: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Standard,
    Nondecreasing,
    Markov,
    Gateless,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Standard => "standard",
            Architecture::Nondecreasing => "nondecreasing",
            Architecture::Markov => "markov",
            Architecture::Gateless => "gateless",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Architecture::Standard),
            "nondecreasing" => Ok(Architecture::Nondecreasing),
            "markov" => Ok(Architecture::Markov),
            "gateless" => Ok(Architecture::Gateless),
            other => Err(Error::InvalidConfig(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Which optional connections an architecture uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connectivity {
    pub input_gate: bool,
    pub forget_gate: bool,
    pub output_gate: bool,
    /// Input → input gate.
    pub w_i: bool,
    /// Input → output gate.
    pub w_o: bool,
    /// Recurrent → cell input.
    pub u_z: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub architecture: Architecture,
    pub g: Activation,
    pub h: Activation,
    pub connectivity: Connectivity,
}

impl VariantSpec {
    pub fn standard() -> Self {
        VariantSpec {
            architecture: Architecture::Standard,
            g: Activation::tanh(),
            h: Activation::tanh(),
            connectivity: Connectivity {
                input_gate: true,
                forget_gate: true,
                output_gate: true,
                w_i: true,
                w_o: true,
                u_z: true,
            },
        }
    }

    pub fn nondecreasing(a_g: f64, a_h: f64) -> Result<Self> {
        Self::lrp(Architecture::Nondecreasing, a_g, a_h)
    }

    pub fn markov(a_g: f64, a_h: f64) -> Result<Self> {
        Self::lrp(Architecture::Markov, a_g, a_h)
    }

    pub fn gateless(a_g: f64, a_h: f64) -> Result<Self> {
        Self::lrp(Architecture::Gateless, a_g, a_h)
    }

    /// Architecture with its default gains (`a_g = 2`, `a_h = 1`).
    pub fn with_defaults(architecture: Architecture) -> Self {
        match architecture {
            Architecture::Standard => Self::standard(),
            other => Self::lrp(other, DEFAULT_CELL_INPUT_GAIN, DEFAULT_CELL_STATE_GAIN)
                .expect("default gains are valid"),
        }
    }

    fn lrp(architecture: Architecture, a_g: f64, a_h: f64) -> Result<Self> {
        let spec = VariantSpec {
            architecture,
            g: Activation::new(ActivationKind::Sigmoid, a_g)?,
            h: Activation::new(ActivationKind::Tanh, a_h)?,
            connectivity: Self::connectivity_of(architecture),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn connectivity_of(architecture: Architecture) -> Connectivity {
        match architecture {
            Architecture::Standard => Self::standard().connectivity,
            Architecture::Nondecreasing => Connectivity {
                input_gate: true,
                forget_gate: false,
                output_gate: true,
                w_i: false,
                w_o: false,
                u_z: false,
            },
            Architecture::Markov => Connectivity {
                input_gate: true,
                forget_gate: false,
                output_gate: false,
                w_i: false,
                w_o: false,
                u_z: false,
            },
            Architecture::Gateless => Connectivity {
                input_gate: false,
                forget_gate: false,
                output_gate: false,
                w_i: false,
                w_o: false,
                u_z: false,
            },
        }
    }

    /// Enforces the per-architecture invariants.
    pub fn validate(&self) -> Result<()> {
        if self.connectivity != Self::connectivity_of(self.architecture) {
            return Err(Error::InvalidConfig(format!(
                "connectivity does not match the {} architecture",
                self.architecture.name()
            )));
        }
        match self.architecture {
            Architecture::Standard => {
                if self.g != Activation::tanh() || self.h != Activation::tanh() {
                    return Err(Error::InvalidConfig(
                        "standard architecture uses tanh for g and h".into(),
                    ));
                }
            }
            _ => {
                if self.g.kind != ActivationKind::Sigmoid || ![2.0, 3.0, 4.0].contains(&self.g.gain) {
                    return Err(Error::InvalidConfig(format!(
                        "cell input must be a_g * sigmoid with a_g in {{2, 3, 4}}, got {:?}",
                        self.g
                    )));
                }
                if self.h.kind != ActivationKind::Tanh || ![1.0, 2.0, 4.0].contains(&self.h.gain) {
                    return Err(Error::InvalidConfig(format!(
                        "cell state activation must be a_h * tanh with a_h in {{1, 2, 4}}, got {:?}",
                        self.h
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether a tensor is read by this architecture. `HeadB` is reported
    /// active; callers combine it with [`Dims::head_bias`].
    pub fn is_active(&self, id: ParamId) -> bool {
        let c = &self.connectivity;
        match id {
            ParamId::Wz | ParamId::Bz | ParamId::HeadW | ParamId::HeadB => true,
            ParamId::Uz => c.u_z,
            ParamId::Wi => c.input_gate && c.w_i,
            ParamId::Ui | ParamId::Bi => c.input_gate,
            ParamId::Wf | ParamId::Uf | ParamId::Bf => c.forget_gate,
            ParamId::Wo => c.output_gate && c.w_o,
            ParamId::Uo | ParamId::Bo => c.output_gate,
        }
    }

    /// Trainable tensors for a model of the given shape, in [`ParamId`] order.
    pub fn active_params(&self, dims: Dims) -> Vec<ParamId> {
        ParamId::ALL
            .into_iter()
            .filter(|&id| self.is_active(id) && (id != ParamId::HeadB || dims.head_bias))
            .collect()
    }

    pub fn trainable_parameter_count(&self, params: &LstmParams) -> usize {
        self.active_params(params.dims())
            .into_iter()
            .map(|id| params.slice(id).len())
            .sum()
    }
}

/// A nonempty sequence of equal-width input vectors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    dim: usize,
    data: Vec<f64>,
}

impl SequenceInput {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or_else(|| {
            Error::InvalidConfig("sequence must contain at least one timestep".into())
        })?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in &rows {
            if row.len() != dim {
                return Err(Error::shape("SequenceInput row", dim, row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(dim, data)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() {
            return Err(Error::InvalidConfig(
                "sequence must contain at least one timestep of nonzero width".into(),
            ));
        }
        if data.len() % dim != 0 {
            return Err(Error::shape("SequenceInput flat data", dim, data.len() % dim));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("SequenceInput"));
        }
        Ok(SequenceInput { dim, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Copy with timestep `t` replaced by the zero vector.
    pub fn with_zeroed(&self, t: usize) -> Result<Self> {
        if t >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: self.len(),
            });
        }
        let mut data = self.data.clone();
        data[t * self.dim..(t + 1) * self.dim].fill(0.0);
        Ok(SequenceInput {
            dim: self.dim,
            data,
        })
    }
}

/// Activations of one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub z_pre: Vec64,
    pub i_pre: Vec64,
    pub f_pre: Vec64,
    pub o_pre: Vec64,
    pub z: Vec64,
    pub i: Vec64,
    pub f: Vec64,
    pub c: Vec64,
    pub o: Vec64,
    pub y: Vec64,
}

/// Every intermediate of a forward pass, stored as `T x H` row-major buffers.
///
/// Absent gates are recorded with activation 1 and pre-activation 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivationTrace {
    len: usize,
    hidden: usize,
    input_dim: usize,
    inputs: Vec<f64>,
    z_pre: Vec<f64>,
    i_pre: Vec<f64>,
    f_pre: Vec<f64>,
    o_pre: Vec<f64>,
    z: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    c: Vec<f64>,
    o: Vec<f64>,
    hc: Vec<f64>,
    y: Vec<f64>,
    zeros: Vec<f64>,
    prediction: Vec<f64>,
}

macro_rules! trace_accessor {
    ($($name:ident),*) => {
        $(
            pub fn $name(&self, t: usize) -> &[f64] {
                &self.$name[t * self.hidden..(t + 1) * self.hidden]
            }
        )*
    };
}

impl ActivationTrace {
    trace_accessor!(z_pre, i_pre, f_pre, o_pre, z, i, f, c, o, y);

    /// `h(c_t)`, the signal entering the output gate.
    pub fn h_c(&self, t: usize) -> &[f64] {
        &self.hc[t * self.hidden..(t + 1) * self.hidden]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn x(&self, t: usize) -> &[f64] {
        &self.inputs[t * self.input_dim..(t + 1) * self.input_dim]
    }

    /// `y_{t-1}`, zero for the first timestep.
    pub fn y_prev(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.zeros
        } else {
            self.y(t - 1)
        }
    }

    /// `c_{t-1}`, zero for the first timestep.
    pub fn c_prev(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.zeros
        } else {
            self.c(t - 1)
        }
    }

    pub fn prediction(&self) -> &[f64] {
        &self.prediction
    }

    pub fn step(&self, t: usize) -> Step {
        let v = |s: &[f64]| Vec64::from_raw(s.to_vec());
        Step {
            z_pre: v(self.z_pre(t)),
            i_pre: v(self.i_pre(t)),
            f_pre: v(self.f_pre(t)),
            o_pre: v(self.o_pre(t)),
            z: v(self.z(t)),
            i: v(self.i(t)),
            f: v(self.f(t)),
            c: v(self.c(t)),
            o: v(self.o(t)),
            y: v(self.y(t)),
        }
    }

    fn reset(&mut self, len: usize, hidden: usize, input_dim: usize, outputs: usize) {
        self.len = len;
        self.hidden = hidden;
        self.input_dim = input_dim;
        let n = len * hidden;
        for buf in [
            &mut self.z_pre,
            &mut self.i_pre,
            &mut self.f_pre,
            &mut self.o_pre,
            &mut self.z,
            &mut self.i,
            &mut self.f,
            &mut self.c,
            &mut self.o,
            &mut self.hc,
            &mut self.y,
        ] {
            buf.clear();
            buf.resize(n, 0.0);
        }
        self.zeros.clear();
        self.zeros.resize(hidden, 0.0);
        self.prediction.clear();
        self.prediction.resize(outputs, 0.0);
    }
}

fn check_input_dim(params: &LstmParams, got: usize) -> Result<()> {
    let d = params.w_z.cols();
    if got != d {
        return Err(Error::shape("input dimension", d, got));
    }
    Ok(())
}

/// Computes one timestep into `trace` at row `t`, reading `y_{t-1}` and
/// `c_{t-1}` from the trace itself.
fn step_kernel(params: &LstmParams, variant: &VariantSpec, trace: &mut ActivationTrace, t: usize) {
    let h = trace.hidden;
    let d = trace.input_dim;
    let conn = variant.connectivity;
    let r = t * h..(t + 1) * h;
    let x = &trace.inputs[t * d..(t + 1) * d];
    let (prev_y, cur_y) = trace.y.split_at_mut(t * h);
    let y_prev = if t == 0 { &trace.zeros[..] } else { &prev_y[(t - 1) * h..] };
    let cur_y = &mut cur_y[..h];

    let z_pre = &mut trace.z_pre[r.clone()];
    z_pre.copy_from_slice(&params.b_z);
    gemv_acc(&params.w_z, x, z_pre);
    if conn.u_z {
        gemv_acc(&params.u_z, y_prev, z_pre);
    }

    let i_pre = &mut trace.i_pre[r.clone()];
    if conn.input_gate {
        i_pre.copy_from_slice(&params.b_i);
        if conn.w_i {
            gemv_acc(&params.w_i, x, i_pre);
        }
        gemv_acc(&params.u_i, y_prev, i_pre);
    }

    let f_pre = &mut trace.f_pre[r.clone()];
    if conn.forget_gate {
        f_pre.copy_from_slice(&params.b_f);
        gemv_acc(&params.w_f, x, f_pre);
        gemv_acc(&params.u_f, y_prev, f_pre);
    }

    let o_pre = &mut trace.o_pre[r.clone()];
    if conn.output_gate {
        o_pre.copy_from_slice(&params.b_o);
        if conn.w_o {
            gemv_acc(&params.w_o, x, o_pre);
        }
        gemv_acc(&params.u_o, y_prev, o_pre);
    }

    let (prev_c, cur_c) = trace.c.split_at_mut(t * h);
    let c_prev = if t == 0 { &trace.zeros[..] } else { &prev_c[(t - 1) * h..] };
    let cur_c = &mut cur_c[..h];
    for j in 0..h {
        let k = t * h + j;
        let z = variant.g.eval(trace.z_pre[k]);
        let i = if conn.input_gate { sigmoid(trace.i_pre[k]) } else { 1.0 };
        let f = if conn.forget_gate { sigmoid(trace.f_pre[k]) } else { 1.0 };
        let o = if conn.output_gate { sigmoid(trace.o_pre[k]) } else { 1.0 };
        let c = i * z + f * c_prev[j];
        let hc = variant.h.eval(c);
        trace.z[k] = z;
        trace.i[k] = i;
        trace.f[k] = f;
        trace.o[k] = o;
        trace.hc[k] = hc;
        cur_c[j] = c;
        cur_y[j] = o * hc;
    }
}

/// Runs one timestep from explicit previous states.
pub fn forward_step(
    params: &LstmParams,
    variant: &VariantSpec,
    x: &Vec64,
    y_prev: &Vec64,
    c_prev: &Vec64,
) -> Result<Step> {
    check_input_dim(params, x.len())?;
    let h = params.w_z.rows();
    if y_prev.len() != h {
        return Err(Error::shape("y_prev", h, y_prev.len()));
    }
    if c_prev.len() != h {
        return Err(Error::shape("c_prev", h, c_prev.len()));
    }
    // Run as timestep 1 of a two-row trace whose row 0 holds the given state.
    let mut trace = ActivationTrace::default();
    trace.reset(2, h, x.len(), 0);
    trace.inputs = vec![0.0; 2 * x.len()];
    trace.inputs[x.len()..].copy_from_slice(x);
    trace.y[..h].copy_from_slice(y_prev);
    trace.c[..h].copy_from_slice(c_prev);
    step_kernel(params, variant, &mut trace, 1);
    let step = trace.step(1);
    if !(step.c.is_finite() && step.y.is_finite()) {
        return Err(Error::non_finite("forward_step"));
    }
    Ok(step)
}

/// Forward pass from `y_0 = c_0 = 0`, caching every activation.
pub fn forward_sequence(
    params: &LstmParams,
    variant: &VariantSpec,
    seq: &SequenceInput,
) -> Result<ActivationTrace> {
    let mut trace = ActivationTrace::default();
    forward_into(params, variant, seq.as_flat(), seq.dim(), &mut trace)?;
    Ok(trace)
}

/// Allocation-reusing forward pass over a flat `T x D` input buffer.
pub(crate) fn forward_into(
    params: &LstmParams,
    variant: &VariantSpec,
    inputs: &[f64],
    dim: usize,
    trace: &mut ActivationTrace,
) -> Result<()> {
    check_input_dim(params, dim)?;
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("empty input sequence".into()));
    }
    let h = params.w_z.rows();
    let len = inputs.len() / dim;
    trace.reset(len, h, dim, params.head_w.rows());
    trace.inputs.clear();
    trace.inputs.extend_from_slice(inputs);
    for t in 0..len {
        step_kernel(params, variant, trace, t);
        if !(trace.c(t).iter().all(|v| v.is_finite()) && trace.y(t).iter().all(|v| v.is_finite())) {
            return Err(Error::non_finite(format!("forward pass at timestep {}", t + 1)));
        }
    }
    if let Some(b) = &params.head_b {
        trace.prediction.copy_from_slice(b);
    }
    let y_last = &trace.y[(len - 1) * h..len * h];
    gemv_acc(&params.head_w, y_last, &mut trace.prediction);
    if trace.prediction.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("prediction"));
    }
    Ok(())
}

/// Parameters together with the architecture that reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: LstmParams,
    pub variant: VariantSpec,
}

impl Model {
    pub fn new(params: LstmParams, variant: VariantSpec) -> Result<Self> {
        params.validate()?;
        variant.validate()?;
        Ok(Model { params, variant })
    }

    pub fn forward(&self, seq: &SequenceInput) -> Result<ActivationTrace> {
        forward_sequence(&self.params, &self.variant, seq)
    }

    pub fn predict(&self, seq: &SequenceInput) -> Result<Vec64> {
        Ok(Vec64::from_raw(self.forward(seq)?.prediction().to_vec()))
    }

    pub fn dims(&self) -> Dims {
        self.params.dims()
    }
}

pub const MODEL_FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u64,
    variant: Architecture,
    dims: Dims,
    gains: Gains,
    weights: WeightsDocument,
}

#[derive(Serialize, Deserialize)]
struct Gains {
    g: Activation,
    h: Activation,
}

#[derive(Serialize, Deserialize)]
struct WeightsDocument {
    w_z: Vec<f64>,
    w_i: Vec<f64>,
    w_f: Vec<f64>,
    w_o: Vec<f64>,
    u_z: Vec<f64>,
    u_i: Vec<f64>,
    u_f: Vec<f64>,
    u_o: Vec<f64>,
    b_z: Vec<f64>,
    b_i: Vec<f64>,
    b_f: Vec<f64>,
    b_o: Vec<f64>,
    head_w: Vec<f64>,
    head_b: Option<Vec<f64>>,
}

const TOP_LEVEL_FIELDS: [&str; 5] = ["format_version", "variant", "dims", "gains", "weights"];
const WEIGHT_FIELDS: [&str; 14] = [
    "w_z", "w_i", "w_f", "w_o", "u_z", "u_i", "u_f", "u_o", "b_z", "b_i", "b_f", "b_o", "head_w",
    "head_b",
];

/// Serializes a model to the versioned JSON document.
pub fn serialize_model(model: &Model) -> String {
    let p = &model.params;
    let v = |id| p.slice(id).to_vec();
    let doc = ModelDocument {
        format_version: MODEL_FORMAT_VERSION,
        variant: model.variant.architecture,
        dims: p.dims(),
        gains: Gains {
            g: model.variant.g,
            h: model.variant.h,
        },
        weights: WeightsDocument {
            w_z: v(ParamId::Wz),
            w_i: v(ParamId::Wi),
            w_f: v(ParamId::Wf),
            w_o: v(ParamId::Wo),
            u_z: v(ParamId::Uz),
            u_i: v(ParamId::Ui),
            u_f: v(ParamId::Uf),
            u_o: v(ParamId::Uo),
            b_z: v(ParamId::Bz),
            b_i: v(ParamId::Bi),
            b_f: v(ParamId::Bf),
            b_o: v(ParamId::Bo),
            head_w: v(ParamId::HeadW),
            head_b: p.head_b.as_ref().map(|b| b.to_vec()),
        },
    };
    serde_json::to_string_pretty(&doc).expect("model document serializes")
}

/// Parses a model document. Never returns a partially-built model.
pub fn deserialize_model(text: &str) -> Result<Model> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("model document must be a JSON object".into()))?;
    let version = obj
        .get("format_version")
        .ok_or_else(|| Error::MissingField("format_version".into()))?
        .as_u64()
        .ok_or_else(|| Error::Parse("format_version must be an unsigned integer".into()))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    for field in TOP_LEVEL_FIELDS {
        if !obj.contains_key(field) {
            return Err(Error::MissingField(field.into()));
        }
    }
    let weights = obj["weights"]
        .as_object()
        .ok_or_else(|| Error::Parse("weights must be an object".into()))?;
    for field in WEIGHT_FIELDS {
        if !weights.contains_key(field) {
            return Err(Error::MissingField(format!("weights.{field}")));
        }
    }
    let doc: ModelDocument =
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;

    let Dims {
        input: d,
        hidden: h,
        output: k,
        head_bias,
    } = doc.dims;
    let w = &doc.weights;
    let mat = |name: &str, data: &[f64], rows: usize, cols: usize| -> Result<Mat64> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{name} has {} elements, expected {rows}x{cols}",
                data.len()
            )));
        }
        Mat64::new(rows, cols, data.to_vec())
    };
    let vector = |name: &str, data: &[f64], len: usize| -> Result<Vec64> {
        if data.len() != len {
            return Err(Error::Dimension(format!(
                "{name} has {} elements, expected {len}",
                data.len()
            )));
        }
        Vec64::new(data.to_vec())
    };
    let head_b = match (&w.head_b, head_bias) {
        (Some(b), true) => Some(vector("head_b", b, k)?),
        (None, false) => None,
        _ => {
            return Err(Error::Dimension(
                "head_b presence does not match dims.head_bias".into(),
            ))
        }
    };
    let params = LstmParams {
        w_z: mat("w_z", &w.w_z, h, d)?,
        w_i: mat("w_i", &w.w_i, h, d)?,
        w_f: mat("w_f", &w.w_f, h, d)?,
        w_o: mat("w_o", &w.w_o, h, d)?,
        u_z: mat("u_z", &w.u_z, h, h)?,
        u_i: mat("u_i", &w.u_i, h, h)?,
        u_f: mat("u_f", &w.u_f, h, h)?,
        u_o: mat("u_o", &w.u_o, h, h)?,
        b_z: vector("b_z", &w.b_z, h)?,
        b_i: vector("b_i", &w.b_i, h)?,
        b_f: vector("b_f", &w.b_f, h)?,
        b_o: vector("b_o", &w.b_o, h)?,
        head_w: mat("head_w", &w.head_w, k, h)?,
        head_b,
    };
    let variant = VariantSpec {
        architecture: doc.variant,
        g: doc.gains.g,
        h: doc.gains.h,
        connectivity: VariantSpec::connectivity_of(doc.variant),
    };
    Model::new(params, variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_dims() -> Dims {
        Dims {
            input: 2,
            hidden: 1,
            output: 1,
            head_bias: false,
        }
    }

    fn random_model(arch: Architecture, dims: Dims, seed: u64) -> Model {
        let variant = VariantSpec::with_defaults(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = LstmParams::init(dims, &variant, &mut rng);
        Model::new(params, variant).unwrap()
    }

    #[test]
    fn toy_configuration_has_17_parameters() {
        let m = random_model(Architecture::Standard, toy_dims(), 1);
        assert_eq!(m.variant.trainable_parameter_count(&m.params), 17);
    }

    #[test]
    fn standard_zero_params_step() {
        let p = LstmParams::zeros(toy_dims());
        let s = forward_step(
            &p,
            &VariantSpec::standard(),
            &Vec64::from([0.3, -0.7]),
            &Vec64::zeros(1),
            &Vec64::zeros(1),
        )
        .unwrap();
        assert_eq!(s.z[0], 0.0);
        assert_eq!((s.i[0], s.f[0], s.o[0]), (0.5, 0.5, 0.5));
        assert_eq!(s.c[0], 0.0);
        assert_eq!(s.y[0], 0.0);
    }

    #[test]
    fn gateless_step_accumulates() {
        let p = LstmParams::zeros(toy_dims());
        let v = VariantSpec::gateless(2.0, 1.0).unwrap();
        let k = 0.75;
        let s = forward_step(&p, &v, &Vec64::from([1.0, 1.0]), &Vec64::zeros(1), &Vec64::from([k]))
            .unwrap();
        assert_eq!(s.z[0], 1.0);
        assert_eq!(s.c[0], k + 1.0);
        assert_eq!(s.y[0], (k + 1.0).tanh());
    }

    /// Independent single-step reference written directly from the gate equations.
    fn reference_step(p: &LstmParams, x: &[f64]) -> (f64, f64, f64, f64, f64, f64) {
        let lin = |w: &Mat64, b: &Vec64| b[0] + w.get(0, 0) * x[0] + w.get(0, 1) * x[1];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = lin(&p.w_z, &p.b_z).tanh();
        let i = sig(lin(&p.w_i, &p.b_i));
        let f = sig(lin(&p.w_f, &p.b_f));
        let o = sig(lin(&p.w_o, &p.b_o));
        let c = i * z;
        (z, i, f, c, o, o * c.tanh())
    }

    #[test]
    fn standard_step_matches_reference_seed_42() {
        let m = random_model(Architecture::Standard, toy_dims(), 42);
        let s = forward_step(
            &m.params,
            &m.variant,
            &Vec64::from([1.0, 0.0]),
            &Vec64::zeros(1),
            &Vec64::zeros(1),
        )
        .unwrap();
        let (z, i, f, c, o, y) = reference_step(&m.params, &[1.0, 0.0]);
        for (a, b) in [(s.z[0], z), (s.i[0], i), (s.f[0], f), (s.c[0], c), (s.o[0], o), (s.y[0], y)] {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn length_one_sequence_equals_single_step() {
        let m = random_model(Architecture::Standard, toy_dims(), 3);
        let x = Vec64::from([0.4, -0.9]);
        let seq = SequenceInput::new(vec![x.to_vec()]).unwrap();
        let tr = m.forward(&seq).unwrap();
        let s = forward_step(&m.params, &m.variant, &x, &Vec64::zeros(1), &Vec64::zeros(1)).unwrap();
        assert_eq!(tr.step(0), s);
        assert_eq!(tr.prediction()[0], m.params.head_w.get(0, 0) * s.y[0]);
    }

    #[test]
    fn gateless_pure_accumulator() {
        let mut p = LstmParams::zeros(toy_dims());
        p.head_w = Mat64::new(1, 1, vec![1.0]).unwrap();
        let v = VariantSpec::gateless(2.0, 1.0).unwrap();
        let seq = SequenceInput::new(vec![vec![0.0, 0.0]; 5]).unwrap();
        let tr = forward_sequence(&p, &v, &seq).unwrap();
        let cs: Vec<f64> = (0..5).map(|t| tr.c(t)[0]).collect();
        assert_eq!(cs, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let dims = Dims {
            input: 3,
            hidden: 4,
            output: 2,
            head_bias: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq = SequenceInput::new(
            (0..6)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
        )
        .unwrap();
        for arch in [
            Architecture::Standard,
            Architecture::Nondecreasing,
            Architecture::Markov,
            Architecture::Gateless,
        ] {
            let m = random_model(arch, dims, 11);
            assert_eq!(m.forward(&seq).unwrap(), m.forward(&seq).unwrap());
        }
    }

    #[test]
    fn shape_errors() {
        let m = random_model(Architecture::Standard, toy_dims(), 1);
        let seq = SequenceInput::new(vec![vec![0.0; 3]]).unwrap();
        assert!(matches!(m.forward(&seq), Err(Error::Shape { .. })));
        assert!(SequenceInput::new(vec![]).is_err());
        assert!(SequenceInput::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn nan_reports_timestep() {
        let mut p = LstmParams::zeros(toy_dims());
        p.w_z = Mat64::new(1, 2, vec![1e308, 1e308]).unwrap();
        p.head_w = Mat64::new(1, 1, vec![1.0]).unwrap();
        // inf + (-inf) in the cell-input sum at the second timestep.
        let seq = SequenceInput::new(vec![vec![0.0, 0.0], vec![2.0, -2.0]]).unwrap();
        let err = forward_sequence(&p, &VariantSpec::standard(), &seq).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert!(err.to_string().contains("timestep 2"), "{err}");
    }

    #[test]
    fn variant_validation() {
        assert!(VariantSpec::nondecreasing(5.0, 1.0).is_err());
        assert!(VariantSpec::markov(2.0, 3.0).is_err());
        let mut v = VariantSpec::standard();
        v.connectivity.u_z = false;
        assert!(v.validate().is_err());
    }

    #[test]
    fn active_parameter_sets() {
        let dims = toy_dims();
        let ids = |a| VariantSpec::with_defaults(a).active_params(dims);
        use ParamId::*;
        assert_eq!(ids(Architecture::Gateless), vec![Wz, Bz, HeadW]);
        assert_eq!(ids(Architecture::Markov), vec![Wz, Ui, Bz, Bi, HeadW]);
        assert_eq!(ids(Architecture::Nondecreasing), vec![Wz, Ui, Uo, Bz, Bi, Bo, HeadW]);
        assert_eq!(ids(Architecture::Standard).len(), 13);
    }

    #[test]
    fn lrp_init_uses_negative_biases() {
        let m = random_model(Architecture::Markov, toy_dims(), 5);
        assert_eq!(m.params.b_z[0], DEFAULT_CELL_INPUT_BIAS);
        assert_eq!(m.params.b_i[0], DEFAULT_INPUT_GATE_BIAS);
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let dims = Dims {
            input: 3,
            hidden: 2,
            output: 2,
            head_bias: true,
        };
        for arch in [Architecture::Standard, Architecture::Markov] {
            let m = random_model(arch, dims, 42);
            let back = deserialize_model(&serialize_model(&m)).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn deserialization_errors_are_distinct() {
        let m = random_model(Architecture::Standard, toy_dims(), 42);
        let text = serialize_model(&m);

        let truncated = &text[..text.len() / 2];
        assert!(matches!(deserialize_model(truncated), Err(Error::Parse(_))));

        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["format_version"] = Value::from(99);
        assert!(matches!(
            deserialize_model(&v.to_string()),
            Err(Error::Version { found: 99, .. })
        ));

        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["weights"].as_object_mut().unwrap().remove("u_o");
        assert!(matches!(deserialize_model(&v.to_string()), Err(Error::MissingField(f)) if f == "weights.u_o"));

        let mut v: Value = serde_json::from_str(&text).unwrap();
        v["weights"]["head_w"] = serde_json::json!([1.0, 2.0]);
        assert!(matches!(deserialize_model(&v.to_string()), Err(Error::Dimension(_))));
    }
}
