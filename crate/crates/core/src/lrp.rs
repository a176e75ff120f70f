//! Layer-wise relevance propagation through an unrolled LSTM.
//!
//! The walk splits the cell into three kinds of nodes: linear maps (ε-rule),
//! gated products (one of four product rules) and the cell-state sum
//! (proportional split). Elementwise nonlinearities pass relevance through
//! unchanged. Every unit of relevance that does not reach an input is booked
//! in a [`Ledger`].

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivationTrace, LstmParams, VariantSpec};
use crate::numeric::{sign_pos, Mat64, Vec64};

pub const DEFAULT_EPSILON: f64 = 0.001;
pub const DEFAULT_PROP_EPSILON: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductRuleKind {
    /// Signal takes all.
    All,
    /// Split by signed pre-activations.
    Prop,
    /// Split by absolute pre-activations.
    Abs,
    /// Even split.
    Half,
}

impl ProductRuleKind {
    pub const ALL: [ProductRuleKind; 4] = [
        ProductRuleKind::All,
        ProductRuleKind::Prop,
        ProductRuleKind::Abs,
        ProductRuleKind::Half,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProductRuleKind::All => "all",
            ProductRuleKind::Prop => "prop",
            ProductRuleKind::Abs => "abs",
            ProductRuleKind::Half => "half",
        }
    }

    pub fn default_epsilon(self) -> f64 {
        match self {
            ProductRuleKind::Prop => DEFAULT_PROP_EPSILON,
            _ => DEFAULT_EPSILON,
        }
    }
}

impl fmt::Display for ProductRuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProductRuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProductRuleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown product rule `{s}` (all, prop, abs, half)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductRule {
    pub kind: ProductRuleKind,
    pub epsilon: f64,
}

impl ProductRule {
    pub fn new(kind: ProductRuleKind, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("product epsilon must be >= 0, got {epsilon}")));
        }
        Ok(ProductRule { kind, epsilon })
    }

    pub fn with_default_epsilon(kind: ProductRuleKind) -> Self {
        ProductRule {
            kind,
            epsilon: kind.default_epsilon(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrpConfig {
    pub rule: ProductRule,
    /// Stabilizer of the linear maps.
    pub epsilon: f64,
    /// Output index to explain.
    pub target: usize,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig::for_rule(ProductRuleKind::All)
    }
}

impl LrpConfig {
    pub fn for_rule(kind: ProductRuleKind) -> Self {
        LrpConfig {
            rule: ProductRule::with_default_epsilon(kind),
            epsilon: DEFAULT_EPSILON,
            target: 0,
        }
    }

    /// Every stabilizer set to zero.
    pub fn exact(kind: ProductRuleKind) -> Self {
        LrpConfig {
            rule: ProductRule { kind, epsilon: 0.0 },
            epsilon: 0.0,
            target: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ProductRule::new(self.rule.kind, self.rule.epsilon)?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedTerm {
    pub z_g: f64,
    pub z_s: f64,
    pub r_p: f64,
}

/// Outcome of the ε-rule over one weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSplit {
    pub shares: Vec<f64>,
    /// Share of the bias contributor; it stays in the neuron.
    pub bias: f64,
    /// Relevance taken up by the stabilizer.
    pub absorbed: f64,
}

/// ε-rule: `R_j = a_j w_j / (Σ + ε·sign(Σ)) · R_s`, with the bias treated as
/// one more contributor.
///
/// A zero incoming relevance returns zeros even where the denominator
/// vanishes.
pub fn prop_linear_epsilon(contributions: &[f64], bias: f64, r_s: f64, epsilon: f64) -> Result<EpsilonSplit> {
    if contributions.is_empty() {
        return Err(Error::InvalidConfig("epsilon rule needs at least one contributor".into()));
    }
    if r_s == 0.0 {
        return Ok(EpsilonSplit {
            shares: vec![0.0; contributions.len()],
            bias: 0.0,
            absorbed: 0.0,
        });
    }
    let sum = contributions.iter().sum::<f64>() + bias;
    let denom = sum + epsilon * sign_pos(sum);
    if denom == 0.0 {
        return Err(Error::hazard("epsilon rule"));
    }
    let scale = r_s / denom;
    Ok(EpsilonSplit {
        shares: contributions.iter().map(|c| c * scale).collect(),
        bias: bias * scale,
        absorbed: (denom - sum) * scale,
    })
}

/// Splits the relevance of a gated product `gate(z_g) · signal(z_s)` into
/// gate and signal shares.
pub fn prop_product(term: GatedTerm, rule: ProductRule) -> Result<(f64, f64)> {
    product_split(term, rule).map(|(g, s, _)| (g, s))
}

/// Gate share, signal share and the part taken by the stabilizer.
fn product_split(term: GatedTerm, rule: ProductRule) -> Result<(f64, f64, f64)> {
    let GatedTerm { z_g, z_s, r_p } = term;
    match rule.kind {
        ProductRuleKind::All => Ok((0.0, r_p, 0.0)),
        ProductRuleKind::Half => Ok((0.5 * r_p, 0.5 * r_p, 0.0)),
        ProductRuleKind::Prop | ProductRuleKind::Abs => {
            if r_p == 0.0 {
                return Ok((0.0, 0.0, 0.0));
            }
            let (a, b, stab) = if rule.kind == ProductRuleKind::Prop {
                (z_g, z_s, rule.epsilon * sign_pos(z_g + z_s))
            } else {
                (z_g.abs(), z_s.abs(), rule.epsilon)
            };
            let denom = a + b + stab;
            if denom == 0.0 {
                return Err(Error::hazard(format!("{} product rule", rule.kind)));
            }
            Ok((a / denom * r_p, b / denom * r_p, stab / denom * r_p))
        }
    }
}

/// Proportional split of the cell-state relevance between the new product
/// `i ⊙ z` and the carried `f ⊙ c_{t-1}`.
///
/// An exactly zero sum is routed through the ε-rule with `epsilon`, in which
/// case the relevance is absorbed.
pub fn prop_sum_accumulator(product_part: f64, carry_part: f64, r_c: f64, epsilon: f64) -> Result<(f64, f64)> {
    accumulator_split(product_part, carry_part, r_c, epsilon).map(|(a, b, _)| (a, b))
}

fn accumulator_split(product_part: f64, carry_part: f64, r_c: f64, epsilon: f64) -> Result<(f64, f64, f64)> {
    if r_c == 0.0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let sum = product_part + carry_part;
    if sum != 0.0 {
        return Ok((product_part / sum * r_c, carry_part / sum * r_c, 0.0));
    }
    let split = prop_linear_epsilon(&[product_part, carry_part], 0.0, r_c, epsilon)?;
    Ok((split.shares[0], split.shares[1], split.absorbed))
}

/// Relevance passes unchanged through elementwise nonlinearities.
pub fn prop_elementwise(r: &Vec64) -> Vec64 {
    r.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Ledger {
    pub output_relevance_in: f64,
    pub bias_trapped: f64,
    pub gate_trapped: f64,
    pub stabilizer_absorbed: f64,
    pub input_total: f64,
}

impl Ledger {
    /// `output_relevance_in` minus everything accounted for.
    pub fn residual(&self) -> f64 {
        self.output_relevance_in - (self.input_total + self.bias_trapped + self.gate_trapped + self.stabilizer_absorbed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceTrace {
    len: usize,
    dim: usize,
    /// `T x D`, row-major.
    input: Vec<f64>,
    per_timestep: Vec<f64>,
    pub ledger: Ledger,
}

impl RelevanceTrace {
    /// Builds a trace from a `T x D` grid; `input_total` is filled in.
    pub(crate) fn from_parts(len: usize, dim: usize, input: Vec<f64>, mut ledger: Ledger) -> Self {
        let per_timestep: Vec<f64> = input.chunks(dim.max(1)).map(|r| r.iter().sum()).collect();
        ledger.input_total = per_timestep.iter().sum();
        RelevanceTrace {
            len,
            dim,
            input,
            per_timestep,
            ledger,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `R_{t,d}`.
    pub fn at(&self, t: usize, d: usize) -> f64 {
        self.input[t * self.dim + d]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.input[t * self.dim..(t + 1) * self.dim]
    }

    /// `R_t = Σ_d R_{t,d}`.
    pub fn per_timestep(&self) -> &[f64] {
        &self.per_timestep
    }

    pub fn as_matrix(&self) -> Mat64 {
        Mat64::new(self.len, self.dim, self.input.clone()).expect("finite relevance")
    }

    /// `t,dim,relevance` rows followed by `# key=value` ledger lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,dim,relevance\n");
        for r in self.records() {
            let _ = writeln!(out, "{},{},{}", r.t, r.dim, r.relevance);
        }
        let l = &self.ledger;
        for (k, v) in [
            ("output_relevance_in", l.output_relevance_in),
            ("input_total", l.input_total),
            ("bias_trapped", l.bias_trapped),
            ("gate_trapped", l.gate_trapped),
            ("stabilizer_absorbed", l.stabilizer_absorbed),
            ("residual", l.residual()),
        ] {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }

    pub fn records(&self) -> Vec<RelevanceRecord> {
        (0..self.len)
            .flat_map(|t| {
                (0..self.dim).map(move |d| RelevanceRecord {
                    t,
                    dim: d,
                    relevance: self.at(t, d),
                })
            })
            .collect()
    }

    pub fn to_document(&self) -> RelevanceDocument {
        RelevanceDocument {
            records: self.records(),
            per_timestep: self.per_timestep.clone(),
            ledger: self.ledger,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub t: usize,
    pub dim: usize,
    pub relevance: f64,
}

/// JSON form of a relevance trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceDocument {
    pub records: Vec<RelevanceRecord>,
    pub per_timestep: Vec<f64>,
    pub ledger: Ledger,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub output_relevance_in: f64,
    pub input_total: f64,
    pub bias_trapped: f64,
    pub gate_trapped: f64,
    pub stabilizer_absorbed: f64,
    pub residual: f64,
}

pub fn conservation_audit(rt: &RelevanceTrace) -> AuditSummary {
    let l = rt.ledger;
    AuditSummary {
        output_relevance_in: l.output_relevance_in,
        input_total: l.input_total,
        bias_trapped: l.bias_trapped,
        gate_trapped: l.gate_trapped,
        stabilizer_absorbed: l.stabilizer_absorbed,
        residual: l.residual(),
    }
}

/// Explains `prediction[cfg.target]`.
pub fn lrp_explain(
    trace: &ActivationTrace,
    params: &LstmParams,
    variant: &VariantSpec,
    cfg: &LrpConfig,
) -> Result<RelevanceTrace> {
    let pred = trace.prediction();
    let r_out = *pred.get(cfg.target).ok_or(Error::IndexOutOfRange {
        index: cfg.target,
        len: pred.len(),
    })?;
    lrp_explain_from(trace, params, variant, cfg, r_out)
}

/// Where a pre-activation's bias share is booked.
#[derive(Clone, Copy)]
enum Sink {
    Bias,
    Gate,
}

struct Walk {
    eps: f64,
    ledger: Ledger,
    contrib: Vec<f64>,
}

impl Walk {
    /// ε-rule over `w_x · x + u · y_prev + b` for unit `j`; shares are added
    /// to `r_x` and `r_y_prev`.
    #[allow(clippy::too_many_arguments)]
    fn linear(
        &mut self,
        j: usize,
        r: f64,
        w_x: Option<&Mat64>,
        u: Option<&Mat64>,
        b: f64,
        x: &[f64],
        y_prev: &[f64],
        r_x: &mut [f64],
        r_y_prev: &mut [f64],
        sink: Sink,
        what: &str,
    ) -> Result<()> {
        if r == 0.0 {
            return Ok(());
        }
        self.contrib.clear();
        if let Some(w) = w_x {
            self.contrib.extend(w.row(j).iter().zip(x).map(|(w, a)| w * a));
        }
        if let Some(u) = u {
            self.contrib.extend(u.row(j).iter().zip(y_prev).map(|(w, a)| w * a));
        }
        if self.contrib.is_empty() {
            self.contrib.push(0.0);
        }
        let split = prop_linear_epsilon(&self.contrib, b, r, self.eps).map_err(|e| rename_hazard(e, what))?;
        let mut k = 0;
        if w_x.is_some() {
            for rx in r_x.iter_mut() {
                *rx += split.shares[k];
                k += 1;
            }
        }
        if u.is_some() {
            for ry in r_y_prev.iter_mut() {
                *ry += split.shares[k];
                k += 1;
            }
        }
        match sink {
            Sink::Bias => self.ledger.bias_trapped += split.bias,
            Sink::Gate => self.ledger.gate_trapped += split.bias,
        }
        self.ledger.stabilizer_absorbed += split.absorbed;
        Ok(())
    }

    fn product(&mut self, term: GatedTerm, rule: ProductRule, what: &str) -> Result<(f64, f64)> {
        let (r_g, r_s, absorbed) = product_split(term, rule).map_err(|e| rename_hazard(e, what))?;
        self.ledger.stabilizer_absorbed += absorbed;
        Ok((r_g, r_s))
    }
}

fn rename_hazard(e: Error, what: &str) -> Error {
    match e {
        Error::DivisionHazard { context } => Error::hazard(format!("{context} at {what}")),
        other => other,
    }
}

fn check_trace(trace: &ActivationTrace, params: &LstmParams) -> Result<()> {
    let dims = params.dims();
    if trace.is_empty() {
        return Err(Error::InvalidConfig("cannot explain an empty trace".into()));
    }
    if trace.hidden() != dims.hidden {
        return Err(Error::shape("trace hidden size", dims.hidden, trace.hidden()));
    }
    if trace.input_dim() != dims.input {
        return Err(Error::shape("trace input dimension", dims.input, trace.input_dim()));
    }
    if trace.prediction().len() != dims.output {
        return Err(Error::shape("trace output dimension", dims.output, trace.prediction().len()));
    }
    Ok(())
}

/// Like [`lrp_explain`], starting from an explicit output relevance `r_out`
/// placed on output `cfg.target`.
pub fn lrp_explain_from(
    trace: &ActivationTrace,
    params: &LstmParams,
    variant: &VariantSpec,
    cfg: &LrpConfig,
    r_out: f64,
) -> Result<RelevanceTrace> {
    cfg.validate()?;
    check_trace(trace, params)?;
    if !r_out.is_finite() {
        return Err(Error::non_finite("output relevance"));
    }
    let dims = params.dims();
    if cfg.target >= dims.output {
        return Err(Error::IndexOutOfRange {
            index: cfg.target,
            len: dims.output,
        });
    }
    let (len, h, d) = (trace.len(), dims.hidden, dims.input);
    let conn = variant.connectivity;
    let rule = cfg.rule;

    let mut walk = Walk {
        eps: cfg.epsilon,
        ledger: Ledger {
            output_relevance_in: r_out,
            ..Ledger::default()
        },
        contrib: Vec::with_capacity(d + h),
    };
    let mut input = vec![0.0; len * d];
    let mut r_y = vec![0.0; h];
    let mut r_y_prev = vec![0.0; h];
    let mut r_carry = vec![0.0; h];

    let head_b = params.head_b.as_ref().map_or(0.0, |b| b[cfg.target]);
    walk.linear(
        cfg.target,
        r_out,
        Some(&params.head_w),
        None,
        head_b,
        trace.y(len - 1),
        &[],
        &mut r_y,
        &mut [],
        Sink::Bias,
        "read-out",
    )?;

    for t in (0..len).rev() {
        r_y_prev.fill(0.0);
        let x = trace.x(t);
        let y_prev = trace.y_prev(t);
        let c_prev = trace.c_prev(t);
        let r_x = &mut input[t * d..(t + 1) * d];
        for j in 0..h {
            // y = o ⊙ h(c)
            let r_hc = if conn.output_gate {
                let (r_g, r_s) = walk.product(
                    GatedTerm {
                        z_g: trace.o_pre(t)[j],
                        z_s: trace.c(t)[j],
                        r_p: r_y[j],
                    },
                    rule,
                    "output gate",
                )?;
                walk.linear(
                    j,
                    r_g,
                    conn.w_o.then_some(&params.w_o),
                    Some(&params.u_o),
                    params.b_o[j],
                    x,
                    y_prev,
                    r_x,
                    &mut r_y_prev,
                    Sink::Gate,
                    "output gate",
                )?;
                r_s
            } else {
                r_y[j]
            };
            let r_c = r_hc + r_carry[j];

            let (i, z, f) = (trace.i(t)[j], trace.z(t)[j], trace.f(t)[j]);
            let (r_new, r_old, absorbed) = accumulator_split(i * z, f * c_prev[j], r_c, cfg.epsilon)
                .map_err(|e| rename_hazard(e, "cell state"))?;
            walk.ledger.stabilizer_absorbed += absorbed;

            // f ⊙ c_{t-1}
            r_carry[j] = if conn.forget_gate {
                let (r_g, r_s) = walk.product(
                    GatedTerm {
                        z_g: trace.f_pre(t)[j],
                        z_s: c_prev[j],
                        r_p: r_old,
                    },
                    rule,
                    "forget gate",
                )?;
                walk.linear(
                    j,
                    r_g,
                    Some(&params.w_f),
                    Some(&params.u_f),
                    params.b_f[j],
                    x,
                    y_prev,
                    r_x,
                    &mut r_y_prev,
                    Sink::Gate,
                    "forget gate",
                )?;
                r_s
            } else {
                r_old
            };

            // i ⊙ z
            let r_z = if conn.input_gate {
                let (r_g, r_s) = walk.product(
                    GatedTerm {
                        z_g: trace.i_pre(t)[j],
                        z_s: trace.z_pre(t)[j],
                        r_p: r_new,
                    },
                    rule,
                    "input gate",
                )?;
                walk.linear(
                    j,
                    r_g,
                    conn.w_i.then_some(&params.w_i),
                    Some(&params.u_i),
                    params.b_i[j],
                    x,
                    y_prev,
                    r_x,
                    &mut r_y_prev,
                    Sink::Gate,
                    "input gate",
                )?;
                r_s
            } else {
                r_new
            };

            walk.linear(
                j,
                r_z,
                Some(&params.w_z),
                conn.u_z.then_some(&params.u_z),
                params.b_z[j],
                x,
                y_prev,
                r_x,
                &mut r_y_prev,
                Sink::Bias,
                "cell input",
            )?;
        }
        if t == 0 {
            // y_0 = c_0 = 0 contribute nothing, so whatever lands here is
            // exactly zero; book it anyway to keep the ledger closed.
            walk.ledger.gate_trapped += r_y_prev.iter().sum::<f64>() + r_carry.iter().sum::<f64>();
        }
        std::mem::swap(&mut r_y, &mut r_y_prev);
    }

    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("relevance"));
    }
    Ok(RelevanceTrace::from_parts(len, d, input, walk.ledger))
}
