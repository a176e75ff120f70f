//! Gradient and occlusion attributions, and a single entry point that
//! dispatches to any explainer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrp::{lrp_explain, Ledger, LrpConfig, ProductRule, ProductRuleKind, RelevanceTrace};
use crate::model::{forward_sequence, ActivationTrace, LstmParams, Model, SequenceInput, VariantSpec};
use crate::numeric::Vec64;
use crate::train::{backward, softmax_slice, BackwardScratch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerKind {
    GradientSquared,
    GradientXInput,
    OcclusionFDiff,
    OcclusionPDiff,
    Lrp(ProductRuleKind),
}

impl ExplainerKind {
    /// The explainers compared on the arithmetic tasks.
    pub const FIDELITY: [ExplainerKind; 7] = [
        ExplainerKind::GradientSquared,
        ExplainerKind::GradientXInput,
        ExplainerKind::OcclusionFDiff,
        ExplainerKind::Lrp(ProductRuleKind::Prop),
        ExplainerKind::Lrp(ProductRuleKind::Abs),
        ExplainerKind::Lrp(ProductRuleKind::Half),
        ExplainerKind::Lrp(ProductRuleKind::All),
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExplainerKind::GradientSquared => "gradient",
            ExplainerKind::GradientXInput => "gradient_x_input",
            ExplainerKind::OcclusionFDiff => "occlusion_f_diff",
            ExplainerKind::OcclusionPDiff => "occlusion_p_diff",
            ExplainerKind::Lrp(ProductRuleKind::All) => "lrp_all",
            ExplainerKind::Lrp(ProductRuleKind::Prop) => "lrp_prop",
            ExplainerKind::Lrp(ProductRuleKind::Abs) => "lrp_abs",
            ExplainerKind::Lrp(ProductRuleKind::Half) => "lrp_half",
        }
    }
}

impl fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        let kind = match s.as_str() {
            "gradient" | "gradient_squared" => ExplainerKind::GradientSquared,
            "gradient_x_input" | "gxi" => ExplainerKind::GradientXInput,
            "occlusion" | "occlusion_f_diff" => ExplainerKind::OcclusionFDiff,
            "occlusion_p_diff" => ExplainerKind::OcclusionPDiff,
            other => match other.strip_prefix("lrp_") {
                Some(rule) => ExplainerKind::Lrp(rule.parse()?),
                None => return Err(Error::InvalidConfig(format!("unknown explainer `{other}`"))),
            },
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionMode {
    /// Difference of raw scores.
    FDiff,
    /// Difference of softmax probabilities.
    PDiff,
}

/// What the model-agnostic explainers need from a model.
pub trait SequenceModel {
    fn output_dim(&self) -> usize;

    fn scores(&self, seq: &SequenceInput) -> Result<Vec<f64>>;

    /// `∂ scores[target] / ∂ x_{t,d}`, row-major `T x D`.
    fn input_gradient(&self, seq: &SequenceInput, target: usize) -> Result<Vec<f64>>;
}

impl SequenceModel for Model {
    fn output_dim(&self) -> usize {
        self.dims().output
    }

    fn scores(&self, seq: &SequenceInput) -> Result<Vec<f64>> {
        Ok(self.predict(seq)?.into_inner())
    }

    fn input_gradient(&self, seq: &SequenceInput, target: usize) -> Result<Vec<f64>> {
        let trace = forward_sequence(&self.params, &self.variant, seq)?;
        trace_input_gradient(&trace, &self.params, &self.variant, target)
    }
}

fn check_target(target: usize, len: usize) -> Result<()> {
    if target >= len {
        return Err(Error::IndexOutOfRange { index: target, len });
    }
    Ok(())
}

fn trace_input_gradient(
    trace: &ActivationTrace,
    params: &LstmParams,
    variant: &VariantSpec,
    target: usize,
) -> Result<Vec<f64>> {
    let out = params.dims().output;
    check_target(target, out)?;
    if trace.hidden() != params.dims().hidden || trace.input_dim() != params.dims().input {
        return Err(Error::shape("trace hidden size", params.dims().hidden, trace.hidden()));
    }
    let mut d_pred = vec![0.0; out];
    d_pred[target] = 1.0;
    let mut dx = vec![0.0; trace.len() * trace.input_dim()];
    backward(
        params,
        variant,
        trace,
        &d_pred,
        None,
        Some(&mut dx),
        &mut BackwardScratch::default(),
    );
    if dx.iter().any(|g| !g.is_finite()) {
        return Err(Error::non_finite("input gradient"));
    }
    Ok(dx)
}

fn from_input_grid(len: usize, dim: usize, values: Vec<f64>) -> RelevanceTrace {
    RelevanceTrace::from_parts(len, dim, values, Ledger::default())
}

fn gradient_trace(seq_flat: &[f64], len: usize, dim: usize, grad: Vec<f64>, squared: bool) -> RelevanceTrace {
    let values = if squared {
        grad.iter().map(|g| g * g).collect()
    } else {
        grad.iter().zip(seq_flat).map(|(g, x)| g * x).collect()
    };
    from_input_grid(len, dim, values)
}

/// Squared gradient, or gradient times input, of `prediction[target]`.
pub fn gradient_relevance(
    trace: &ActivationTrace,
    params: &LstmParams,
    variant: &VariantSpec,
    target: usize,
    squared: bool,
) -> Result<RelevanceTrace> {
    let grad = trace_input_gradient(trace, params, variant, target)?;
    let flat: Vec<f64> = (0..trace.len()).flat_map(|t| trace.x(t).to_vec()).collect();
    Ok(gradient_trace(&flat, trace.len(), trace.input_dim(), grad, squared))
}

/// [`gradient_relevance`] for any [`SequenceModel`].
pub fn gradient_relevance_of<M: SequenceModel + ?Sized>(
    model: &M,
    seq: &SequenceInput,
    target: usize,
    squared: bool,
) -> Result<RelevanceTrace> {
    check_target(target, model.output_dim())?;
    let grad = model.input_gradient(seq, target)?;
    if grad.len() != seq.as_flat().len() {
        return Err(Error::shape("input gradient", seq.as_flat().len(), grad.len()));
    }
    Ok(gradient_trace(seq.as_flat(), seq.len(), seq.dim(), grad, squared))
}

/// Max-shifted softmax.
pub fn softmax(scores: &Vec64) -> Vec64 {
    Vec64::from_raw(softmax_slice(scores))
}

/// `R_t = f(x) - f(x with timestep t zeroed)`, one value per timestep
/// (the returned trace has a single column).
pub fn occlusion_relevance<M: SequenceModel + ?Sized>(
    model: &M,
    seq: &SequenceInput,
    target: usize,
    mode: OcclusionMode,
) -> Result<RelevanceTrace> {
    check_target(target, model.output_dim())?;
    if mode == OcclusionMode::PDiff && model.output_dim() < 2 {
        return Err(Error::InvalidConfig(
            "probability occlusion needs a classification head with at least two outputs".into(),
        ));
    }
    let read = |scores: Vec<f64>| match mode {
        OcclusionMode::FDiff => scores[target],
        OcclusionMode::PDiff => softmax_slice(&scores)[target],
    };
    let base = read(model.scores(seq)?);
    let mut values = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        if seq.row(t).iter().all(|&x| x == 0.0) {
            values.push(0.0);
            continue;
        }
        values.push(base - read(model.scores(&seq.with_zeroed(t)?)?));
    }
    Ok(from_input_grid(seq.len(), 1, values))
}

/// Stabilizers used when an LRP explainer is dispatched through [`explain`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stabilizers {
    /// Per-rule defaults.
    #[default]
    Default,
    /// No stabilization anywhere.
    Zero,
    Fixed { linear: f64, product: f64 },
}

impl Stabilizers {
    pub fn config(self, rule: ProductRuleKind, target: usize) -> LrpConfig {
        let mut cfg = match self {
            Stabilizers::Default => LrpConfig::for_rule(rule),
            Stabilizers::Zero => LrpConfig::exact(rule),
            Stabilizers::Fixed { linear, product } => LrpConfig {
                rule: ProductRule { kind: rule, epsilon: product },
                epsilon: linear,
                target,
            },
        };
        cfg.target = target;
        cfg
    }
}

/// Runs any explainer on `model` for output `target`.
pub fn explain(
    model: &Model,
    seq: &SequenceInput,
    kind: ExplainerKind,
    target: usize,
    stabilizers: Stabilizers,
) -> Result<RelevanceTrace> {
    match kind {
        ExplainerKind::GradientSquared | ExplainerKind::GradientXInput => {
            let trace = model.forward(seq)?;
            gradient_relevance(
                &trace,
                &model.params,
                &model.variant,
                target,
                kind == ExplainerKind::GradientSquared,
            )
        }
        ExplainerKind::OcclusionFDiff => occlusion_relevance(model, seq, target, OcclusionMode::FDiff),
        ExplainerKind::OcclusionPDiff => occlusion_relevance(model, seq, target, OcclusionMode::PDiff),
        ExplainerKind::Lrp(rule) => {
            let trace = model.forward(seq)?;
            lrp_explain(&trace, &model.params, &model.variant, &stabilizers.config(rule, target))
        }
    }
}
