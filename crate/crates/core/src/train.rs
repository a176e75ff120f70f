//! Losses, backpropagation through time, the finite-difference oracle, and
//! the training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_into, ActivationTrace, Dims, LstmParams, ParamId, SequenceInput, VariantSpec};
use crate::numeric::{gemv_t_acc, outer_acc, Vec64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Ground-truth annotations carried alongside a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleMeta {
    /// Zero-based marker positions and the two marked numbers.
    Arithmetic { a: usize, b: usize, n_a: f64, n_b: f64 },
    Episode {
        #[serde(rename = "return")]
        episode_return: f64,
        moneybag_step: Option<usize>,
        coin_steps: Vec<usize>,
    },
    Class { label: usize, tokens: Vec<usize> },
    None {},
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: SequenceInput,
    pub target: Vec64,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub items: Vec<Sample>,
}

impl Dataset {
    pub fn new(split: Split, items: Vec<Sample>) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidConfig(format!("{split:?} dataset is empty")))?;
        let (dim, tdim) = (first.input.dim(), first.target.len());
        for s in &items {
            if s.input.dim() != dim {
                return Err(Error::shape("dataset input dimension", dim, s.input.dim()));
            }
            if s.target.len() != tdim {
                return Err(Error::shape("dataset target dimension", tdim, s.target.len()));
            }
        }
        Ok(Dataset { split, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    /// Softmax over the head outputs against a one-hot target.
    SoftmaxCrossEntropy,
}

impl Loss {
    fn value(self, pred: &[f64], target: &[f64]) -> f64 {
        match self {
            Loss::Mse => mse(pred, target),
            Loss::SoftmaxCrossEntropy => {
                let p = softmax_slice(pred);
                -target
                    .iter()
                    .zip(&p)
                    .map(|(t, q)| if *t == 0.0 { 0.0 } else { t * q.max(1e-300).ln() })
                    .sum::<f64>()
            }
        }
    }

    /// Writes `dL/dpred · scale` into `out`.
    fn gradient(self, pred: &[f64], target: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            Loss::Mse => {
                let k = pred.len() as f64;
                for ((o, p), t) in out.iter_mut().zip(pred).zip(target) {
                    *o = scale * 2.0 * (p - t) / k;
                }
            }
            Loss::SoftmaxCrossEntropy => {
                let p = softmax_slice(pred);
                let mass: f64 = target.iter().sum();
                for ((o, q), t) in out.iter_mut().zip(&p).zip(target) {
                    *o = scale * (q * mass - t);
                }
            }
        }
    }
}

pub(crate) fn softmax_slice(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Mean of squared componentwise differences.
pub fn mse_loss(pred: &Vec64, target: &Vec64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("mse_loss", pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(Error::InvalidConfig("mse_loss of empty vectors".into()));
    }
    Ok(mse(pred, target))
}

/// One gradient tensor per trainable parameter. Tensors the architecture
/// does not read are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: LstmParams,
    active: Vec<ParamId>,
}

impl GradientSet {
    pub fn zeros_like(params: &LstmParams, variant: &VariantSpec) -> Self {
        GradientSet {
            grads: LstmParams::zeros(params.dims()),
            active: variant.active_params(params.dims()),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.active.contains(&id).then(|| self.grads.slice(id))
    }

    pub fn active(&self) -> &[ParamId] {
        &self.active
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        self.grads.shape(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.active.iter().map(|&id| (id, self.grads.slice(id)))
    }

    fn slice_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.grads.slice_mut(id)
    }

    fn scale(&mut self, s: f64) {
        for id in self.active.clone() {
            self.grads.slice_mut(id).iter_mut().for_each(|g| *g *= s);
        }
    }

    fn check_finite(&self) -> Result<()> {
        for (id, g) in self.iter() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("gradient of {}", id.name())));
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.iter()
            .flat_map(|(_, g)| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Largest `|a - b| / max(|a|, |b|, floor)` over all shared entries.
    pub fn max_relative_error(&self, other: &GradientSet, floor: f64) -> f64 {
        let mut worst = 0.0f64;
        for (id, a) in self.iter() {
            let Some(b) = other.get(id) else {
                return f64::INFINITY;
            };
            for (x, y) in a.iter().zip(b) {
                let denom = x.abs().max(y.abs()).max(floor);
                worst = worst.max((x - y).abs() / denom);
            }
        }
        worst
    }
}

/// Reusable scratch for the backward pass.
#[derive(Default)]
pub(crate) struct BackwardScratch {
    dy: Vec<f64>,
    dy_prev: Vec<f64>,
    dc_next: Vec<f64>,
    da_z: Vec<f64>,
    da_i: Vec<f64>,
    da_f: Vec<f64>,
    da_o: Vec<f64>,
}

/// Backpropagates `d_pred = dL/dprediction` through a cached trace.
///
/// Parameter gradients are accumulated into `grads` when given, input
/// gradients (`T x D`, row-major) written to `dx` when given.
pub(crate) fn backward(
    params: &LstmParams,
    variant: &VariantSpec,
    trace: &ActivationTrace,
    d_pred: &[f64],
    mut grads: Option<&mut GradientSet>,
    mut dx: Option<&mut [f64]>,
    s: &mut BackwardScratch,
) {
    let h = trace.hidden();
    let d = trace.input_dim();
    let len = trace.len();
    let conn = variant.connectivity;
    for buf in [
        &mut s.dy,
        &mut s.dy_prev,
        &mut s.dc_next,
        &mut s.da_z,
        &mut s.da_i,
        &mut s.da_f,
        &mut s.da_o,
    ] {
        buf.clear();
        buf.resize(h, 0.0);
    }
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(0.0);
    }

    gemv_t_acc(&params.head_w, d_pred, &mut s.dy);
    if let Some(g) = grads.as_deref_mut() {
        outer_acc(g.slice_mut(ParamId::HeadW), d_pred, trace.y(len - 1));
        if params.head_b.is_some() {
            for (gb, dp) in g.slice_mut(ParamId::HeadB).iter_mut().zip(d_pred) {
                *gb += dp;
            }
        }
    }

    for t in (0..len).rev() {
        let (z_pre, z, i, f, c, o, hc) = (
            trace.z_pre(t),
            trace.z(t),
            trace.i(t),
            trace.f(t),
            trace.c(t),
            trace.o(t),
            trace.h_c(t),
        );
        let c_prev = trace.c_prev(t);
        for j in 0..h {
            let dy = s.dy[j];
            let d_o = dy * hc[j];
            let dc = dy * o[j] * variant.h.derivative(c[j]) + s.dc_next[j];
            s.da_z[j] = dc * i[j] * variant.g.derivative(z_pre[j]);
            s.da_i[j] = dc * z[j] * i[j] * (1.0 - i[j]);
            s.da_f[j] = dc * c_prev[j] * f[j] * (1.0 - f[j]);
            s.da_o[j] = d_o * o[j] * (1.0 - o[j]);
            s.dc_next[j] = dc * f[j];
        }

        let x = trace.x(t);
        let y_prev = trace.y_prev(t);
        if let Some(g) = grads.as_deref_mut() {
            outer_acc(g.slice_mut(ParamId::Wz), &s.da_z, x);
            add_into(g.slice_mut(ParamId::Bz), &s.da_z);
            if conn.u_z {
                outer_acc(g.slice_mut(ParamId::Uz), &s.da_z, y_prev);
            }
            if conn.input_gate {
                if conn.w_i {
                    outer_acc(g.slice_mut(ParamId::Wi), &s.da_i, x);
                }
                outer_acc(g.slice_mut(ParamId::Ui), &s.da_i, y_prev);
                add_into(g.slice_mut(ParamId::Bi), &s.da_i);
            }
            if conn.forget_gate {
                outer_acc(g.slice_mut(ParamId::Wf), &s.da_f, x);
                outer_acc(g.slice_mut(ParamId::Uf), &s.da_f, y_prev);
                add_into(g.slice_mut(ParamId::Bf), &s.da_f);
            }
            if conn.output_gate {
                if conn.w_o {
                    outer_acc(g.slice_mut(ParamId::Wo), &s.da_o, x);
                }
                outer_acc(g.slice_mut(ParamId::Uo), &s.da_o, y_prev);
                add_into(g.slice_mut(ParamId::Bo), &s.da_o);
            }
        }

        if let Some(dx) = dx.as_deref_mut() {
            let row = &mut dx[t * d..(t + 1) * d];
            gemv_t_acc(&params.w_z, &s.da_z, row);
            if conn.input_gate && conn.w_i {
                gemv_t_acc(&params.w_i, &s.da_i, row);
            }
            if conn.forget_gate {
                gemv_t_acc(&params.w_f, &s.da_f, row);
            }
            if conn.output_gate && conn.w_o {
                gemv_t_acc(&params.w_o, &s.da_o, row);
            }
        }

        if t > 0 {
            s.dy_prev.fill(0.0);
            if conn.u_z {
                gemv_t_acc(&params.u_z, &s.da_z, &mut s.dy_prev);
            }
            if conn.input_gate {
                gemv_t_acc(&params.u_i, &s.da_i, &mut s.dy_prev);
            }
            if conn.forget_gate {
                gemv_t_acc(&params.u_f, &s.da_f, &mut s.dy_prev);
            }
            if conn.output_gate {
                gemv_t_acc(&params.u_o, &s.da_o, &mut s.dy_prev);
            }
            std::mem::swap(&mut s.dy, &mut s.dy_prev);
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Accumulates the gradient of `scale · loss(sample)` and returns the loss.
fn accumulate_sample(
    params: &LstmParams,
    variant: &VariantSpec,
    sample: &Sample,
    loss: Loss,
    scale: f64,
    grads: &mut GradientSet,
    trace: &mut ActivationTrace,
    scratch: &mut BackwardScratch,
    d_pred: &mut Vec<f64>,
) -> Result<f64> {
    forward_into(params, variant, sample.input.as_flat(), sample.input.dim(), trace)?;
    let pred = trace.prediction();
    if pred.len() != sample.target.len() {
        return Err(Error::shape("target dimension", pred.len(), sample.target.len()));
    }
    d_pred.resize(pred.len(), 0.0);
    loss.gradient(pred, &sample.target, scale, d_pred);
    let value = loss.value(pred, &sample.target);
    backward(params, variant, trace, d_pred, Some(grads), None, scratch);
    Ok(value)
}

/// Exact gradient of the mean batch MSE.
pub fn bptt_gradients(
    params: &LstmParams,
    variant: &VariantSpec,
    batch: &[Sample],
) -> Result<GradientSet> {
    bptt_gradients_with_loss(params, variant, batch, Loss::Mse).map(|(g, _)| g)
}

/// Exact gradient and value of the mean batch loss.
pub fn bptt_gradients_with_loss(
    params: &LstmParams,
    variant: &VariantSpec,
    batch: &[Sample],
    loss: Loss,
) -> Result<(GradientSet, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut grads = GradientSet::zeros_like(params, variant);
    let mut trace = ActivationTrace::default();
    let mut scratch = BackwardScratch::default();
    let mut d_pred = Vec::new();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for sample in batch {
        total += accumulate_sample(
            params,
            variant,
            sample,
            loss,
            scale,
            &mut grads,
            &mut trace,
            &mut scratch,
            &mut d_pred,
        )?;
    }
    grads.check_finite()?;
    Ok((grads, total * scale))
}

/// Mean loss over a batch.
pub fn batch_loss(
    params: &LstmParams,
    variant: &VariantSpec,
    batch: &[Sample],
    loss: Loss,
) -> Result<f64> {
    let mut trace = ActivationTrace::default();
    let mut total = 0.0;
    for s in batch {
        forward_into(params, variant, s.input.as_flat(), s.input.dim(), &mut trace)?;
        total += loss.value(trace.prediction(), &s.target);
    }
    Ok(total / batch.len() as f64)
}

/// Central-difference estimate of the mean batch MSE gradient.
pub fn finite_diff_gradients(
    params: &LstmParams,
    variant: &VariantSpec,
    batch: &[Sample],
    step: f64,
) -> Result<GradientSet> {
    finite_diff_gradients_with_loss(params, variant, batch, step, Loss::Mse)
}

pub fn finite_diff_gradients_with_loss(
    params: &LstmParams,
    variant: &VariantSpec,
    batch: &[Sample],
    step: f64,
    loss: Loss,
) -> Result<GradientSet> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {step}")));
    }
    let mut grads = GradientSet::zeros_like(params, variant);
    let mut probe = params.clone();
    for id in grads.active.clone() {
        for k in 0..params.slice(id).len() {
            let orig = params.slice(id)[k];
            probe.slice_mut(id)[k] = orig + step;
            let plus = batch_loss(&probe, variant, batch, loss)?;
            probe.slice_mut(id)[k] = orig - step;
            let minus = batch_loss(&probe, variant, batch, loss)?;
            probe.slice_mut(id)[k] = orig;
            grads.slice_mut(id)[k] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Success iff the best validation loss falls below this value.
    pub threshold: f64,
    /// Stop as soon as the validation loss falls below this value
    /// (defaults to `threshold`).
    pub early_stop: Option<f64>,
    pub seed: u64,
    pub loss: Loss,
    /// Rescale each minibatch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-3,
            optimizer: Optimizer::default(),
            batch_size: 64,
            max_epochs: 100,
            threshold: 1e-4,
            early_stop: None,
            seed: 0,
            loss: Loss::Mse,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be non-negative".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidConfig("threshold must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub loss: Option<Loss>,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// `epoch,train_mse,val_mse` (or `train_loss,val_loss` for cross-entropy).
    pub fn to_csv(&self) -> String {
        let mut out = match self.loss {
            Some(Loss::SoftmaxCrossEntropy) => String::from("epoch,train_loss,val_loss\n"),
            _ => String::from("epoch,train_mse,val_mse\n"),
        };
        for r in &self.epochs {
            let _ = writeln!(out, "{},{:e},{:e}", r.epoch, r.train_loss, r.val_loss);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LstmParams,
    pub history: History,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub success: bool,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

/// Minibatch training; returns the parameters of the best validation epoch.
pub fn train_model(
    init: &LstmParams,
    variant: &VariantSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("training and validation splits must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init.clone();
    let active = variant.active_params(params.dims());
    let mut adam = AdamState {
        m: active.iter().map(|&id| vec![0.0; params.slice(id).len()]).collect(),
        v: active.iter().map(|&id| vec![0.0; params.slice(id).len()]).collect(),
        t: 0,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = GradientSet::zeros_like(&params, variant);
    let mut trace = ActivationTrace::default();
    let mut scratch = BackwardScratch::default();
    let mut d_pred = Vec::new();

    let mut history = History {
        loss: Some(cfg.loss),
        epochs: Vec::new(),
    };
    let mut best = (batch_loss(&params, variant, &val.items, cfg.loss)?, 0usize);
    let mut best_params = params.clone();
    let stop_below = cfg.early_stop.unwrap_or(cfg.threshold);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            for id in &active {
                grads.slice_mut(*id).fill(0.0);
            }
            let scale = 1.0 / chunk.len() as f64;
            for &k in chunk {
                let l = accumulate_sample(
                    &params,
                    variant,
                    &train.items[k],
                    cfg.loss,
                    scale,
                    &mut grads,
                    &mut trace,
                    &mut scratch,
                    &mut d_pred,
                );
                match l {
                    Ok(l) => epoch_loss += l,
                    Err(Error::NonFinite { .. }) => {
                        return Err(Error::Diverged { epoch, history });
                    }
                    Err(e) => return Err(e),
                }
            }
            if grads.check_finite().is_err() {
                return Err(Error::Diverged { epoch, history });
            }
            if let Some(max_norm) = cfg.clip_norm {
                let norm = grads.global_norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            apply_update(&mut params, &active, &grads, cfg, &mut adam);
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = match batch_loss(&params, variant, &val.items, cfg.loss) {
            Ok(v) if v.is_finite() => v,
            _ => return Err(Error::Diverged { epoch, history }),
        };
        if val_loss < best.0 {
            best = (val_loss, epoch);
            best_params.clone_from(&params);
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            best_val_loss: best.0,
        });
        if val_loss < stop_below {
            break;
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        history,
        best_val_loss: best.0,
        best_epoch: best.1,
        success: best.0 < cfg.threshold,
    })
}

/// Seeds and outcomes of the first `required` successful trainings.
#[derive(Debug, Clone)]
pub struct ConvergedModels {
    pub models: Vec<(u64, TrainOutcome)>,
    pub attempts: usize,
}

/// Trains freshly initialized models until `required` of them reach the
/// validation threshold, giving up after `max_attempts`.
///
/// Attempt `k` draws its initialization and shuffling from stream `k` of
/// `base_seed`, so the selected models do not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn train_converged(
    dims: Dims,
    variant: &VariantSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    required: usize,
    max_attempts: usize,
    base_seed: u64,
) -> Result<ConvergedModels> {
    cfg.validate()?;
    let mut models = Vec::with_capacity(required);
    let mut attempts = 0;
    while models.len() < required && attempts < max_attempts {
        let wave = (required - models.len()).min(max_attempts - attempts);
        let outcomes: Vec<Result<(u64, TrainOutcome)>> = (attempts..attempts + wave)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
                rng.set_stream(k as u64 + 1);
                let init = LstmParams::init(dims, variant, &mut rng);
                let run = TrainConfig {
                    seed: rng.gen(),
                    ..cfg.clone()
                };
                match train_model(&init, variant, train, val, &run) {
                    Ok(out) => Ok((k as u64, out)),
                    Err(Error::Diverged { .. }) => Ok((
                        k as u64,
                        TrainOutcome {
                            params: init,
                            history: History::default(),
                            best_val_loss: f64::INFINITY,
                            best_epoch: 0,
                            success: false,
                        },
                    )),
                    Err(e) => Err(e),
                }
            })
            .collect();
        attempts += wave;
        for o in outcomes {
            let (k, out) = o?;
            if out.success && models.len() < required {
                models.push((k, out));
            }
        }
    }
    if models.len() < required {
        return Err(Error::InsufficientModels {
            converged: models.len(),
            required,
            attempts,
        });
    }
    Ok(ConvergedModels { models, attempts })
}

fn apply_update(
    params: &mut LstmParams,
    active: &[ParamId],
    grads: &GradientSet,
    cfg: &TrainConfig,
    adam: &mut AdamState,
) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for &id in active {
                for (w, g) in params.slice_mut(id).iter_mut().zip(grads.grads.slice(id)) {
                    *w -= lr * g;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            adam.t += 1;
            let bc1 = 1.0 - beta1.powi(adam.t);
            let bc2 = 1.0 - beta2.powi(adam.t);
            for (slot, &id) in active.iter().enumerate() {
                let g = grads.grads.slice(id);
                let (m, v) = (&mut adam.m[slot], &mut adam.v[slot]);
                for (k, w) in params.slice_mut(id).iter_mut().enumerate() {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                    let m_hat = m[k] / bc1;
                    let v_hat = v[k] / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}
