//! The three evaluation protocols: fidelity on the arithmetic tasks,
//! deletion selectivity on the synthetic corpus, and reward redistribution on
//! grid-world episodes.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{explain, ExplainerKind, Stabilizers};
use crate::error::{Error, Result};
use crate::lrp::{conservation_audit, AuditSummary, ProductRuleKind};
use crate::model::{Architecture, Dims, LstmParams, Model, SequenceInput, VariantSpec};
use crate::tasks::{
    delete_timesteps, gen_arithmetic, gen_gridworld, ArithmeticMode, ArithmeticSpec, GridEpisode, GridSpec, SelectivitySpec,
    GRID_FEATURES,
};
use crate::train::{batch_loss, train_converged, train_model, Dataset, Loss, SampleMeta, TrainConfig};

/// Train, validation and test episodes; split `k` uses generator seed
/// `10 · seed + k`.
pub fn grid_splits(base: &GridSpec, counts: [usize; 3]) -> Result<[Vec<GridEpisode>; 3]> {
    let split = |k: usize| {
        gen_gridworld(&GridSpec {
            count: counts[k],
            seed: base.seed.wrapping_mul(10).wrapping_add(k as u64),
            ..*base
        })
    };
    Ok([split(0)?, split(1)?, split(2)?])
}

/// Markov return predictor for grid-world episodes.
pub fn return_predictor_setup(seed: u64) -> (Dims, VariantSpec, TrainConfig) {
    let dims = Dims {
        input: GRID_FEATURES.len(),
        hidden: 2,
        output: 1,
        head_bias: true,
    };
    let cfg = TrainConfig {
        max_epochs: 400,
        threshold: 0.05,
        early_stop: Some(1e-4),
        seed,
        ..TrainConfig::default()
    };
    (dims, VariantSpec::with_defaults(Architecture::Markov), cfg)
}

/// Standard-LSTM sentence classifier for the selectivity corpus.
pub fn classifier_setup(spec: &SelectivitySpec, seed: u64) -> (Dims, VariantSpec, TrainConfig) {
    let dims = Dims {
        input: spec.embedding_dim,
        hidden: 60,
        output: spec.classes,
        head_bias: true,
    };
    let cfg = TrainConfig {
        max_epochs: 10,
        loss: Loss::SoftmaxCrossEntropy,
        threshold: 1.0,
        early_stop: Some(1e-3),
        seed,
        ..TrainConfig::default()
    };
    (dims, VariantSpec::standard(), cfg)
}

/// Trains one model from an initialization drawn with `cfg.seed`.
pub fn train_fresh(dims: Dims, variant: &VariantSpec, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = LstmParams::init(dims, variant, &mut rng);
    let out = train_model(&init, variant, train, val, cfg)?;
    Model::new(out.params, *variant)
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::shape("pearson", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points"));
    }
    let mut acc = PearsonAccumulator::default();
    for (&x, &y) in xs.iter().zip(ys) {
        acc.push(x, y);
    }
    acc.value()
}

/// Streaming co-moments for a Pearson correlation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PearsonAccumulator {
    n: usize,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl PearsonAccumulator {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        self.mean_x += dx / n;
        let dy = y - self.mean_y;
        self.mean_y += dy / n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn value(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::UndefinedCorrelation("fewer than two points"));
        }
        if self.m2_x <= 0.0 || self.m2_y <= 0.0 {
            return Err(Error::UndefinedCorrelation("zero variance"));
        }
        Ok((self.c_xy / (self.m2_x.sqrt() * self.m2_y.sqrt())).clamp(-1.0, 1.0))
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    /// Values that could not be computed and were left out.
    pub undefined: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Summary {
        let mut defined = Vec::new();
        let mut undefined = 0;
        for v in values {
            match v {
                Some(v) => defined.push(v),
                None => undefined += 1,
            }
        }
        let n = defined.len();
        let mean = if n == 0 { f64::NAN } else { defined.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            (defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Summary {
            mean,
            std,
            count: n,
            undefined,
        }
    }
}

/// Percent with three decimals.
pub fn percent(v: f64) -> String {
    format!("{:.3}", 100.0 * v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerFidelity {
    pub explainer: ExplainerKind,
    pub rho_a: Option<f64>,
    pub rho_b: Option<f64>,
    /// Mean of `(|R_a| + |R_b|) / Σ_t |R_t|`.
    pub mass: Option<f64>,
    /// Items whose explanation failed (division hazards).
    pub failed_items: usize,
}

/// Statistics of one model on the test split.
pub fn fidelity_of_model(
    model: &Model,
    test: &Dataset,
    explainers: &[ExplainerKind],
    stabilizers: Stabilizers,
) -> Result<Vec<ExplainerFidelity>> {
    explainers
        .iter()
        .map(|&kind| {
            let (mut acc_a, mut acc_b) = (PearsonAccumulator::default(), PearsonAccumulator::default());
            let (mut mass_sum, mut mass_n, mut failed) = (0.0, 0usize, 0usize);
            for s in &test.items {
                let SampleMeta::Arithmetic { a, b, n_a, n_b } = s.meta else {
                    return Err(Error::InvalidConfig("fidelity needs arithmetic annotations".into()));
                };
                let rt = match explain(model, &s.input, kind, 0, stabilizers) {
                    Ok(rt) => rt,
                    Err(Error::DivisionHazard { .. }) => {
                        failed += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let r = rt.per_timestep();
                acc_a.push(n_a, r[a]);
                acc_b.push(n_b, r[b]);
                let total: f64 = r.iter().map(|v| v.abs()).sum();
                if total > 0.0 {
                    mass_sum += (r[a].abs() + r[b].abs()) / total;
                    mass_n += 1;
                }
            }
            Ok(ExplainerFidelity {
                explainer: kind,
                rho_a: acc_a.value().ok(),
                rho_b: acc_b.value().ok(),
                mass: (mass_n > 0).then(|| mass_sum / mass_n as f64),
                failed_items: failed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityConfig {
    pub models: usize,
    pub max_attempts: usize,
    pub hidden: usize,
    pub train: TrainConfig,
    pub explainers: Vec<ExplainerKind>,
    pub stabilizers: Stabilizers,
    pub seed: u64,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        FidelityConfig {
            models: 50,
            max_attempts: 200,
            hidden: 1,
            train: TrainConfig {
                max_epochs: 400,
                early_stop: Some(5e-5),
                ..TrainConfig::default()
            },
            explainers: ExplainerKind::FIDELITY.to_vec(),
            stabilizers: Stabilizers::Zero,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub explainer: ExplainerKind,
    pub rho_a: Summary,
    pub rho_b: Summary,
    pub mass: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub attempt: u64,
    pub best_epoch: usize,
    pub val_mse: f64,
    pub test_mse: f64,
    pub explainers: Vec<ExplainerFidelity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub task: ArithmeticMode,
    pub models: usize,
    pub attempts: usize,
    pub test_items: usize,
    pub rows: Vec<FidelityRow>,
    pub per_model: Vec<ModelRecord>,
}

impl FidelityReport {
    pub fn row(&self, kind: ExplainerKind) -> Option<&FidelityRow> {
        self.rows.iter().find(|r| r.explainer == kind)
    }

    /// One line per explainer and statistic, in percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,explainer,statistic,mean_percent,std_percent,models,undefined\n");
        let task = match self.task {
            ArithmeticMode::Addition => "addition",
            ArithmeticMode::Subtraction => "subtraction",
        };
        for r in &self.rows {
            for (name, s) in [("rho_a", r.rho_a), ("rho_b", r.rho_b), ("mass", r.mass)] {
                let _ = writeln!(
                    out,
                    "{task},{},{name},{},{},{},{}",
                    r.explainer,
                    percent(s.mean),
                    percent(s.std),
                    s.count,
                    s.undefined
                );
            }
        }
        out
    }
}

/// Trains converged one-cell models on the task and aggregates per-model
/// relevance statistics on the test split.
pub fn run_fidelity(spec: &ArithmeticSpec, cfg: &FidelityConfig) -> Result<FidelityReport> {
    let data = gen_arithmetic(spec)?;
    let variant = VariantSpec::standard();
    let dims = Dims {
        input: 2,
        hidden: cfg.hidden,
        output: 1,
        head_bias: false,
    };
    let converged = train_converged(
        dims,
        &variant,
        &data.train,
        &data.val,
        &cfg.train,
        cfg.models,
        cfg.max_attempts,
        cfg.seed,
    )?;
    let per_model: Vec<ModelRecord> = converged
        .models
        .par_iter()
        .map(|(attempt, out)| {
            let model = Model::new(out.params.clone(), variant)?;
            Ok(ModelRecord {
                attempt: *attempt,
                best_epoch: out.best_epoch,
                val_mse: out.best_val_loss,
                test_mse: batch_loss(&model.params, &variant, &data.test.items, Loss::Mse)?,
                explainers: fidelity_of_model(&model, &data.test, &cfg.explainers, cfg.stabilizers)?,
            })
        })
        .collect::<Result<_>>()?;
    let rows = cfg
        .explainers
        .iter()
        .enumerate()
        .map(|(k, &explainer)| {
            let col = |f: fn(&ExplainerFidelity) -> Option<f64>| Summary::of(per_model.iter().map(|m| f(&m.explainers[k])));
            FidelityRow {
                explainer,
                rho_a: col(|e| e.rho_a),
                rho_b: col(|e| e.rho_b),
                mass: col(|e| e.mass),
            }
        })
        .collect();
    Ok(FidelityReport {
        task: spec.mode,
        models: per_model.len(),
        attempts: converged.attempts,
        test_items: data.test.len(),
        rows,
        per_model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    /// Most relevant first, on initially correct items.
    Decreasing,
    /// Least relevant first, on initially misclassified items.
    Increasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionCurve {
    pub explainer: ExplainerKind,
    pub ordering: Ordering,
    /// Accuracy after deleting `k = 0, 1, ...` timesteps.
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomCurve {
    pub ordering: Ordering,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityConfig {
    pub explainers: Vec<ExplainerKind>,
    pub max_deletions: usize,
    pub random_runs: usize,
    pub min_len: usize,
    pub stabilizers: Stabilizers,
    pub seed: u64,
}

impl Default for SelectivityConfig {
    fn default() -> Self {
        SelectivityConfig {
            explainers: vec![
                ExplainerKind::GradientSquared,
                ExplainerKind::GradientXInput,
                ExplainerKind::OcclusionFDiff,
                ExplainerKind::OcclusionPDiff,
                ExplainerKind::Lrp(ProductRuleKind::Prop),
                ExplainerKind::Lrp(ProductRuleKind::Abs),
                ExplainerKind::Lrp(ProductRuleKind::Half),
                ExplainerKind::Lrp(ProductRuleKind::All),
            ],
            max_deletions: 5,
            random_runs: 10,
            min_len: 10,
            stabilizers: Stabilizers::Default,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectivityReport {
    pub items: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub misclassified: usize,
    pub curves: Vec<DeletionCurve>,
    pub random: Vec<RandomCurve>,
}

impl SelectivityReport {
    pub fn curve(&self, kind: ExplainerKind, ordering: Ordering) -> Option<&DeletionCurve> {
        self.curves.iter().find(|c| c.explainer == kind && c.ordering == ordering)
    }

    pub fn random(&self, ordering: Ordering) -> Option<&RandomCurve> {
        self.random.iter().find(|c| c.ordering == ordering)
    }

    /// One line per curve and deletion step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,ordering,k,accuracy,std\n");
        let name = |o: Ordering| match o {
            Ordering::Decreasing => "decreasing",
            Ordering::Increasing => "increasing",
        };
        for c in &self.curves {
            for (k, a) in c.accuracy.iter().enumerate() {
                let _ = writeln!(out, "{},{},{k},{a},", c.explainer, name(c.ordering));
            }
        }
        for c in &self.random {
            for k in 0..c.mean.len() {
                let _ = writeln!(out, "random,{},{k},{},{}", name(c.ordering), c.mean[k], c.std[k]);
            }
        }
        out
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

fn label_of(meta: &SampleMeta) -> Result<usize> {
    match meta {
        SampleMeta::Class { label, .. } => Ok(*label),
        _ => Err(Error::InvalidConfig("selectivity needs class labels".into())),
    }
}

/// Whether the model still predicts `label` after deleting each prefix of
/// `order`, for prefix lengths `0..=max`.
fn deletion_hits(model: &Model, seq: &SequenceInput, label: usize, order: &[usize], max: usize) -> Result<Vec<bool>> {
    (0..=max)
        .map(|k| {
            let k = k.min(seq.len() - 1);
            let s = delete_timesteps(seq, &order[..k])?;
            Ok(argmax(&model.predict(&s)?) == label)
        })
        .collect()
}

fn relevance_order(r: &[f64], ordering: Ordering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..r.len()).collect();
    match ordering {
        Ordering::Decreasing => idx.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b))),
        Ordering::Increasing => idx.sort_by(|&a, &b| r[a].total_cmp(&r[b]).then(a.cmp(&b))),
    }
    idx
}

/// Deletes up to `max_deletions` timesteps in relevance order and tracks
/// accuracy, against a random-order baseline.
pub fn run_selectivity(model: &Model, test: &Dataset, cfg: &SelectivityConfig) -> Result<SelectivityReport> {
    let items: Vec<(&SequenceInput, usize)> = test
        .items
        .iter()
        .filter(|s| s.input.len() >= cfg.min_len)
        .map(|s| Ok((&s.input, label_of(&s.meta)?)))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::InvalidConfig("no test items meet the minimum length".into()));
    }
    if cfg.max_deletions >= cfg.min_len {
        return Err(Error::InvalidConfig("cannot delete as many timesteps as the minimum length".into()));
    }
    let correct_flags: Vec<bool> = items
        .par_iter()
        .map(|(seq, label)| Ok(argmax(&model.predict(seq)?) == *label))
        .collect::<Result<_>>()?;
    let cohort = |ordering: Ordering| -> Vec<usize> {
        (0..items.len())
            .filter(|&i| correct_flags[i] == (ordering == Ordering::Decreasing))
            .collect()
    };
    let k_max = cfg.max_deletions;
    let accuracy_of = |hits: &[Vec<bool>]| -> Vec<f64> {
        (0..=k_max)
            .map(|k| {
                if hits.is_empty() {
                    f64::NAN
                } else {
                    hits.iter().filter(|h| h[k]).count() as f64 / hits.len() as f64
                }
            })
            .collect()
    };

    let mut curves = Vec::new();
    for &kind in &cfg.explainers {
        for ordering in [Ordering::Decreasing, Ordering::Increasing] {
            let hits: Vec<Vec<bool>> = cohort(ordering)
                .par_iter()
                .map(|&i| {
                    let (seq, label) = items[i];
                    let rt = explain(model, seq, kind, label, cfg.stabilizers)?;
                    let order = relevance_order(rt.per_timestep(), ordering);
                    deletion_hits(model, seq, label, &order, k_max)
                })
                .collect::<Result<_>>()?;
            curves.push(DeletionCurve {
                explainer: kind,
                ordering,
                accuracy: accuracy_of(&hits),
            });
        }
    }

    let mut random = Vec::new();
    for ordering in [Ordering::Decreasing, Ordering::Increasing] {
        let members = cohort(ordering);
        let runs: Vec<Vec<f64>> = (0..cfg.random_runs)
            .map(|run| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(run as u64 + 1 + if ordering == Ordering::Increasing { 1 << 32 } else { 0 });
                let orders: Vec<Vec<usize>> = members
                    .iter()
                    .map(|&i| {
                        let mut o: Vec<usize> = (0..items[i].0.len()).collect();
                        o.shuffle(&mut rng);
                        o
                    })
                    .collect();
                let hits: Vec<Vec<bool>> = members
                    .par_iter()
                    .zip(orders.par_iter())
                    .map(|(&i, order)| deletion_hits(model, items[i].0, items[i].1, order, k_max))
                    .collect::<Result<_>>()?;
                Ok(accuracy_of(&hits))
            })
            .collect::<Result<_>>()?;
        let (mean, std) = (0..=k_max)
            .map(|k| {
                let s = Summary::of(runs.iter().map(|r| Some(r[k])));
                (s.mean, s.std)
            })
            .unzip();
        random.push(RandomCurve {
            ordering,
            mean,
            std,
            runs: cfg.random_runs,
        });
    }

    let correct = correct_flags.iter().filter(|&&c| c).count();
    Ok(SelectivityReport {
        items: items.len(),
        accuracy: correct as f64 / items.len() as f64,
        correct,
        misclassified: items.len() - correct,
        curves,
        random,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedistributionConfig {
    pub rules: Vec<ProductRuleKind>,
    /// A timestep counts as detected when it holds more than this fraction
    /// of the total absolute relevance.
    pub detection_threshold: f64,
    pub stabilizers: Stabilizers,
}

impl Default for RedistributionConfig {
    fn default() -> Self {
        RedistributionConfig {
            rules: vec![ProductRuleKind::All, ProductRuleKind::Prop, ProductRuleKind::Half],
            detection_threshold: 0.05,
            stabilizers: Stabilizers::Default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRelevance {
    pub rule: ProductRuleKind,
    pub relevance: Vec<f64>,
    pub audit: AuditSummary,
    pub total_abs: f64,
    /// Share of absolute relevance at the moneybag step.
    pub moneybag_share: Option<f64>,
    /// Share of absolute relevance on coins collected after the moneybag.
    pub rewarded_coin_share: f64,
    pub moneybag_detected: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRedistribution {
    pub episode: usize,
    pub episode_return: f64,
    pub prediction: f64,
    pub moneybag_step: Option<usize>,
    pub coin_steps: Vec<usize>,
    pub rewarded_coin_steps: Vec<usize>,
    pub rules: Vec<RuleRelevance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    pub rule: ProductRuleKind,
    /// Positive-return episodes considered for the shares below.
    pub positive_episodes: usize,
    pub mean_moneybag_share: f64,
    pub mean_rewarded_coin_share: f64,
    /// Fraction of positive-return episodes whose moneybag step is detected.
    pub moneybag_detection_rate: f64,
    /// Mean total absolute relevance of zero-return episodes divided by that
    /// of positive-return episodes.
    pub zero_return_mass_ratio: f64,
    pub mean_gate_trapped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedistributionReport {
    pub test_mse: f64,
    pub detection_threshold: f64,
    pub episodes: Vec<EpisodeRedistribution>,
    pub summary: Vec<RuleSummary>,
}

impl RedistributionReport {
    pub fn summary_for(&self, rule: ProductRuleKind) -> Option<&RuleSummary> {
        self.summary.iter().find(|s| s.rule == rule)
    }

    /// One line per episode, rule and timestep, with event annotations.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,rule,t,relevance,event\n");
        for e in &self.episodes {
            for r in &e.rules {
                for (t, v) in r.relevance.iter().enumerate() {
                    let event = if e.moneybag_step == Some(t) {
                        "moneybag"
                    } else if e.rewarded_coin_steps.contains(&t) {
                        "coin_rewarded"
                    } else if e.coin_steps.contains(&t) {
                        "coin"
                    } else {
                        ""
                    };
                    let _ = writeln!(out, "{},{},{t},{v},{event}", e.episode, r.rule);
                }
            }
        }
        out
    }
}

/// Decomposes the predicted return of each episode into per-step rewards
/// under each product rule.
pub fn run_redistribution(
    model: &Model,
    episodes: &[GridEpisode],
    cfg: &RedistributionConfig,
) -> Result<RedistributionReport> {
    if episodes.is_empty() {
        return Err(Error::InvalidConfig("no episodes to explain".into()));
    }
    let samples: Vec<_> = episodes.iter().map(GridEpisode::to_sample).collect();
    let test_mse = batch_loss(&model.params, &model.variant, &samples, Loss::Mse)?;
    let detailed: Vec<EpisodeRedistribution> = episodes
        .par_iter()
        .zip(samples.par_iter())
        .enumerate()
        .map(|(k, (ep, sample))| {
            let prediction = model.predict(&sample.input)?[0];
            let rewarded = ep.rewarded_coin_steps();
            let rules = cfg
                .rules
                .iter()
                .map(|&rule| {
                    let rt = explain(model, &sample.input, ExplainerKind::Lrp(rule), 0, cfg.stabilizers)?;
                    let r = rt.per_timestep().to_vec();
                    let total: f64 = r.iter().map(|v| v.abs()).sum();
                    let share = |t: usize| if total > 0.0 { r[t].abs() / total } else { 0.0 };
                    let moneybag_share = ep.moneybag_step.map(share);
                    Ok(RuleRelevance {
                        rule,
                        audit: conservation_audit(&rt),
                        total_abs: total,
                        moneybag_share,
                        rewarded_coin_share: rewarded.iter().map(|&t| share(t)).sum(),
                        moneybag_detected: moneybag_share.map(|s| s > cfg.detection_threshold),
                        relevance: r,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(EpisodeRedistribution {
                episode: k,
                episode_return: ep.episode_return,
                prediction,
                moneybag_step: ep.moneybag_step,
                coin_steps: ep.coin_steps.clone(),
                rewarded_coin_steps: rewarded,
                rules,
            })
        })
        .collect::<Result<_>>()?;

    let summary = cfg
        .rules
        .iter()
        .enumerate()
        .map(|(k, &rule)| {
            let positive: Vec<&RuleRelevance> = detailed
                .iter()
                .filter(|e| e.episode_return > 0.0)
                .map(|e| &e.rules[k])
                .collect();
            let zero: Vec<&RuleRelevance> = detailed
                .iter()
                .filter(|e| e.episode_return == 0.0)
                .map(|e| &e.rules[k])
                .collect();
            let mean = |v: &[&RuleRelevance], f: &dyn Fn(&RuleRelevance) -> f64| {
                if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().map(|r| f(r)).sum::<f64>() / v.len() as f64
                }
            };
            RuleSummary {
                rule,
                positive_episodes: positive.len(),
                mean_moneybag_share: mean(&positive, &|r| r.moneybag_share.unwrap_or(0.0)),
                mean_rewarded_coin_share: mean(&positive, &|r| r.rewarded_coin_share),
                moneybag_detection_rate: mean(&positive, &|r| f64::from(u8::from(r.moneybag_detected == Some(true)))),
                zero_return_mass_ratio: mean(&zero, &|r| r.total_abs) / mean(&positive, &|r| r.total_abs),
                mean_gate_trapped: mean(
                    &detailed.iter().map(|e| &e.rules[k]).collect::<Vec<_>>(),
                    &|r| r.audit.gate_trapped,
                ),
            }
        })
        .collect();

    Ok(RedistributionReport {
        test_mse,
        detection_threshold: cfg.detection_threshold,
        episodes: detailed,
        summary,
    })
}
