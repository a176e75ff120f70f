//! One function per subcommand. Each writes `config.json` (the merged
//! settings), `version.json`, and its outputs into the output directory.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use lstm_lrp::baselines::{explain as run_explainer, ExplainerKind, Stabilizers};
use lstm_lrp::dtd::{dtd_grid as grid, grid_to_csv};
use lstm_lrp::experiments::{
    classifier_setup, grid_splits, return_predictor_setup, run_fidelity, run_redistribution, run_selectivity,
    train_fresh, FidelityConfig, RedistributionConfig, SelectivityConfig,
};
use lstm_lrp::lrp::{conservation_audit, ProductRuleKind, DEFAULT_EPSILON};
use lstm_lrp::model::{
    deserialize_model, serialize_model, Architecture, Dims, LstmParams, Model, SequenceInput, VariantSpec,
    MODEL_FORMAT_VERSION,
};
use lstm_lrp::numeric::{Activation, ActivationKind};
use lstm_lrp::tasks::{
    episodes_to_dataset, gen_arithmetic, gen_selectivity_corpus, read_dataset_jsonl, write_dataset_jsonl,
    ArithmeticMode, ArithmeticSpec, DatasetTriple, GridSpec, SelectivitySpec, DATASET_FORMAT_VERSION,
};
use lstm_lrp::train::{batch_loss, train_model, Dataset, Loss, SampleMeta, Split, TrainConfig};

use crate::CliError;

pub struct Context {
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl Context {
    fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::Io(self.out.clone(), e))?;
        let path = self.out.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Io(path, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(name, &text)
    }

    /// Echoes the effective settings and the version stamp.
    fn provenance<T: Serialize>(&self, command: &str, settings: &T) -> Result<(), CliError> {
        self.write_json(
            "config.json",
            &json!({ "command": command, "threads": self.threads, "settings": settings }),
        )?;
        self.write_json(
            "version.json",
            &json!({
                "lstm-lrp": env!("CARGO_PKG_VERSION"),
                "model_format_version": MODEL_FORMAT_VERSION,
                "dataset_format_version": DATASET_FORMAT_VERSION,
            }),
        )
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf, CliError> {
    value.as_ref().ok_or_else(|| CliError::Config(format!("`{key}` is required")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Addition,
    Subtraction,
    Gridworld,
    Selectivity,
}

fn generate(task: Task, seed: u64) -> Result<DatasetTriple, CliError> {
    Ok(match task {
        Task::Addition => gen_arithmetic(&ArithmeticSpec::new(ArithmeticMode::Addition, seed))?,
        Task::Subtraction => gen_arithmetic(&ArithmeticSpec::new(ArithmeticMode::Subtraction, seed))?,
        Task::Gridworld => {
            let base = GridSpec {
                seed,
                ..GridSpec::default()
            };
            let [train, val, test] = grid_splits(&base, [3000, 500, 200])?;
            DatasetTriple {
                train: episodes_to_dataset(Split::Train, &train)?,
                val: episodes_to_dataset(Split::Val, &val)?,
                test: episodes_to_dataset(Split::Test, &test)?,
            }
        }
        Task::Selectivity => {
            gen_selectivity_corpus(&SelectivitySpec {
                seed,
                ..SelectivitySpec::default()
            })?
            .splits
        }
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSettings {
    pub task: Task,
    pub seed: u64,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            task: Task::Addition,
            seed: 0,
        }
    }
}

pub fn gen(ctx: &Context, s: GenSettings) -> Result<(), CliError> {
    ctx.provenance("gen", &s)?;
    let data = generate(s.task, s.seed)?;
    for (name, ds) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        ctx.write(&format!("{name}.jsonl"), &write_dataset_jsonl(ds))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub task: Task,
    pub data: Option<PathBuf>,
    pub variant: Option<Architecture>,
    pub hidden: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            task: Task::Addition,
            data: None,
            variant: None,
            hidden: None,
            epochs: None,
            learning_rate: TrainConfig::default().learning_rate,
            batch_size: TrainConfig::default().batch_size,
            seed: 0,
        }
    }
}

fn variant_of(arch: Architecture) -> VariantSpec {
    match arch {
        Architecture::Standard => VariantSpec::standard(),
        a => VariantSpec::with_defaults(a),
    }
}

/// Built-in architecture and training defaults for a task.
fn task_setup(task: Task, seed: u64) -> (Dims, VariantSpec, TrainConfig) {
    match task {
        Task::Addition | Task::Subtraction => {
            let dims = Dims {
                input: 2,
                hidden: 1,
                output: 1,
                head_bias: false,
            };
            let cfg = TrainConfig {
                seed,
                ..FidelityConfig::default().train
            };
            (dims, VariantSpec::standard(), cfg)
        }
        Task::Gridworld => return_predictor_setup(seed),
        Task::Selectivity => classifier_setup(&SelectivitySpec::default(), seed),
    }
}

fn load_split(dir: &Path, name: &str) -> Result<Dataset, CliError> {
    Ok(read_dataset_jsonl(&read_input(&dir.join(name))?)?)
}

pub fn train(ctx: &Context, mut s: TrainSettings) -> Result<(), CliError> {
    let (mut dims, default_variant, mut cfg) = task_setup(s.task, s.seed);
    let arch = *s.variant.get_or_insert(default_variant.architecture);
    dims.hidden = *s.hidden.get_or_insert(dims.hidden);
    cfg.max_epochs = *s.epochs.get_or_insert(cfg.max_epochs);
    cfg.learning_rate = s.learning_rate;
    cfg.batch_size = s.batch_size;
    cfg.validate()?;
    ctx.provenance("train", &s)?;

    let (train, val, test) = match &s.data {
        Some(dir) => {
            let test = dir.join("test.jsonl");
            let test = if test.exists() { Some(load_split(dir, "test.jsonl")?) } else { None };
            (load_split(dir, "train.jsonl")?, load_split(dir, "val.jsonl")?, test)
        }
        None => {
            let d = generate(s.task, s.seed)?;
            (d.train, d.val, Some(d.test))
        }
    };
    let first = train
        .items
        .first()
        .ok_or_else(|| CliError::Config("training set is empty".into()))?;
    dims.input = first.input.dim();
    dims.output = first.target.len();
    if matches!(first.meta, SampleMeta::Class { .. }) {
        cfg.loss = Loss::SoftmaxCrossEntropy;
    }
    let variant = variant_of(arch);
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let init = LstmParams::init(dims, &variant, &mut rng);
    let outcome = train_model(&init, &variant, &train, &val, &cfg)?;
    let model = Model::new(outcome.params, variant)?;
    let test_loss = match &test {
        Some(t) => Some(batch_loss(&model.params, &variant, &t.items, cfg.loss)?),
        None => None,
    };
    ctx.write("model.json", &serialize_model(&model))?;
    ctx.write("history.csv", &outcome.history.to_csv())?;
    ctx.write_json(
        "metrics.json",
        &json!({
            "best_epoch": outcome.best_epoch,
            "best_val_loss": outcome.best_val_loss,
            "test_loss": test_loss,
            "success": outcome.success,
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainSettings {
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub index: usize,
    pub explainer: String,
    pub rule: ProductRuleKind,
    pub eps: Option<f64>,
    pub product_eps: Option<f64>,
    pub target: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        ExplainSettings {
            model: None,
            input: None,
            index: 0,
            explainer: "lrp".into(),
            rule: ProductRuleKind::All,
            eps: None,
            product_eps: None,
            target: 0,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SequenceFile {
    Rows(Vec<Vec<f64>>),
    Record { sequence: Vec<Vec<f64>> },
}

fn read_sequence(path: &Path, index: usize) -> Result<SequenceInput, CliError> {
    let text = read_input(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
    if first.contains("\"format_version\"") {
        let ds = read_dataset_jsonl(&text)?;
        let len = ds.len();
        let sample = ds
            .items
            .into_iter()
            .nth(index)
            .ok_or(lstm_lrp::Error::IndexOutOfRange { index, len })?;
        return Ok(sample.input);
    }
    let parsed: SequenceFile = serde_json::from_str(&text)
        .map_err(|e| lstm_lrp::Error::Parse(format!("{}: {e}", path.display())))?;
    let rows = match parsed {
        SequenceFile::Rows(r) | SequenceFile::Record { sequence: r } => r,
    };
    Ok(SequenceInput::new(rows)?)
}

impl ExplainSettings {
    /// Fills the stabilizers in from the rule and returns the explainer.
    fn resolve(&mut self) -> Result<ExplainerKind, CliError> {
        let kind = if self.explainer == "lrp" {
            ExplainerKind::Lrp(self.rule)
        } else {
            self.explainer.parse()?
        };
        if let ExplainerKind::Lrp(rule) = kind {
            self.rule = rule;
            self.eps.get_or_insert(DEFAULT_EPSILON);
            self.product_eps.get_or_insert(rule.default_epsilon());
        }
        Ok(kind)
    }

    fn stabilizers(&self) -> Stabilizers {
        Stabilizers::Fixed {
            linear: self.eps.unwrap_or(DEFAULT_EPSILON),
            product: self.product_eps.unwrap_or(self.rule.default_epsilon()),
        }
    }

    fn load(&self) -> Result<(Model, SequenceInput), CliError> {
        let model_path = required(&self.model, "model")?;
        let input_path = required(&self.input, "input")?;
        let model = deserialize_model(&read_input(model_path)?)?;
        let seq = read_sequence(input_path, self.index)?;
        Ok((model, seq))
    }
}

pub fn explain(ctx: &Context, mut s: ExplainSettings) -> Result<(), CliError> {
    let kind = s.resolve()?;
    let (model, seq) = s.load()?;
    s.stabilizers().config(s.rule, s.target).validate()?;
    ctx.provenance("explain", &s)?;
    let rt = run_explainer(&model, &seq, kind, s.target, s.stabilizers())?;
    ctx.write("relevance.csv", &rt.to_csv())?;
    ctx.write_json("relevance.json", &rt.to_document())
}

pub fn audit(ctx: &Context, mut s: ExplainSettings) -> Result<(), CliError> {
    let kind = s.resolve()?;
    if !matches!(kind, ExplainerKind::Lrp(_)) {
        return Err(CliError::Config("audit needs an LRP explainer".into()));
    }
    let (model, seq) = s.load()?;
    s.stabilizers().config(s.rule, s.target).validate()?;
    ctx.provenance("audit", &s)?;
    let rt = run_explainer(&model, &seq, kind, s.target, s.stabilizers())?;
    let summary = conservation_audit(&rt);
    println!("{}", serde_json::to_string(&summary).expect("serializable"));
    ctx.write_json("audit.json", &summary)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtdSettings {
    pub signal: ActivationKind,
    pub n: usize,
    pub z_g: [f64; 2],
    pub z_s: [f64; 2],
    pub r_p: f64,
}

impl Default for DtdSettings {
    fn default() -> Self {
        DtdSettings {
            signal: ActivationKind::Tanh,
            n: 100,
            z_g: [-6.0, 6.0],
            z_s: [-4.0, 4.0],
            r_p: 1.0,
        }
    }
}

pub fn dtd_grid(ctx: &Context, s: DtdSettings) -> Result<(), CliError> {
    let signal = Activation::new(s.signal, 1.0)?;
    ctx.provenance("dtd-grid", &s)?;
    let points = grid(signal, (s.z_g[0], s.z_g[1]), (s.z_s[0], s.z_s[1]), s.n, s.r_p)?;
    ctx.write("dtd_grid.csv", &grid_to_csv(&points))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilizerChoice {
    Zero,
    Default,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelitySettings {
    pub task: ArithmeticMode,
    pub models: usize,
    pub max_attempts: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub stabilizers: StabilizerChoice,
    pub seed: u64,
}

impl Default for FidelitySettings {
    fn default() -> Self {
        let d = FidelityConfig::default();
        FidelitySettings {
            task: ArithmeticMode::Addition,
            models: d.models,
            max_attempts: d.max_attempts,
            hidden: d.hidden,
            epochs: d.train.max_epochs,
            stabilizers: StabilizerChoice::Zero,
            seed: d.seed,
        }
    }
}

pub fn fidelity(ctx: &Context, s: FidelitySettings) -> Result<(), CliError> {
    let d = FidelityConfig::default();
    let cfg = FidelityConfig {
        models: s.models,
        max_attempts: s.max_attempts,
        hidden: s.hidden,
        train: TrainConfig {
            max_epochs: s.epochs,
            ..d.train
        },
        stabilizers: match s.stabilizers {
            StabilizerChoice::Zero => Stabilizers::Zero,
            StabilizerChoice::Default => Stabilizers::Default,
        },
        seed: s.seed,
        ..d
    };
    cfg.train.validate()?;
    ctx.provenance("fidelity", &s)?;
    let report = run_fidelity(&ArithmeticSpec::new(s.task, s.seed), &cfg)?;
    ctx.write_json("fidelity.json", &report)?;
    ctx.write("fidelity.csv", &report.to_csv())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectivitySettings {
    pub hidden: usize,
    pub epochs: usize,
    pub random_runs: usize,
    pub max_deletions: usize,
    pub seed: u64,
}

impl Default for SelectivitySettings {
    fn default() -> Self {
        let spec = SelectivitySpec::default();
        let (dims, _, cfg) = classifier_setup(&spec, 0);
        let sel = SelectivityConfig::default();
        SelectivitySettings {
            hidden: dims.hidden,
            epochs: cfg.max_epochs,
            random_runs: sel.random_runs,
            max_deletions: sel.max_deletions,
            seed: 7,
        }
    }
}

pub fn selectivity(ctx: &Context, s: SelectivitySettings) -> Result<(), CliError> {
    let spec = SelectivitySpec {
        seed: s.seed,
        ..SelectivitySpec::default()
    };
    let (mut dims, variant, mut cfg) = classifier_setup(&spec, s.seed);
    dims.hidden = s.hidden;
    cfg.max_epochs = s.epochs;
    cfg.validate()?;
    ctx.provenance("selectivity", &s)?;
    let corpus = gen_selectivity_corpus(&spec)?;
    let model = train_fresh(dims, &variant, &corpus.splits.train, &corpus.splits.val, &cfg)?;
    let sel = SelectivityConfig {
        random_runs: s.random_runs,
        max_deletions: s.max_deletions,
        seed: s.seed,
        ..SelectivityConfig::default()
    };
    let report = run_selectivity(&model, &corpus.splits.test, &sel)?;
    ctx.write("model.json", &serialize_model(&model))?;
    ctx.write_json("selectivity.json", &report)?;
    ctx.write("selectivity.csv", &report.to_csv())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedistributeSettings {
    pub hidden: usize,
    pub epochs: usize,
    pub episodes: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RedistributeSettings {
    fn default() -> Self {
        let (dims, _, cfg) = return_predictor_setup(0);
        RedistributeSettings {
            hidden: dims.hidden,
            epochs: cfg.max_epochs,
            episodes: 200,
            threshold: RedistributionConfig::default().detection_threshold,
            seed: 1,
        }
    }
}

pub fn redistribute(ctx: &Context, s: RedistributeSettings) -> Result<(), CliError> {
    let (mut dims, variant, mut cfg) = return_predictor_setup(s.seed);
    dims.hidden = s.hidden;
    cfg.max_epochs = s.epochs;
    cfg.validate()?;
    if !(s.threshold > 0.0 && s.threshold < 1.0) {
        return Err(CliError::Config("`threshold` must lie in (0, 1)".into()));
    }
    ctx.provenance("redistribute", &s)?;
    let base = GridSpec {
        seed: s.seed,
        ..GridSpec::default()
    };
    let [train, val, test] = grid_splits(&base, [3000, 500, s.episodes])?;
    let model = train_fresh(
        dims,
        &variant,
        &episodes_to_dataset(Split::Train, &train)?,
        &episodes_to_dataset(Split::Val, &val)?,
        &cfg,
    )?;
    let report = run_redistribution(
        &model,
        &test,
        &RedistributionConfig {
            detection_threshold: s.threshold,
            ..RedistributionConfig::default()
        },
    )?;
    ctx.write("model.json", &serialize_model(&model))?;
    ctx.write_json("redistribution.json", &report)?;
    ctx.write("redistribution.csv", &report.to_csv())
}
