//! Seeded data generators: the two arithmetic tasks, a synthetic five-class
//! corpus for deletion experiments, and a one-dimensional grid world whose
//! episodes are labeled with their return.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SequenceInput;
use crate::numeric::Vec64;
use crate::train::{Dataset, Sample, SampleMeta, Split};

pub const DATASET_FORMAT_VERSION: u64 = 1;

fn split_rng(seed: u64, split: Split) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match split {
        Split::Train => 1,
        Split::Val => 2,
        Split::Test => 3,
    });
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArithmeticMode {
    /// Numbers drawn from `[-1, -0.5] ∪ [0.5, 1]`, target `n_a + n_b`.
    Addition,
    /// Numbers drawn from `[0.5, 1]`, target `n_a - n_b`.
    Subtraction,
}

impl std::str::FromStr for ArithmeticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "addition" => Ok(ArithmeticMode::Addition),
            "subtraction" => Ok(ArithmeticMode::Subtraction),
            other => Err(Error::InvalidConfig(format!("unknown task `{other}` (addition, subtraction)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticSpec {
    pub mode: ArithmeticMode,
    pub train: SplitSpec,
    pub val: SplitSpec,
    pub test: SplitSpec,
    pub seed: u64,
}

impl ArithmeticSpec {
    pub fn new(mode: ArithmeticMode, seed: u64) -> Self {
        ArithmeticSpec {
            mode,
            train: SplitSpec {
                count: 10_000,
                min_len: 4,
                max_len: 10,
            },
            val: SplitSpec {
                count: 2_500,
                min_len: 11,
                max_len: 12,
            },
            test: SplitSpec {
                count: 2_500,
                min_len: 13,
                max_len: 14,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let splits = [self.train, self.val, self.test];
        for s in &splits {
            if s.min_len < 2 {
                return Err(Error::InvalidConfig(format!(
                    "sequence length {} cannot hold two marked positions",
                    s.min_len
                )));
            }
            if s.min_len > s.max_len {
                return Err(Error::InvalidConfig("split length range is empty".into()));
            }
            if s.count == 0 {
                return Err(Error::InvalidConfig("split count must be positive".into()));
            }
        }
        for (i, a) in splits.iter().enumerate() {
            for b in &splits[i + 1..] {
                if a.min_len <= b.max_len && b.min_len <= a.max_len {
                    return Err(Error::InvalidConfig("split length ranges overlap".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetTriple {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn draw_number(rng: &mut ChaCha8Rng, mode: ArithmeticMode) -> f64 {
    let magnitude = rng.gen_range(0.5..=1.0);
    match mode {
        ArithmeticMode::Addition if rng.gen_bool(0.5) => -magnitude,
        _ => magnitude,
    }
}

fn arithmetic_split(spec: &ArithmeticSpec, split: Split, s: SplitSpec) -> Result<Dataset> {
    let mut rng = split_rng(spec.seed, split);
    let items = (0..s.count)
        .map(|_| {
            let len = rng.gen_range(s.min_len..=s.max_len);
            let mut pair = index::sample(&mut rng, len, 2).into_vec();
            pair.sort_unstable();
            let (a, b) = (pair[0], pair[1]);
            let mut data = vec![0.0; 2 * len];
            for t in 0..len {
                let n = draw_number(&mut rng, spec.mode);
                if t == a || t == b {
                    data[2 * t + 1] = n;
                } else {
                    data[2 * t] = n;
                }
            }
            let (n_a, n_b) = (data[2 * a + 1], data[2 * b + 1]);
            let target = match spec.mode {
                ArithmeticMode::Addition => n_a + n_b,
                ArithmeticMode::Subtraction => n_a - n_b,
            };
            Sample {
                input: SequenceInput::from_flat(2, data).expect("finite draws"),
                target: Vec64::from([target]),
                meta: SampleMeta::Arithmetic { a, b, n_a, n_b },
            }
        })
        .collect();
    Dataset::new(split, items)
}

/// Rows are `[n_t, 0]` at unmarked positions and `[0, n_t]` at the two
/// marked positions `a < b`.
pub fn gen_arithmetic(spec: &ArithmeticSpec) -> Result<DatasetTriple> {
    spec.validate()?;
    Ok(DatasetTriple {
        train: arithmetic_split(spec, Split::Train, spec.train)?,
        val: arithmetic_split(spec, Split::Val, spec.val)?,
        test: arithmetic_split(spec, Split::Test, spec.test)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoneybagEncoding {
    /// Flag set only at the step the moneybag is picked up.
    Event,
    /// Flag set from the pickup onward.
    Persistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub count: usize,
    pub grid_len: usize,
    pub episode_len: usize,
    pub coins: usize,
    pub encoding: MoneybagEncoding,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            count: 1000,
            grid_len: 11,
            episode_len: 20,
            coins: 5,
            encoding: MoneybagEncoding::Event,
            seed: 0,
        }
    }
}

pub const GRID_FEATURES: [&str; 4] = ["moneybag", "coin", "left", "right"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEpisode {
    /// `[moneybag, coin, left, right]` per step.
    pub features: Vec<[f64; 4]>,
    pub episode_return: f64,
    pub moneybag_step: Option<usize>,
    pub coin_steps: Vec<usize>,
}

impl GridEpisode {
    pub fn to_sample(&self) -> Sample {
        let data = self.features.iter().flat_map(|f| f.iter().copied()).collect();
        Sample {
            input: SequenceInput::from_flat(4, data).expect("binary features"),
            target: Vec64::from([self.episode_return]),
            meta: SampleMeta::Episode {
                episode_return: self.episode_return,
                moneybag_step: self.moneybag_step,
                coin_steps: self.coin_steps.clone(),
            },
        }
    }

    /// Steps at which a coin was collected after the moneybag.
    pub fn rewarded_coin_steps(&self) -> Vec<usize> {
        match self.moneybag_step {
            Some(m) => self.coin_steps.iter().copied().filter(|&c| c > m).collect(),
            None => Vec::new(),
        }
    }
}

/// Episodes of a uniformly random left/right policy on a 1-D grid. The agent
/// starts in the middle; the moneybag and coins sit on distinct other cells
/// and vanish when collected. Coins collected after the moneybag count
/// towards the return.
pub fn gen_gridworld(spec: &GridSpec) -> Result<Vec<GridEpisode>> {
    if spec.episode_len < 2 {
        return Err(Error::InvalidConfig("episode length must be at least 2".into()));
    }
    if spec.coins + 2 > spec.grid_len {
        return Err(Error::InvalidConfig("grid too small for the moneybag and coins".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = spec.grid_len / 2;
    let cells: Vec<usize> = (0..spec.grid_len).filter(|&c| c != start).collect();
    let episodes = (0..spec.count)
        .map(|_| {
            // 0 empty, 1 moneybag, 2 coin.
            let mut grid = vec![0u8; spec.grid_len];
            let placed: Vec<usize> = cells.choose_multiple(&mut rng, spec.coins + 1).copied().collect();
            grid[placed[0]] = 1;
            for &c in &placed[1..] {
                grid[c] = 2;
            }
            let mut pos = start;
            let mut features = Vec::with_capacity(spec.episode_len);
            let (mut moneybag_step, mut coin_steps, mut ret) = (None, Vec::new(), 0.0);
            for t in 0..spec.episode_len {
                let right = rng.gen_bool(0.5);
                pos = if right {
                    (pos + 1).min(spec.grid_len - 1)
                } else {
                    pos.saturating_sub(1)
                };
                let mut f = [0.0, 0.0, f64::from(u8::from(!right)), f64::from(u8::from(right))];
                match grid[pos] {
                    1 => {
                        moneybag_step = Some(t);
                        f[0] = 1.0;
                    }
                    2 => {
                        coin_steps.push(t);
                        f[1] = 1.0;
                        if moneybag_step.is_some() {
                            ret += 1.0;
                        }
                    }
                    _ => {}
                }
                if spec.encoding == MoneybagEncoding::Persistent && moneybag_step.is_some() {
                    f[0] = 1.0;
                }
                grid[pos] = 0;
                features.push(f);
            }
            GridEpisode {
                features,
                episode_return: ret,
                moneybag_step,
                coin_steps,
            }
        })
        .collect();
    Ok(episodes)
}

pub fn episodes_to_dataset(split: Split, episodes: &[GridEpisode]) -> Result<Dataset> {
    Dataset::new(split, episodes.iter().map(GridEpisode::to_sample).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectivitySpec {
    pub classes: usize,
    pub embedding_dim: usize,
    pub neutral_tokens: usize,
    /// Distinct tokens for each sentiment in `{-2, -1, +1, +2}`.
    pub tokens_per_sentiment: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Each sentence plants between zero and this many sentiment tokens.
    pub max_keys: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SelectivitySpec {
    fn default() -> Self {
        SelectivitySpec {
            classes: 5,
            embedding_dim: 60,
            neutral_tokens: 40,
            tokens_per_sentiment: 4,
            min_len: 10,
            max_len: 16,
            max_keys: 3,
            train: 6000,
            val: 1000,
            test: 2000,
            seed: 0,
        }
    }
}

pub const SENTIMENTS: [i32; 4] = [-2, -1, 1, 2];

/// Label of a sentence with the given sentiment sum.
pub fn sentiment_label(sum: i32) -> usize {
    (sum.clamp(-2, 2) + 2) as usize
}

/// The class of sentences without sentiment tokens.
pub const NEUTRAL_CLASS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectivityCorpus {
    pub spec: SelectivitySpec,
    /// Row `k` embeds token `k`.
    pub embeddings: Vec<Vec<f64>>,
    /// Sentiment of each token; zero for neutral tokens.
    pub sentiment: Vec<i32>,
    pub splits: DatasetTriple,
}

impl SelectivityCorpus {
    pub fn embed(&self, tokens: &[usize]) -> SequenceInput {
        let data = tokens.iter().flat_map(|&t| self.embeddings[t].iter().copied()).collect();
        SequenceInput::from_flat(self.spec.embedding_dim, data).expect("finite embeddings")
    }

    pub fn label_of(&self, tokens: &[usize]) -> usize {
        sentiment_label(tokens.iter().map(|&t| self.sentiment[t]).sum())
    }

    pub fn sample(&self, tokens: Vec<usize>) -> Sample {
        let label = self.label_of(&tokens);
        let mut target = vec![0.0; self.spec.classes];
        target[label] = 1.0;
        Sample {
            input: self.embed(&tokens),
            target: Vec64::from_raw(target),
            meta: SampleMeta::Class { label, tokens },
        }
    }
}

/// Neutral filler with up to `max_keys` planted sentiment tokens; the label
/// bins the sentiment sum into five classes.
pub fn gen_selectivity_corpus(spec: &SelectivitySpec) -> Result<SelectivityCorpus> {
    if spec.classes != 5 {
        return Err(Error::InvalidConfig("the sentiment binning defines exactly five classes".into()));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len || spec.max_keys > spec.min_len {
        return Err(Error::InvalidConfig("invalid corpus length range".into()));
    }
    if spec.neutral_tokens == 0 || spec.tokens_per_sentiment == 0 || spec.embedding_dim == 0 {
        return Err(Error::InvalidConfig("empty vocabulary".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = spec.neutral_tokens + SENTIMENTS.len() * spec.tokens_per_sentiment;
    let embeddings: Vec<Vec<f64>> = (0..vocab)
        .map(|_| (0..spec.embedding_dim).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .collect();
    let mut sentiment = vec![0; spec.neutral_tokens];
    for s in SENTIMENTS {
        sentiment.extend(std::iter::repeat(s).take(spec.tokens_per_sentiment));
    }

    let mut corpus = SelectivityCorpus {
        spec: *spec,
        embeddings,
        sentiment,
        splits: DatasetTriple {
            train: Dataset {
                split: Split::Train,
                items: Vec::new(),
            },
            val: Dataset {
                split: Split::Val,
                items: Vec::new(),
            },
            test: Dataset {
                split: Split::Test,
                items: Vec::new(),
            },
        },
    };
    let make = |corpus: &SelectivityCorpus, split: Split, count: usize| -> Result<Dataset> {
        let mut rng = split_rng(spec.seed, split);
        let items = (0..count)
            .map(|_| {
                let len = rng.gen_range(spec.min_len..=spec.max_len);
                let mut tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..spec.neutral_tokens)).collect();
                let keys = rng.gen_range(0..=spec.max_keys);
                for pos in index::sample(&mut rng, len, keys) {
                    tokens[pos] = spec.neutral_tokens + rng.gen_range(0..vocab - spec.neutral_tokens);
                }
                corpus.sample(tokens)
            })
            .collect();
        Dataset::new(split, items)
    };
    let train = make(&corpus, Split::Train, spec.train)?;
    let val = make(&corpus, Split::Val, spec.val)?;
    let test = make(&corpus, Split::Test, spec.test)?;
    corpus.splits = DatasetTriple { train, val, test };
    Ok(corpus)
}

/// Removes the given timesteps and concatenates the rest.
pub fn delete_timesteps(seq: &SequenceInput, indices: &[usize]) -> Result<SequenceInput> {
    let mut drop = vec![false; seq.len()];
    for &i in indices {
        if i >= seq.len() {
            return Err(Error::IndexOutOfRange { index: i, len: seq.len() });
        }
        if drop[i] {
            return Err(Error::InvalidConfig(format!("timestep {i} listed twice")));
        }
        drop[i] = true;
    }
    if drop.iter().all(|&d| d) {
        return Err(Error::InvalidConfig("cannot delete every timestep".into()));
    }
    let data = seq
        .rows()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .flat_map(|(r, _)| r.iter().copied())
        .collect();
    SequenceInput::from_flat(seq.dim(), data)
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u64,
    split: Split,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    sequence: Vec<Vec<f64>>,
    target: Vec<f64>,
    meta: SampleMeta,
}

/// One JSON header line followed by one JSON record per sample.
pub fn write_dataset_jsonl(ds: &Dataset) -> String {
    let mut out = String::new();
    let header = Header {
        format_version: DATASET_FORMAT_VERSION,
        split: ds.split,
        count: ds.len(),
    };
    let _ = writeln!(out, "{}", serde_json::to_string(&header).expect("serializable"));
    for s in &ds.items {
        let rec = Record {
            sequence: s.input.to_rows(),
            target: s.target.to_vec(),
            meta: s.meta.clone(),
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&rec).expect("serializable"));
    }
    out
}

pub fn read_dataset_jsonl(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))?;
    let value: serde_json::Value = serde_json::from_str(first).map_err(|e| Error::Parse(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::MissingField("format_version".into()))?;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    let mut items = Vec::with_capacity(header.count);
    for (k, line) in lines.enumerate() {
        let rec: Record =
            serde_json::from_str(line).map_err(|e| Error::Parse(format!("record {}: {e}", k + 1)))?;
        items.push(Sample {
            input: SequenceInput::new(rec.sequence)?,
            target: Vec64::new(rec.target)?,
            meta: rec.meta,
        });
    }
    if items.len() != header.count {
        return Err(Error::Parse(format!(
            "header announces {} records, found {}",
            header.count,
            items.len()
        )));
    }
    Dataset::new(header.split, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(mode: ArithmeticMode) -> ArithmeticSpec {
        let mut s = ArithmeticSpec::new(mode, 7);
        s.train.count = 300;
        s.val.count = 100;
        s.test.count = 100;
        s
    }

    #[test]
    fn default_arithmetic_splits() {
        let d = gen_arithmetic(&ArithmeticSpec::new(ArithmeticMode::Addition, 1)).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (10_000, 2_500, 2_500));
        for (ds, lo, hi) in [(&d.train, 4, 10), (&d.val, 11, 12), (&d.test, 13, 14)] {
            assert!(ds.items.iter().all(|s| (lo..=hi).contains(&s.input.len())));
        }
    }

    #[test]
    fn arithmetic_items_are_well_formed() {
        for mode in [ArithmeticMode::Addition, ArithmeticMode::Subtraction] {
            let d = gen_arithmetic(&small_spec(mode)).unwrap();
            for s in d.train.items.iter().chain(&d.test.items) {
                let SampleMeta::Arithmetic { a, b, n_a, n_b } = s.meta else {
                    panic!("missing annotation")
                };
                assert!(a < b && b < s.input.len());
                let col2: Vec<f64> = s.input.rows().map(|r| r[1]).collect();
                assert_eq!(col2.iter().filter(|v| **v != 0.0).count(), 2);
                assert_eq!(col2.iter().sum::<f64>(), n_a + n_b);
                assert_eq!(s.input.row(a)[0], 0.0);
                assert_eq!(s.input.row(b)[0], 0.0);
                for r in s.input.rows() {
                    let n = r[0] + r[1];
                    match mode {
                        ArithmeticMode::Addition => assert!((0.5..=1.0).contains(&n.abs())),
                        ArithmeticMode::Subtraction => assert!((0.5..=1.0).contains(&n)),
                    }
                }
                let expected = match mode {
                    ArithmeticMode::Addition => n_a + n_b,
                    ArithmeticMode::Subtraction => n_a - n_b,
                };
                assert_eq!(s.target[0], expected);
            }
        }
    }

    #[test]
    fn subtraction_example_target() {
        assert!((0.8f64 - 0.6 - 0.2).abs() < 1e-15);
        let d = gen_arithmetic(&small_spec(ArithmeticMode::Subtraction)).unwrap();
        assert!(d.train.items.iter().any(|s| s.target[0] < 0.0));
    }

    #[test]
    fn arithmetic_is_deterministic() {
        let a = gen_arithmetic(&small_spec(ArithmeticMode::Addition)).unwrap();
        let b = gen_arithmetic(&small_spec(ArithmeticMode::Addition)).unwrap();
        assert_eq!(write_dataset_jsonl(&a.train), write_dataset_jsonl(&b.train));
        let mut other = small_spec(ArithmeticMode::Addition);
        other.seed = 8;
        assert_ne!(gen_arithmetic(&other).unwrap().train, a.train);
    }

    #[test]
    fn arithmetic_spec_validation() {
        let mut s = small_spec(ArithmeticMode::Addition);
        s.train.min_len = 1;
        assert!(matches!(gen_arithmetic(&s), Err(Error::InvalidConfig(_))));
        let mut s = small_spec(ArithmeticMode::Addition);
        s.val.min_len = 10;
        assert!(gen_arithmetic(&s).is_err());
    }

    fn count_return(ep: &GridEpisode) -> f64 {
        // Replays the features rather than trusting the recorded steps.
        let mut seen_moneybag = false;
        let mut ret = 0.0;
        let mut prev = 0.0;
        for f in &ep.features {
            if f[0] == 1.0 && prev == 0.0 {
                seen_moneybag = true;
            }
            prev = f[0];
            if f[1] == 1.0 && seen_moneybag {
                ret += 1.0;
            }
        }
        ret
    }

    #[test]
    fn grid_returns_match_counting_oracle() {
        for encoding in [MoneybagEncoding::Event, MoneybagEncoding::Persistent] {
            let spec = GridSpec {
                count: 500,
                encoding,
                seed: 3,
                ..GridSpec::default()
            };
            let eps = gen_gridworld(&spec).unwrap();
            let mut positive = 0;
            for ep in &eps {
                assert_eq!(ep.features.len(), 20);
                assert!(ep.features.iter().all(|f| f[2] + f[3] == 1.0));
                assert_eq!(count_return(ep), ep.episode_return);
                assert_eq!(ep.rewarded_coin_steps().len() as f64, ep.episode_return);
                if encoding == MoneybagEncoding::Persistent {
                    assert!(ep.features.windows(2).all(|w| w[1][0] >= w[0][0]));
                } else {
                    assert!(ep.features.iter().filter(|f| f[0] == 1.0).count() <= 1);
                }
                if ep.episode_return > 0.0 {
                    positive += 1;
                }
                if ep.moneybag_step.is_none() {
                    assert_eq!(ep.episode_return, 0.0);
                }
            }
            assert!(positive > 50 && positive < 450, "{positive}");
        }
    }

    #[test]
    fn grid_return_examples() {
        let mk = |moneybag: Option<usize>, coins: &[usize]| {
            let mut features = vec![[0.0, 0.0, 1.0, 0.0]; 12];
            if let Some(m) = moneybag {
                features[m][0] = 1.0;
            }
            for &c in coins {
                features[c][1] = 1.0;
            }
            GridEpisode {
                features,
                episode_return: 0.0,
                moneybag_step: moneybag,
                coin_steps: coins.to_vec(),
            }
        };
        assert_eq!(count_return(&mk(Some(3), &[5, 7, 9])), 3.0);
        assert_eq!(mk(Some(3), &[5, 7, 9]).rewarded_coin_steps(), vec![5, 7, 9]);
        assert_eq!(count_return(&mk(Some(8), &[1, 2])), 0.0);
        assert_eq!(count_return(&mk(None, &[1, 2])), 0.0);
    }

    #[test]
    fn corpus_labels_follow_planted_tokens() {
        let spec = SelectivitySpec {
            train: 200,
            val: 50,
            test: 50,
            seed: 5,
            ..SelectivitySpec::default()
        };
        let c = gen_selectivity_corpus(&spec).unwrap();
        let neutral: Vec<usize> = (0..10).collect();
        assert_eq!(c.label_of(&neutral), NEUTRAL_CLASS);
        let pos2 = spec.neutral_tokens + 3 * spec.tokens_per_sentiment;
        let mut tokens = vec![3, 1, pos2, 7, 9, 0, 2, 4, 5, 6];
        assert_eq!(c.label_of(&tokens), 4);
        tokens.swap(0, 9);
        tokens.swap(3, 4);
        assert_eq!(c.label_of(&tokens), 4);
        for s in &c.splits.train.items {
            let SampleMeta::Class { label, tokens } = &s.meta else { panic!() };
            assert_eq!(*label, c.label_of(tokens));
            assert!(s.input.len() >= 10);
            assert_eq!(s.input.dim(), 60);
            assert_eq!(s.target[*label], 1.0);
        }
        let again = gen_selectivity_corpus(&spec).unwrap();
        assert_eq!(
            write_dataset_jsonl(&again.splits.test),
            write_dataset_jsonl(&c.splits.test)
        );
    }

    #[test]
    fn deletion_examples() {
        let seq = SequenceInput::new(vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(delete_timesteps(&seq, &[]).unwrap(), seq);
        assert_eq!(delete_timesteps(&seq, &[0, 1, 3]).unwrap().to_rows(), vec![vec![3.0]]);
        // Zero-based index 1 is the second row.
        assert_eq!(
            delete_timesteps(&seq, &[1]).unwrap().to_rows(),
            vec![vec![1.0], vec![3.0], vec![4.0]]
        );
        assert!(matches!(delete_timesteps(&seq, &[4]), Err(Error::IndexOutOfRange { .. })));
        assert!(delete_timesteps(&seq, &[1, 1]).is_err());
    }

    #[test]
    fn dataset_jsonl_round_trip() {
        let d = gen_arithmetic(&small_spec(ArithmeticMode::Subtraction)).unwrap();
        let text = write_dataset_jsonl(&d.val);
        assert_eq!(read_dataset_jsonl(&text).unwrap(), d.val);

        let eps = gen_gridworld(&GridSpec {
            count: 20,
            ..GridSpec::default()
        })
        .unwrap();
        let ds = episodes_to_dataset(Split::Test, &eps).unwrap();
        assert_eq!(read_dataset_jsonl(&write_dataset_jsonl(&ds)).unwrap(), ds);

        assert!(matches!(
            read_dataset_jsonl("{\"format_version\":9,\"split\":\"val\",\"count\":0}"),
            Err(Error::Version { .. })
        ));
        let truncated: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(matches!(read_dataset_jsonl(&truncated), Err(Error::Parse(_))));
    }
}
