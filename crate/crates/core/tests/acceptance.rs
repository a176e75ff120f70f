//! Acceptance suite. Prints one pass/fail line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run a subset by listing criterion numbers:
//! `cargo test --release --test acceptance -- 2 5 9`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lstm_lrp::baselines::ExplainerKind;
use lstm_lrp::dtd::{dtd_grid, first_order_terms, GatedRelevanceModel};
use lstm_lrp::experiments::{
    classifier_setup, grid_splits, return_predictor_setup, run_fidelity, run_redistribution, run_selectivity, train_fresh,
    FidelityConfig, FidelityReport, Ordering, RedistributionConfig, SelectivityConfig,
};
use lstm_lrp::lrp::{lrp_explain, prop_product, GatedTerm, LrpConfig, ProductRule, ProductRuleKind};
use lstm_lrp::model::{forward_sequence, Architecture, Dims, LstmParams, SequenceInput, VariantSpec};
use lstm_lrp::numeric::{Activation, Mat64, Vec64};
use lstm_lrp::tasks::{
    episodes_to_dataset, gen_selectivity_corpus, ArithmeticMode, ArithmeticSpec, GridSpec,
    SelectivitySpec,
};
use lstm_lrp::train::{bptt_gradients, finite_diff_gradients, Sample, SampleMeta, Split};

const ARCHS: [Architecture; 4] = [
    Architecture::Standard,
    Architecture::Nondecreasing,
    Architecture::Markov,
    Architecture::Gateless,
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn variant(arch: Architecture) -> VariantSpec {
    match arch {
        Architecture::Standard => VariantSpec::standard(),
        a => VariantSpec::with_defaults(a),
    }
}

fn random_sequence(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> SequenceInput {
    SequenceInput::new((0..len).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()).unwrap()
}

fn random_dims(rng: &mut ChaCha8Rng) -> Dims {
    Dims {
        input: rng.gen_range(1..=3),
        hidden: rng.gen_range(1..=3),
        output: rng.gen_range(1..=2),
        head_bias: rng.gen_bool(0.5),
    }
}

/// Moves every active parameter away from its initial value so that biases
/// and gains are exercised too.
fn jitter(p: &mut LstmParams, v: &VariantSpec, rng: &mut ChaCha8Rng) {
    for id in v.active_params(p.dims()) {
        for w in p.slice_mut(id) {
            *w += rng.gen_range(-0.5..0.5);
        }
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for arch in ARCHS {
        let v = variant(arch);
        for _ in 0..20 {
            let dims = random_dims(&mut rng);
            let mut p = LstmParams::init(dims, &v, &mut rng);
            jitter(&mut p, &v, &mut rng);
            let batch: Vec<Sample> = (0..3)
                .map(|_| {
                    let len = rng.gen_range(1..=5);
                    Sample {
                        input: random_sequence(&mut rng, len, dims.input),
                        target: Vec64::new((0..dims.output).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
                        meta: SampleMeta::None {},
                    }
                })
                .collect();
            let g = bptt_gradients(&p, &v, &batch).unwrap();
            let fd = finite_diff_gradients(&p, &v, &batch, 1e-5).unwrap();
            worst = worst.max(g.max_relative_error(&fd, 1e-4));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-5 && elapsed < Duration::from_secs(60),
        format!("80 cases, max relative error {worst:.2e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for arch in [Architecture::Gateless, Architecture::Markov] {
        let v = variant(arch);
        for _ in 0..100 {
            let dims = random_dims(&mut rng);
            let mut p = LstmParams::init(dims, &v, &mut rng);
            jitter(&mut p, &v, &mut rng);
            let len = rng.gen_range(1..=10);
            let tr = forward_sequence(&p, &v, &random_sequence(&mut rng, len, dims.input)).unwrap();
            let cfg = LrpConfig {
                target: rng.gen_range(0..dims.output),
                ..LrpConfig::exact(ProductRuleKind::All)
            };
            let rt = lrp_explain(&tr, &p, &v, &cfg).unwrap();
            let sum_t: f64 = rt.per_timestep().iter().sum();
            let gap = rt.ledger.output_relevance_in - (sum_t + rt.ledger.bias_trapped);
            worst = worst.max(gap.abs());
        }
    }
    outcome(worst < 1e-9, format!("200 cases, max conservation gap {worst:.2e}"))
}

fn fidelity_report(mode: ArithmeticMode) -> FidelityReport {
    run_fidelity(&ArithmeticSpec::new(mode, 1), &FidelityConfig::default()).unwrap()
}

fn mean_of(r: &FidelityReport, kind: ExplainerKind) -> (f64, f64, f64) {
    let row = r.row(kind).unwrap();
    (row.rho_a.mean, row.rho_b.mean, row.mass.mean)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let r = fidelity_report(ArithmeticMode::Addition);
    let mut pass = r.models == 50;
    let mut parts = vec![format!("{} models from {} attempts", r.models, r.attempts)];
    for kind in [
        ExplainerKind::Lrp(ProductRuleKind::All),
        ExplainerKind::GradientXInput,
        ExplainerKind::OcclusionFDiff,
    ] {
        let (a, b, mass) = mean_of(&r, kind);
        pass &= a >= 0.99 && b >= 0.99 && mass >= 0.99;
        parts.push(format!("{kind} rho {:.3}/{:.3} mass {:.3}", 100.0 * a, 100.0 * b, 100.0 * mass));
    }
    for rule in [ProductRuleKind::Prop, ProductRuleKind::Abs, ProductRuleKind::Half] {
        let (a, _, _) = mean_of(&r, ExplainerKind::Lrp(rule));
        pass &= a <= 0.5;
        parts.push(format!("lrp_{rule} rho_a {:.3}", 100.0 * a));
    }
    parts.push(format!("{:.0}s", start.elapsed().as_secs_f64()));
    outcome(pass, parts.join(", "))
}

fn criterion_4() -> Outcome {
    let r = fidelity_report(ArithmeticMode::Subtraction);
    let mut pass = r.models == 50;
    let mut parts = vec![format!("{} models", r.models)];
    for kind in [ExplainerKind::Lrp(ProductRuleKind::All), ExplainerKind::GradientXInput] {
        let (a, b, mass) = mean_of(&r, kind);
        pass &= a >= 0.9 && b <= -0.9 && mass >= 0.95;
        parts.push(format!("{kind} rho {:.1}/{:.1} mass {:.1}", 100.0 * a, 100.0 * b, 100.0 * mass));
    }
    let (_, b, _) = mean_of(&r, ExplainerKind::OcclusionFDiff);
    pass &= b > -0.9;
    parts.push(format!("occlusion rho_b {:.1}", 100.0 * b));
    outcome(pass, parts.join(", "))
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for (signal, zs) in [(Activation::identity(), (-5.0, 5.0)), (Activation::relu(), (0.01, 5.0))] {
        let grid = dtd_grid(signal, (-6.0, 6.0), zs, 100, 0.9).unwrap();
        points += grid.len();
        worst = grid.iter().fold(worst, |w, p| w.max(p.remainder.abs()));
    }
    let mut max_rg: f64 = 0.0;
    for a in 0..100 {
        for b in 0..100 {
            let anchor = (-6.0 + 12.0 * a as f64 / 99.0, -4.0 + 8.0 * b as f64 / 99.0 + 1e-3);
            let m = GatedRelevanceModel::calibrate(Activation::tanh(), anchor, 0.9).unwrap();
            max_rg = max_rg.max(first_order_terms(&m, anchor).unwrap().0.abs());
        }
    }
    outcome(
        points == 20_000 && worst < 1e-12 && max_rg == 0.0,
        format!("{points} exact-signal anchors, max remainder {worst:.2e}, max tanh R_g {max_rg:.1e}"),
    )
}

fn criterion_6() -> Outcome {
    let mut worst: f64 = 0.0;
    for phi in [0.25f64, 0.5, 0.9] {
        let dims = Dims {
            input: 1,
            hidden: 1,
            output: 1,
            head_bias: false,
        };
        let mut p = LstmParams::zeros(dims);
        p.w_z = Mat64::new(1, 1, vec![1.1]).unwrap();
        p.b_i = Vec64::from([0.5]);
        p.b_o = Vec64::from([0.2]);
        p.b_f = Vec64::from([(phi / (1.0 - phi)).ln()]);
        p.head_w = Mat64::new(1, 1, vec![0.9]).unwrap();
        let v = VariantSpec::standard();
        let len = 12;
        let x = 0.6;
        let tr = forward_sequence(&p, &v, &SequenceInput::new(vec![vec![x]; len]).unwrap()).unwrap();
        let rt = lrp_explain(&tr, &p, &v, &LrpConfig::exact(ProductRuleKind::All)).unwrap();
        let newest = rt.per_timestep()[len - 1];
        for k in 0..len {
            let ratio = rt.per_timestep()[len - 1 - k] / newest;
            worst = worst.max((ratio - phi.powi(k as i32)).abs());
        }
    }
    outcome(worst < 1e-6, format!("max deviation from phi^k {worst:.2e}"))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let spec = SelectivitySpec {
        seed: 7,
        ..SelectivitySpec::default()
    };
    let corpus = gen_selectivity_corpus(&spec).unwrap();
    let (dims, v, cfg) = classifier_setup(&spec, 3);
    let model = train_fresh(dims, &v, &corpus.splits.train, &corpus.splits.val, &cfg).unwrap();
    let kinds = [
        ExplainerKind::Lrp(ProductRuleKind::All),
        ExplainerKind::OcclusionFDiff,
        ExplainerKind::OcclusionPDiff,
    ];
    let sel = SelectivityConfig {
        explainers: kinds.to_vec(),
        ..SelectivityConfig::default()
    };
    let r = run_selectivity(&model, &corpus.splits.test, &sel).unwrap();
    let mut pass = r.accuracy >= 0.9 && r.misclassified > 0;
    let mut parts = vec![format!(
        "accuracy {:.1}%, {} misclassified",
        100.0 * r.accuracy,
        r.misclassified
    )];
    for ordering in [Ordering::Decreasing, Ordering::Increasing] {
        let random = r.random(ordering).unwrap();
        for kind in kinds {
            let curve = r.curve(kind, ordering).unwrap();
            let ok = (1..=5).all(|k| match ordering {
                Ordering::Decreasing => curve.accuracy[k] < random.mean[k],
                Ordering::Increasing => curve.accuracy[k] > random.mean[k],
            });
            pass &= ok;
            if !ok {
                parts.push(format!("{kind} {ordering:?} not separated from random"));
            }
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(15 * 60);
    parts.push(format!("{:.0}s", elapsed.as_secs_f64()));
    outcome(pass, parts.join(", "))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let base = GridSpec {
        seed: 1,
        ..GridSpec::default()
    };
    let [train, val, test] = grid_splits(&base, [3000, 500, 200]).unwrap();
    let (dims, v, cfg) = return_predictor_setup(1);
    let model = train_fresh(
        dims,
        &v,
        &episodes_to_dataset(Split::Train, &train).unwrap(),
        &episodes_to_dataset(Split::Val, &val).unwrap(),
        &cfg,
    )
    .unwrap();
    let r = run_redistribution(&model, &test, &RedistributionConfig::default()).unwrap();
    let all = r.summary_for(ProductRuleKind::All).unwrap();
    let prop = r.summary_for(ProductRuleKind::Prop).unwrap();
    let half = r.summary_for(ProductRuleKind::Half).unwrap();
    let a = all.mean_moneybag_share < 0.05 && all.mean_rewarded_coin_share >= 0.8;
    let b = prop.moneybag_detection_rate >= 0.8 && half.moneybag_detection_rate >= 0.8;
    let c = all.zero_return_mass_ratio < 0.1;
    let elapsed = start.elapsed();
    outcome(
        r.episodes.len() >= 20
            && all.positive_episodes >= 20
            && r.test_mse < 0.05
            && a
            && b
            && c
            && elapsed < Duration::from_secs(600),
        format!(
            "test mse {:.4}, all: moneybag {:.1}% coins {:.1}%, detection prop {:.0}% half {:.0}%, zero-return mass {:.1}%, {:.0}s",
            r.test_mse,
            100.0 * all.mean_moneybag_share,
            100.0 * all.mean_rewarded_coin_share,
            100.0 * prop.moneybag_detection_rate,
            100.0 * half.moneybag_detection_rate,
            100.0 * all.zero_return_mass_ratio,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut exact = true;
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..100_000 {
        let term = GatedTerm {
            z_g: rng.gen_range(-8.0..8.0),
            z_s: rng.gen_range(-8.0..8.0),
            r_p: rng.gen_range(-10.0..10.0),
        };
        for kind in ProductRuleKind::ALL {
            let (r_g, r_s) = match prop_product(term, ProductRule::new(kind, 0.0).unwrap()) {
                Ok(split) => split,
                Err(_) => {
                    skipped += 1;
                    continue;
                }
            };
            match kind {
                ProductRuleKind::All | ProductRuleKind::Half => exact &= r_g + r_s == term.r_p,
                _ => worst = worst.max((r_g + r_s - term.r_p).abs()),
            }
        }
    }
    outcome(
        exact && worst < 1e-9 && skipped == 0,
        format!("100000 terms, all/half exact {exact}, prop/abs max gap {worst:.2e}"),
    )
}

fn main() -> ExitCode {
    // Numbers select criteria; other words filter by name, as cargo test filters do.
    let args: Vec<String> = std::env::args().skip(1).collect();
    let list = args.iter().any(|a| a == "--list");
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient check", criterion_1),
        (2, "conservation", criterion_2),
        (3, "addition fidelity", criterion_3),
        (4, "subtraction fidelity", criterion_4),
        (5, "taylor exactness", criterion_5),
        (6, "forget-gate decay", criterion_6),
        (7, "selectivity", criterion_7),
        (8, "redistribution", criterion_8),
        (9, "product-rule algebra", criterion_9),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        let id = format!("criterion_{n}_{}", name.replace([' ', '-'], "_"));
        if !filters.is_empty() && !filters.iter().any(|f| f.parse() == Ok(n) || id.contains(f.as_str())) {
            continue;
        }
        if list {
            println!("{id}: test");
            continue;
        }
        let o = run();
        println!("criterion {n} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
