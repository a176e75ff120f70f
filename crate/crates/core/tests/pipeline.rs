use lstm_lrp::baselines::{explain, ExplainerKind, Stabilizers};
use lstm_lrp::lrp::{conservation_audit, ProductRuleKind};
use lstm_lrp::model::{deserialize_model, serialize_model, Architecture, Dims, LstmParams, Model, VariantSpec};
use lstm_lrp::tasks::{gen_arithmetic, read_dataset_jsonl, write_dataset_jsonl, ArithmeticMode, ArithmeticSpec, SplitSpec};
use lstm_lrp::train::{train_model, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec(seed: u64) -> ArithmeticSpec {
    let mut spec = ArithmeticSpec::new(ArithmeticMode::Addition, seed);
    spec.train = SplitSpec {
        count: 400,
        ..spec.train
    };
    spec.val = SplitSpec { count: 100, ..spec.val };
    spec.test = SplitSpec { count: 20, ..spec.test };
    spec
}

fn trained(variant: &VariantSpec, seed: u64) -> (Model, lstm_lrp::tasks::DatasetTriple) {
    let data = gen_arithmetic(&small_spec(seed)).unwrap();
    let dims = Dims {
        input: 2,
        hidden: 1,
        output: 1,
        head_bias: false,
    };
    let init = LstmParams::init(dims, variant, &mut ChaCha8Rng::seed_from_u64(seed));
    let cfg = TrainConfig {
        max_epochs: 5,
        seed,
        ..TrainConfig::default()
    };
    let outcome = train_model(&init, variant, &data.train, &data.val, &cfg).unwrap();
    (Model::new(outcome.params, *variant).unwrap(), data)
}

#[test]
fn saved_models_and_datasets_reload_exactly() {
    let (model, data) = trained(&VariantSpec::standard(), 2);
    let reloaded = deserialize_model(&serialize_model(&model)).unwrap();
    let test = read_dataset_jsonl(&write_dataset_jsonl(&data.test)).unwrap();
    assert_eq!(test, data.test);
    for s in &test.items {
        assert_eq!(model.predict(&s.input).unwrap(), reloaded.predict(&s.input).unwrap());
        let a = explain(&model, &s.input, ExplainerKind::Lrp(ProductRuleKind::All), 0, Stabilizers::Default).unwrap();
        let b = explain(&reloaded, &s.input, ExplainerKind::Lrp(ProductRuleKind::All), 0, Stabilizers::Default).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn trained_gateless_models_conserve_relevance_without_stabilizers() {
    let (model, data) = trained(&VariantSpec::with_defaults(Architecture::Gateless), 4);
    for s in &data.test.items {
        let rt = explain(&model, &s.input, ExplainerKind::Lrp(ProductRuleKind::All), 0, Stabilizers::Zero).unwrap();
        let audit = conservation_audit(&rt);
        assert_eq!(audit.stabilizer_absorbed, 0.0);
        assert!(audit.residual.abs() < 1e-9, "{audit:?}");
        let lhs = audit.output_relevance_in;
        assert!((lhs - audit.input_total - audit.bias_trapped - audit.gate_trapped).abs() < 1e-9);
    }
}

#[test]
fn every_explainer_scores_every_timestep() {
    let (model, data) = trained(&VariantSpec::standard(), 6);
    let s = &data.test.items[0];
    for kind in [
        ExplainerKind::GradientSquared,
        ExplainerKind::GradientXInput,
        ExplainerKind::OcclusionFDiff,
        ExplainerKind::Lrp(ProductRuleKind::All),
        ExplainerKind::Lrp(ProductRuleKind::Prop),
        ExplainerKind::Lrp(ProductRuleKind::Abs),
        ExplainerKind::Lrp(ProductRuleKind::Half),
    ] {
        let rt = explain(&model, &s.input, kind, 0, Stabilizers::Default).unwrap();
        assert_eq!(rt.len(), s.input.len(), "{kind:?}");
        assert!(rt.per_timestep().iter().all(|r| r.is_finite()), "{kind:?}");
    }
    let err = explain(&model, &s.input, ExplainerKind::OcclusionPDiff, 0, Stabilizers::Default);
    assert!(err.is_err(), "probability differences need a classification head");
}
