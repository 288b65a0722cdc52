mod common;

use tac_core::datagen::{generate, SyntheticSpec};
use tac_core::embedder::{Activation, EmbedderConfig, Embedder, Layer};
use tac_core::episodes::{make_label_split, Composition, Dataset, EpisodeSpec, LabelSplit, Split};
use tac_core::harness::checkpoint::Checkpoint;
use tac_core::harness::stats::binomial_z;
use tac_core::harness::{evaluate, train, Model, TrainConfig};
use tac_core::linalg::Matrix;
use tac_core::projection::ReferenceSet;
use tac_core::tac::{TacConfig, Variant};
use tac_core::TacError;

fn data(spec: SyntheticSpec) -> (Dataset, LabelSplit) {
    let ds = generate(&spec).unwrap();
    let split = make_label_split(&ds, 0.4, 0).unwrap();
    (ds, split)
}

fn five_way(composition: Composition, classes: Split, seed: u64) -> EpisodeSpec {
    EpisodeSpec { way: 5, shots: 1, queries_per_class: 15, composition, classes, seed }
}

fn structured(u: usize) -> Composition {
    Composition::Structured { unlabeled_per_class: u, distractor_classes: 0, distractor_per_class: 0 }
}

fn train_config(episodes: usize, variant: Variant) -> TrainConfig {
    TrainConfig {
        episode: five_way(structured(5), Split::Train, 0),
        validation: five_way(structured(20), Split::Validation, 77),
        tac: TacConfig::with_variant(variant),
        embedder: EmbedderConfig { hidden_dims: vec![], ..Default::default() },
        learning_rate: 1e-3,
        episodes,
        validation_period: 500,
        validation_episodes: 200,
        checkpoint: None,
        seed: 5,
    }
}

#[test]
fn training_on_separable_data_beats_chance() {
    let (ds, split) = data(SyntheticSpec { class_center_scale: 3.0, ..Default::default() });
    let (_, log) = train(&ds, &split, &train_config(2000, Variant::Tac)).unwrap();
    let last = log.validations.last().unwrap();
    let trials = 200 * 5 * 15;
    let hits = (last.accuracy * trials as f64).round() as usize;
    // One-sided p < 0.01 against the 1-in-5 chance rate.
    assert!(binomial_z(hits, trials, 0.2) > 2.326, "validation accuracy {}", last.accuracy);
}

/// Linear embedder that copies the input into the first coordinates and
/// scales it up, with references large along matching directions.
fn oracle_model(input_dim: usize, output_dim: usize, scale: f64) -> Model {
    let cfg = EmbedderConfig {
        input_dim,
        hidden_dims: vec![],
        output_dim,
        activation: Activation::Relu,
        seed: 0,
    };
    let mut w = Matrix::zeros(output_dim, input_dim).into_vec();
    for i in 0..input_dim {
        w[i * input_dim + i] = scale;
    }
    let layer = Layer { weight: Matrix::from_vec(output_dim, input_dim, w).unwrap(), bias: vec![0.0; output_dim] };
    let embedder = Embedder::from_layers(cfg, vec![layer]).unwrap();
    let mut refs = Matrix::zeros(5, output_dim).into_vec();
    for n in 0..5 {
        refs[n * output_dim + input_dim + n] = 1.0;
    }
    let references = ReferenceSet::new(Matrix::from_vec(5, output_dim, refs).unwrap(), false).unwrap();
    Model { embedder, references }
}

#[test]
fn noiseless_data_with_oracle_embedder_is_perfect() {
    let (ds, split) = data(SyntheticSpec {
        class_count: 40,
        samples_per_class: 40,
        within_class_std: 0.0,
        ..Default::default()
    });
    let model = oracle_model(16, 32, 1e3);
    for variant in [Variant::TapnetBaseline, Variant::Tac] {
        let r = evaluate(&model, &ds, &split, &five_way(structured(5), Split::Test, 3), &TacConfig::with_variant(variant), 2, 100)
            .unwrap();
        assert_eq!(r.mean_accuracy, 1.0, "{variant}");
        assert_eq!(r.ci95, 0.0);
    }
}

#[test]
fn random_embedder_is_at_chance() {
    let (ds, split) = data(SyntheticSpec { class_center_scale: 0.0, ..Default::default() });
    let model = Model::new(&EmbedderConfig::default(), 5, false, 1).unwrap();
    let r = evaluate(&model, &ds, &split, &five_way(structured(5), Split::Test, 2), &TacConfig::default(), 2, 500).unwrap();
    assert!((r.mean_accuracy - 0.2).abs() <= r.ci95, "{} ± {}", r.mean_accuracy, r.ci95);
}

#[test]
fn baseline_ignores_unlabeled_contents() {
    let (ds, split) = data(SyntheticSpec { class_count: 50, ..Default::default() });
    let model = Model::new(&EmbedderConfig::default(), 5, true, 1).unwrap();
    let cfg = TacConfig::with_variant(Variant::TapnetBaseline);
    let a = evaluate(&model, &ds, &split, &five_way(structured(5), Split::Test, 4), &cfg, 3, 50).unwrap();
    let swapped = Composition::Structured { unlabeled_per_class: 12, distractor_classes: 3, distractor_per_class: 4 };
    let b = evaluate(&model, &ds, &split, &five_way(swapped, Split::Test, 4), &cfg, 3, 50).unwrap();
    assert_eq!(a, b);
}

#[test]
fn same_seeds_same_training_and_report() {
    let (ds, split) = data(SyntheticSpec { class_count: 50, samples_per_class: 60, ..Default::default() });
    let cfg = TrainConfig { validation_period: 50, validation_episodes: 30, ..train_config(100, Variant::Tacdap) };
    let (m1, l1) = train(&ds, &split, &cfg).unwrap();
    let (m2, l2) = train(&ds, &split, &cfg).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(l1, l2);
    let spec = five_way(structured(20), Split::Test, 8);
    let tac = TacConfig::with_variant(Variant::Tacdap);
    assert_eq!(evaluate(&m1, &ds, &split, &spec, &tac, 4, 60).unwrap(), evaluate(&m2, &ds, &split, &spec, &tac, 4, 60).unwrap());
}

#[test]
fn numerical_failure_keeps_last_checkpoint() {
    let (ds, split) = data(SyntheticSpec { class_count: 50, samples_per_class: 60, ..Default::default() });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let good = TrainConfig { validation_period: 5, validation_episodes: 5, checkpoint: Some(path.clone()), ..train_config(5, Variant::Tac) };
    train(&ds, &split, &good).unwrap();
    let before = std::fs::read(&path).unwrap();

    let bad = TrainConfig { learning_rate: 1e300, ..good };
    let err = train(&ds, &split, &bad).unwrap_err();
    assert!(matches!(err, TacError::NumericalFailure(_)), "{err}");
    assert_eq!(std::fs::read(&path).unwrap(), before);
    assert!(Checkpoint::load(&path).unwrap().model.references.matrix().is_finite());
}
