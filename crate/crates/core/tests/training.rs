use dualrate_core::corpus::{CleanItem, CorpusConfig};
use dualrate_core::experiment::{median, run_arm, synthetic_splits, BASELINE_LABEL};
use dualrate_core::loss::{compute_mu, Weighting};
use dualrate_core::metrics::{evaluate, plcc};
use dualrate_core::model::{
    predict_items, train, train_with, Checkpoint, EpochEval, ModelConfig, Parameters, TrainConfig,
};
use dualrate_core::sampling::{SplitRatios, SplitSets};
use dualrate_core::synth::SynthConfig;

const VOCAB: usize = 4096;

fn corpus() -> CorpusConfig {
    CorpusConfig {
        vocab_size: VOCAB,
        image_size: 16,
        ..CorpusConfig::default()
    }
}

fn model_config(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: VOCAB,
        image_input: [3, 16, 16],
        seed,
        ..ModelConfig::default()
    }
}

fn clean_splits(n: usize, seed: u64) -> SplitSets<CleanItem> {
    let synth = SynthConfig {
        n_items: n,
        image_fraction: 1.0,
        ..SynthConfig::default()
    };
    synthetic_splits(&synth, &corpus(), SplitRatios::default(), 50, seed).unwrap()
}

#[test]
fn learns_linear_synthetic_task() {
    let train_cfg = TrainConfig {
        epochs: 40,
        peak_lr: 0.05,
        patience: 5,
        ..TrainConfig::default()
    };
    let mut scores = Vec::new();
    for seed in 0..5 {
        let splits = clean_splits(3000, seed);
        let tc = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        let out = train(
            &splits.train,
            &splits.validation,
            &model_config(seed),
            &tc,
            &Weighting::Unit,
        )
        .unwrap();
        let preds = predict_items(&out.model, &splits.validation).unwrap();
        let targets: Vec<f64> = splits.validation.iter().map(|i| i.average_rating).collect();
        scores.push(plcc(&preds, &targets).unwrap());
    }
    let m = median(&scores);
    assert!(m >= 0.9, "median validation PLCC {m}, per seed {scores:?}");
}

fn scripted(
    scores: &'static [f64],
    epochs: usize,
    patience: usize,
) -> (dualrate_core::model::TrainOutcome, Vec<Parameters>) {
    let splits = clean_splits(120, 1);
    let tc = TrainConfig {
        epochs,
        patience,
        ..TrainConfig::default()
    };
    let mut snapshots = Vec::new();
    let out = train_with(
        &splits.train,
        &model_config(1),
        &tc,
        &Weighting::Unit,
        |epoch, model| {
            snapshots.push(model.params.clone());
            Ok(EpochEval {
                plcc: Some(scores[epoch - 1]),
                huber: 0.0,
            })
        },
    )
    .unwrap();
    (out, snapshots)
}

#[test]
fn early_stopping_returns_best_epoch() {
    let (out, snaps) = scripted(&[0.20, 0.30, 0.25, 0.9], 4, 1);
    assert_eq!(out.history.len(), 3);
    assert_eq!(out.best_epoch, 2);
    assert!(out.stopped_early);
    assert_eq!(out.model.params, snaps[1]);
    assert_ne!(out.model.params, snaps[2]);
}

#[test]
fn improving_run_uses_every_epoch() {
    let (out, snaps) = scripted(&[0.1, 0.2, 0.3, 0.4], 4, 1);
    assert_eq!(out.history.len(), 4);
    assert_eq!(out.best_epoch, 4);
    assert!(!out.stopped_early);
    assert_eq!(&out.model.params, snaps.last().unwrap());
}

#[test]
fn training_is_deterministic() {
    let splits = clean_splits(300, 4);
    let tc = TrainConfig {
        epochs: 3,
        seed: 4,
        ..TrainConfig::default()
    };
    let stats = compute_mu(&splits.train.iter().map(|i| i.rating_number).collect::<Vec<_>>()).unwrap();
    let w = Weighting::RatingCount(stats);
    let a = train(&splits.train, &splits.validation, &model_config(4), &tc, &w).unwrap();
    let b = train(&splits.train, &splits.validation, &model_config(4), &tc, &w).unwrap();
    let bits = |o: &dualrate_core::model::TrainOutcome| {
        o.history
            .iter()
            .map(|h| {
                (
                    h.train_loss.to_bits(),
                    h.val_plcc.map(f64::to_bits),
                    h.val_huber.to_bits(),
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.model.params, b.model.params);
}

#[test]
fn empty_splits_are_rejected() {
    let splits = clean_splits(100, 2);
    let tc = TrainConfig::default();
    assert!(train(&[], &splits.validation, &model_config(0), &tc, &Weighting::Unit).is_err());
    assert!(train(&splits.train, &[], &model_config(0), &tc, &Weighting::Unit).is_err());
}

#[test]
fn checkpoint_round_trip_and_evaluation() {
    let splits = clean_splits(300, 6);
    let tc = TrainConfig {
        epochs: 2,
        seed: 6,
        ..TrainConfig::default()
    };
    let out = train(
        &splits.train,
        &splits.validation,
        &model_config(6),
        &tc,
        &Weighting::Unit,
    )
    .unwrap();
    let ckpt = Checkpoint::new(out.clone(), corpus(), Weighting::Unit);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);

    let model = loaded.model().unwrap();
    let first = evaluate(&model, &splits.test, 1.1).unwrap();
    let second = evaluate(&model, &splits.test, 1.1).unwrap();
    assert_eq!(first, second);
    let preds = predict_items(&model, &splits.test).unwrap();
    let targets: Vec<f64> = splits.test.iter().map(|i| i.average_rating).collect();
    assert_eq!(first.plcc, plcc(&preds, &targets).unwrap());
    assert_eq!(first.n_samples, splits.test.len());
}

#[test]
fn unit_arm_matches_plain_training() {
    let splits = clean_splits(300, 8);
    let tc = TrainConfig {
        epochs: 2,
        seed: 8,
        ..TrainConfig::default()
    };
    let arm = run_arm(&splits, &model_config(8), &tc, &Weighting::Unit, BASELINE_LABEL).unwrap();
    let out = train(
        &splits.train,
        &splits.validation,
        &model_config(8),
        &tc,
        &Weighting::Unit,
    )
    .unwrap();
    let preds = predict_items(&out.model, &splits.validation).unwrap();
    let targets: Vec<f64> = splits.validation.iter().map(|i| i.average_rating).collect();
    assert_eq!(arm.valid_plcc, plcc(&preds, &targets).unwrap());
    assert_eq!(arm.best_epoch, out.best_epoch);
}
