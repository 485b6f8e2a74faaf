use epiconv::data::{split, standardize, synth_generate, Job, SplitSpec};
use epiconv::{build_proposed_model, fit, Architecture, TrainConfig, SIGNAL_LENGTH};

fn prepared(seed: u64, per_class: usize, classes: usize) -> (epiconv::Dataset, epiconv::Dataset) {
    let data = synth_generate(seed, per_class, classes).unwrap();
    let (train, val, _) = split(&data, &SplitSpec::standard(seed)).unwrap();
    let (train, rest) = standardize(&train, &[&val]).unwrap();
    (train, rest.into_iter().next().unwrap())
}

#[test]
fn proposed_model_reduces_training_loss() {
    let (train, val) = prepared(4, 40, 5);
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 16,
        ..TrainConfig::new(Job::FiveClass, 4)
    };
    let out = fit(
        &train,
        &val,
        &cfg,
        build_proposed_model(5, SIGNAL_LENGTH, 4).unwrap(),
    )
    .unwrap();
    let first = out.report.records.first().unwrap().train_loss;
    let last = out.report.records.last().unwrap().train_loss;
    assert!(last < first, "train loss went from {first} to {last}");
    assert!(out.report.best_val_loss < out.report.initial_val_loss);
}

#[test]
fn fit_is_deterministic_for_every_architecture() {
    let (train, val) = prepared(8, 12, 2);
    for arch in [
        Architecture::Proposed,
        Architecture::Skipless,
        Architecture::LeNet,
    ] {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::new(Job::Binary, 8)
        };
        let a = fit(&train, &val, &cfg, arch.build(2, SIGNAL_LENGTH, 8).unwrap()).unwrap();
        let b = fit(&train, &val, &cfg, arch.build(2, SIGNAL_LENGTH, 8).unwrap()).unwrap();
        assert_eq!(a.report, b.report, "{arch}");
        assert_eq!(a.best_model, b.best_model, "{arch}");
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let (train, val) = prepared(8, 12, 2);
    let run = |seed| {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::new(Job::Binary, seed)
        };
        fit(
            &train,
            &val,
            &cfg,
            build_proposed_model(2, SIGNAL_LENGTH, seed).unwrap(),
        )
        .unwrap()
        .report
    };
    assert_ne!(run(1).records, run(2).records);
}

#[test]
fn mismatched_job_and_model_are_rejected() {
    let (train, val) = prepared(8, 12, 2);
    let cfg = TrainConfig::new(Job::FiveClass, 1);
    assert!(fit(
        &train,
        &val,
        &cfg,
        build_proposed_model(2, SIGNAL_LENGTH, 1).unwrap()
    )
    .is_err());
}
