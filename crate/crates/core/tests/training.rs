use cellprep_core::data::{synth_dataset, Sample, SynthSpec};
use cellprep_core::train::{
    ablate, evaluate, resume, train, AblationConfig, Arm, Checkpoint, EnsembleMode, ModelKind,
    TrainConfig,
};
use cellprep_core::{Error, LabelMap, UNetConfig};

const NET: UNetConfig = UNetConfig {
    in_channels: 1,
    num_classes: 3,
    depth: 2,
    base_width: 2,
};

fn tiny(count: usize) -> Vec<Sample> {
    let spec = SynthSpec {
        size: 24,
        n_cells: 2,
        nucleus_radius: [2.0, 3.0],
        seed: 5,
        ..SynthSpec::default()
    };
    synth_dataset(&spec, count).unwrap()
}

fn config(mode: EnsembleMode, epochs: usize) -> TrainConfig {
    TrainConfig {
        ensemble_mode: mode,
        epochs,
        unet1: NET,
        unet2: NET,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_decreases_over_training() {
    let samples = tiny(8);
    let train_idx: Vec<usize> = (0..8).collect();
    let out = train(
        &config(EnsembleMode::Automated, 15),
        &samples,
        &train_idx,
        &[],
        |_| {},
    )
    .unwrap();
    let first = out.log.first().unwrap();
    let last = out.log.last().unwrap();
    assert!(
        last.total < first.total,
        "{} -> {}",
        first.total,
        last.total
    );
    assert_eq!(first.terms.len(), 5);
    for rec in &out.log {
        let sum: f64 = rec.terms.iter().map(|(_, v)| v).sum();
        assert!((sum - rec.total).abs() <= 1e-5 * rec.total.abs().max(1.0));
    }
}

#[test]
fn fixed_mode_logs_unit_weights_every_epoch() {
    let samples = tiny(4);
    let out = train(
        &config(EnsembleMode::Fixed, 3),
        &samples,
        &[0, 1, 2],
        &[3],
        |_| {},
    )
    .unwrap();
    assert_eq!(out.log.len(), 3);
    for rec in &out.log {
        assert_eq!(rec.weights, vec![1.0; 4]);
        assert_eq!(rec.bias, Some(0.0));
        assert!(rec.val_miou.is_some());
    }
}

#[test]
fn automated_mode_moves_weights_and_none_mode_skips_ensemble_term() {
    let samples = tiny(4);
    let auto = train(
        &config(EnsembleMode::Automated, 2),
        &samples,
        &[0, 1, 2, 3],
        &[],
        |_| {},
    )
    .unwrap();
    assert!(auto.log[1].weights.iter().any(|w| (w - 0.25).abs() > 1e-6));
    let none = train(
        &config(EnsembleMode::None, 2),
        &samples,
        &[0, 1, 2, 3],
        &[],
        |_| {},
    )
    .unwrap();
    assert_eq!(none.log[0].terms.len(), 4);
    let third = f64::from(1.0f32 / 3.0);
    assert_eq!(none.log[1].weights, vec![0.0, third, third, third]);
}

#[test]
fn baseline_trains_one_term() {
    let samples = tiny(4);
    let cfg = TrainConfig {
        model: ModelKind::Baseline,
        ..config(EnsembleMode::Automated, 2)
    };
    let out = train(&cfg, &samples, &[0, 1, 2, 3], &[], |_| {}).unwrap();
    assert_eq!(out.log[0].terms.len(), 1);
    assert!(out.log[0].weights.is_empty());
}

#[test]
fn training_is_deterministic() {
    let samples = tiny(6);
    let cfg = config(EnsembleMode::Automated, 3);
    let a = train(&cfg, &samples, &[0, 1, 2, 3], &[4, 5], |_| {}).unwrap();
    let b = train(&cfg, &samples, &[0, 1, 2, 3], &[4, 5], |_| {}).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let samples = tiny(6);
    let (tr, val) = ([0, 1, 2, 3], [4, 5]);
    let full = train(
        &config(EnsembleMode::Automated, 4),
        &samples,
        &tr,
        &val,
        |_| {},
    )
    .unwrap();
    let half = train(
        &config(EnsembleMode::Automated, 2),
        &samples,
        &tr,
        &val,
        |_| {},
    )
    .unwrap();
    let mut restored = Checkpoint::from_bytes(&half.last.to_bytes()).unwrap();
    restored.config.epochs = 4;
    let rest = resume(restored, &samples, &tr, &val, |_| {}).unwrap();
    assert_eq!(&full.log[2..], &rest.log[..]);
    let mut expect = full.last.clone();
    expect.config.epochs = 4;
    assert_eq!(rest.last.to_bytes(), expect.to_bytes());
}

#[test]
fn best_checkpoint_has_highest_validation_miou() {
    let samples = tiny(6);
    let out = train(
        &config(EnsembleMode::Fixed, 5),
        &samples,
        &[0, 1, 2, 3],
        &[4, 5],
        |_| {},
    )
    .unwrap();
    let best = out
        .log
        .iter()
        .map(|r| r.val_miou.unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best.best_val_miou, Some(best));
    let rescored = evaluate(&out.best.model, &samples, &[4, 5], 4)
        .unwrap()
        .miou;
    assert_eq!(rescored, best);
}

#[test]
fn out_of_range_labels_are_rejected() {
    let mut samples = tiny(2);
    let mut labels = samples[1].labels.labels().to_vec();
    labels[7] = 3;
    samples[1].labels = LabelMap::new(1, 24, 24, labels).unwrap();
    let err = train(
        &config(EnsembleMode::Fixed, 1),
        &samples,
        &[0, 1],
        &[],
        |_| {},
    )
    .unwrap_err();
    assert!(matches!(err, Error::LabelOutOfRange { .. }), "{err}");
}

#[test]
fn non_finite_values_abort_with_location() {
    let mut samples = tiny(2);
    samples[0].image.data_mut()[0] = f32::NAN;
    let err = train(&config(EnsembleMode::Fixed, 1), &samples, &[0], &[], |_| {}).unwrap_err();
    assert!(
        matches!(
            err,
            Error::Diverged {
                epoch: 1,
                step: 1,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn mismatched_image_size_is_rejected() {
    let samples = SynthSpec {
        size: 18,
        n_cells: 1,
        nucleus_radius: [2.0, 3.0],
        ..SynthSpec::default()
    };
    let samples = synth_dataset(&samples, 1).unwrap();
    assert!(train(&config(EnsembleMode::Fixed, 1), &samples, &[0], &[], |_| {}).is_err());
}

#[test]
fn ablation_shares_splits_and_tabulates_every_arm() {
    let samples = tiny(9);
    let ab = AblationConfig {
        folds: 3,
        val: 1,
        seeds: vec![1, 2],
        threads: 2,
    };
    let names: Vec<String> = ["cytoplasm", "membrane", "nucleus"]
        .map(String::from)
        .to_vec();
    let rep = ablate(
        &config(EnsembleMode::Automated, 1),
        &ab,
        &samples,
        &names,
        |_| {},
    )
    .unwrap();
    assert_eq!(rep.runs.len(), 4 * 3 * 2);
    rep.check_splits().unwrap();
    for seed in [1, 2] {
        let hashes: Vec<u64> = rep
            .runs
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| r.split_hash)
            .collect();
        assert!(hashes.windows(2).all(|w| w[0] == w[1]));
    }
    let table = rep.to_table();
    let lines: Vec<&str> = table.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 5);
    for (line, arm) in lines[1..].iter().zip(Arm::ALL) {
        assert!(line.starts_with(arm.name()));
        assert_eq!(line.matches('±').count(), 4);
    }
    let csv = rep.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(
        csv.lines().next().unwrap().split(',').count(),
        1 + 2 + 2 * 3 + 1
    );
    let again = ablate(
        &config(EnsembleMode::Automated, 1),
        &AblationConfig { threads: 1, ..ab },
        &samples,
        &names,
        |_| {},
    )
    .unwrap();
    assert_eq!(rep, again);
}
