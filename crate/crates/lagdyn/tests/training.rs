use lagdyn::checkpoint::Checkpoint;
use lagdyn::train::{evaluate, run_training, TrainConfig, TrainingSequence};
use lagdyn_core::kinematics::BoundaryPadding;
use lagdyn_core::nn::{BundleConfig, ParameterBundle};
use lagdyn_core::oracle::{generate_labeled_dataset, sample_plans, LinkChain, NoiseConfig, PlanConfig, SimulationConfig};

fn small() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 3,
        warmup_start: 1,
        warmup_ramp: 2,
        bundle: BundleConfig {
            hidden: vec![12, 12],
            channels: 4,
            stages: 2,
            kernel: 3,
        },
        padding: BoundaryPadding::Replicate,
        ..TrainConfig::default()
    }
}

fn data(count: usize) -> Vec<TrainingSequence> {
    let chain = LinkChain::new(vec![1.0, 0.8], vec![1.0, 0.7], 9.81, vec![0.1, 0.1]).unwrap();
    let plan = PlanConfig {
        frames: 90,
        min_segment: 25,
        ..PlanConfig::default()
    };
    let plans = sample_plans(2, &plan, count, 4).unwrap();
    let noise = NoiseConfig {
        drive_std: 0.1,
        observation_std: 0.0,
    };
    generate_labeled_dataset(&chain, &plans, &noise, &SimulationConfig::new(0.01, 0), 5)
        .unwrap()
        .iter()
        .map(|s| TrainingSequence::from_labeled(s, BoundaryPadding::Replicate).unwrap())
        .collect()
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let cfg = TrainConfig { epochs: 0, ..small() };
    let out = run_training(&data(3), &cfg, |_| panic!("no epochs")).unwrap();
    assert!(out.log.is_empty());
    let init = ParameterBundle::new(2, cfg.bundle.clone(), cfg.seed).unwrap();
    assert_eq!(Checkpoint::from_bundle(&out.bundle), Checkpoint::from_bundle(&init));
}

#[test]
fn same_seed_gives_identical_logs_and_checkpoints() {
    let d = data(7);
    let a = run_training(&d, &small(), |_| {}).unwrap();
    let b = run_training(&d, &small(), |_| {}).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(
        Checkpoint::from_bundle(&a.bundle).to_bytes(),
        Checkpoint::from_bundle(&b.bundle).to_bytes()
    );
    let c = run_training(&d, &TrainConfig { seed: 1, ..small() }, |_| {}).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn log_follows_the_warmup_and_loss_falls() {
    let d = data(6);
    let cfg = TrainConfig {
        epochs: 12,
        learning_rate: 3e-3,
        ..small()
    };
    let mut seen = Vec::new();
    let out = run_training(&d, &cfg, |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, (0..12).collect::<Vec<_>>());
    let weights: Vec<f64> = out.log.iter().map(|r| r.lambda_ec).collect();
    assert_eq!(&weights[..4], &[0.0, 0.0, 0.05, 0.1]);
    assert!(out.log.iter().all(|r| r.l_torque.is_finite() && r.mean_abs_residual <= 1.0));
    let before = evaluate(&ParameterBundle::new(2, cfg.bundle.clone(), cfg.seed).unwrap(), &d, &cfg.objective).unwrap();
    let after = evaluate(&out.bundle, &d, &cfg.objective).unwrap();
    assert!(after.l_torque < before.l_torque, "{before:?} -> {after:?}");
}

#[test]
fn invalid_settings_are_rejected() {
    let d = data(2);
    assert!(run_training(&[], &small(), |_| {}).is_err());
    assert!(run_training(&d, &TrainConfig { batch_size: 0, ..small() }, |_| {}).is_err());
    assert!(run_training(
        &d,
        &TrainConfig {
            lambda_ec: -1.0,
            ..small()
        },
        |_| {}
    )
    .is_err());
}

#[test]
fn non_finite_loss_reports_the_epoch() {
    let mut d = data(3);
    d[1].target.as_mut_slice()[40] = f64::NAN;
    match run_training(&d, &small(), |_| {}) {
        Err(lagdyn_core::Error::NumericalBlowup { step }) => assert_eq!(step, 0),
        other => panic!("expected a blow-up, got {:?}", other.map(|o| o.log)),
    }
}
