//! Mini-batch training of the dynamics estimators with the delayed
//! energy-consistency warmup.

use lagdyn_core::kinematics::{BoundaryPadding, GeneralizedState};
use lagdyn_core::nn::{adam_step, BundleConfig, GradientBuffer, Matrix, OptimizerState, ParamSet, ParameterBundle, Tape};
use lagdyn_core::objective::{record_objective, ObjectiveConfig, ObjectiveValues};
use lagdyn_core::oracle::LabeledSequence;
use lagdyn_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Energy-consistency weight at `epoch`: zero before `start`, a linear ramp
/// over `ramp` epochs, then `target`.
pub fn warmup_weight(epoch: usize, start: usize, ramp: usize, target: f64) -> f64 {
    if epoch < start {
        0.0
    } else if ramp == 0 || epoch >= start + ramp {
        target
    } else {
        target * (epoch - start) as f64 / ramp as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub lambda_ec: f64,
    pub warmup_start: usize,
    pub warmup_ramp: usize,
    pub objective: ObjectiveConfig,
    pub bundle: BundleConfig,
    pub padding: BoundaryPadding,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
            lambda_ec: 0.1,
            warmup_start: 20,
            warmup_ramp: 4,
            objective: ObjectiveConfig::default(),
            bundle: BundleConfig::default(),
            padding: BoundaryPadding::Zero,
        }
    }
}

/// One training sequence: finite-difference state and target torque.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub state: GeneralizedState,
    pub target: Matrix,
}

impl TrainingSequence {
    pub fn from_labeled(seq: &LabeledSequence, padding: BoundaryPadding) -> Result<Self> {
        let state = seq.state(padding)?;
        let target = Matrix::from_vec(seq.frames(), seq.dof, seq.tau.clone())?;
        Ok(Self { state, target })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_torque: f64,
    pub l_ec: f64,
    pub mean_abs_residual: f64,
    pub lambda_ec: f64,
}

/// Aggregate of per-sequence objective values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub l_torque: f64,
    pub l_ec: f64,
    pub mean_abs_residual: f64,
    pub sequences: usize,
}

impl Summary {
    fn from_values(values: &[ObjectiveValues]) -> Self {
        let n = values.len().max(1) as f64;
        let (abs, count) = values
            .iter()
            .fold((0.0, 0usize), |(a, c), v| (a + v.abs_residual_sum, c + v.unmasked));
        Self {
            l_torque: values.iter().map(|v| v.torque_loss).sum::<f64>() / n,
            l_ec: values.iter().map(|v| v.energy_loss).sum::<f64>() / n,
            mean_abs_residual: if count == 0 { 0.0 } else { abs / count as f64 },
            sequences: values.len(),
        }
    }
}

fn forward_backward(
    bundle: &ParameterBundle,
    seq: &TrainingSequence,
    weight: f64,
    seed: f64,
    config: &ObjectiveConfig,
) -> Result<(ObjectiveValues, GradientBuffer)> {
    let mut tape = Tape::new();
    let graph = record_objective(&mut tape, bundle, &seq.state, &seq.target, weight, config)?;
    let values = graph.values(&tape, config)?;
    let mut grads = GradientBuffer::default();
    tape.backward_scaled(graph.total, seed, &mut grads)?;
    Ok((values, grads))
}

/// Objective values of every sequence without gradients, in input order.
pub fn evaluate(bundle: &ParameterBundle, data: &[TrainingSequence], config: &ObjectiveConfig) -> Result<Summary> {
    let values = data
        .par_iter()
        .map(|seq| {
            let mut tape = Tape::new();
            let graph = record_objective(&mut tape, bundle, &seq.state, &seq.target, 0.0, config)?;
            graph.values(&tape, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary::from_values(&values))
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub bundle: ParameterBundle,
    pub log: Vec<EpochLog>,
}

/// Trains a fresh bundle seeded from `config.seed`. `on_epoch` sees every
/// log row as soon as the epoch finishes.
pub fn run_training(data: &[TrainingSequence], config: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainingOutcome> {
    if data.is_empty() {
        return Err(Error::EmptySequence);
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) || !(config.lambda_ec >= 0.0) {
        return Err(Error::InvalidArgument(
            "batch size and learning rate must be positive, lambda nonnegative",
        ));
    }
    let dof = data[0].state.dof;
    let mut bundle = ParameterBundle::new(dof, config.bundle.clone(), config.seed)?;
    let mut opt = OptimizerState::new(config.learning_rate);
    // the bundle initializer consumes stream 0 of the same seed
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let weight = warmup_weight(epoch, config.warmup_start, config.warmup_ramp, config.lambda_ec);
        order.shuffle(&mut rng);
        let mut epoch_values = Vec::with_capacity(data.len());
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let results = batch
                .par_iter()
                .map(|&i| forward_backward(&bundle, &data[i], weight, scale, &config.objective))
                .collect::<Result<Vec<_>>>()?;
            // merged in batch order so the sum does not depend on scheduling
            for (values, grads) in results {
                if !values.total.is_finite() {
                    return Err(Error::NumericalBlowup { step: epoch });
                }
                bundle.accumulate_buffer(&grads);
                epoch_values.push(values);
            }
            adam_step(&mut bundle, &mut opt);
        }
        let s = Summary::from_values(&epoch_values);
        let row = EpochLog {
            epoch,
            l_torque: s.l_torque,
            l_ec: s.l_ec,
            mean_abs_residual: s.mean_abs_residual,
            lambda_ec: weight,
        };
        on_epoch(&row);
        log.push(row);
    }
    Ok(TrainingOutcome { bundle, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_examples() {
        assert_eq!(warmup_weight(49, 50, 4, 0.1), 0.0);
        assert_eq!(warmup_weight(50, 50, 4, 0.1), 0.0);
        assert_eq!(warmup_weight(52, 50, 4, 0.1), 0.05);
        assert_eq!(warmup_weight(51, 50, 4, 0.1), 0.025);
        assert_eq!(warmup_weight(54, 50, 4, 0.1), 0.1);
        assert_eq!(warmup_weight(500, 50, 4, 0.1), 0.1);
    }
}
