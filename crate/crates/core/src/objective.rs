//! Differentiable training objective: torque regression plus the weighted
//! energy consistency penalty, recorded on a [`Tape`].

use crate::dynamics::{concat_state, DEFAULT_EPSILON};
use crate::energy::{relative_residual, EnergyConfig};
use crate::error::{check_len, Error, Result};
use crate::kinematics::GeneralizedState;
use crate::nn::{Matrix, ParameterBundle, Tape, Var};

/// First frame entering the torque regression. Frames 0 and 1 have
/// accelerations that reach back before the sequence start and are skipped.
pub const DEFAULT_TORQUE_START: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub eps: f64,
    pub energy: EnergyConfig,
    pub torque_start: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPSILON,
            energy: EnergyConfig::default(),
            torque_start: DEFAULT_TORQUE_START,
        }
    }
}

/// Tape nodes for the synthesized terms, all `T x ...` with one row per frame.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsGraph {
    pub q: Var,
    pub qd: Var,
    pub qdd: Var,
    /// `T x D²`
    pub inertia: Var,
    pub inertia_rate: Var,
    pub skew: Var,
    pub coriolis: Var,
    pub gravity: Var,
    pub friction: Var,
    pub tau: Var,
}

/// Records the four estimators and the structured assembly of `τ`.
pub fn record_dynamics(tape: &mut Tape, bundle: &ParameterBundle, state: &GeneralizedState, eps: f64) -> Result<DynamicsGraph> {
    let d = bundle.dof();
    check_len("state degrees of freedom", d, state.dof)?;
    let frames = state.frames;
    let q = tape.input(Matrix::from_vec(frames, d, state.q.clone())?);
    let qd = tape.input(Matrix::from_vec(frames, d, state.qd.clone())?);
    let qdd = tape.input(Matrix::from_vec(frames, d, state.qdd.clone())?);
    let qqd = tape.input(concat_state(state));

    let raw_l = bundle.inertia.forward(tape, q)?;
    let inertia = tape.cholesky_inertia(raw_l, d, eps)?;
    let inertia_rate = tape.lag_diff(inertia)?;
    let raw_n = bundle.coriolis.forward(tape, qqd)?;
    let skew = tape.skew(raw_n, d)?;
    let diff = tape.sub(inertia_rate, skew)?;
    let coriolis = tape.scale(diff, 0.5)?;
    let gravity = bundle.gravity.forward(tape, q)?;
    let friction = bundle.friction.forward(tape, qqd)?;

    let mqdd = tape.mat_vec(inertia, qdd, d)?;
    let cqd = tape.mat_vec(coriolis, qd, d)?;
    let inertial = tape.add(mqdd, cqd)?;
    let external = tape.add(gravity, friction)?;
    let tau = tape.add(inertial, external)?;
    Ok(DynamicsGraph {
        q,
        qd,
        qdd,
        inertia,
        inertia_rate,
        skew,
        coriolis,
        gravity,
        friction,
        tau,
    })
}

/// Tape nodes of the energy bookkeeping (`T x 1` columns) and the loss.
#[derive(Debug, Clone, Copy)]
pub struct EnergyGraph {
    pub kinetic: Var,
    pub delta_kinetic: Var,
    pub power: Var,
    pub work: Var,
    pub residual: Var,
    pub loss: Var,
}

pub fn record_energy(tape: &mut Tape, graph: &DynamicsGraph, dof: usize, config: &EnergyConfig) -> Result<EnergyGraph> {
    config.validate()?;
    let frames = tape.value(graph.tau)?.rows();
    if frames < 2 {
        return Err(Error::DegenerateLength { len: frames, min: 2 });
    }
    let mqd = tape.mat_vec(graph.inertia, graph.qd, dof)?;
    let quad = tape.row_dot(graph.qd, mqd)?;
    let kinetic = tape.scale(quad, 0.5)?;
    let delta_kinetic = tape.lag_diff(kinetic)?;
    let without_gravity = tape.sub(graph.tau, graph.gravity)?;
    let net = tape.sub(without_gravity, graph.friction)?;
    let power = tape.row_dot(net, graph.qd)?;
    let work = tape.lag_mean(power)?;
    let residual = tape.rel_residual(delta_kinetic, work, config.delta, config.eta)?;
    let loss = tape.huber_mean(residual, config.huber_knee, 1)?;
    Ok(EnergyGraph {
        kinetic,
        delta_kinetic,
        power,
        work,
        residual,
        loss,
    })
}

/// Scalar summaries of one recorded objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveValues {
    pub torque_loss: f64,
    pub energy_loss: f64,
    pub total: f64,
    /// Sum of `|r_E|` over unmasked frames.
    pub abs_residual_sum: f64,
    pub unmasked: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveGraph {
    pub dynamics: DynamicsGraph,
    pub energy: EnergyGraph,
    pub torque_loss: Var,
    pub total: Var,
}

/// `MSE(τ, target) + energy_weight · L_EC` for one sequence.
pub fn record_objective(
    tape: &mut Tape,
    bundle: &ParameterBundle,
    state: &GeneralizedState,
    target_tau: &Matrix,
    energy_weight: f64,
    config: &ObjectiveConfig,
) -> Result<ObjectiveGraph> {
    let dynamics = record_dynamics(tape, bundle, state, config.eps)?;
    let energy = record_energy(tape, &dynamics, bundle.dof(), &config.energy)?;
    let torque_loss = tape.mse_mean(dynamics.tau, target_tau, config.torque_start)?;
    let total = if energy_weight == 0.0 {
        torque_loss
    } else {
        let weighted = tape.scale(energy.loss, energy_weight)?;
        tape.add(torque_loss, weighted)?
    };
    Ok(ObjectiveGraph {
        dynamics,
        energy,
        torque_loss,
        total,
    })
}

impl ObjectiveGraph {
    pub fn values(&self, tape: &Tape, config: &ObjectiveConfig) -> Result<ObjectiveValues> {
        let de = tape.value(self.energy.delta_kinetic)?;
        let w = tape.value(self.energy.work)?;
        let mut values = ObjectiveValues {
            torque_loss: tape.scalar(self.torque_loss)?,
            energy_loss: tape.scalar(self.energy.loss)?,
            total: tape.scalar(self.total)?,
            ..Default::default()
        };
        for t in 1..de.rows() {
            if let Some(r) = relative_residual(de.get(t, 0), w.get(t, 0), config.energy.delta, config.energy.eta) {
                values.abs_residual_sum += r.abs();
                values.unmasked += 1;
            }
        }
        Ok(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{estimate_dynamic_terms, synthesize_tau};
    use crate::energy::energy_trace;
    use crate::kinematics::BoundaryPadding;
    use crate::nn::{gradcheck, BundleConfig, GradCheckConfig};
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> BundleConfig {
        BundleConfig {
            hidden: alloc::vec![8, 8],
            channels: 4,
            stages: 1,
            kernel: 3,
        }
    }

    fn smooth_state(rng: &mut ChaCha8Rng, frames: usize, dof: usize) -> GeneralizedState {
        let phase: Vec<f64> = (0..dof).map(|_| rng.random_range(0.0..6.0)).collect();
        let q = (0..frames * dof)
            .map(|k| libm::sin(0.2 * (k / dof) as f64 + phase[k % dof]))
            .collect();
        GeneralizedState::from_coordinates(q, frames, dof, BoundaryPadding::Zero).unwrap()
    }

    #[test]
    fn tape_path_matches_direct_path() {
        let bundle = ParameterBundle::new(2, small_config(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = smooth_state(&mut rng, 12, 2);
        let cfg = ObjectiveConfig::default();
        let mut terms = estimate_dynamic_terms(&bundle, &state, cfg.eps).unwrap();
        let tau = synthesize_tau(&mut terms, &state).unwrap();
        let trace = energy_trace(&terms, &state, &cfg.energy).unwrap();

        let mut tape = Tape::new();
        let target = Matrix::zeros(12, 2);
        let g = record_objective(&mut tape, &bundle, &state, &target, 0.3, &cfg).unwrap();
        let tape_tau = tape.value(g.dynamics.tau).unwrap();
        for (a, b) in tape_tau.as_slice().iter().zip(&tau) {
            assert!((a - b).abs() < 1e-12);
        }
        let v = g.values(&tape, &cfg).unwrap();
        assert!((v.energy_loss - trace.loss(1.0)).abs() < 1e-14);
        assert_eq!(v.unmasked, trace.unmasked());
        let mean = if v.unmasked == 0 {
            0.0
        } else {
            v.abs_residual_sum / v.unmasked as f64
        };
        assert!((mean - trace.mean_abs_residual()).abs() < 1e-14);
        let mse: f64 = tau[4..].iter().map(|x| x * x).sum::<f64>() / 20.0;
        assert!((v.torque_loss - mse).abs() < 1e-12 * mse.max(1.0));
        assert!((v.total - (v.torque_loss + 0.3 * v.energy_loss)).abs() < 1e-12);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut bundle = ParameterBundle::new(2, small_config(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let state = smooth_state(&mut rng, 10, 2);
        let target = Matrix::from_fn(10, 2, |t, j| libm::cos(0.3 * t as f64 + j as f64));
        let cfg = ObjectiveConfig {
            energy: EnergyConfig {
                eta: 0.0,
                ..EnergyConfig::default()
            },
            ..ObjectiveConfig::default()
        };
        let report = gradcheck(
            &mut bundle,
            |b, tape| Ok(record_objective(tape, b, &state, &target, 0.5, &cfg)?.total),
            GradCheckConfig {
                samples: 120,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn single_frame_is_rejected() {
        let bundle = ParameterBundle::new(1, small_config(), 3).unwrap();
        let state = GeneralizedState::from_coordinates(alloc::vec![0.1], 1, 1, BoundaryPadding::Zero).unwrap();
        let mut tape = Tape::new();
        let r = record_objective(&mut tape, &bundle, &state, &Matrix::zeros(1, 1), 1.0, &ObjectiveConfig::default());
        assert!(matches!(r, Err(Error::DegenerateLength { .. })));
    }
}
