//! Work-energy bookkeeping and the energy consistency loss.

use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::DynamicTerms;
use crate::error::{check_len, Error, Result};
use crate::kinematics::GeneralizedState;
use crate::linalg::quadratic_form;
use crate::nn::huber;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConfig {
    /// Denominator stabilizer.
    pub delta: f64,
    /// Frames with `|ΔE| + |W|` below this are masked out.
    pub eta: f64,
    pub huber_knee: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            eta: 1e-3,
            huber_knee: 1.0,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) || !(self.eta >= 0.0) || !(self.huber_knee > 0.0) {
            return Err(Error::InvalidArgument("energy config needs delta >= 0, eta >= 0, knee > 0"));
        }
        Ok(())
    }
}

/// Per-frame energy quantities. Entries at `t = 0` of `work`,
/// `delta_kinetic` and `residual` are zero and `mask[0]` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    pub kinetic: Vec<f64>,
    pub power: Vec<f64>,
    pub work: Vec<f64>,
    pub delta_kinetic: Vec<f64>,
    pub residual: Vec<f64>,
    pub mask: Vec<bool>,
}

impl EnergyTrace {
    pub fn frames(&self) -> usize {
        self.kinetic.len()
    }

    /// Mean `|r_E|` over unmasked frames; zero when every frame is masked.
    pub fn mean_abs_residual(&self) -> f64 {
        let (sum, n) = self
            .residual
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (r, _)| (s + r.abs(), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mean Huber penalty over frames `1..T`.
    pub fn loss(&self, knee: f64) -> f64 {
        let n = self.frames().saturating_sub(1);
        if n == 0 {
            return 0.0;
        }
        self.residual[1..].iter().map(|&r| huber(r, knee)).sum::<f64>() / n as f64
    }
}

/// `0.5 q̇(t)ᵀ M(t) q̇(t)` per frame; `inertia` is `T x D x D`, `qd` is `T x D`.
pub fn kinetic_energy(inertia: &[f64], qd: &[f64], frames: usize, dof: usize) -> Result<Vec<f64>> {
    check_len("inertia sequence", frames * dof * dof, inertia.len())?;
    check_len("velocity sequence", frames * dof, qd.len())?;
    Ok((0..frames)
        .map(|t| 0.5 * quadratic_form(&inertia[t * dof * dof..(t + 1) * dof * dof], &qd[t * dof..(t + 1) * dof]))
        .collect())
}

/// Net power `(τ - G - F) · q̇` per frame and trapezoidal work `W(t)` for
/// `t ≥ 1` (`W(0) = 0`).
pub fn power_and_work(
    tau: &[f64],
    gravity: &[f64],
    friction: &[f64],
    qd: &[f64],
    frames: usize,
    dof: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = frames * dof;
    check_len("torque sequence", n, tau.len())?;
    check_len("gravity sequence", n, gravity.len())?;
    check_len("friction sequence", n, friction.len())?;
    check_len("velocity sequence", n, qd.len())?;
    let power: Vec<f64> = (0..frames)
        .map(|t| (t * dof..(t + 1) * dof).map(|k| (tau[k] - gravity[k] - friction[k]) * qd[k]).sum())
        .collect();
    let mut work = vec![0.0; frames];
    for t in 1..frames {
        work[t] = 0.5 * (power[t] + power[t - 1]);
    }
    Ok((power, work))
}

/// Masked relative residual of one frame; `None` when masked.
pub fn relative_residual(delta_kinetic: f64, work: f64, delta: f64, eta: f64) -> Option<f64> {
    let scale = delta_kinetic.abs() + work.abs();
    (scale >= eta).then(|| (delta_kinetic - work) / (scale + delta))
}

/// Full trace for `terms` (which must carry `τ`) along `state`.
pub fn energy_trace(terms: &DynamicTerms, state: &GeneralizedState, config: &EnergyConfig) -> Result<EnergyTrace> {
    config.validate()?;
    check_len("state frames", terms.frames, state.frames)?;
    check_len("state degrees of freedom", terms.dof, state.dof)?;
    let (frames, dof) = (terms.frames, terms.dof);
    let kinetic = kinetic_energy(&terms.inertia, &state.qd, frames, dof)?;
    let (power, work) = power_and_work(&terms.tau, &terms.gravity, &terms.friction, &state.qd, frames, dof)?;
    let mut delta_kinetic = vec![0.0; frames];
    let mut residual = vec![0.0; frames];
    let mut mask = vec![false; frames];
    for t in 1..frames {
        delta_kinetic[t] = kinetic[t] - kinetic[t - 1];
        if let Some(r) = relative_residual(delta_kinetic[t], work[t], config.delta, config.eta) {
            residual[t] = r;
            mask[t] = true;
        }
    }
    Ok(EnergyTrace {
        kinetic,
        power,
        work,
        delta_kinetic,
        residual,
        mask,
    })
}

/// Mean Huber penalty of the masked relative residual over frames `1..T`.
pub fn energy_consistency_loss(terms: &DynamicTerms, state: &GeneralizedState, config: &EnergyConfig) -> Result<f64> {
    if terms.frames < 2 {
        return Err(Error::DegenerateLength { len: terms.frames, min: 2 });
    }
    Ok(energy_trace(terms, state, config)?.loss(config.huber_knee))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::InertiaFactor;
    use crate::kinematics::BoundaryPadding;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kinetic_examples() {
        assert_eq!(kinetic_energy(&[1.0, 0.0, 0.0, 1.0], &[1.0, 1.0], 1, 2).unwrap(), vec![1.0]);
        assert_eq!(kinetic_energy(&[2.0, 0.3, 0.3, 1.0], &[0.0, 0.0], 1, 2).unwrap(), vec![0.0]);
    }

    #[test]
    fn kinetic_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 4;
        let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
            }
        }
        let qd: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut naive = 0.0;
        for i in 0..d {
            for j in 0..d {
                naive += qd[i] * m[i * d + j] * qd[j];
            }
        }
        let e = kinetic_energy(&m, &qd, 1, d).unwrap()[0];
        assert!(e > 0.0);
        assert!((e - 0.5 * naive).abs() < 1e-12);
    }

    #[test]
    fn power_examples() {
        let tau = [1.0, 2.0, 3.0, 4.0];
        let (p, w) = power_and_work(&tau, &[0.5, 1.0, 1.0, 1.0], &[0.5, 1.0, 2.0, 3.0], &[3.0, 1.0, 5.0, 7.0], 2, 2).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
        assert_eq!(w, vec![0.0, 0.0]);
        // constant power 2
        let (p, w) = power_and_work(&[2.0, 1.0, 1.0], &[0.0; 3], &[0.0; 3], &[1.0, 2.0, 2.0], 3, 1).unwrap();
        assert_eq!(p, vec![2.0, 2.0, 2.0]);
        assert_eq!(&w[1..], &[2.0, 2.0]);
    }

    #[test]
    fn residual_example() {
        let r = relative_residual(2.0, 1.0, 0.0, 1e-3).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15);
        assert!((huber(r, 1.0) - 1.0 / 18.0).abs() < 1e-15);
        assert_eq!(relative_residual(1e-4, 1e-4, 0.1, 1e-3), None);
    }

    fn terms_for(frames: usize, dof: usize, inertia: Vec<f64>, tau: Vec<f64>) -> DynamicTerms {
        DynamicTerms {
            frames,
            dof,
            inertia: inertia.clone(),
            inertia_rate: vec![0.0; frames * dof * dof],
            skew: vec![0.0; frames * dof * dof],
            coriolis: vec![0.0; frames * dof * dof],
            gravity: vec![0.0; frames * dof],
            friction: vec![0.0; frames * dof],
            tau,
            factor: InertiaFactor {
                frames,
                dim: dof,
                eps: 1e-5,
                factor: inertia,
            },
        }
    }

    #[test]
    fn static_sequence_is_fully_masked() {
        let s = GeneralizedState::from_coordinates(vec![0.3; 10], 5, 2, BoundaryPadding::Replicate).unwrap();
        let terms = terms_for(5, 2, [1.0, 0.0, 0.0, 1.0].repeat(5), vec![1.0; 10]);
        let trace = energy_trace(&terms, &s, &EnergyConfig::default()).unwrap();
        assert_eq!(trace.unmasked(), 0);
        assert_eq!(energy_consistency_loss(&terms, &s, &EnergyConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn exact_balance_gives_zero_loss() {
        // q = [0, 1, 3]: q̇ = [0, 1, 2], E = [0, 0.5, 2]; τ = [0, 1, 1] gives P = [0, 1, 2], W = ΔE
        let s = GeneralizedState::from_coordinates(vec![0.0, 1.0, 3.0], 3, 1, BoundaryPadding::Zero).unwrap();
        let terms = terms_for(3, 1, vec![1.0; 3], vec![0.0, 1.0, 1.0]);
        let trace = energy_trace(&terms, &s, &EnergyConfig::default()).unwrap();
        assert_eq!(trace.unmasked(), 2);
        assert_eq!(trace.delta_kinetic, trace.work);
        assert_eq!(energy_consistency_loss(&terms, &s, &EnergyConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn short_sequence_is_rejected() {
        let s = GeneralizedState::from_coordinates(vec![1.0], 1, 1, BoundaryPadding::Zero).unwrap();
        let terms = terms_for(1, 1, vec![1.0], vec![0.0]);
        assert!(matches!(
            energy_consistency_loss(&terms, &s, &EnergyConfig::default()),
            Err(Error::DegenerateLength { len: 1, min: 2 })
        ));
    }
}
