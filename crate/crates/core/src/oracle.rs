//! Analytic planar chain of point masses: closed-form inertia and gravity,
//! Christoffel-symbol Coriolis matrix, inverse and forward dynamics, an RK4
//! integrator, and a generator of labeled piecewise-driven sequences.
//!
//! Angles are absolute, each measured from the downward vertical. Mass `k`
//! sits at the distal end of link `k`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::{DynamicTerms, InertiaFactor};
use crate::error::{check_len, Error, Result};
use crate::kinematics::{BoundaryPadding, GeneralizedState};
use crate::linalg::{cholesky, cholesky_solve, matvec};

pub const STANDARD_GRAVITY: f64 = 9.81;
/// Central-difference step for numeric inertia derivatives.
pub const DERIVATIVE_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LinkChain {
    masses: Vec<f64>,
    lengths: Vec<f64>,
    gravity: f64,
    friction: Vec<f64>,
}

impl LinkChain {
    pub fn new(masses: Vec<f64>, lengths: Vec<f64>, gravity: f64, friction: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::InvalidArgument("a chain needs at least one link"));
        }
        check_len("link lengths", masses.len(), lengths.len())?;
        check_len("friction coefficients", masses.len(), friction.len())?;
        let positive = |v: &[f64]| v.iter().all(|&x| x.is_finite() && x > 0.0);
        if !positive(&masses) || !positive(&lengths) {
            return Err(Error::InvalidArgument("link masses and lengths must be positive"));
        }
        if !gravity.is_finite() || friction.iter().any(|&b| !b.is_finite() || b < 0.0) {
            return Err(Error::InvalidArgument("gravity must be finite and friction nonnegative"));
        }
        Ok(Self {
            masses,
            lengths,
            gravity,
            friction,
        })
    }

    /// `n` identical links, standard gravity, no friction.
    pub fn uniform(n: usize, mass: f64, length: f64) -> Result<Self> {
        Self::new(vec![mass; n], vec![length; n], STANDARD_GRAVITY, vec![0.0; n])
    }

    pub fn with_friction(mut self, friction: Vec<f64>) -> Result<Self> {
        check_len("friction coefficients", self.links(), friction.len())?;
        self.friction = friction;
        Self::new(self.masses, self.lengths, self.gravity, self.friction)
    }

    pub fn links(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    pub fn friction(&self) -> &[f64] {
        &self.friction
    }

    /// Total mass carried at or beyond link `i`.
    fn tail_mass(&self, i: usize) -> f64 {
        self.masses[i..].iter().sum()
    }
}

/// `M(q)`, row-major `n x n`.
pub fn inertia(chain: &LinkChain, q: &[f64]) -> Vec<f64> {
    let n = chain.links();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = chain.lengths[i] * chain.lengths[j] * libm::cos(q[i] - q[j]) * chain.tail_mass(i.max(j));
        }
    }
    m
}

/// Gradient of the potential energy.
pub fn gravity_torque(chain: &LinkChain, q: &[f64]) -> Vec<f64> {
    (0..chain.links())
        .map(|i| chain.gravity * chain.lengths[i] * libm::sin(q[i]) * chain.tail_mass(i))
        .collect()
}

pub fn friction_torque(chain: &LinkChain, qd: &[f64]) -> Vec<f64> {
    chain.friction.iter().zip(qd).map(|(b, v)| b * v).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativeMode {
    /// Closed form up to two links, central differences beyond.
    #[default]
    Auto,
    ClosedForm,
    CentralDifference,
}

/// `∂M/∂q_k` for every `k`, laid out `[k][i][j]`.
pub fn inertia_derivatives(chain: &LinkChain, q: &[f64], mode: DerivativeMode) -> Vec<f64> {
    let n = chain.links();
    let closed = match mode {
        DerivativeMode::Auto => n <= 2,
        DerivativeMode::ClosedForm => true,
        DerivativeMode::CentralDifference => false,
    };
    let mut dm = vec![0.0; n * n * n];
    if closed {
        for i in 0..n {
            for j in 0..n {
                let s = -chain.lengths[i] * chain.lengths[j] * chain.tail_mass(i.max(j)) * libm::sin(q[i] - q[j]);
                dm[(i * n + i) * n + j] += s;
                dm[(j * n + i) * n + j] -= s;
            }
        }
    } else {
        let mut x = q.to_vec();
        for k in 0..n {
            x[k] = q[k] + DERIVATIVE_STEP;
            let plus = inertia(chain, &x);
            x[k] = q[k] - DERIVATIVE_STEP;
            let minus = inertia(chain, &x);
            x[k] = q[k];
            for e in 0..n * n {
                dm[k * n * n + e] = (plus[e] - minus[e]) / (2.0 * DERIVATIVE_STEP);
            }
        }
    }
    dm
}

/// `C_ij = Σ_k Γ_ijk q̇_k` with `Γ_ijk = ½(∂_k M_ij + ∂_j M_ik - ∂_i M_jk)`.
pub fn coriolis(chain: &LinkChain, q: &[f64], qd: &[f64], mode: DerivativeMode) -> Vec<f64> {
    let n = chain.links();
    let dm = inertia_derivatives(chain, q, mode);
    let d = |k: usize, i: usize, j: usize| dm[(k * n + i) * n + j];
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = (0..n).map(|k| 0.5 * (d(k, i, j) + d(j, i, k) - d(i, j, k)) * qd[k]).sum();
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticTerms {
    pub inertia: Vec<f64>,
    pub coriolis: Vec<f64>,
    pub gravity: Vec<f64>,
}

pub fn analytic_terms(chain: &LinkChain, q: &[f64], qd: &[f64]) -> AnalyticTerms {
    AnalyticTerms {
        inertia: inertia(chain, q),
        coriolis: coriolis(chain, q, qd, DerivativeMode::Auto),
        gravity: gravity_torque(chain, q),
    }
}

/// `Σ_k Ṁ_ij` along `q̇`, i.e. the time derivative of `M` on the path.
pub fn inertia_rate(chain: &LinkChain, q: &[f64], qd: &[f64], mode: DerivativeMode) -> Vec<f64> {
    let n = chain.links();
    let dm = inertia_derivatives(chain, q, mode);
    (0..n * n).map(|e| (0..n).map(|k| dm[k * n * n + e] * qd[k]).sum()).collect()
}

/// Analytic terms on a recorded track in the units the learned branch sees:
/// velocities per frame, torques in N·m. With `q̇_f = q̇ dt` the same torque
/// requires `M / dt²`, `C / dt²` and friction `B / dt`; `τ` is copied as given.
pub fn frame_terms(chain: &LinkChain, state: &GeneralizedState, tau: &[f64], dt: f64) -> Result<DynamicTerms> {
    let n = chain.links();
    check_len("state degrees of freedom", n, state.dof)?;
    check_len("torque track", state.frames * n, tau.len())?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("time step must be positive"));
    }
    let inv2 = 1.0 / (dt * dt);
    let nn = n * n;
    let frames = state.frames;
    let mut terms = DynamicTerms {
        frames,
        dof: n,
        inertia: Vec::with_capacity(frames * nn),
        inertia_rate: Vec::with_capacity(frames * nn),
        skew: Vec::with_capacity(frames * nn),
        coriolis: Vec::with_capacity(frames * nn),
        gravity: Vec::with_capacity(frames * n),
        friction: Vec::with_capacity(frames * n),
        tau: tau.to_vec(),
        factor: InertiaFactor {
            frames,
            dim: n,
            eps: 0.0,
            factor: Vec::with_capacity(frames * nn),
        },
    };
    for t in 0..frames {
        let (q, v) = (state.q_at(t), state.qd_at(t));
        let m: Vec<f64> = inertia(chain, q).iter().map(|x| x * inv2).collect();
        let mdot: Vec<f64> = inertia_rate(chain, q, v, DerivativeMode::Auto).iter().map(|x| x * inv2).collect();
        let c: Vec<f64> = coriolis(chain, q, v, DerivativeMode::Auto).iter().map(|x| x * inv2).collect();
        let l = cholesky(&m, n).ok_or(Error::InvalidArgument("oracle inertia is not positive definite"))?;
        terms.skew.extend(mdot.iter().zip(&c).map(|(a, b)| a - 2.0 * b));
        terms.factor.factor.extend(l);
        terms.inertia.extend(m);
        terms.inertia_rate.extend(mdot);
        terms.coriolis.extend(c);
        terms.gravity.extend(gravity_torque(chain, q));
        terms.friction.extend(chain.friction.iter().zip(v).map(|(b, x)| b * x / dt));
    }
    Ok(terms)
}

/// `τ = M q̈ + C q̇ + G + B q̇`.
pub fn inverse_dynamics(chain: &LinkChain, q: &[f64], qd: &[f64], qdd: &[f64]) -> Vec<f64> {
    let n = chain.links();
    let t = analytic_terms(chain, q, qd);
    let (mut mq, mut cq) = (vec![0.0; n], vec![0.0; n]);
    matvec(&t.inertia, qdd, &mut mq);
    matvec(&t.coriolis, qd, &mut cq);
    let f = friction_torque(chain, qd);
    (0..n).map(|i| mq[i] + cq[i] + t.gravity[i] + f[i]).collect()
}

/// `q̈ = M⁻¹(τ - C q̇ - G - B q̇)`.
pub fn forward_dynamics(chain: &LinkChain, q: &[f64], qd: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
    let n = chain.links();
    let t = analytic_terms(chain, q, qd);
    let mut cq = vec![0.0; n];
    matvec(&t.coriolis, qd, &mut cq);
    let f = friction_torque(chain, qd);
    let rhs: Vec<f64> = (0..n).map(|i| tau[i] - cq[i] - t.gravity[i] - f[i]).collect();
    let l = cholesky(&t.inertia, n).ok_or(Error::InvalidArgument("inertia matrix is not positive definite"))?;
    Ok(cholesky_solve(&l, &rhs))
}

pub fn kinetic_energy(chain: &LinkChain, q: &[f64], qd: &[f64]) -> f64 {
    let n = chain.links();
    let m = inertia(chain, q);
    let mut mv = vec![0.0; n];
    matvec(&m, qd, &mut mv);
    0.5 * mv.iter().zip(qd).map(|(a, b)| a * b).sum::<f64>()
}

/// Potential energy with the pivot at height zero.
pub fn potential_energy(chain: &LinkChain, q: &[f64]) -> f64 {
    let mut height = 0.0;
    let mut total = 0.0;
    for k in 0..chain.links() {
        height -= chain.lengths[k] * libm::cos(q[k]);
        total += chain.masses[k] * chain.gravity * height;
    }
    total
}

pub fn total_energy(chain: &LinkChain, q: &[f64], qd: &[f64]) -> f64 {
    kinetic_energy(chain, q, qd) + potential_energy(chain, q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub dt: f64,
    pub steps: usize,
    /// RK4 steps per recorded frame.
    pub substeps: usize,
    /// Largest allowed `|q|` or `|q̇|` entry.
    pub bound: f64,
}

impl SimulationConfig {
    pub fn new(dt: f64, steps: usize) -> Self {
        Self {
            dt,
            steps,
            substeps: 1,
            bound: 1e6,
        }
    }
}

/// Recorded physical trajectory, every field `T x n` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: usize,
    pub dof: usize,
    pub dt: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub qdd: Vec<f64>,
    pub tau: Vec<f64>,
}

impl Trajectory {
    pub fn row<'a>(&self, v: &'a [f64], t: usize) -> &'a [f64] {
        &v[t * self.dof..(t + 1) * self.dof]
    }
}

/// Integrates from `(q0, qd0)` and records `steps` frames.
///
/// `torque(k, t)` is queried with the recorded frame index `k` that owns the
/// current step and the stage time `t`; the recorded `τ` of frame `k` is
/// `torque(k, k·dt)`.
pub fn simulate_trajectory(
    chain: &LinkChain,
    q0: &[f64],
    qd0: &[f64],
    mut torque: impl FnMut(usize, f64) -> Vec<f64>,
    config: &SimulationConfig,
) -> Result<Trajectory> {
    let n = chain.links();
    check_len("initial angles", n, q0.len())?;
    check_len("initial velocities", n, qd0.len())?;
    if !(config.dt > 0.0) || config.substeps == 0 {
        return Err(Error::InvalidArgument("time step and substep count must be positive"));
    }
    let frames = config.steps;
    let mut out = Trajectory {
        frames,
        dof: n,
        dt: config.dt,
        q: Vec::with_capacity(frames * n),
        qd: Vec::with_capacity(frames * n),
        qdd: Vec::with_capacity(frames * n),
        tau: Vec::with_capacity(frames * n),
    };
    let (mut q, mut qd) = (q0.to_vec(), qd0.to_vec());
    let h = config.dt / config.substeps as f64;
    let accel = |q: &[f64], qd: &[f64], tau: &[f64]| forward_dynamics(chain, q, qd, tau);
    for k in 0..frames {
        let t0 = k as f64 * config.dt;
        let tau = torque(k, t0);
        check_len("torque", n, tau.len())?;
        let a = accel(&q, &qd, &tau)?;
        out.q.extend_from_slice(&q);
        out.qd.extend_from_slice(&qd);
        out.qdd.extend_from_slice(&a);
        out.tau.extend_from_slice(&tau);
        if k + 1 == frames {
            break;
        }
        for s in 0..config.substeps {
            let t = t0 + s as f64 * h;
            let tau_a = if s == 0 { tau.clone() } else { torque(k, t) };
            let tau_mid = torque(k, t + 0.5 * h);
            let tau_b = torque(k, t + h);
            let k1v = accel(&q, &qd, &tau_a)?;
            let k1q = qd.clone();
            let q2: Vec<f64> = (0..n).map(|i| q[i] + 0.5 * h * k1q[i]).collect();
            let v2: Vec<f64> = (0..n).map(|i| qd[i] + 0.5 * h * k1v[i]).collect();
            let k2v = accel(&q2, &v2, &tau_mid)?;
            let q3: Vec<f64> = (0..n).map(|i| q[i] + 0.5 * h * v2[i]).collect();
            let v3: Vec<f64> = (0..n).map(|i| qd[i] + 0.5 * h * k2v[i]).collect();
            let k3v = accel(&q3, &v3, &tau_mid)?;
            let q4: Vec<f64> = (0..n).map(|i| q[i] + h * v3[i]).collect();
            let v4: Vec<f64> = (0..n).map(|i| qd[i] + h * k3v[i]).collect();
            let k4v = accel(&q4, &v4, &tau_b)?;
            for i in 0..n {
                q[i] += h / 6.0 * (k1q[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
                qd[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
            }
        }
        if q.iter().chain(&qd).any(|x| !x.is_finite() || x.abs() > config.bound) {
            return Err(Error::NumericalBlowup { step: k + 1 });
        }
    }
    Ok(out)
}

/// Drive applied during one regime, as a function of time since its start.
#[derive(Debug, Clone, PartialEq)]
pub enum TorqueLaw {
    Free,
    Constant(Vec<f64>),
    /// `offset + amplitude · sin(2π·frequency·s)`.
    Sinusoid {
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: f64,
    },
}

impl TorqueLaw {
    pub fn evaluate(&self, n: usize, since_start: f64) -> Vec<f64> {
        match self {
            TorqueLaw::Free => vec![0.0; n],
            TorqueLaw::Constant(c) => c.clone(),
            TorqueLaw::Sinusoid {
                offset,
                amplitude,
                frequency,
            } => {
                let s = libm::sin(2.0 * core::f64::consts::PI * frequency * since_start);
                offset.iter().zip(amplitude).map(|(o, a)| o + a * s).collect()
            }
        }
    }

    fn width(&self) -> Option<usize> {
        match self {
            TorqueLaw::Free => None,
            TorqueLaw::Constant(c) => Some(c.len()),
            TorqueLaw::Sinusoid { offset, amplitude, .. } => (offset.len() == amplitude.len()).then_some(offset.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub frames: usize,
    pub law: TorqueLaw,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequencePlan {
    pub initial_q: Vec<f64>,
    pub initial_qd: Vec<f64>,
    pub regimes: Vec<Regime>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Std of Gaussian noise added to the drive, redrawn every frame.
    pub drive_std: f64,
    /// Std of Gaussian jitter on the recorded angles.
    pub observation_std: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            drive_std: 0.0,
            observation_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub dt: f64,
    pub dof: usize,
    /// Recorded angles after jitter, `T x n`.
    pub q: Vec<f64>,
    /// Applied torque, `T x n`.
    pub tau: Vec<f64>,
    pub labels: Vec<usize>,
    pub boundaries: Vec<usize>,
}

impl LabeledSequence {
    pub fn frames(&self) -> usize {
        self.labels.len()
    }

    /// Finite-difference state in per-frame units.
    pub fn state(&self, padding: BoundaryPadding) -> Result<GeneralizedState> {
        GeneralizedState::from_coordinates(self.q.clone(), self.frames(), self.dof, padding)
    }
}

/// Sub-generator for sequence `index` under a master seed.
pub fn sequence_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates one plan. Randomness is drawn in a fixed order: drive noise
/// for every frame, then observation jitter for every frame.
pub fn generate_sequence(
    chain: &LinkChain,
    plan: &SequencePlan,
    noise: &NoiseConfig,
    config: &SimulationConfig,
    rng: &mut impl Rng,
) -> Result<LabeledSequence> {
    let n = chain.links();
    if plan.regimes.is_empty() {
        return Err(Error::EmptySequence);
    }
    if plan.regimes.iter().any(|r| r.frames == 0 || r.law.width().is_some_and(|w| w != n)) {
        return Err(Error::InvalidArgument("regimes need frames and torques matching the chain"));
    }
    if !(noise.drive_std >= 0.0) || !(noise.observation_std >= 0.0) {
        return Err(Error::InvalidArgument("noise levels must be nonnegative"));
    }
    let frames: usize = plan.regimes.iter().map(|r| r.frames).sum();
    let mut owner = Vec::with_capacity(frames);
    let mut boundaries = Vec::new();
    let mut start = 0;
    for (i, r) in plan.regimes.iter().enumerate() {
        if i > 0 {
            boundaries.push(start);
        }
        owner.extend(core::iter::repeat_n((i, start), r.frames));
        start += r.frames;
    }
    let drive = gaussian(rng, noise.drive_std, frames * n);
    let dt = config.dt;
    let sim = SimulationConfig { steps: frames, ..*config };
    let traj = simulate_trajectory(
        chain,
        &plan.initial_q,
        &plan.initial_qd,
        |k, t| {
            let (i, s) = owner[k];
            let mut tau = plan.regimes[i].law.evaluate(n, t - s as f64 * dt);
            for (j, x) in tau.iter_mut().enumerate() {
                *x += drive[k * n + j];
            }
            tau
        },
        &sim,
    )?;
    let jitter = gaussian(rng, noise.observation_std, frames * n);
    let q = traj.q.iter().zip(&jitter).map(|(a, b)| a + b).collect();
    Ok(LabeledSequence {
        dt,
        dof: n,
        q,
        tau: traj.tau,
        labels: owner.iter().map(|&(i, _)| plan.regimes[i].class).collect(),
        boundaries,
    })
}

fn gaussian(rng: &mut impl Rng, std: f64, count: usize) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; count];
    }
    let normal = Normal::new(0.0, std).expect("finite nonnegative std");
    (0..count).map(|_| normal.sample(rng)).collect()
}

/// One sequence per plan; sequence `i` draws from `sequence_rng(seed, i)`.
pub fn generate_labeled_dataset(
    chain: &LinkChain,
    plans: &[SequencePlan],
    noise: &NoiseConfig,
    config: &SimulationConfig,
    seed: u64,
) -> Result<Vec<LabeledSequence>> {
    plans
        .iter()
        .enumerate()
        .map(|(i, p)| generate_sequence(chain, p, noise, config, &mut sequence_rng(seed, i as u64)))
        .collect()
}

/// Random regime plans: piecewise drives whose offsets jump by at least
/// `min_step` (in norm, net of sinusoid swing) at every regime change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanConfig {
    pub frames: usize,
    pub regimes: usize,
    pub min_segment: usize,
    pub offset_range: f64,
    pub amplitude_range: f64,
    pub frequency_range: (f64, f64),
    pub min_step: f64,
    pub initial_angle: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            frames: 500,
            regimes: 3,
            min_segment: 60,
            offset_range: 6.0,
            amplitude_range: 1.5,
            frequency_range: (0.2, 1.0),
            min_step: 3.0,
            initial_angle: 0.5,
        }
    }
}

pub const CLASS_FREE: usize = 0;
pub const CLASS_CONSTANT: usize = 1;
pub const CLASS_SINUSOID: usize = 2;

pub fn sample_plan(rng: &mut impl Rng, dof: usize, config: &PlanConfig) -> Result<SequencePlan> {
    let k = config.regimes;
    if k == 0 || config.min_segment == 0 || config.frames < k * config.min_segment {
        return Err(Error::InvalidArgument("plan needs frames >= regimes x min_segment"));
    }
    let reach = config.offset_range * libm::sqrt(dof as f64);
    if config.min_step + 2.0 * config.amplitude_range * libm::sqrt(dof as f64) >= 2.0 * reach {
        return Err(Error::InvalidArgument("offset range too narrow for the requested step"));
    }
    // segment lengths: min_segment each plus a random share of the slack
    let slack = config.frames - k * config.min_segment;
    let mut cuts: Vec<usize> = (0..k - 1).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut lengths = Vec::with_capacity(k);
    let mut prev = 0;
    for &c in cuts.iter().chain(core::iter::once(&slack)) {
        lengths.push(config.min_segment + c - prev);
        prev = c;
    }

    let mut regimes: Vec<Regime> = Vec::with_capacity(k);
    let mut prev_offset: Option<Vec<f64>> = None;
    let mut prev_class = usize::MAX;
    for len in lengths {
        let regime = loop {
            let class = loop {
                let c = rng.random_range(0..3);
                if c != prev_class {
                    break c;
                }
            };
            let offset: Vec<f64> = if class == CLASS_FREE {
                vec![0.0; dof]
            } else {
                (0..dof)
                    .map(|_| rng.random_range(-config.offset_range..=config.offset_range))
                    .collect()
            };
            let amplitude: Vec<f64> = (0..dof).map(|_| rng.random_range(0.0..=config.amplitude_range)).collect();
            if let Some(p) = &prev_offset {
                let jump = libm::sqrt(p.iter().zip(&offset).map(|(a, b)| (a - b) * (a - b)).sum());
                // the previous regime may end anywhere on its swing
                let prev_swing = match &regimes.last().map(|r| &r.law) {
                    Some(TorqueLaw::Sinusoid { amplitude, .. }) => libm::sqrt(amplitude.iter().map(|a| a * a).sum()),
                    _ => 0.0,
                };
                if jump - prev_swing < config.min_step {
                    continue;
                }
            }
            let law = match class {
                CLASS_FREE => TorqueLaw::Free,
                CLASS_CONSTANT => TorqueLaw::Constant(offset.clone()),
                _ => TorqueLaw::Sinusoid {
                    offset: offset.clone(),
                    amplitude,
                    frequency: rng.random_range(config.frequency_range.0..=config.frequency_range.1),
                },
            };
            prev_offset = Some(offset);
            prev_class = class;
            break Regime { frames: len, law, class };
        };
        regimes.push(regime);
    }
    let initial_q = (0..dof)
        .map(|_| rng.random_range(-config.initial_angle..=config.initial_angle))
        .collect();
    Ok(SequencePlan {
        initial_q,
        initial_qd: vec![0.0; dof],
        regimes,
    })
}

/// `count` plans, plan `i` drawn from `sequence_rng(seed, i)`.
pub fn sample_plans(dof: usize, config: &PlanConfig, count: usize, seed: u64) -> Result<Vec<SequencePlan>> {
    (0..count)
        .map(|i| sample_plan(&mut sequence_rng(seed, i as u64), dof, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::quadratic_form;
    use core::f64::consts::FRAC_PI_2;

    fn two_link() -> LinkChain {
        LinkChain::new(vec![1.0, 0.7], vec![0.9, 0.6], STANDARD_GRAVITY, vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn single_pendulum() {
        let c = LinkChain::uniform(1, 1.0, 1.0).unwrap();
        let t = analytic_terms(&c, &[0.4], &[1.3]);
        assert_eq!(t.inertia, vec![1.0]);
        assert_eq!(t.coriolis, vec![0.0]);
        assert!((t.gravity[0] - 9.81 * libm::sin(0.4)).abs() < 1e-15);
        assert_eq!(gravity_torque(&c, &[0.0]), vec![0.0]);
        let tau = inverse_dynamics(&c, &[FRAC_PI_2], &[0.0], &[0.0]);
        assert!((tau[0] - 9.81).abs() < 1e-12);
    }

    #[test]
    fn double_pendulum_inertia_by_hand() {
        let c = two_link();
        let q = [0.3, -0.5];
        let m = inertia(&c, &q);
        let (m1, m2, l1, l2) = (1.0, 0.7, 0.9, 0.6);
        assert!((m[0] - (m1 + m2) * l1 * l1).abs() < 1e-14);
        assert!((m[1] - m2 * l1 * l2 * libm::cos(0.8)).abs() < 1e-14);
        assert_eq!(m[1], m[2]);
        assert!((m[3] - m2 * l2 * l2).abs() < 1e-14);
        let g = gravity_torque(&c, &q);
        assert!((g[0] - (m1 + m2) * 9.81 * l1 * libm::sin(0.3)).abs() < 1e-14);
        assert!((g[1] - m2 * 9.81 * l2 * libm::sin(-0.5)).abs() < 1e-14);
    }

    #[test]
    fn gravity_is_potential_gradient() {
        let c = LinkChain::new(vec![1.0, 0.5, 0.8], vec![0.7, 0.4, 0.9], 9.81, vec![0.0; 3]).unwrap();
        let q = [0.2, -1.1, 0.6];
        let g = gravity_torque(&c, &q);
        for k in 0..3 {
            let mut a = q;
            let mut b = q;
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let fd = (potential_energy(&c, &a) - potential_energy(&c, &b)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn kinetic_energy_matches_cartesian_velocities() {
        let c = LinkChain::new(vec![1.0, 0.5, 0.8], vec![0.7, 0.4, 0.9], 9.81, vec![0.0; 3]).unwrap();
        let (q, qd) = ([0.2, -1.1, 0.6], [0.5, 1.5, -0.8]);
        let (mut vx, mut vy, mut e) = (0.0, 0.0, 0.0);
        for k in 0..3 {
            vx += c.lengths()[k] * libm::cos(q[k]) * qd[k];
            vy += c.lengths()[k] * libm::sin(q[k]) * qd[k];
            e += 0.5 * c.masses()[k] * (vx * vx + vy * vy);
        }
        assert!((kinetic_energy(&c, &q, &qd) - e).abs() < 1e-13);
    }

    #[test]
    fn derivative_modes_agree_and_passivity_holds() {
        let c = LinkChain::new(vec![1.0, 0.5, 0.8], vec![0.7, 0.4, 0.9], 9.81, vec![0.0; 3]).unwrap();
        let q = [0.2, -1.1, 0.6];
        let a = inertia_derivatives(&c, &q, DerivativeMode::ClosedForm);
        let b = inertia_derivatives(&c, &q, DerivativeMode::CentralDifference);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
        let two = two_link();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let q: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let qd: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let cm = coriolis(&two, &q, &qd, DerivativeMode::Auto);
            let md = inertia_rate(&two, &q, &qd, DerivativeMode::Auto);
            let k: Vec<f64> = md.iter().zip(&cm).map(|(a, b)| a - 2.0 * b).collect();
            for _ in 0..5 {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
                assert!(quadratic_form(&k, &x).abs() < 1e-6);
            }
            assert!(cholesky(&inertia(&two, &q), 2).is_some());
        }
    }

    #[test]
    fn inverse_recovers_forward() {
        let c = two_link().with_friction(vec![0.2, 0.1]).unwrap();
        let (q, qd, tau) = ([0.4, -0.9], [1.1, -0.3], [2.0, -1.5]);
        let qdd = forward_dynamics(&c, &q, &qd, &tau).unwrap();
        let back = inverse_dynamics(&c, &q, &qd, &qdd);
        for (a, b) in back.iter().zip(&tau) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(inverse_dynamics(&c, &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn equilibrium_stays_put() {
        let c = two_link();
        let t = simulate_trajectory(
            &c,
            &[0.0, 0.0],
            &[0.0, 0.0],
            |_, _| vec![0.0, 0.0],
            &SimulationConfig::new(1e-2, 100),
        )
        .unwrap();
        assert!(t.q.iter().chain(&t.qd).all(|&x| x == 0.0));
    }

    #[test]
    fn blowup_is_reported() {
        let c = LinkChain::uniform(1, 1.0, 1.0).unwrap();
        let cfg = SimulationConfig {
            bound: 5.0,
            ..SimulationConfig::new(1e-2, 1000)
        };
        let r = simulate_trajectory(&c, &[0.0], &[0.0], |_, _| vec![100.0], &cfg);
        assert!(matches!(r, Err(Error::NumericalBlowup { .. })));
    }

    #[test]
    fn fourth_order_convergence() {
        let c = two_link();
        let end = |dt: f64| {
            let steps = libm::round(1.0 / dt) as usize + 1;
            let t = simulate_trajectory(
                &c,
                &[0.8, -0.4],
                &[0.0, 0.0],
                |_, _| vec![0.0, 0.0],
                &SimulationConfig::new(dt, steps),
            )
            .unwrap();
            t.row(&t.q, steps - 1).to_vec()
        };
        let reference = end(0.02 / 8.0);
        let err = |v: Vec<f64>| libm::sqrt(v.iter().zip(&reference).map(|(a, b)| (a - b) * (a - b)).sum());
        let ratio = err(end(0.02)) / err(end(0.01));
        assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn regime_boundaries_and_determinism() {
        let c = two_link();
        let plan = SequencePlan {
            initial_q: vec![0.1, 0.0],
            initial_qd: vec![0.0, 0.0],
            regimes: vec![
                Regime {
                    frames: 100,
                    law: TorqueLaw::Constant(vec![1.0, 0.5]),
                    class: CLASS_CONSTANT,
                },
                Regime {
                    frames: 100,
                    law: TorqueLaw::Free,
                    class: CLASS_FREE,
                },
            ],
        };
        let noise = NoiseConfig {
            drive_std: 0.05,
            observation_std: 1e-4,
        };
        let cfg = SimulationConfig::new(1e-2, 0);
        let a = generate_labeled_dataset(&c, &[plan.clone(), plan.clone()], &noise, &cfg, 7).unwrap();
        let b = generate_labeled_dataset(&c, &[plan.clone(), plan.clone()], &noise, &cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].q, a[1].q);
        assert_eq!(a[0].boundaries, vec![100]);
        assert_eq!(a[0].labels[99], CLASS_CONSTANT);
        assert_eq!(a[0].labels[100], CLASS_FREE);

        let single = SequencePlan {
            regimes: plan.regimes[..1].to_vec(),
            ..plan
        };
        let s = generate_sequence(&c, &single, &NoiseConfig::default(), &cfg, &mut sequence_rng(0, 0)).unwrap();
        assert!(s.boundaries.is_empty());
        assert_eq!(s.frames(), 100);
    }

    #[test]
    fn sampled_plans_respect_steps() {
        let cfg = PlanConfig::default();
        for plan in sample_plans(2, &cfg, 50, 3).unwrap() {
            assert_eq!(plan.regimes.iter().map(|r| r.frames).sum::<usize>(), cfg.frames);
            assert!(plan.regimes.iter().all(|r| r.frames >= cfg.min_segment));
            for w in plan.regimes.windows(2) {
                assert_ne!(w[0].class, w[1].class);
                let end = match &w[0].law {
                    TorqueLaw::Sinusoid {
                        offset,
                        amplitude,
                        frequency,
                    } => (0..200)
                        .map(|i| {
                            let s = libm::sin(2.0 * core::f64::consts::PI * frequency * i as f64 * 0.01);
                            offset.iter().zip(amplitude).map(|(o, a)| o + a * s).collect::<Vec<_>>()
                        })
                        .collect::<Vec<_>>(),
                    law => vec![law.evaluate(2, 0.0)],
                };
                let start = w[1].law.evaluate(2, 0.0);
                for e in end {
                    let jump = libm::sqrt(e.iter().zip(&start).map(|(a, b)| (a - b) * (a - b)).sum());
                    assert!(jump >= cfg.min_step - 1e-12);
                }
            }
        }
    }
    #[test]
    fn frame_terms_reproduce_recorded_torque() {
        let c = two_link().with_friction(vec![0.2, 0.1]).unwrap();
        let dt = 0.01;
        let traj = simulate_trajectory(
            &c,
            &[0.4, -0.3],
            &[0.0, 0.5],
            |_, t| vec![libm::sin(t), 0.5],
            &SimulationConfig::new(dt, 50),
        )
        .unwrap();
        let state = GeneralizedState {
            frames: traj.frames,
            dof: 2,
            q: traj.q.clone(),
            qd: traj.qd.iter().map(|v| v * dt).collect(),
            qdd: traj.qdd.iter().map(|a| a * dt * dt).collect(),
        };
        let terms = frame_terms(&c, &state, &traj.tau, dt).unwrap();
        for t in 0..traj.frames {
            let (mut mq, mut cq) = ([0.0; 2], [0.0; 2]);
            matvec(terms.inertia_at(t), state.qdd_at(t), &mut mq);
            matvec(terms.coriolis_at(t), state.qd_at(t), &mut cq);
            for i in 0..2 {
                let tau = mq[i] + cq[i] + terms.gravity[t * 2 + i] + terms.friction[t * 2 + i];
                assert!((tau - traj.tau[t * 2 + i]).abs() < 1e-9, "frame {t}");
            }
            let qd = state.qd_at(t);
            let mut sq = [0.0; 2];
            matvec(&terms.skew[t * 4..t * 4 + 4], qd, &mut sq);
            assert!((sq[0] * qd[0] + sq[1] * qd[1]).abs() < 1e-9);
        }
    }
}
