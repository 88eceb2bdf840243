//! Structured synthesis of the Lagrangian terms and the generalized force.
//!
//! The inertia matrix is assembled as `M = L Lᵀ` from a packed
//! lower-triangular factor whose diagonal passes through softplus and is
//! floored by `ε`, so it is symmetric positive definite for every input. The
//! Coriolis matrix is `C = ½(Ṁ - N)` with `N` explicitly skew-symmetric, so
//! `Ṁ - 2C = N` and `q̇ᵀ(Ṁ - 2C)q̇ = 0` holds by construction.
//!
//! Packing orders: the lower factor is row-major over `i ≥ j`
//! (`(0,0), (1,0), (1,1), (2,0), ...`); the strictly upper part of `N` is
//! row-major over `i < j` (`(0,1), (0,2), ..., (1,2), ...`).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::kinematics::GeneralizedState;
use crate::linalg::matvec;
use crate::nn::{softplus, Matrix, ParameterBundle};

/// Diagonal floor of the inertia factor.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Fills the row-major `dim x dim` factor `l` from packed entries.
pub fn unpack_lower(raw: &[f64], dim: usize, eps: f64, l: &mut [f64]) {
    l.iter_mut().for_each(|x| *x = 0.0);
    let mut p = 0;
    for i in 0..dim {
        for j in 0..=i {
            l[i * dim + j] = if i == j { softplus(raw[p]) + eps } else { raw[p] };
            p += 1;
        }
    }
}

/// `m = l lᵀ` for a lower-triangular `l`; the lower triangle is computed and
/// mirrored so the result is exactly symmetric.
pub fn lower_times_transpose(l: &[f64], dim: usize, m: &mut [f64]) {
    for i in 0..dim {
        for j in 0..=i {
            let s: f64 = (0..=j).map(|k| l[i * dim + k] * l[j * dim + k]).sum();
            m[i * dim + j] = s;
            m[j * dim + i] = s;
        }
    }
}

/// `n = n_up - n_upᵀ` from packed strictly-upper entries.
pub fn unpack_skew(raw: &[f64], dim: usize, n: &mut [f64]) {
    n.iter_mut().for_each(|x| *x = 0.0);
    let mut p = 0;
    for i in 0..dim {
        for j in i + 1..dim {
            n[i * dim + j] = raw[p];
            n[j * dim + i] = -raw[p];
            p += 1;
        }
    }
}

/// Per-frame lower-triangular inertia factors with their diagonal floor.
#[derive(Debug, Clone, PartialEq)]
pub struct InertiaFactor {
    pub frames: usize,
    pub dim: usize,
    pub eps: f64,
    /// `T x D x D`, row-major.
    pub factor: Vec<f64>,
}

impl InertiaFactor {
    pub fn at(&self, t: usize) -> &[f64] {
        let s = self.dim * self.dim;
        &self.factor[t * s..(t + 1) * s]
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.frames)
            .flat_map(|t| (0..self.dim).map(move |i| (t, i)))
            .map(|(t, i)| self.at(t)[i * self.dim + i])
            .fold(f64::INFINITY, f64::min)
    }
}

/// One frame: packed `D(D+1)/2` entries to `(L, M)`.
pub fn build_inertia(raw: &[f64], dim: usize, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("packed inertia entries", dim * (dim + 1) / 2, raw.len())?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("inertia floor must be positive"));
    }
    let mut l = vec![0.0; dim * dim];
    let mut m = vec![0.0; dim * dim];
    unpack_lower(raw, dim, eps, &mut l);
    lower_times_transpose(&l, dim, &mut m);
    Ok((l, m))
}

/// Coriolis construction for a whole sequence.
///
/// `m_seq` is `T x D x D`, `raw_n` is `T x D(D-1)/2`. Returns `(Ṁ, N, C)`,
/// each `T x D x D`, with `Ṁ(0) = 0`.
pub fn build_coriolis(m_seq: &[f64], raw_n: &[f64], frames: usize, dim: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if frames == 0 {
        return Err(Error::DegenerateLength { len: 0, min: 1 });
    }
    let sq = dim * dim;
    let packed = dim * dim.saturating_sub(1) / 2;
    check_len("inertia sequence", frames * sq, m_seq.len())?;
    check_len("packed skew sequence", frames * packed, raw_n.len())?;
    let mut m_dot = vec![0.0; frames * sq];
    let mut n = vec![0.0; frames * sq];
    let mut c = vec![0.0; frames * sq];
    for t in 0..frames {
        if t > 0 {
            for k in 0..sq {
                m_dot[t * sq + k] = m_seq[t * sq + k] - m_seq[(t - 1) * sq + k];
            }
        }
        unpack_skew(&raw_n[t * packed..(t + 1) * packed], dim, &mut n[t * sq..(t + 1) * sq]);
        for k in 0..sq {
            c[t * sq + k] = 0.5 * (m_dot[t * sq + k] - n[t * sq + k]);
        }
    }
    Ok((m_dot, n, c))
}

/// Per-frame `M, Ṁ, N, C` (`T x D x D`) and `G, F, τ` (`T x D`).
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicTerms {
    pub frames: usize,
    pub dof: usize,
    pub inertia: Vec<f64>,
    pub inertia_rate: Vec<f64>,
    pub skew: Vec<f64>,
    pub coriolis: Vec<f64>,
    pub gravity: Vec<f64>,
    pub friction: Vec<f64>,
    /// Empty until [`synthesize_tau`] fills it.
    pub tau: Vec<f64>,
    pub factor: InertiaFactor,
}

impl DynamicTerms {
    fn mat(v: &[f64], dof: usize, t: usize) -> &[f64] {
        &v[t * dof * dof..(t + 1) * dof * dof]
    }

    pub fn inertia_at(&self, t: usize) -> &[f64] {
        Self::mat(&self.inertia, self.dof, t)
    }

    pub fn inertia_rate_at(&self, t: usize) -> &[f64] {
        Self::mat(&self.inertia_rate, self.dof, t)
    }

    pub fn coriolis_at(&self, t: usize) -> &[f64] {
        Self::mat(&self.coriolis, self.dof, t)
    }

    pub fn skew_at(&self, t: usize) -> &[f64] {
        Self::mat(&self.skew, self.dof, t)
    }

    pub fn gravity_at(&self, t: usize) -> &[f64] {
        &self.gravity[t * self.dof..(t + 1) * self.dof]
    }

    pub fn friction_at(&self, t: usize) -> &[f64] {
        &self.friction[t * self.dof..(t + 1) * self.dof]
    }

    pub fn tau_at(&self, t: usize) -> &[f64] {
        &self.tau[t * self.dof..(t + 1) * self.dof]
    }
}

/// Row-major `T x (2D)` concatenation of `q` and `q̇`.
pub fn concat_state(state: &GeneralizedState) -> Matrix {
    let d = state.dof;
    Matrix::from_fn(state.frames, 2 * d, |t, j| {
        if j < d {
            state.q[t * d + j]
        } else {
            state.qd[t * d + j - d]
        }
    })
}

/// Applies the four estimators to every frame and assembles `M, Ṁ, N, C, G, F`.
pub fn estimate_dynamic_terms(bundle: &ParameterBundle, state: &GeneralizedState, eps: f64) -> Result<DynamicTerms> {
    let d = bundle.dof();
    check_len("state degrees of freedom", d, state.dof)?;
    let (frames, sq) = (state.frames, d * d);
    let q = Matrix::from_vec(frames, d, state.q.clone())?;
    let qqd = concat_state(state);
    let raw_l = bundle.inertia.apply_batch(&q)?;
    let raw_n = bundle.coriolis.apply_batch(&qqd)?;
    let gravity = bundle.gravity.apply_batch(&q)?.into_vec();
    let friction = bundle.friction.apply_batch(&qqd)?.into_vec();

    let mut factor = vec![0.0; frames * sq];
    let mut inertia = vec![0.0; frames * sq];
    for t in 0..frames {
        let (l, m) = build_inertia(raw_l.row(t), d, eps)?;
        factor[t * sq..(t + 1) * sq].copy_from_slice(&l);
        inertia[t * sq..(t + 1) * sq].copy_from_slice(&m);
    }
    let (inertia_rate, skew, coriolis) = build_coriolis(&inertia, raw_n.as_slice(), frames, d)?;
    Ok(DynamicTerms {
        frames,
        dof: d,
        inertia,
        inertia_rate,
        skew,
        coriolis,
        gravity,
        friction,
        tau: Vec::new(),
        factor: InertiaFactor {
            frames,
            dim: d,
            eps,
            factor,
        },
    })
}

/// `τ(t) = M(t)q̈(t) + C(t)q̇(t) + G(t) + F(t)`; also stored in `terms.tau`.
pub fn synthesize_tau(terms: &mut DynamicTerms, state: &GeneralizedState) -> Result<Vec<f64>> {
    check_len("state frames", terms.frames, state.frames)?;
    check_len("state degrees of freedom", terms.dof, state.dof)?;
    let d = terms.dof;
    let mut tau = vec![0.0; terms.frames * d];
    let mut mq = vec![0.0; d];
    let mut cq = vec![0.0; d];
    for t in 0..terms.frames {
        matvec(terms.inertia_at(t), state.qdd_at(t), &mut mq);
        matvec(terms.coriolis_at(t), state.qd_at(t), &mut cq);
        let (g, f) = (terms.gravity_at(t), terms.friction_at(t));
        for i in 0..d {
            tau[t * d + i] = mq[i] + cq[i] + g[i] + f[i];
        }
    }
    terms.tau = tau.clone();
    Ok(tau)
}
