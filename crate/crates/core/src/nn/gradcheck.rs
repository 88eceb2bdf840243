use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::{GradientBuffer, ParamId, ParamSet};
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Number of sampled coordinates; every coordinate is checked when the
    /// parameter count is smaller.
    pub samples: usize,
    pub seed: u64,
    /// Denominator floor of the relative error, so coordinates with a
    /// vanishing gradient are compared absolutely.
    pub floor: f64,
    /// Coordinates whose central differences at `step` and `step / 2`
    /// disagree by more than this relative amount straddle a kink of a
    /// rectifier; they are skipped and replaced. Zero disables the guard.
    pub kink_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            samples: 256,
            seed: 0,
            floor: 1e-6,
            kink_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates rejected by the kink guard.
    pub skipped: usize,
    /// Coordinate with the largest error: parameter, flat element index,
    /// reverse-mode value, finite-difference value.
    pub worst: Option<(ParamId, usize, f64, f64)>,
}

/// Compares the reverse-mode gradient of `objective` with central
/// differences over a seeded sample of coordinates.
pub fn gradcheck<P: ParamSet>(
    params: &mut P,
    mut objective: impl FnMut(&P, &mut Tape) -> Result<Var>,
    config: GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let loss = objective(params, &mut tape)?;
    let mut grads = GradientBuffer::new();
    tape.backward(loss, &mut grads)?;
    drop(tape);

    let sizes: Vec<(ParamId, usize)> = params.params().iter().map(|p| (p.id, p.value.len())).collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // spare candidates replace coordinates rejected by the kink guard
    let wanted = config.samples.saturating_mul(2).min(total);
    let picks: Vec<usize> = if total <= config.samples {
        (0..total).collect()
    } else {
        sample(&mut rng, total, wanted).into_vec()
    };

    let mut eval = |params: &P| -> Result<f64> {
        let mut tape = Tape::new();
        let v = objective(params, &mut tape)?;
        tape.scalar(v)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    for flat in picks {
        if report.checked == config.samples {
            break;
        }
        let (mut slot, mut elem) = (0, flat);
        while elem >= sizes[slot].1 {
            elem -= sizes[slot].1;
            slot += 1;
        }
        let id = sizes[slot].0;
        let original = params.params()[slot].value.as_slice()[elem];
        let mut central = |h: f64| -> Result<f64> {
            params.params_mut()[slot].value.as_mut_slice()[elem] = original + h;
            let plus = eval(params);
            params.params_mut()[slot].value.as_mut_slice()[elem] = original - h;
            let minus = eval(params);
            params.params_mut()[slot].value.as_mut_slice()[elem] = original;
            Ok((plus? - minus?) / (2.0 * h))
        };
        let numeric = central(config.step)?;
        if config.kink_tolerance > 0.0 {
            let half = central(0.5 * config.step)?;
            let scale = numeric.abs().max(half.abs()).max(config.floor);
            if (numeric - half).abs() / scale > config.kink_tolerance {
                report.skipped += 1;
                continue;
            }
        }
        let analytic = grads.get(id).map_or(0.0, |g| g.as_slice()[elem]);
        let denom = analytic.abs().max(numeric.abs()).max(config.floor);
        let rel = (analytic - numeric).abs() / denom;
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((id, elem, analytic, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, Matrix, Param};
    use alloc::vec;

    struct One(Param);
    impl ParamSet for One {
        fn params(&self) -> Vec<&Param> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn quadratic() {
        let mut p = One(Param::new(ParamId(0), "w", Matrix::row_vector(vec![0.3, -1.7, 2.2, 0.01])));
        let r = gradcheck(
            &mut p,
            |p, tape| {
                let v = tape.param(&p.0);
                tape.sum_squares(v)
            },
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_error < 1e-7, "{r:?}");
        assert_eq!(p.0.value.as_slice(), &[0.3, -1.7, 2.2, 0.01]);
    }

    struct Layer(DenseLayer);
    impl ParamSet for Layer {
        fn params(&self) -> Vec<&Param> {
            vec![&self.0.weight, &self.0.bias]
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            vec![&mut self.0.weight, &mut self.0.bias]
        }
    }

    #[test]
    fn softplus_of_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut id = 0;
        let mut layer = Layer(DenseLayer::glorot(&mut rng, 4, 3, Activation::Softplus, "sp", &mut id));
        layer.0.bias.value = Matrix::row_vector(vec![0.2, -0.4, 1.1]);
        let x = Matrix::from_fn(6, 4, |i, j| libm::cos((i * 4 + j) as f64));
        let r = gradcheck(
            &mut layer,
            |l, tape| {
                let xv = tape.input(x.clone());
                let y = l.0.forward(tape, xv)?;
                tape.sum_squares(y)
            },
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(r.checked, 15);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
    #[test]
    fn kinks_inside_the_stencil_are_skipped() {
        // relu(w) summed squared: w[0] sits 3e-5 from the kink, w[1] far away
        let mut p = One(Param::new(ParamId(0), "w", Matrix::row_vector(vec![3e-5, 0.8])));
        let objective = |p: &One, tape: &mut Tape| {
            let v = tape.param(&p.0);
            let y = tape.activate(v, Activation::Relu)?;
            let z = tape.scale(y, 1e3)?;
            tape.sum_squares(z)
        };
        let cfg = GradCheckConfig {
            step: 1e-4,
            ..GradCheckConfig::default()
        };
        let r = gradcheck(&mut p, objective, cfg).unwrap();
        assert_eq!((r.checked, r.skipped), (1, 1));
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        let unguarded = gradcheck(
            &mut p,
            objective,
            GradCheckConfig {
                kink_tolerance: 0.0,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!((unguarded.checked, unguarded.skipped), (2, 0));
        assert!(unguarded.max_rel_error > 0.1);
    }
}
