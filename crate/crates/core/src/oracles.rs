//! Brute-force references for the series and closed forms: finite differences
//! of `dexp` and `adm^n`, and a Monte Carlo estimate of the algebra drift.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::algebra::{DiffusionSide, GroupModel};
use crate::error::Result;
use crate::stochastic::{BrownianPath, GroupSdeStepper, NoiseModel, SdeScheme};
use crate::systems::VectorField;

/// Step of the finite-difference oracles.
pub const FD_STEP: f64 = 1e-5;
/// Series order used as the reference `dexp`.
pub const REFERENCE_ORDER: usize = 30;

/// Comparison of a candidate value against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub quantity: String,
    pub reference: Vec<f64>,
    pub candidate: Vec<f64>,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    /// `abs_error <= tolerance`.
    pub pass: bool,
}

impl OracleReport {
    pub fn compare(quantity: impl Into<String>, reference: &[f64], candidate: &[f64], tolerance: f64) -> Self {
        assert_eq!(reference.len(), candidate.len(), "oracle comparison of unequal lengths");
        let abs_error = reference
            .iter()
            .zip(candidate)
            .map(|(r, c)| (r - c).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = reference.iter().map(|r| r * r).sum::<f64>().sqrt();
        let rel_error = if scale > 0.0 { abs_error / scale } else { abs_error };
        OracleReport {
            quantity: quantity.into(),
            reference: reference.to_vec(),
            candidate: candidate.to_vec(),
            abs_error,
            rel_error,
            tolerance,
            pass: abs_error <= tolerance,
        }
    }
}

/// Derivative of `dexp_m(-x)` (left) or `dexp_m(x)` (right) along `gamma`,
/// applied to `gamma`, by central differences of the order-30 series.
pub fn oracle_c_via_dexp_derivative(
    model: &GroupModel,
    x: &DVector<f64>,
    gamma: &DVector<f64>,
    side: DiffusionSide,
) -> DVector<f64> {
    let sign = match side {
        DiffusionSide::Left => -1.0,
        DiffusionSide::Right => 1.0,
    };
    let j = |v: DVector<f64>| model.dexp_series(&(v * sign), REFERENCE_ORDER);
    let plus = j(x + gamma * FD_STEP);
    let minus = j(x - gamma * FD_STEP);
    (plus - minus) * gamma / (2.0 * FD_STEP)
}

/// `(adm(x + h g)^n - adm(x - h g)^n) / 2h`.
pub fn oracle_dadmn_fd(model: &GroupModel, x: &DVector<f64>, g: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let plus = model.adm(&(x + g * FD_STEP)).pow(n as u32);
    let minus = model.adm(&(x - g * FD_STEP)).pow(n as u32);
    (plus - minus) / (2.0 * FD_STEP)
}

/// Empirical drift with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEstimate {
    pub mean: DVector<f64>,
    pub stderr: DVector<f64>,
    pub paths: usize,
}

impl DriftEstimate {
    /// Largest `|mean - drift| / stderr` over components.
    pub fn max_z(&self, drift: &DVector<f64>) -> f64 {
        (0..drift.len())
            .map(|i| {
                let diff = (self.mean[i] - drift[i]).abs();
                if self.stderr[i] > 0.0 {
                    diff / self.stderr[i]
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Short-time estimate of the Itô drift of `log X` at `x`:
/// `E[log X(t + dtau) - x] / dtau` with `X(t) = exp(x)`, each path simulated
/// with `substeps` group steps of the given scheme.
#[allow(clippy::too_many_arguments)]
pub fn oracle_short_time_drift(
    field: &VectorField,
    noise: &NoiseModel,
    x: &DVector<f64>,
    t: f64,
    dtau: f64,
    paths: usize,
    substeps: usize,
    seed: u64,
) -> Result<DriftEstimate> {
    let model = field.model();
    let stepper = GroupSdeStepper::new(field, noise, SdeScheme::HeunStrat)?;
    let x0 = model.exp(x)?;
    let h = dtau / substeps as f64;
    let samples: Vec<Result<DVector<f64>>> = (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = BrownianPath::generate(seed, p, h, substeps, noise.channels());
            let end = stepper.endpoint(&x0, t, &path)?;
            Ok((model.log(&end)? - x) / dtau)
        })
        .collect();
    let samples: Vec<DVector<f64>> = samples.into_iter().collect::<Result<_>>()?;
    let m = samples.len() as f64;
    let mut mean = DVector::zeros(model.d());
    for s in &samples {
        mean += s;
    }
    mean /= m;
    let mut var = DVector::zeros(model.d());
    for s in &samples {
        let c = s - &mean;
        var += c.component_mul(&c);
    }
    var /= m - 1.0;
    Ok(DriftEstimate {
        stderr: var.map(|v| (v / m).sqrt()),
        mean,
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::ClosedForms;
    use crate::sen3;
    use crate::stochastic::LogStateSde;
    use crate::stochastic::AlgebraSde;
    use crate::systems::Signal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn c_oracle_vanishes_at_origin() {
        let m = GroupModel::se_n3(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = m.random_vector(&mut rng, 1.0);
        for side in [DiffusionSide::Left, DiffusionSide::Right] {
            assert!(oracle_c_via_dexp_derivative(&m, &DVector::zeros(9), &g, side).norm() < 1e-10);
        }
    }

    #[test]
    fn c_series_and_closed_form_match_oracle() {
        let m = GroupModel::se_n3(2);
        let generic = m.clone().with_closed_forms(ClosedForms::NONE);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mut x = m.random_vector(&mut rng, 1.0);
            x *= rand::Rng::random_range(&mut rng, 0.0..0.5) / x.norm();
            let g = m.random_vector(&mut rng, 1.0);
            for side in [DiffusionSide::Left, DiffusionSide::Right] {
                let oracle = oracle_c_via_dexp_derivative(&m, &x, &g, side);
                let series = generic.c_correction_series(&x, &g, side, 30);
                let closed = sen3::c_correction(&x, &g, side);
                assert!(OracleReport::compare("series", oracle.as_slice(), series.as_slice(), 1e-6).pass);
                assert!(OracleReport::compare("closed", oracle.as_slice(), closed.as_slice(), 1e-6).pass);
            }
        }
    }

    #[test]
    fn c_oracle_side_parity() {
        // the odd-order part flips sign between the two sides, the even part does not
        let m = GroupModel::se_n3(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = m.random_vector(&mut rng, 0.3);
        let g = m.random_vector(&mut rng, 1.0);
        let l = oracle_c_via_dexp_derivative(&m, &x, &g, DiffusionSide::Left);
        let r = oracle_c_via_dexp_derivative(&m, &x, &g, DiffusionSide::Right);
        let even = (&l + &r) * 0.5;
        let odd = (&r - &l) * 0.5;
        let t2 = m.dadmn(&x, &g, 2) * &g / 6.0;
        assert!((&even - m.c_correction_series(&x, &g, DiffusionSide::Right, 30) + &odd).norm() < 1e-8);
        assert!((odd - t2).norm() > 1e-6 || even.norm() > 1e-6);
        assert!((l + r).norm() > 0.0);
    }

    #[test]
    fn dadmn_oracle_cases() {
        let m = GroupModel::se_n3(1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = m.random_vector(&mut rng, 1.0);
        let g = m.random_vector(&mut rng, 1.0);
        assert!((oracle_dadmn_fd(&m, &x, &g, 1) - m.adm(&g)).norm() < 1e-10);
        assert!((oracle_dadmn_fd(&m, &x, &g, 3) - m.dadmn(&x, &g, 3)).norm() < 1e-7);
        assert!(oracle_dadmn_fd(&m, &DVector::zeros(6), &g, 2).norm() < 1e-10);
    }

    #[test]
    fn report_pass_flag() {
        let r = OracleReport::compare("q", &[1.0, 0.0], &[1.0, 1e-7], 1e-6);
        assert!(r.pass);
        assert!((r.abs_error - 1e-7).abs() < 1e-20);
        assert!(!OracleReport::compare("q", &[1.0], &[1.1], 1e-6).pass);
    }

    #[test]
    fn short_time_drift_without_noise() {
        let m = Arc::new(GroupModel::so3());
        let u = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let f = VectorField::commutator(m.clone(), Signal::Constant(u.clone()));
        let noise = NoiseModel::isotropic(&m, DiffusionSide::Left, 0.0).unwrap();
        let x = DVector::from_vec(vec![0.2, 0.0, 0.0]);
        let est = oracle_short_time_drift(&f, &noise, &x, 0.0, 1e-3, 4, 4, 0).unwrap();
        let exact = m.adm(&u) * &x;
        assert!((est.mean - exact).norm() < 1e-3 * 0.2 * 2.0);
        let sde = LogStateSde::new(&f, &noise).unwrap();
        let c = sde.coefficients(0.0, &x).unwrap();
        assert!((c.drift - m.adm(&u) * &x).norm() < 1e-15);
    }
}
