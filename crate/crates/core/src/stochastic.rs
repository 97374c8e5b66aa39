//! Stochastic propagation: invariant diffusions on the group, their Itô form,
//! the induced SDE in algebra coordinates and the error SDE.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::algebra::{DiffusionSide, GroupModel};
use crate::deterministic::{error_linear_part, Abort, ErrorSide, GeodesicInterpolant, Trajectory};
use crate::error::{LieError, Result};
use crate::systems::{linearize_at_identity, stage_times, time_grid, Classification, VectorField};

/// Constant-strength invariant diffusion `X s_k^ o dW_k` (left) or
/// `s_k^ X o dW_k` (right).
#[derive(Debug, Clone)]
pub struct NoiseModel {
    side: DiffusionSide,
    /// `d x m`, column `k` is `s_k`.
    strengths: DMatrix<f64>,
    /// `sum_k (s_k^)^2`.
    pinning: DMatrix<f64>,
}

impl NoiseModel {
    pub fn new(model: &GroupModel, side: DiffusionSide, strengths: DMatrix<f64>) -> Result<Self> {
        if strengths.nrows() != model.d() {
            return Err(LieError::Dimension {
                expected: model.d(),
                got: strengths.nrows(),
            });
        }
        if strengths.iter().any(|v| !v.is_finite()) {
            return Err(LieError::InvalidArgument("noise strengths must be finite".into()));
        }
        let pinning = pinning_of(model, &strengths);
        Ok(NoiseModel {
            side,
            strengths,
            pinning,
        })
    }

    /// `s_k = sigma e_k`, `k = 1..d`.
    pub fn isotropic(model: &GroupModel, side: DiffusionSide, sigma: f64) -> Result<Self> {
        Self::new(model, side, DMatrix::identity(model.d(), model.d()) * sigma)
    }

    pub fn side(&self) -> DiffusionSide {
        self.side
    }

    pub fn strengths(&self) -> &DMatrix<f64> {
        &self.strengths
    }

    pub fn channels(&self) -> usize {
        self.strengths.ncols()
    }

    pub fn pinning(&self) -> &DMatrix<f64> {
        &self.pinning
    }

    /// `sum_k s_k s_k^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.strengths * self.strengths.transpose()
    }

    /// Difference between the cached and a freshly computed pinning term.
    pub fn pinning_drift_residual(&self, model: &GroupModel) -> f64 {
        (pinning_of(model, &self.strengths) - &self.pinning).norm()
    }
}

fn pinning_of(model: &GroupModel, s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = model.n();
    let mut p = DMatrix::zeros(n, n);
    for col in s.column_iter() {
        let h = model.hat_unchecked(&col.into_owned());
        p += &h * &h;
    }
    p
}

/// Brownian increments for one path, reproducible from `(seed, path_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub seed: u64,
    pub path_index: u64,
    pub dt: f64,
    /// `steps x channels`, each entry `N(0, dt)`.
    pub increments: DMatrix<f64>,
}

impl BrownianPath {
    /// Draws increments from a ChaCha8 stream selected by `path_index`, so
    /// paths are independent of the order in which they are generated.
    pub fn generate(seed: u64, path_index: u64, dt: f64, steps: usize, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        let sq = dt.sqrt();
        let mut increments = DMatrix::zeros(steps, channels);
        for k in 0..steps {
            for c in 0..channels {
                let z: f64 = rng.sample(StandardNormal);
                increments[(k, c)] = sq * z;
            }
        }
        BrownianPath {
            seed,
            path_index,
            dt,
            increments,
        }
    }

    pub fn steps(&self) -> usize {
        self.increments.nrows()
    }

    pub fn channels(&self) -> usize {
        self.increments.ncols()
    }

    pub fn increment(&self, k: usize) -> DVector<f64> {
        self.increments.row(k).transpose()
    }

    /// Sums consecutive blocks of `factor` increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(LieError::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps()
            )));
        }
        let steps = self.steps() / factor;
        let mut increments = DMatrix::zeros(steps, self.channels());
        for k in 0..steps {
            for j in 0..factor {
                let row = self.increments.row(k * factor + j);
                let mut target = increments.row_mut(k);
                target += row;
            }
        }
        Ok(BrownianPath {
            seed: self.seed,
            path_index: self.path_index,
            dt: self.dt * factor as f64,
            increments,
        })
    }
}

/// Itô drift of a Stratonovich invariant diffusion: `f(X) + 1/2 X P` (left)
/// or `f(X) + 1/2 P X` (right), `P = sum (s_k^)^2`.
pub fn strat_to_ito(f: &VectorField, noise: &NoiseModel) -> VectorField {
    let half = noise.pinning() * 0.5;
    let side = noise.side();
    let g = f.clone();
    VectorField::custom(
        f.model().clone(),
        move |t, x| {
            let base = g.eval(t, x);
            match side {
                DiffusionSide::Left => base + x * &half,
                DiffusionSide::Right => base + &half * x,
            }
        },
        Classification::Unknown,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SdeScheme {
    /// Exponential Euler-Maruyama driven by the Itô drift.
    EmIto,
    /// Stochastic Heun (predictor-corrector) on the Stratonovich drift.
    HeunStrat,
}

impl SdeScheme {
    pub fn name(self) -> &'static str {
        match self {
            SdeScheme::EmIto => "em_ito",
            SdeScheme::HeunStrat => "heun_strat",
        }
    }
}

/// Trivialised velocity on the diffusion side: body for left, spatial for right.
fn velocity(
    f: &VectorField,
    side: DiffusionSide,
    t: f64,
    x: &DMatrix<f64>,
    correction: Option<&DMatrix<f64>>,
) -> Result<DVector<f64>> {
    let model = f.model();
    let x_inv = model.inverse(x)?;
    let fx = f.eval(t, x);
    let m = match side {
        DiffusionSide::Left => &x_inv * fx,
        DiffusionSide::Right => fx * &x_inv,
    };
    match correction {
        Some(c) => model.vee(&(m - c)),
        None => model.vee(&m),
    }
}

fn apply(model: &GroupModel, side: DiffusionSide, x: &DMatrix<f64>, omega: &DVector<f64>) -> DMatrix<f64> {
    let e = model.exp_unchecked(omega);
    match side {
        DiffusionSide::Left => x * e,
        DiffusionSide::Right => e * x,
    }
}

/// Stepper for the group SDE `dX = f(X) dt + (invariant noise) o dW`.
pub struct GroupSdeStepper {
    strat: VectorField,
    ito: VectorField,
    half_pinning: DMatrix<f64>,
    noise: NoiseModel,
    scheme: SdeScheme,
}

impl GroupSdeStepper {
    pub fn new(f: &VectorField, noise: &NoiseModel, scheme: SdeScheme) -> Result<Self> {
        if noise.strengths().nrows() != f.model().d() {
            return Err(LieError::Dimension {
                expected: f.model().d(),
                got: noise.strengths().nrows(),
            });
        }
        Ok(GroupSdeStepper {
            strat: f.clone(),
            ito: strat_to_ito(f, noise),
            half_pinning: noise.pinning() * 0.5,
            noise: noise.clone(),
            scheme,
        })
    }

    /// One step from `t0` to `t1` with Brownian increment `dw`.
    ///
    /// `EmIto`: `X <- X exp(a dt + S dW)` with `a = vee(X^-1 F(X) - P/2)` for
    /// the Itô drift `F`; the exponential regenerates the pinning term, so it
    /// is removed from the deterministic part. Right diffusions are mirrored.
    pub fn step(&self, t0: f64, t1: f64, x: &DMatrix<f64>, dw: &DVector<f64>) -> Result<DMatrix<f64>> {
        let model = self.strat.model();
        let side = self.noise.side();
        let h = t1 - t0;
        let (ta, _, tb) = stage_times(t0, t1);
        let kick = self.noise.strengths() * dw;
        let next = match self.scheme {
            SdeScheme::EmIto => {
                let a = velocity(&self.ito, side, ta, x, Some(&self.half_pinning))?;
                apply(model, side, x, &(a * h + kick))
            }
            SdeScheme::HeunStrat => {
                let a0 = velocity(&self.strat, side, ta, x, None)?;
                let pred = apply(model, side, x, &(&a0 * h + &kick));
                let a1 = velocity(&self.strat, side, tb, &pred, None)?;
                apply(model, side, x, &((a0 + a1) * (0.5 * h) + kick))
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(LieError::NonFinite { t: t1 });
        }
        Ok(next)
    }

    /// Final state only.
    pub fn endpoint(&self, x0: &DMatrix<f64>, t0: f64, path: &BrownianPath) -> Result<DMatrix<f64>> {
        let mut x = x0.clone();
        for k in 0..path.steps() {
            let ta = t0 + k as f64 * path.dt;
            x = self.step(ta, ta + path.dt, &x, &path.increment(k))?;
        }
        Ok(x)
    }
}

/// Integrates the group SDE along `path` (horizon `steps * dt`).
pub fn integrate_group_sde(
    f: &VectorField,
    noise: &NoiseModel,
    x0: &DMatrix<f64>,
    t0: f64,
    path: &BrownianPath,
    scheme: SdeScheme,
) -> Result<Trajectory> {
    let model = f.model().clone();
    model.check_element(x0)?;
    if path.channels() != noise.channels() {
        return Err(LieError::Dimension {
            expected: noise.channels(),
            got: path.channels(),
        });
    }
    let stepper = GroupSdeStepper::new(f, noise, scheme)?;
    let times = time_grid(t0, path.steps() as f64 * path.dt, path.dt)?;
    let mut states = Vec::with_capacity(times.len());
    states.push(x0.clone());
    for k in 0..path.steps() {
        let next = stepper.step(times[k], times[k + 1], states.last().unwrap(), &path.increment(k))?;
        states.push(next);
    }
    Ok(Trajectory {
        model,
        times,
        states,
        integrator: scheme.name(),
        dt: path.dt,
    })
}

/// Drift and diffusion of an Itô SDE in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeCoefficients {
    pub drift: DVector<f64>,
    /// `d x m`, column `k` multiplies `dW_k`.
    pub diffusion: DMatrix<f64>,
}

/// Itô coefficients of `x = log X` for `dX = g(X) dt + (invariant noise) o dW`
/// with `g` linear (`A` its linearisation at the identity):
///
/// - left: `J = dexp_m(-x)`, right: `J = dexp_m(x)`;
/// - `gamma_k = J^-1 s_k`;
/// - drift `A x - 1/2 J^-1 sum_k C(x, gamma_k)`.
pub fn algebra_sde_coefficients(
    model: &GroupModel,
    a: &DMatrix<f64>,
    side: DiffusionSide,
    strengths: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<SdeCoefficients> {
    let j_inv = match side {
        DiffusionSide::Left => model.dexp_inv(&(-x))?,
        DiffusionSide::Right => model.dexp_inv(x)?,
    };
    let diffusion = &j_inv * strengths;
    let c = model.c_correction_sum(x, &diffusion, side);
    let drift = a * x - (j_inv * c) * 0.5;
    Ok(SdeCoefficients { drift, diffusion })
}

/// An Itô SDE in algebra coordinates.
pub trait AlgebraSde: Sync {
    fn model(&self) -> &GroupModel;
    fn coefficients(&self, t: f64, x: &DVector<f64>) -> Result<SdeCoefficients>;
}

/// SDE of `log X_t` for a linear field driven by invariant noise.
#[derive(Debug, Clone)]
pub struct LogStateSde {
    field: VectorField,
    noise: NoiseModel,
}

impl LogStateSde {
    pub fn new(field: &VectorField, noise: &NoiseModel) -> Result<Self> {
        let class = field.classify(0.0);
        if class != Classification::Linear {
            return Err(LieError::Classification(format!(
                "the log-state SDE needs a linear field, found {class:?}"
            )));
        }
        Ok(LogStateSde {
            field: field.clone(),
            noise: noise.clone(),
        })
    }
}

impl AlgebraSde for LogStateSde {
    fn model(&self) -> &GroupModel {
        self.field.model()
    }

    fn coefficients(&self, t: f64, x: &DVector<f64>) -> Result<SdeCoefficients> {
        let a = linearize_at_identity(&self.field, t);
        algebra_sde_coefficients(self.model(), &a, self.noise.side(), self.noise.strengths(), x)
    }
}

/// SDE of `xi = log eta` for the invariant error between a noisy trajectory
/// of an affine field and its noise-free estimate.
///
/// The error inherits an invariant diffusion whose strengths are the state
/// noise transported by the estimate:
///
/// | noise | error | error noise | columns            |
/// |-------|-------|-------------|--------------------|
/// | left  | left  | left        | `S`                |
/// | left  | right | left        | `Ad(Xhat) S`       |
/// | right | left  | right       | `Ad(Xhat^-1) S`    |
/// | right | right | right       | `S`                |
#[derive(Debug, Clone)]
pub struct ErrorSde {
    linear: VectorField,
    noise: NoiseModel,
    side: ErrorSide,
    xhat: Arc<GeodesicInterpolant>,
}

impl ErrorSde {
    pub fn new(
        f: &VectorField,
        noise: &NoiseModel,
        side: ErrorSide,
        xhat: Arc<GeodesicInterpolant>,
    ) -> Result<Self> {
        Ok(ErrorSde {
            linear: error_linear_part(f, side)?,
            noise: noise.clone(),
            side,
            xhat,
        })
    }

    pub fn a(&self, t: f64) -> DMatrix<f64> {
        linearize_at_identity(&self.linear, t)
    }

    /// Diffusion side and strengths of the error at time `t`.
    pub fn effective_noise(&self, t: f64) -> Result<(DiffusionSide, DMatrix<f64>)> {
        let model = self.linear.model();
        let s = self.noise.strengths();
        Ok(match (self.noise.side(), self.side) {
            (DiffusionSide::Left, ErrorSide::Left) => (DiffusionSide::Left, s.clone()),
            (DiffusionSide::Right, ErrorSide::Right) => (DiffusionSide::Right, s.clone()),
            (DiffusionSide::Left, ErrorSide::Right) => {
                (DiffusionSide::Left, model.adjoint(&self.xhat.eval(t))? * s)
            }
            (DiffusionSide::Right, ErrorSide::Left) => {
                let inv = model.inverse(&self.xhat.eval(t))?;
                (DiffusionSide::Right, model.adjoint(&inv)? * s)
            }
        })
    }
}

impl AlgebraSde for ErrorSde {
    fn model(&self) -> &GroupModel {
        self.linear.model()
    }

    fn coefficients(&self, t: f64, x: &DVector<f64>) -> Result<SdeCoefficients> {
        let (side, s) = self.effective_noise(t)?;
        algebra_sde_coefficients(self.model(), &self.a(t), side, &s, x)
    }
}

/// Linear-Gaussian approximation `d xi = A_t xi dt + S_t dW`.
#[derive(Debug, Clone)]
pub struct FirstOrderErrorSde {
    exact: ErrorSde,
}

impl FirstOrderErrorSde {
    pub fn new(exact: ErrorSde) -> Self {
        FirstOrderErrorSde { exact }
    }

    /// `P(t0 + horizon)` from `P' = A P + P A^T + S S^T`, RK4.
    pub fn covariance(&self, p0: &DMatrix<f64>, t0: f64, horizon: f64, dt: f64) -> Result<DMatrix<f64>> {
        let q = |t: f64| -> Result<DMatrix<f64>> {
            let (_, s) = self.exact.effective_noise(t)?;
            Ok(&s * s.transpose())
        };
        lyapunov_covariance(|t| self.exact.a(t), q, p0, t0, horizon, dt)
    }

    /// `xi_bar(t0 + horizon)` for the linear mean dynamics, RK4.
    pub fn mean(&self, xi0: &DVector<f64>, t0: f64, horizon: f64, dt: f64) -> Result<DVector<f64>> {
        let grid = time_grid(t0, horizon, dt)?;
        let mut m = xi0.clone();
        for w in grid.windows(2) {
            let h = w[1] - w[0];
            let (ta, tm, tb) = stage_times(w[0], w[1]);
            let am = self.exact.a(tm);
            let k1 = self.exact.a(ta) * &m;
            let k2 = &am * (&m + &k1 * (0.5 * h));
            let k3 = &am * (&m + &k2 * (0.5 * h));
            let k4 = self.exact.a(tb) * (&m + &k3 * h);
            m += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        }
        Ok(m)
    }
}

impl AlgebraSde for FirstOrderErrorSde {
    fn model(&self) -> &GroupModel {
        self.exact.model()
    }

    fn coefficients(&self, t: f64, x: &DVector<f64>) -> Result<SdeCoefficients> {
        let (_, s) = self.exact.effective_noise(t)?;
        Ok(SdeCoefficients {
            drift: self.exact.a(t) * x,
            diffusion: s,
        })
    }
}

/// RK4 integration of `P' = A P + P A^T + Q`.
pub fn lyapunov_covariance(
    a: impl Fn(f64) -> DMatrix<f64>,
    q: impl Fn(f64) -> Result<DMatrix<f64>>,
    p0: &DMatrix<f64>,
    t0: f64,
    horizon: f64,
    dt: f64,
) -> Result<DMatrix<f64>> {
    let rhs = |t: f64, p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let at = a(t);
        Ok(&at * p + p * at.transpose() + q(t)?)
    };
    let mut p = p0.clone();
    for w in time_grid(t0, horizon, dt)?.windows(2) {
        let h = w[1] - w[0];
        let (ta, tm, tb) = stage_times(w[0], w[1]);
        let k1 = rhs(ta, &p)?;
        let k2 = rhs(tm, &(&p + &k1 * (0.5 * h)))?;
        let k3 = rhs(tm, &(&p + &k2 * (0.5 * h)))?;
        let k4 = rhs(tb, &(&p + &k3 * h))?;
        p += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
    }
    Ok(p)
}

/// Euler-Maruyama path in algebra coordinates.
#[derive(Debug, Clone)]
pub struct AlgebraPath {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub abort: Option<Abort>,
}

impl AlgebraPath {
    pub fn last(&self) -> &DVector<f64> {
        self.states.last().expect("path has at least one state")
    }
}

fn em_step(sde: &dyn AlgebraSde, t0: f64, t1: f64, x: &DVector<f64>, dw: &DVector<f64>) -> Result<DVector<f64>> {
    let (ta, _, _) = stage_times(t0, t1);
    let c = sde.coefficients(ta, x)?;
    let next = x + c.drift * (t1 - t0) + c.diffusion * dw;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(LieError::NonFinite { t: t1 });
    }
    Ok(next)
}

/// Euler-Maruyama along `path`. A singular chart or a non-finite state stops
/// the path; the report carries the last valid time.
pub fn integrate_algebra_sde(
    sde: &dyn AlgebraSde,
    x0: &DVector<f64>,
    t0: f64,
    path: &BrownianPath,
) -> Result<AlgebraPath> {
    sde.model().check_dim(x0)?;
    let times = time_grid(t0, path.steps() as f64 * path.dt, path.dt)?;
    let mut states = vec![x0.clone()];
    let mut abort = None;
    for k in 0..path.steps() {
        match em_step(sde, times[k], times[k + 1], states.last().unwrap(), &path.increment(k)) {
            Ok(next) => states.push(next),
            Err(reason) => {
                abort = Some(Abort {
                    time: times[k],
                    reason,
                });
                break;
            }
        }
    }
    let n = states.len();
    Ok(AlgebraPath {
        times: times[..n].to_vec(),
        states,
        abort,
    })
}

/// Final state of [`integrate_algebra_sde`], or the abort that stopped it.
pub fn algebra_sde_endpoint(
    sde: &dyn AlgebraSde,
    x0: &DVector<f64>,
    t0: f64,
    path: &BrownianPath,
) -> std::result::Result<DVector<f64>, Abort> {
    let mut x = x0.clone();
    for k in 0..path.steps() {
        let ta = t0 + k as f64 * path.dt;
        x = em_step(sde, ta, ta + path.dt, &x, &path.increment(k)).map_err(|reason| Abort {
            time: ta,
            reason,
        })?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deterministic::{integrate_group_ode, Integrator};
    use crate::systems::Signal;

    fn so3() -> Arc<GroupModel> {
        Arc::new(GroupModel::so3())
    }

    #[test]
    fn pinning_for_unit_strengths_on_so3() {
        let m = so3();
        let noise = NoiseModel::isotropic(&m, DiffusionSide::Left, 1.0).unwrap();
        assert!((noise.pinning() + DMatrix::identity(3, 3) * 2.0).norm() < 1e-14);
        assert!(noise.pinning_drift_residual(&m) < 1e-14);
        assert_eq!(noise.covariance(), DMatrix::identity(3, 3));

        let f = VectorField::zero(m.clone());
        let ito = strat_to_ito(&f, &noise);
        let x = m.exp(&DVector::from_vec(vec![0.3, -0.2, 0.9])).unwrap();
        assert!((ito.eval(0.0, &x) + &x).norm() < 1e-14);
    }

    #[test]
    fn ito_sides_differ_by_placement() {
        let m = Arc::new(GroupModel::se_n3(1));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-0.3..0.3));
        let left = NoiseModel::new(&m, DiffusionSide::Left, s.clone()).unwrap();
        let right = NoiseModel::new(&m, DiffusionSide::Right, s).unwrap();
        let f = VectorField::commutator(m.clone(), Signal::Constant(m.random_vector(&mut rng, 1.0)));
        let x = m.random_element(&mut rng, 1.0);
        let p = left.pinning();
        let l = strat_to_ito(&f, &left).eval(0.0, &x) - f.eval(0.0, &x);
        let r = strat_to_ito(&f, &right).eval(0.0, &x) - f.eval(0.0, &x);
        assert!((l - &x * p * 0.5).norm() < 1e-14);
        assert!((r - p * &x * 0.5).norm() < 1e-14);

        let zero = NoiseModel::new(&m, DiffusionSide::Left, DMatrix::zeros(6, 6)).unwrap();
        assert_eq!(strat_to_ito(&f, &zero).eval(0.0, &x), f.eval(0.0, &x));
    }

    #[test]
    fn brownian_paths_are_reproducible_and_independent() {
        let a = BrownianPath::generate(42, 3, 1e-3, 100, 4);
        let b = BrownianPath::generate(42, 3, 1e-3, 100, 4);
        let c = BrownianPath::generate(42, 4, 1e-3, 100, 4);
        assert_eq!(a, b);
        assert_ne!(a.increments, c.increments);
        let coarse = a.coarsen(4).unwrap();
        assert_eq!(coarse.steps(), 25);
        assert!((coarse.dt - 4e-3).abs() < 1e-18);
        let sum: f64 = (0..4).map(|k| a.increments[(k, 2)]).sum();
        assert!((coarse.increments[(0, 2)] - sum).abs() < 1e-15);
        assert!(a.coarsen(3).is_err());

        let long = BrownianPath::generate(7, 0, 0.5, 40_000, 2);
        let cov = long.increments.transpose() * &long.increments / (40_000.0 * 0.5);
        assert!((cov - DMatrix::identity(2, 2)).amax() < 0.03);
    }

    #[test]
    fn zero_noise_matches_ode() {
        let m = Arc::new(GroupModel::se_n3(1));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = VectorField::right_invariant(m.clone(), Signal::Constant(m.random_vector(&mut rng, 1.0)));
        let x0 = m.random_element(&mut rng, 1.0);
        let noise = NoiseModel::isotropic(&m, DiffusionSide::Left, 0.0).unwrap();
        let path = BrownianPath::generate(0, 0, 1e-3, 1000, 6);
        let ode = integrate_group_ode(&f, &x0, 0.0, 1.0, 1e-3, Integrator::LieEuler).unwrap();
        for scheme in [SdeScheme::EmIto, SdeScheme::HeunStrat] {
            let sde = integrate_group_sde(&f, &noise, &x0, 0.0, &path, scheme).unwrap();
            let tol = if scheme == SdeScheme::EmIto { 1e-12 } else { 1e-5 };
            assert!((sde.last() - ode.last()).norm() < tol, "{scheme:?}");
        }
    }

    #[test]
    fn sde_paths_stay_on_group_and_repeat() {
        let m = Arc::new(GroupModel::se_n3(2));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = VectorField::commutator(m.clone(), Signal::Constant(m.random_vector(&mut rng, 1.0)));
        let x0 = m.random_element(&mut rng, 1.0);
        for side in [DiffusionSide::Left, DiffusionSide::Right] {
            let noise = NoiseModel::isotropic(&m, side, 0.3).unwrap();
            let path = BrownianPath::generate(9, 1, 1e-3, 2000, 9);
            for scheme in [SdeScheme::EmIto, SdeScheme::HeunStrat] {
                let a = integrate_group_sde(&f, &noise, &x0, 0.0, &path, scheme).unwrap();
                let b = integrate_group_sde(&f, &noise, &x0, 0.0, &path, scheme).unwrap();
                assert_eq!(a.states, b.states);
                assert!(a.max_membership_residual() < 1e-9);
            }
        }
    }

    #[test]
    fn algebra_coefficients_at_origin_and_without_noise() {
        let m = Arc::new(GroupModel::se_n3(2));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = m.random_vector(&mut rng, 1.0);
        let a = m.adm(&u);
        let s = DMatrix::from_fn(9, 9, |_, _| rng.random_range(-0.2..0.2));
        for side in [DiffusionSide::Left, DiffusionSide::Right] {
            let c = algebra_sde_coefficients(&m, &a, side, &s, &DVector::zeros(9)).unwrap();
            assert_eq!(c.drift, DVector::zeros(9));
            assert_eq!(c.diffusion, s);
            let x = m.random_vector(&mut rng, 0.3);
            let c = algebra_sde_coefficients(&m, &a, side, &DMatrix::zeros(9, 9), &x).unwrap();
            assert!((c.drift - &a * &x).norm() < 1e-15);
        }
        let so3 = so3();
        let x = DVector::from_vec(vec![2.0 * std::f64::consts::PI, 0.0, 0.0]);
        let r = algebra_sde_coefficients(&so3, &DMatrix::zeros(3, 3), DiffusionSide::Left, &DMatrix::identity(3, 3), &x);
        assert!(matches!(r, Err(LieError::Singular { .. })));
    }

    #[test]
    fn generic_and_closed_form_coefficients_agree() {
        let closed = GroupModel::se_n3(1);
        let generic = closed.clone().with_closed_forms(crate::algebra::ClosedForms::NONE);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = closed.adm(&closed.random_vector(&mut rng, 1.0));
        let s = DMatrix::identity(6, 6) * 0.1;
        for side in [DiffusionSide::Left, DiffusionSide::Right] {
            let x = closed.random_vector(&mut rng, 0.8);
            let c1 = algebra_sde_coefficients(&closed, &a, side, &s, &x).unwrap();
            let c2 = algebra_sde_coefficients(&generic, &a, side, &s, &x).unwrap();
            assert!((c1.drift - c2.drift).norm() < 1e-12);
            assert!((c1.diffusion - c2.diffusion).norm() < 1e-12);
        }
    }

    fn estimate(m: &Arc<GroupModel>, f: &VectorField, xhat0: DMatrix<f64>) -> Arc<GeodesicInterpolant> {
        let traj = integrate_group_ode(f, &xhat0, 0.0, 1.0, 1e-2, Integrator::Rkmk4).unwrap();
        let _ = m;
        Arc::new(GeodesicInterpolant::new(&traj).unwrap())
    }

    #[test]
    fn error_sde_identity_estimate_and_covariance() {
        let m = Arc::new(GroupModel::se_n3(1));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = VectorField::left_invariant(m.clone(), Signal::Constant(DVector::zeros(6)));
        let xh = estimate(&m, &f, DMatrix::identity(4, 4));
        let noise = NoiseModel::isotropic(&m, DiffusionSide::Left, 0.1).unwrap();
        let left = ErrorSde::new(&f, &noise, ErrorSide::Left, xh.clone()).unwrap();
        let right = ErrorSde::new(&f, &noise, ErrorSide::Right, xh).unwrap();
        let x = m.random_vector(&mut rng, 0.2);
        assert_eq!(left.coefficients(0.5, &x).unwrap(), right.coefficients(0.5, &x).unwrap());
        let c = left.coefficients(0.0, &DVector::zeros(6)).unwrap();
        assert_eq!(c.drift, DVector::zeros(6));
        assert_eq!(&c.diffusion, noise.strengths());

        let unit = NoiseModel::isotropic(&m, DiffusionSide::Left, 1.0).unwrap();
        let xh = estimate(&m, &f, DMatrix::identity(4, 4));
        let first = FirstOrderErrorSde::new(ErrorSde::new(&f, &unit, ErrorSide::Left, xh).unwrap());
        let p = first.covariance(&DMatrix::zeros(6, 6), 0.0, 0.7, 1e-2).unwrap();
        assert!((p - DMatrix::identity(6, 6) * 0.7).norm() < 1e-12);
    }

    #[test]
    fn right_error_columns_transform_covariantly() {
        let m = Arc::new(GroupModel::se_n3(1));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = Signal::Constant(m.random_vector(&mut rng, 1.0));
        let f = VectorField::left_invariant(m.clone(), u);
        let xhat0 = m.random_element(&mut rng, 1.0);
        let l = m.random_element(&mut rng, 1.0);
        let noise = NoiseModel::isotropic(&m, DiffusionSide::Left, 0.1).unwrap();
        let a = ErrorSde::new(&f, &noise, ErrorSide::Right, estimate(&m, &f, xhat0.clone())).unwrap();
        let b = ErrorSde::new(&f, &noise, ErrorSide::Right, estimate(&m, &f, &l * &xhat0)).unwrap();
        let (_, sa) = a.effective_noise(0.4).unwrap();
        let (_, sb) = b.effective_noise(0.4).unwrap();
        assert!((m.adjoint(&l).unwrap() * sa - sb).norm() < 1e-12);
    }

    #[test]
    fn first_order_mean_follows_transition_map() {
        let m = Arc::new(GroupModel::se_n3(1));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = m.random_vector(&mut rng, 1.0);
        let f = VectorField::commutator(m.clone(), Signal::Constant(u.clone()));
        let noise = NoiseModel::isotropic(&m, DiffusionSide::Left, 0.1).unwrap();
        let sde = ErrorSde::new(&f, &noise, ErrorSide::Left, estimate(&m, &f, DMatrix::identity(4, 4))).unwrap();
        let first = FirstOrderErrorSde::new(sde);
        let xi0 = m.random_vector(&mut rng, 0.1);
        let mean = first.mean(&xi0, 0.0, 1.0, 1e-3).unwrap();
        let phi = crate::expm::expm(&m.adm(&u));
        assert!((mean - phi * xi0).norm() < 1e-12);
    }

    #[test]
    fn zero_noise_algebra_path_is_zero() {
        let m = Arc::new(GroupModel::se_n3(1));
        let f = VectorField::commutator(m.clone(), Signal::Constant(DVector::from_element(6, 0.3)));
        let noise = NoiseModel::isotropic(&m, DiffusionSide::Left, 0.0).unwrap();
        let sde = LogStateSde::new(&f, &noise).unwrap();
        let path = BrownianPath::generate(1, 0, 1e-2, 100, 6);
        let out = integrate_algebra_sde(&sde, &DVector::zeros(6), 0.0, &path).unwrap();
        assert!(out.abort.is_none());
        assert!(out.states.iter().all(|x| x.norm() == 0.0));
        assert_eq!(algebra_sde_endpoint(&sde, &DVector::zeros(6), 0.0, &path).unwrap(), DVector::zeros(6));
        let left = VectorField::left_invariant(m.clone(), Signal::Constant(DVector::zeros(6)));
        assert!(matches!(LogStateSde::new(&left, &noise), Err(LieError::Classification(_))));
    }

    #[test]
    fn singular_start_aborts_immediately() {
        let m = so3();
        let f = VectorField::zero(m.clone());
        let noise = NoiseModel::isotropic(&m, DiffusionSide::Left, 0.05).unwrap();
        let sde = LogStateSde::new(&f, &noise).unwrap();
        let path = BrownianPath::generate(1, 0, 1e-2, 10, 3);
        let x0 = DVector::from_vec(vec![0.0, 2.0 * std::f64::consts::PI, 0.0]);
        let out = integrate_algebra_sde(&sde, &x0, 0.0, &path).unwrap();
        let abort = out.abort.unwrap();
        assert_eq!(abort.time, 0.0);
        assert!(matches!(abort.reason, LieError::Singular { .. }));
    }
}
