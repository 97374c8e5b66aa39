//! Deterministic propagation: group ODE integrators, invariant errors and the
//! error ODE in algebra coordinates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::algebra::GroupModel;
use crate::error::{LieError, Result};
use crate::systems::{
    affine_to_linear, affine_to_linear_left, linearize_at_identity, stage_times, time_grid,
    Classification, FieldKind, Signal, VectorField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Integrator {
    /// `X <- X exp(dt a(X))`
    LieEuler,
    /// Fourth-order Runge-Kutta-Munthe-Kaas.
    Rkmk4,
}

impl Integrator {
    pub fn name(self) -> &'static str {
        match self {
            Integrator::LieEuler => "lie_euler",
            Integrator::Rkmk4 => "rkmk4",
        }
    }
}

/// Left-invariant (`Xhat^-1 X`) or right-invariant (`X Xhat^-1`) error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorSide {
    Left,
    Right,
}

/// Where a disturbance enters: `X w^` (`Body`) or `w^ X` (`World`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DisturbanceSide {
    #[default]
    Body,
    World,
}

#[derive(Debug, Clone)]
pub struct Disturbance {
    pub signal: Signal,
    pub side: DisturbanceSide,
}

impl Disturbance {
    pub fn none(d: usize) -> Self {
        Disturbance {
            signal: Signal::zero(d),
            side: DisturbanceSide::Body,
        }
    }

    pub fn body(signal: Signal) -> Self {
        Disturbance {
            signal,
            side: DisturbanceSide::Body,
        }
    }

    pub fn world(signal: Signal) -> Self {
        Disturbance {
            signal,
            side: DisturbanceSide::World,
        }
    }
}

/// Group trajectory on a time grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub model: Arc<GroupModel>,
    pub times: Vec<f64>,
    pub states: Vec<DMatrix<f64>>,
    pub integrator: &'static str,
    pub dt: f64,
}

impl Trajectory {
    pub fn last(&self) -> &DMatrix<f64> {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Largest membership residual along the trajectory (0 for models
    /// without a membership test).
    pub fn max_membership_residual(&self) -> f64 {
        self.states
            .iter()
            .filter_map(|x| self.model.membership_residual(x))
            .fold(0.0, f64::max)
    }
}

/// Continuous-time view of a trajectory: `X(t) = X_k exp(s log(X_k^-1 X_{k+1}))`.
#[derive(Debug, Clone)]
pub struct GeodesicInterpolant {
    model: Arc<GroupModel>,
    times: Vec<f64>,
    states: Vec<DMatrix<f64>>,
    increments: Vec<DVector<f64>>,
}

impl GeodesicInterpolant {
    pub fn new(traj: &Trajectory) -> Result<Self> {
        let model = traj.model.clone();
        let mut increments = Vec::with_capacity(traj.states.len().saturating_sub(1));
        for w in traj.states.windows(2) {
            increments.push(model.log(&(model.inverse(&w[0])? * &w[1]))?);
        }
        Ok(GeodesicInterpolant {
            model,
            times: traj.times.clone(),
            states: traj.states.clone(),
            increments,
        })
    }

    pub fn model(&self) -> &Arc<GroupModel> {
        &self.model
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// `X(t)`; clamps outside the grid.
    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        if self.increments.is_empty() || t <= self.times[0] {
            return self.states[0].clone();
        }
        let k = self.times.partition_point(|&tk| tk <= t).saturating_sub(1);
        if k >= self.increments.len() {
            return self.states.last().unwrap().clone();
        }
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        if s == 0.0 {
            return self.states[k].clone();
        }
        &self.states[k] * self.model.exp_unchecked(&(&self.increments[k] * s))
    }
}

/// `Xhat^-1 X` (left) or `X Xhat^-1` (right).
pub fn invariant_error(
    model: &GroupModel,
    x: &DMatrix<f64>,
    xhat: &DMatrix<f64>,
    side: ErrorSide,
) -> Result<DMatrix<f64>> {
    let xhat_inv = model.inverse(xhat)?;
    Ok(match side {
        ErrorSide::Left => xhat_inv * x,
        ErrorSide::Right => x * xhat_inv,
    })
}

/// True state with initial error `xi0` relative to `xhat0`.
pub fn perturb(
    model: &GroupModel,
    xhat0: &DMatrix<f64>,
    xi0: &DVector<f64>,
    side: ErrorSide,
) -> Result<DMatrix<f64>> {
    let e = model.exp(xi0)?;
    Ok(match side {
        ErrorSide::Left => xhat0 * e,
        ErrorSide::Right => e * xhat0,
    })
}

/// `f` plus the disturbance term (`X w^` or `w^ X`).
pub fn disturbed_field(f: &VectorField, w: &Disturbance) -> VectorField {
    let extra = match w.side {
        DisturbanceSide::Body => FieldKind::LeftInvariant(w.signal.clone()),
        DisturbanceSide::World => FieldKind::RightInvariant(w.signal.clone()),
    };
    VectorField::new(f.model().clone(), FieldKind::Sum(vec![f.kind().clone(), extra]))
}

/// Linear part driving the invariant error of an affine field:
/// `f(X) - f(I) X` for the left error, `f(X) - X f(I)` for the right one.
pub fn error_linear_part(f: &VectorField, side: ErrorSide) -> Result<VectorField> {
    match side {
        ErrorSide::Left => affine_to_linear_left(f),
        ErrorSide::Right => affine_to_linear(f),
    }
}

/// Disturbance as seen by the error, together with the side it acts on:
/// `(a, true)` means `eta a^`, `(a, false)` means `a^ eta`.
fn error_disturbance(
    model: &GroupModel,
    w: &Disturbance,
    side: ErrorSide,
    t: f64,
    xhat: &GeodesicInterpolant,
) -> Result<(DVector<f64>, bool)> {
    let wt = w.signal.eval(t);
    Ok(match (w.side, side) {
        (DisturbanceSide::Body, ErrorSide::Left) => (wt, true),
        (DisturbanceSide::World, ErrorSide::Right) => (wt, false),
        (DisturbanceSide::Body, ErrorSide::Right) => (model.adjoint(&xhat.eval(t))? * wt, true),
        (DisturbanceSide::World, ErrorSide::Left) => {
            (model.adjoint(&model.inverse(&xhat.eval(t))?)? * wt, false)
        }
    })
}

/// Group-level error dynamics `eta' = g(eta) + eta a^` (or `a^ eta`), where
/// `g` is [`error_linear_part`] of `f` and `a` the transported disturbance.
pub fn error_field(
    f: &VectorField,
    side: ErrorSide,
    w: &Disturbance,
    xhat: Arc<GeodesicInterpolant>,
) -> Result<VectorField> {
    let g = error_linear_part(f, side)?;
    let model = f.model().clone();
    let w = w.clone();
    let m = model.clone();
    Ok(VectorField::custom(
        model,
        move |t, eta| {
            let mut out = g.eval(t, eta);
            let (a, right_mult) = error_disturbance(&m, &w, side, t, &xhat)
                .unwrap_or_else(|_| (DVector::from_element(m.d(), f64::NAN), true));
            let ah = m.hat_unchecked(&a);
            out += if right_mult { eta * ah } else { ah * eta };
            out
        },
        Classification::Unknown,
    ))
}

fn check_x0(model: &GroupModel, x0: &DMatrix<f64>) -> Result<()> {
    if x0.nrows() != model.n() {
        return Err(LieError::Dimension {
            expected: model.n(),
            got: x0.nrows(),
        });
    }
    model.check_element(x0)
}

/// `a + 1/2 [omega, a] + 1/12 [omega, [omega, a]]`, the truncated inverse of
/// `dexp_m(-omega)` used by RKMK4.
fn dexpinv_trunc(model: &GroupModel, omega: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
    let ad = model.adm(omega);
    let b = &ad * a;
    let c = &ad * &b;
    a + b * 0.5 + c / 12.0
}

fn body(f: &VectorField, t: f64, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let model = f.model();
    f.body_velocity(t, x, &model.inverse(x)?)
}

/// One step of `integrator` from `(t0, x)` to `t1`.
pub fn group_ode_step(
    f: &VectorField,
    integrator: Integrator,
    t0: f64,
    t1: f64,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let model = f.model();
    let h = t1 - t0;
    let (ta, tm, tb) = stage_times(t0, t1);
    let omega = match integrator {
        Integrator::LieEuler => body(f, ta, x)? * h,
        Integrator::Rkmk4 => {
            let k1 = body(f, ta, x)? * h;
            let o2 = &k1 * 0.5;
            let k2 = dexpinv_trunc(model, &o2, &body(f, tm, &(x * model.exp_unchecked(&o2)))?) * h;
            let o3 = &k2 * 0.5;
            let k3 = dexpinv_trunc(model, &o3, &body(f, tm, &(x * model.exp_unchecked(&o3)))?) * h;
            let k4 = dexpinv_trunc(model, &k3, &body(f, tb, &(x * model.exp_unchecked(&k3)))?) * h;
            (k1 + (k2 + k3) * 2.0 + k4) / 6.0
        }
    };
    let next = x * model.exp_unchecked(&omega);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(LieError::NonFinite { t: t1 });
    }
    Ok(next)
}

/// Integrates `X' = f_t(X)` on `[t0, t0 + horizon]` with step `dt`.
pub fn integrate_group_ode(
    f: &VectorField,
    x0: &DMatrix<f64>,
    t0: f64,
    horizon: f64,
    dt: f64,
    integrator: Integrator,
) -> Result<Trajectory> {
    let model = f.model().clone();
    check_x0(&model, x0)?;
    let times = time_grid(t0, horizon, dt)?;
    let mut states = Vec::with_capacity(times.len());
    states.push(x0.clone());
    for w in times.windows(2) {
        let next = group_ode_step(f, integrator, w[0], w[1], states.last().unwrap())?;
        states.push(next);
    }
    Ok(Trajectory {
        model,
        times,
        states,
        integrator: integrator.name(),
        dt,
    })
}

/// Why a propagation stopped early.
#[derive(Debug, Clone)]
pub struct Abort {
    /// Last time at which the state was valid.
    pub time: f64,
    pub reason: LieError,
}

/// Error trajectory in algebra coordinates.
#[derive(Debug, Clone)]
pub struct ErrorTrajectory {
    pub times: Vec<f64>,
    pub xi: Vec<DVector<f64>>,
    pub side: ErrorSide,
    pub abort: Option<Abort>,
}

impl ErrorTrajectory {
    /// `eta_k = exp(xi_k)`.
    pub fn eta(&self, model: &GroupModel) -> Result<Vec<DMatrix<f64>>> {
        self.xi.iter().map(|x| model.exp(x)).collect()
    }
}

/// Right-hand side of the algebra error ODE:
/// `xi' = A_t xi + dexp_m(-xi)^-1 a` for `eta a^` disturbances and
/// `xi' = A_t xi + dexp_m(xi)^-1 a` for `a^ eta` ones.
pub struct ErrorOde<'a> {
    model: Arc<GroupModel>,
    linear: VectorField,
    side: ErrorSide,
    w: &'a Disturbance,
    xhat: &'a GeodesicInterpolant,
}

impl<'a> ErrorOde<'a> {
    pub fn new(
        f: &VectorField,
        side: ErrorSide,
        w: &'a Disturbance,
        xhat: &'a GeodesicInterpolant,
    ) -> Result<Self> {
        Ok(ErrorOde {
            model: f.model().clone(),
            linear: error_linear_part(f, side)?,
            side,
            w,
            xhat,
        })
    }

    pub fn a(&self, t: f64) -> DMatrix<f64> {
        linearize_at_identity(&self.linear, t)
    }

    pub fn rhs(&self, t: f64, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, right_mult) = error_disturbance(&self.model, self.w, self.side, t, self.xhat)?;
        let mut out = self.a(t) * xi;
        if a.iter().any(|v| *v != 0.0) {
            let jinv = if right_mult {
                self.model.dexp_inv(&(-xi))?
            } else {
                self.model.dexp_inv(xi)?
            };
            out += jinv * a;
        } else {
            // the disturbance vanishes but the chart must still be regular
            crate::algebra::invert_checked(&self.model.dexp(&(-xi)))?;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(LieError::NonFinite { t });
        }
        Ok(out)
    }
}

/// RK4 integration of the algebra error ODE on the grid of `xhat` span with
/// step `dt`. Stops at the first singular chart and records the last valid time.
pub fn integrate_error_ode_algebra(
    f: &VectorField,
    side: ErrorSide,
    w: &Disturbance,
    xhat: &GeodesicInterpolant,
    xi0: &DVector<f64>,
    dt: f64,
) -> Result<ErrorTrajectory> {
    let model = f.model();
    model.check_dim(xi0)?;
    let ode = ErrorOde::new(f, side, w, xhat)?;
    let grid = time_grid(xhat.t_start(), xhat.t_end() - xhat.t_start(), dt)?;
    let mut times = vec![grid[0]];
    let mut xi = vec![xi0.clone()];
    let mut abort = None;
    for win in grid.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        match rk4_step(&ode, t0, t1, xi.last().unwrap()) {
            Ok(next) => {
                times.push(t1);
                xi.push(next);
            }
            Err(reason) => {
                abort = Some(Abort { time: t0, reason });
                break;
            }
        }
    }
    Ok(ErrorTrajectory {
        times,
        xi,
        side,
        abort,
    })
}

fn rk4_step(ode: &ErrorOde<'_>, t0: f64, t1: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
    let h = t1 - t0;
    let (ta, tm, tb) = stage_times(t0, t1);
    let k1 = ode.rhs(ta, x)?;
    let k2 = ode.rhs(tm, &(x + &k1 * (0.5 * h)))?;
    let k3 = ode.rhs(tm, &(x + &k2 * (0.5 * h)))?;
    let k4 = ode.rhs(tb, &(x + &k3 * h))?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0))
}

/// Both routes of the error propagation on a common grid.
#[derive(Debug, Clone)]
pub struct TwoRouteReport {
    pub times: Vec<f64>,
    /// Algebra route.
    pub xi: Vec<DVector<f64>>,
    /// `log` of the error built from group integrations.
    pub xi_log: Vec<DVector<f64>>,
    pub discrepancy: Vec<f64>,
    pub abort: Option<Abort>,
}

impl TwoRouteReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.discrepancy.iter().cloned().fold(0.0, f64::max)
    }
}

/// Problem data for [`two_route`].
#[derive(Debug, Clone)]
pub struct ErrorProblem {
    pub field: VectorField,
    pub side: ErrorSide,
    pub disturbance: Disturbance,
    pub xhat0: DMatrix<f64>,
    pub xi0: DVector<f64>,
    pub t0: f64,
    pub horizon: f64,
}

/// Integrates the estimate, the disturbed truth (both RKMK4) and the algebra
/// error ODE (RK4) with step `dt`, and compares `log(eta_t)` with `xi_t`.
pub fn two_route(p: &ErrorProblem, dt: f64) -> Result<TwoRouteReport> {
    let model = p.field.model().clone();
    let xhat = integrate_group_ode(&p.field, &p.xhat0, p.t0, p.horizon, dt, Integrator::Rkmk4)?;
    let x0 = perturb(&model, &p.xhat0, &p.xi0, p.side)?;
    let truth = disturbed_field(&p.field, &p.disturbance);
    let x = integrate_group_ode(&truth, &x0, p.t0, p.horizon, dt, Integrator::Rkmk4)?;
    let interp = GeodesicInterpolant::new(&xhat)?;
    let alg = integrate_error_ode_algebra(&p.field, p.side, &p.disturbance, &interp, &p.xi0, dt)?;

    let mut abort = alg.abort.clone();
    let mut xi_log = Vec::with_capacity(alg.xi.len());
    for k in 0..alg.xi.len() {
        let eta = invariant_error(&model, &x.states[k], &xhat.states[k], p.side)?;
        match model.log(&eta) {
            Ok(v) => xi_log.push(v),
            Err(reason) => {
                abort = Some(Abort {
                    time: if k > 0 { alg.times[k - 1] } else { alg.times[0] },
                    reason,
                });
                break;
            }
        }
    }
    let n = xi_log.len();
    let discrepancy = (0..n).map(|k| (&xi_log[k] - &alg.xi[k]).norm()).collect();
    Ok(TwoRouteReport {
        times: alg.times[..n].to_vec(),
        xi: alg.xi[..n].to_vec(),
        xi_log,
        discrepancy,
        abort,
    })
}
