//! Vector fields on a matrix Lie group, their linear/affine classification,
//! linearisation at the identity and state-transition maps.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algebra::GroupModel;
use crate::error::{LieError, Result};

/// Default number of random samples used by the empirical checks.
pub const DEFAULT_SAMPLES: usize = 64;
/// Standard deviation of the algebra draws used to sample group elements.
pub const SAMPLE_STD: f64 = 0.5;
/// Default relative tolerance for the linear/affine checks.
pub const CHECK_TOL: f64 = 1e-10;
/// Central-difference step used by [`linearize_fd`].
pub const FD_STEP: f64 = 1e-6;

type SignalFn = dyn Fn(f64) -> DVector<f64> + Send + Sync;
type FieldFn = dyn Fn(f64, &DMatrix<f64>) -> DMatrix<f64> + Send + Sync;

/// A time-indexed vector `t -> R^k`, used for inputs and disturbances.
#[derive(Clone)]
pub enum Signal {
    Constant(DVector<f64>),
    /// Right-continuous steps: `values[0]` before `breaks[0]`, `values[i]` on
    /// `[breaks[i-1], breaks[i])`.
    PiecewiseConstant {
        breaks: Vec<f64>,
        values: Vec<DVector<f64>>,
    },
    /// `offset + amplitude .* sin(omega t + phase)`, componentwise.
    Sinusoid {
        offset: DVector<f64>,
        amplitude: DVector<f64>,
        omega: DVector<f64>,
        phase: DVector<f64>,
    },
    Function(Arc<SignalFn>),
}

/// Control inputs are plain signals.
pub type ControlSignal = Signal;

impl Signal {
    pub fn zero(dim: usize) -> Self {
        Signal::Constant(DVector::zeros(dim))
    }

    pub fn function(f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Signal::Function(Arc::new(f))
    }

    /// Builds a step signal, validating sorted breaks and matching lengths.
    pub fn piecewise(breaks: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(LieError::InvalidArgument(format!(
                "piecewise signal needs {} values for {} breaks, got {}",
                breaks.len() + 1,
                breaks.len(),
                values.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(LieError::InvalidArgument(
                "piecewise breaks must be strictly increasing".into(),
            ));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(LieError::InvalidArgument(
                "piecewise values must share one dimension".into(),
            ));
        }
        Ok(Signal::PiecewiseConstant { breaks, values })
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        match self {
            Signal::Constant(v) => v.clone(),
            Signal::PiecewiseConstant { breaks, values } => {
                let idx = breaks.partition_point(|&b| b <= t);
                values[idx].clone()
            }
            Signal::Sinusoid {
                offset,
                amplitude,
                omega,
                phase,
            } => DVector::from_fn(offset.len(), |i, _| {
                offset[i] + amplitude[i] * (omega[i] * t + phase[i]).sin()
            }),
            Signal::Function(f) => f(t),
        }
    }

    /// Dimension of the value, evaluated at `t = 0` for closures.
    pub fn dim(&self) -> usize {
        match self {
            Signal::Constant(v) => v.len(),
            Signal::PiecewiseConstant { values, .. } => values[0].len(),
            Signal::Sinusoid { offset, .. } => offset.len(),
            Signal::Function(f) => f(0.0).len(),
        }
    }
}

impl fmt::Debug for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Signal::Constant(v) => write!(f, "Constant({:?})", v.as_slice()),
            Signal::PiecewiseConstant { breaks, values } => {
                write!(f, "PiecewiseConstant({} pieces, breaks {breaks:?})", values.len())
            }
            Signal::Sinusoid { .. } => write!(f, "Sinusoid"),
            Signal::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// How a field is built. Built-in kinds have analytic classification and
/// linearisation; `Custom` fields are handled empirically.
#[derive(Clone)]
pub enum FieldKind {
    Zero,
    /// `X u^`
    LeftInvariant(Signal),
    /// `u^ X`
    RightInvariant(Signal),
    /// `[u^, X] = u^ X - X u^`
    Commutator(Signal),
    Custom(Arc<FieldFn>),
    Sum(Vec<FieldKind>),
    /// `f(X) - X f(I)`
    RemoveRightBias(Box<FieldKind>),
    /// `f(X) - f(I) X`
    RemoveLeftBias(Box<FieldKind>),
}

impl fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::Zero => write!(f, "Zero"),
            FieldKind::LeftInvariant(u) => write!(f, "LeftInvariant({u:?})"),
            FieldKind::RightInvariant(u) => write!(f, "RightInvariant({u:?})"),
            FieldKind::Commutator(u) => write!(f, "Commutator({u:?})"),
            FieldKind::Custom(_) => write!(f, "Custom(..)"),
            FieldKind::Sum(parts) => f.debug_list().entries(parts).finish(),
            FieldKind::RemoveRightBias(k) => write!(f, "RemoveRightBias({k:?})"),
            FieldKind::RemoveLeftBias(k) => write!(f, "RemoveLeftBias({k:?})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Linear,
    Affine,
    Neither,
    Unknown,
}

impl Classification {
    /// Linear fields are affine too.
    pub fn is_affine(self) -> bool {
        matches!(self, Classification::Linear | Classification::Affine)
    }
}

/// A (possibly time-varying) vector field `X -> f_t(X)` on a group.
#[derive(Debug, Clone)]
pub struct VectorField {
    model: Arc<GroupModel>,
    kind: FieldKind,
    classification: Classification,
}

/// Outcome of an empirical structure check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub passed: bool,
    /// Largest residual divided by its sample scale.
    pub max_residual: f64,
    pub samples: usize,
    pub tol: f64,
}

impl VectorField {
    pub fn new(model: Arc<GroupModel>, kind: FieldKind) -> Self {
        let classification = analytic_classification(&kind);
        VectorField {
            model,
            kind,
            classification,
        }
    }

    pub fn zero(model: Arc<GroupModel>) -> Self {
        Self::new(model, FieldKind::Zero)
    }

    pub fn left_invariant(model: Arc<GroupModel>, u: Signal) -> Self {
        Self::new(model, FieldKind::LeftInvariant(u))
    }

    pub fn right_invariant(model: Arc<GroupModel>, u: Signal) -> Self {
        Self::new(model, FieldKind::RightInvariant(u))
    }

    pub fn commutator(model: Arc<GroupModel>, u: Signal) -> Self {
        Self::new(model, FieldKind::Commutator(u))
    }

    /// A user field; `classification` may be `Unknown`, in which case the
    /// empirical checks decide.
    pub fn custom(
        model: Arc<GroupModel>,
        f: impl Fn(f64, &DMatrix<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        classification: Classification,
    ) -> Self {
        VectorField {
            model,
            kind: FieldKind::Custom(Arc::new(f)),
            classification,
        }
    }

    pub fn model(&self) -> &Arc<GroupModel> {
        &self.model
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    /// Declared or analytic classification (may be `Unknown`).
    pub fn classification(&self) -> Classification {
        self.classification
    }

    /// `f_t(X)`.
    pub fn eval(&self, t: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
        eval_kind(&self.model, &self.kind, t, x)
    }

    /// `f_t(I)`.
    pub fn at_identity(&self, t: f64) -> DMatrix<f64> {
        let n = self.model.n();
        self.eval(t, &DMatrix::identity(n, n))
    }

    /// Left-trivialised velocity `vee(X^-1 f_t(X))`.
    pub fn body_velocity(&self, t: f64, x: &DMatrix<f64>, x_inv: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.model.vee(&(x_inv * self.eval(t, x)))
    }

    /// Right-trivialised velocity `vee(f_t(X) X^-1)`.
    pub fn spatial_velocity(&self, t: f64, x: &DMatrix<f64>, x_inv: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.model.vee(&(self.eval(t, x) * x_inv))
    }

    /// Verifies `X^-1 f(X)` lies in the algebra on random samples.
    pub fn check_tangent(&self, t: f64, samples: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let x = self.model.random_element(&mut rng, SAMPLE_STD);
            let x_inv = self.model.inverse(&x)?;
            self.body_velocity(t, &x, &x_inv)?;
        }
        Ok(())
    }

    /// Analytic classification when known, otherwise the empirical one at `t`.
    pub fn classify(&self, t: f64) -> Classification {
        if self.classification != Classification::Unknown {
            return self.classification;
        }
        if check_linear(self, t, DEFAULT_SAMPLES, CHECK_TOL, 0).passed {
            Classification::Linear
        } else if check_affine(self, t, DEFAULT_SAMPLES, CHECK_TOL, 0).passed {
            Classification::Affine
        } else {
            Classification::Neither
        }
    }
}

fn analytic_classification(kind: &FieldKind) -> Classification {
    use Classification::*;
    match kind {
        FieldKind::Zero | FieldKind::Commutator(_) => Linear,
        FieldKind::LeftInvariant(_) | FieldKind::RightInvariant(_) => Affine,
        FieldKind::Custom(_) => Unknown,
        FieldKind::Sum(parts) => {
            let classes: Vec<_> = parts.iter().map(analytic_classification).collect();
            if classes.iter().all(|c| *c == Linear) {
                Linear
            } else if classes.iter().all(|c| c.is_affine()) {
                Affine
            } else {
                Unknown
            }
        }
        FieldKind::RemoveRightBias(inner) | FieldKind::RemoveLeftBias(inner) => {
            if analytic_classification(inner).is_affine() {
                Linear
            } else {
                Unknown
            }
        }
    }
}

fn eval_kind(model: &GroupModel, kind: &FieldKind, t: f64, x: &DMatrix<f64>) -> DMatrix<f64> {
    match kind {
        FieldKind::Zero => DMatrix::zeros(x.nrows(), x.ncols()),
        FieldKind::LeftInvariant(u) => x * model.hat_unchecked(&u.eval(t)),
        FieldKind::RightInvariant(u) => model.hat_unchecked(&u.eval(t)) * x,
        FieldKind::Commutator(u) => {
            let uh = model.hat_unchecked(&u.eval(t));
            &uh * x - x * &uh
        }
        FieldKind::Custom(f) => f(t, x),
        FieldKind::Sum(parts) => {
            let mut out = DMatrix::zeros(x.nrows(), x.ncols());
            for p in parts {
                out += eval_kind(model, p, t, x);
            }
            out
        }
        FieldKind::RemoveRightBias(inner) => {
            let id = DMatrix::identity(x.nrows(), x.ncols());
            eval_kind(model, inner, t, x) - x * eval_kind(model, inner, t, &id)
        }
        FieldKind::RemoveLeftBias(inner) => {
            let id = DMatrix::identity(x.nrows(), x.ncols());
            eval_kind(model, inner, t, x) - eval_kind(model, inner, t, &id) * x
        }
    }
}

fn run_check(
    f: &VectorField,
    samples: usize,
    tol: f64,
    seed: u64,
    residual: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> (f64, f64),
) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_residual: f64 = 0.0;
    for _ in 0..samples {
        let x = f.model.random_element(&mut rng, SAMPLE_STD);
        let y = f.model.random_element(&mut rng, SAMPLE_STD);
        let (res, scale) = residual(&x, &y);
        let r = res / scale.max(1.0);
        max_residual = if r.is_nan() { f64::INFINITY } else { max_residual.max(r) };
    }
    CheckReport {
        passed: max_residual < tol,
        max_residual,
        samples,
        tol,
    }
}

/// Samples `|f(XY) - f(X)Y - Xf(Y)|_F` relative to `|f(X)Y| + |Xf(Y)|`.
pub fn check_linear(f: &VectorField, t: f64, samples: usize, tol: f64, seed: u64) -> CheckReport {
    run_check(f, samples, tol, seed, |x, y| {
        let a = f.eval(t, x) * y;
        let b = x * f.eval(t, y);
        let res = (f.eval(t, &(x * y)) - &a - &b).norm();
        (res, a.norm() + b.norm())
    })
}

/// As [`check_linear`] with the affine residual `f(XY) - f(X)Y - Xf(Y) + Xf(I)Y`.
pub fn check_affine(f: &VectorField, t: f64, samples: usize, tol: f64, seed: u64) -> CheckReport {
    let fi = f.at_identity(t);
    run_check(f, samples, tol, seed, |x, y| {
        let a = f.eval(t, x) * y;
        let b = x * f.eval(t, y);
        let c = x * &fi * y;
        let res = (f.eval(t, &(x * y)) - &a - &b + &c).norm();
        (res, a.norm() + b.norm() + c.norm())
    })
}

fn require_affine(f: &VectorField, t: f64) -> Result<()> {
    let class = f.classify(t);
    if !class.is_affine() {
        return Err(LieError::Classification(format!(
            "expected an affine field, found {class:?}"
        )));
    }
    Ok(())
}

/// `h(X) = f(X) - X f(I)`, the linear part of an affine field.
/// Linear inputs are returned unchanged.
pub fn affine_to_linear(f: &VectorField) -> Result<VectorField> {
    require_affine(f, 0.0)?;
    if f.classify(0.0) == Classification::Linear {
        return Ok(f.clone());
    }
    Ok(VectorField {
        model: f.model.clone(),
        kind: FieldKind::RemoveRightBias(Box::new(f.kind.clone())),
        classification: Classification::Linear,
    })
}

/// `h(X) = f(X) - f(I) X`, the other linear part of an affine field; this is
/// the drift of the left-invariant error.
pub fn affine_to_linear_left(f: &VectorField) -> Result<VectorField> {
    require_affine(f, 0.0)?;
    if f.classify(0.0) == Classification::Linear {
        return Ok(f.clone());
    }
    Ok(VectorField {
        model: f.model.clone(),
        kind: FieldKind::RemoveLeftBias(Box::new(f.kind.clone())),
        classification: Classification::Linear,
    })
}

/// Which closure rule a sum is expected to obey.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineRule {
    LinearLinear,
    AffineAffine,
    LinearAffine,
}

/// Sum of two fields, checking operand classes against `rule`.
pub fn combine(f: &VectorField, g: &VectorField, rule: CombineRule) -> Result<VectorField> {
    if !Arc::ptr_eq(&f.model, &g.model) && f.model.basis() != g.model.basis() {
        return Err(LieError::InvalidArgument("fields live on different groups".into()));
    }
    let (cf, cg) = (f.classify(0.0), g.classify(0.0));
    let ok = match rule {
        CombineRule::LinearLinear => cf == Classification::Linear && cg == Classification::Linear,
        CombineRule::AffineAffine => cf.is_affine() && cg.is_affine(),
        CombineRule::LinearAffine => cf == Classification::Linear && cg.is_affine(),
    };
    if !ok {
        return Err(LieError::Classification(format!(
            "{rule:?} does not accept operands {cf:?} and {cg:?}"
        )));
    }
    let classification = match rule {
        CombineRule::LinearLinear => Classification::Linear,
        _ => Classification::Affine,
    };
    Ok(VectorField {
        model: f.model.clone(),
        kind: FieldKind::Sum(vec![f.kind.clone(), g.kind.clone()]),
        classification,
    })
}

/// `A_t`: the differential of `x -> vee(exp(x)^-1 f_t(exp(x)))` at `x = 0`.
///
/// Analytic for built-in kinds, central differences for custom parts.
pub fn linearize_at_identity(f: &VectorField, t: f64) -> DMatrix<f64> {
    linearize_kind(&f.model, &f.kind, t)
}

fn linearize_kind(model: &GroupModel, kind: &FieldKind, t: f64) -> DMatrix<f64> {
    let d = model.d();
    match kind {
        FieldKind::Zero | FieldKind::LeftInvariant(_) => DMatrix::zeros(d, d),
        FieldKind::RightInvariant(u) | FieldKind::Commutator(u) => model.adm(&u.eval(t)),
        FieldKind::Custom(_) => linearize_kind_fd(model, kind, t, FD_STEP),
        FieldKind::Sum(parts) => {
            let mut out = DMatrix::zeros(d, d);
            for p in parts {
                out += linearize_kind(model, p, t);
            }
            out
        }
        FieldKind::RemoveRightBias(inner) => linearize_kind(model, inner, t),
        FieldKind::RemoveLeftBias(inner) => {
            let n = model.n();
            let c = model.project(&eval_kind(model, inner, t, &DMatrix::identity(n, n)));
            linearize_kind(model, inner, t) - model.adm(&c)
        }
    }
}

/// Central finite-difference linearisation with step `h`, for any field.
pub fn linearize_fd(f: &VectorField, t: f64, h: f64) -> DMatrix<f64> {
    linearize_kind_fd(&f.model, &f.kind, t, h)
}

fn linearize_kind_fd(model: &GroupModel, kind: &FieldKind, t: f64, h: f64) -> DMatrix<f64> {
    let d = model.d();
    let body = |v: &DVector<f64>| {
        let x = model.exp_unchecked(v);
        let x_inv = model.exp_unchecked(&(-v));
        model.project(&(x_inv * eval_kind(model, kind, t, &x)))
    };
    let mut a = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = DVector::zeros(d);
        e[j] = h;
        let col = (body(&e) - body(&(-&e))) / (2.0 * h);
        a.set_column(j, &col);
    }
    a
}

/// Samples `|adm(Ax) y + adm(x) A y - A adm(x) y|` over random pairs, i.e.
/// how far `A` is from a derivation of the bracket.
pub fn check_derivation(model: &GroupModel, a: &DMatrix<f64>, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = model.random_vector(&mut rng, 1.0);
        let y = model.random_vector(&mut rng, 1.0);
        let lhs = model.adm(&(a * &x)) * &y + model.adm(&x) * (a * &y);
        let rhs = a * model.bracket(&x, &y);
        worst = worst.max((lhs - rhs).norm());
    }
    worst
}

/// `A_t` of a linear field, evaluated on demand.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    field: VectorField,
}

impl LinearizedSystem {
    pub fn new(field: VectorField) -> Self {
        LinearizedSystem { field }
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn a(&self, t: f64) -> DMatrix<f64> {
        linearize_at_identity(&self.field, t)
    }

    pub fn transition_map(&self, t0: f64, t1: f64, dt: f64) -> Result<DMatrix<f64>> {
        transition_map(|t| self.a(t), self.field.model.d(), t0, t1, dt)
    }
}

/// Stage times for one step on `[t0, t1]`, nudged inside the interval so a
/// piecewise-constant input switching on a grid point is sampled from the
/// piece the step belongs to.
pub(crate) fn stage_times(t0: f64, t1: f64) -> (f64, f64, f64) {
    let nudge = |t: f64| 8.0 * f64::EPSILON * t.abs().max(1.0);
    (t0 + nudge(t0), 0.5 * (t0 + t1), t1 - nudge(t1))
}

/// Number of steps of size `dt` covering `horizon`; the last step may be
/// shorter when `dt` does not divide `horizon`.
pub(crate) fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(LieError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(LieError::InvalidArgument(format!(
            "horizon must be non-negative, got {horizon}"
        )));
    }
    let ratio = horizon / dt;
    let rounded = ratio.round();
    Ok(if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) {
        rounded as usize
    } else {
        ratio.ceil() as usize
    })
}

/// Grid `t0, t0 + dt, ..., t0 + horizon`.
pub(crate) fn time_grid(t0: f64, horizon: f64, dt: f64) -> Result<Vec<f64>> {
    let steps = step_count(horizon, dt)?;
    Ok((0..=steps)
        .map(|k| if k == steps { t0 + horizon } else { t0 + k as f64 * dt })
        .collect())
}

/// State-transition matrix of `dPhi/dt = A(t) Phi`, `Phi(t0) = I`, by RK4.
pub fn transition_map(
    a: impl Fn(f64) -> DMatrix<f64>,
    d: usize,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<DMatrix<f64>> {
    let grid = time_grid(t0, t1 - t0, dt)?;
    let mut phi = DMatrix::identity(d, d);
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        let (ta, tm, tb) = stage_times(w[0], w[1]);
        let am = a(tm);
        let k1 = a(ta) * &phi;
        let k2 = &am * (&phi + &k1 * (0.5 * h));
        let k3 = &am * (&phi + &k2 * (0.5 * h));
        let k4 = a(tb) * (&phi + &k3 * h);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expm::expm;
    use rand::Rng;

    fn se23() -> Arc<GroupModel> {
        Arc::new(GroupModel::se_n3(2))
    }

    fn random_u(model: &GroupModel, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.random_vector(&mut rng, 1.0)
    }

    #[test]
    fn signal_piecewise_is_right_continuous() {
        let s = Signal::piecewise(
            vec![1.0, 2.0],
            vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0), DVector::from_element(1, 2.0)],
        )
        .unwrap();
        assert_eq!(s.eval(0.5)[0], 0.0);
        assert_eq!(s.eval(1.0)[0], 1.0);
        assert_eq!(s.eval(1.999)[0], 1.0);
        assert_eq!(s.eval(7.0)[0], 2.0);
        assert!(Signal::piecewise(vec![1.0], vec![DVector::zeros(1)]).is_err());
        assert!(Signal::piecewise(vec![2.0, 1.0], vec![DVector::zeros(1); 3]).is_err());
    }

    #[test]
    fn commutator_is_linear() {
        let m = se23();
        let f = VectorField::commutator(m.clone(), Signal::Constant(random_u(&m, 1)));
        let r = check_linear(&f, 0.0, 64, 1e-12, 7);
        assert!(r.passed, "{r:?}");
        assert!(check_affine(&f, 0.0, 64, 1e-12, 7).passed);
        assert_eq!(f.at_identity(0.0).norm(), 0.0);
    }

    #[test]
    fn invariant_fields_are_affine_not_linear() {
        let m = se23();
        let u = Signal::Constant(random_u(&m, 2));
        for f in [VectorField::left_invariant(m.clone(), u.clone()), VectorField::right_invariant(m.clone(), u)] {
            let lin = check_linear(&f, 0.0, 64, CHECK_TOL, 3);
            assert!(!lin.passed && lin.max_residual > 1e-2);
            assert!(check_affine(&f, 0.0, 64, 1e-12, 3).passed);
        }
        assert!(check_linear(&VectorField::zero(m), 0.0, 8, 1e-15, 0).passed);
    }

    #[test]
    fn custom_field_classified_empirically() {
        let m = Arc::new(GroupModel::so3());
        let u = m.hat(&DVector::from_vec(vec![0.1, 0.2, 0.3])).unwrap();
        let sq = VectorField::custom(m.clone(), move |_, x| x * x * &u, Classification::Unknown);
        assert_eq!(sq.classify(0.0), Classification::Neither);
        let uc = m.hat(&DVector::from_vec(vec![0.1, 0.2, 0.3])).unwrap();
        let comm = VectorField::custom(m, move |_, x| &uc * x - x * &uc, Classification::Unknown);
        assert_eq!(comm.classify(0.0), Classification::Linear);
    }

    #[test]
    fn affine_to_linear_examples() {
        let m = se23();
        let u = Signal::Constant(random_u(&m, 4));
        let left = VectorField::left_invariant(m.clone(), u.clone());
        let h = affine_to_linear(&left).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = m.random_element(&mut rng, 0.5);
        assert!(h.eval(0.0, &x).norm() < 1e-14);

        let right = VectorField::right_invariant(m.clone(), u.clone());
        let h = affine_to_linear(&right).unwrap();
        let comm = VectorField::commutator(m.clone(), u.clone());
        assert!((h.eval(0.0, &x) - comm.eval(0.0, &x)).norm() < 1e-14);
        assert!(check_linear(&h, 0.0, 64, 1e-11, 6).passed);

        let sum = combine(&left, &right, CombineRule::AffineAffine).unwrap();
        let h = affine_to_linear(&sum).unwrap();
        assert!((h.eval(0.0, &x) - comm.eval(0.0, &x)).norm() < 1e-13);

        let h2 = affine_to_linear(&comm).unwrap();
        assert_eq!(h2.eval(0.0, &x), comm.eval(0.0, &x));

        let u_c = u.eval(0.0);
        let neither = VectorField::custom(m.clone(), move |_, x| x * x * m.hat(&u_c).unwrap(), Classification::Unknown);
        assert!(matches!(affine_to_linear(&neither), Err(LieError::Classification(_))));
    }

    #[test]
    fn combine_rules() {
        let m = se23();
        let u = Signal::Constant(random_u(&m, 8));
        let w = Signal::Constant(random_u(&m, 9));
        let c1 = VectorField::commutator(m.clone(), u.clone());
        let c2 = VectorField::commutator(m.clone(), w.clone());
        let l = VectorField::left_invariant(m.clone(), u.clone());
        let r = VectorField::right_invariant(m.clone(), w.clone());

        let s = combine(&c1, &c2, CombineRule::LinearLinear).unwrap();
        assert_eq!(s.classification(), Classification::Linear);
        assert!(check_linear(&s, 0.0, 64, 1e-11, 10).passed);

        let s = combine(&l, &r, CombineRule::AffineAffine).unwrap();
        assert_eq!(s.classification(), Classification::Affine);
        assert!(check_affine(&s, 0.0, 64, 1e-11, 11).passed);

        let s = combine(&c1, &l, CombineRule::LinearAffine).unwrap();
        assert!(check_affine(&s, 0.0, 64, 1e-11, 12).passed);

        assert!(combine(&l, &c1, CombineRule::LinearLinear).is_err());
        assert!(combine(&l, &c1, CombineRule::LinearAffine).is_err());
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let m = se23();
        let u = Signal::Constant(random_u(&m, 13));
        let comm = VectorField::commutator(m.clone(), u.clone());
        let a = linearize_at_identity(&comm, 0.0);
        assert_eq!(a, m.adm(&u.eval(0.0)));
        assert!((linearize_fd(&comm, 0.0, FD_STEP) - &a).norm() < 1e-8);

        let right = VectorField::right_invariant(m.clone(), u.clone());
        let left = VectorField::left_invariant(m.clone(), u.clone());
        for f in [&right, &left] {
            let fd = linearize_fd(f, 0.0, FD_STEP);
            assert!((fd - linearize_at_identity(f, 0.0)).norm() < 1e-8);
        }
        let lb = affine_to_linear_left(&left).unwrap();
        let fd = linearize_fd(&lb, 0.0, FD_STEP);
        assert!((&fd + m.adm(&u.eval(0.0))).norm() < 1e-8);
        assert!((fd - linearize_at_identity(&lb, 0.0)).norm() < 1e-8);

        assert_eq!(linearize_at_identity(&VectorField::zero(m.clone()), 0.0).norm(), 0.0);
        let s = combine(&comm, &right, CombineRule::LinearAffine).unwrap();
        let sum = linearize_at_identity(&comm, 0.0) + linearize_at_identity(&right, 0.0);
        assert!((linearize_at_identity(&s, 0.0) - sum).norm() < 1e-14);
    }

    #[test]
    fn derivation_residuals() {
        let m = se23();
        let u = random_u(&m, 14);
        assert!(check_derivation(&m, &m.adm(&u), 64, 1) < 1e-12);
        assert_eq!(check_derivation(&m, &DMatrix::zeros(9, 9), 8, 1), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let random = DMatrix::from_fn(9, 9, |_, _| rng.random_range(-1.0..1.0));
        assert!(check_derivation(&m, &random, 64, 1) > 1e-2);
    }

    #[test]
    fn transition_map_cases() {
        let m = se23();
        let u = random_u(&m, 16);
        let zero = LinearizedSystem::new(VectorField::zero(m.clone()));
        assert_eq!(zero.transition_map(0.0, 1.0, 0.01).unwrap(), DMatrix::identity(9, 9));

        let sys = LinearizedSystem::new(VectorField::commutator(m.clone(), Signal::Constant(u.clone())));
        let phi = sys.transition_map(0.2, 1.0, 1e-3).unwrap();
        let exact = expm(&(m.adm(&u) * 0.8));
        assert!((&phi - exact).norm() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = m.random_vector(&mut rng, 1.0);
        let y = m.random_vector(&mut rng, 1.0);
        let lhs = &phi * m.bracket(&x, &y);
        let rhs = m.bracket(&(&phi * &x), &(&phi * &y));
        assert!((lhs - rhs).norm() < 1e-8);
    }

    #[test]
    fn grid_helpers() {
        assert_eq!(step_count(1.0, 1e-3).unwrap(), 1000);
        assert_eq!(step_count(1.0, 0.3).unwrap(), 4);
        assert!(step_count(1.0, 0.0).is_err());
        let g = time_grid(0.5, 1.0, 0.3).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.5);
        let (a, _, b) = stage_times(0.25, 0.5);
        assert!(a > 0.25 && b < 0.5);
    }
}
