//! Matrix Lie group models and the generic algebra machinery.
//!
//! A [`GroupModel`] fixes an ordered basis `E_1..E_d` of the Lie algebra, which
//! identifies the algebra with `R^d` through `hat`/`vee`. Everything else
//! (exponential, adjoints, `dexp` series, the ad-power derivative and the Itô
//! correction series) is expressed in these coordinates.
//!
//! Closed forms are used when the model provides them (see [`crate::sen3`]);
//! otherwise the generic dense routines in [`crate::expm`] and truncated
//! series are used.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LieError, Result};
use crate::expm;
use crate::sen3;

/// Coordinates of an algebra element in the model basis.
pub type AlgebraVector = DVector<f64>;

/// Default number of terms for truncated `ad` series.
pub const DEFAULT_SERIES_ORDER: usize = 14;

/// Default order for the Itô correction series.
pub const DEFAULT_CORRECTION_ORDER: usize = 12;

/// Reciprocal condition number below which `dexp` is treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

/// Tolerance for the "lies in the span of the basis" test, relative to `max(1, |m|)`.
pub const VEE_TOL: f64 = 1e-9;

/// Default membership tolerance for models that have a membership test.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Upper bound on series length when the order is chosen adaptively.
const MAX_ADAPTIVE_ORDER: usize = 200;

/// Which side a diffusion (or the sign pattern it induces) acts on.
///
/// `Left` is a left-invariant diffusion `X s^` (sign `(-1)^i` in the correction
/// series), `Right` a right-invariant diffusion `s^ X` (all signs positive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiffusionSide {
    Left,
    Right,
}

/// Which closed forms a model is allowed to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClosedForms {
    pub exp: bool,
    pub log: bool,
    pub dexp: bool,
    pub c_correction: bool,
}

impl ClosedForms {
    pub const NONE: ClosedForms = ClosedForms {
        exp: false,
        log: false,
        dexp: false,
        c_correction: false,
    };
    pub const ALL: ClosedForms = ClosedForms {
        exp: true,
        log: true,
        dexp: true,
        c_correction: true,
    };
}

/// Structural family of a model; decides which closed forms exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Generic,
    /// `SE_N(3)`; `translations = 0` is `SO(3)`.
    SeN3 { translations: usize },
}

/// A matrix Lie group with a fixed algebra basis.
#[derive(Debug, Clone)]
pub struct GroupModel {
    name: String,
    n: usize,
    d: usize,
    basis: Vec<DMatrix<f64>>,
    /// `structure_constants[i] = adm(e_i)`.
    structure_constants: Vec<DMatrix<f64>>,
    /// Left inverse of the vectorised basis, `d x n^2`.
    coordinate_map: DMatrix<f64>,
    series_order: usize,
    structure: Structure,
    closed_forms: ClosedForms,
    membership_tol: f64,
}

impl GroupModel {
    /// Builds a model from an explicit basis, checking linear independence and
    /// closure of the bracket.
    pub fn from_basis(name: impl Into<String>, basis: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::build(name.into(), basis, Structure::Generic, ClosedForms::NONE)
    }

    pub(crate) fn build(
        name: String,
        basis: Vec<DMatrix<f64>>,
        structure: Structure,
        closed_forms: ClosedForms,
    ) -> Result<Self> {
        let d = basis.len();
        if d == 0 {
            return Err(LieError::InvalidBasis("empty basis".into()));
        }
        let n = basis[0].nrows();
        if basis.iter().any(|e| e.nrows() != n || e.ncols() != n) {
            return Err(LieError::InvalidBasis("basis matrices must all be n x n".into()));
        }

        let vectorised = DMatrix::from_fn(n * n, d, |k, i| basis[i][(k / n, k % n)]);
        let gram = vectorised.transpose() * &vectorised;
        let eig = gram.clone().symmetric_eigen();
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        if !(lo > 1e-12 * hi) {
            return Err(LieError::InvalidBasis(format!(
                "basis is linearly dependent (Gram eigenvalue ratio {:.3e})",
                lo / hi
            )));
        }
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| LieError::InvalidBasis("singular Gram matrix".into()))?;
        let coordinate_map = gram_inv * vectorised.transpose();

        let mut model = GroupModel {
            name,
            n,
            d,
            basis,
            structure_constants: Vec::new(),
            coordinate_map,
            series_order: DEFAULT_SERIES_ORDER,
            structure,
            closed_forms,
            membership_tol: MEMBERSHIP_TOL,
        };

        let mut constants = Vec::with_capacity(d);
        for i in 0..d {
            let mut k = DMatrix::zeros(d, d);
            for j in 0..d {
                let br = &model.basis[i] * &model.basis[j] - &model.basis[j] * &model.basis[i];
                let coords = model.project(&br);
                let back = model.hat_unchecked(&coords);
                let residual = (&back - &br).norm();
                if residual > 1e-12 * br.norm().max(1.0) {
                    return Err(LieError::InvalidBasis(format!(
                        "bracket [E_{}, E_{}] leaves the span (residual {:.3e})",
                        i + 1,
                        j + 1,
                        residual
                    )));
                }
                k.set_column(j, &coords);
            }
            constants.push(k);
        }
        model.structure_constants = constants;
        Ok(model)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Ambient matrix size.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Algebra dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn closed_forms(&self) -> ClosedForms {
        self.closed_forms
    }

    pub fn series_order(&self) -> usize {
        self.series_order
    }

    pub fn membership_tol(&self) -> f64 {
        self.membership_tol
    }

    /// Restricts (or re-enables) the closed forms; requesting a closed form the
    /// structure does not have is ignored.
    pub fn with_closed_forms(mut self, flags: ClosedForms) -> Self {
        self.closed_forms = match self.structure {
            Structure::Generic => ClosedForms::NONE,
            Structure::SeN3 { .. } => flags,
        };
        self
    }

    pub fn with_series_order(mut self, order: usize) -> Self {
        self.series_order = order.max(1);
        self
    }

    pub fn with_membership_tol(mut self, tol: f64) -> Self {
        self.membership_tol = tol;
        self
    }

    pub(crate) fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.d {
            return Err(LieError::Dimension {
                expected: self.d,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn check_square(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.n || m.ncols() != self.n {
            return Err(LieError::Dimension {
                expected: self.n,
                got: m.nrows().max(m.ncols()),
            });
        }
        Ok(())
    }

    pub(crate) fn hat_unchecked(&self, v: &DVector<f64>) -> DMatrix<f64> {
        match self.structure {
            Structure::SeN3 { .. } => sen3::hat(v, self.n),
            Structure::Generic => {
                let mut m = DMatrix::zeros(self.n, self.n);
                for (e, &c) in self.basis.iter().zip(v.iter()) {
                    if c != 0.0 {
                        m += e * c;
                    }
                }
                m
            }
        }
    }

    pub(crate) fn project(&self, m: &DMatrix<f64>) -> DVector<f64> {
        match self.structure {
            Structure::SeN3 { .. } => sen3::vee_coords(m),
            Structure::Generic => {
                let n = self.n;
                let flat = DVector::from_fn(n * n, |k, _| m[(k / n, k % n)]);
                &self.coordinate_map * flat
            }
        }
    }

    /// `v -> sum v_i E_i`.
    pub fn hat(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(v)?;
        Ok(self.hat_unchecked(v))
    }

    /// Inverse of [`hat`](Self::hat); fails when `m` is not in the algebra.
    pub fn vee(&self, m: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_square(m)?;
        let coords = self.project(m);
        let residual = (self.hat_unchecked(&coords) - m).norm();
        if !(residual <= VEE_TOL * m.norm().max(1.0)) {
            return Err(LieError::NotInAlgebra { residual });
        }
        Ok(coords)
    }

    /// Lie exponential `exp(v^)`.
    pub fn exp(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(v)?;
        Ok(self.exp_unchecked(v))
    }

    pub(crate) fn exp_unchecked(&self, v: &DVector<f64>) -> DMatrix<f64> {
        match self.structure {
            Structure::SeN3 { .. } if self.closed_forms.exp => sen3::exp(v, self.n),
            _ => expm::expm(&self.hat_unchecked(v)),
        }
    }

    /// Lie logarithm on the principal branch.
    pub fn log(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_square(x)?;
        match self.structure {
            Structure::SeN3 { .. } if self.closed_forms.log => sen3::log(x),
            Structure::SeN3 { .. } => {
                sen3::check_branch(x)?;
                self.vee(&expm::logm(x)?)
            }
            Structure::Generic => self.vee(&expm::logm(x)?),
        }
    }

    /// Group inverse.
    pub fn inverse(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_square(x)?;
        match self.structure {
            Structure::SeN3 { .. } => Ok(sen3::inverse(x)),
            Structure::Generic => x
                .clone()
                .try_inverse()
                .ok_or_else(|| LieError::NotInGroup("matrix is singular".into())),
        }
    }

    /// Membership residual for models that have a membership test.
    pub fn membership_residual(&self, x: &DMatrix<f64>) -> Option<f64> {
        match self.structure {
            Structure::SeN3 { .. } => Some(sen3::membership_residual(x)),
            Structure::Generic => None,
        }
    }

    /// Validates a candidate group element: square, invertible and (when the
    /// model has a membership test) on the group within `membership_tol`.
    pub fn check_element(&self, x: &DMatrix<f64>) -> Result<()> {
        self.check_square(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LieError::NotInGroup("non-finite entries".into()));
        }
        if let Some(res) = self.membership_residual(x) {
            if res > self.membership_tol {
                return Err(LieError::NotInGroup(format!(
                    "membership residual {res:.3e} exceeds {:.1e}",
                    self.membership_tol
                )));
            }
        } else {
            let svd = x.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if !(smin > 1e-12 * smax) {
                return Err(LieError::NotInGroup("matrix is numerically singular".into()));
            }
        }
        Ok(())
    }

    /// Adjoint representation `Ad_X` as a `d x d` matrix; column `j` is
    /// `vee(X E_j X^-1)`.
    pub fn adjoint(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_square(x)?;
        match self.structure {
            Structure::SeN3 { .. } => Ok(sen3::adjoint(x)),
            Structure::Generic => {
                let x_inv = self.inverse(x)?;
                let mut out = DMatrix::zeros(self.d, self.d);
                for (j, e) in self.basis.iter().enumerate() {
                    out.set_column(j, &self.vee(&(x * e * &x_inv))?);
                }
                Ok(out)
            }
        }
    }

    /// Matrix representation of `ad_v`: `adm(v) w = vee([v^, w^])`.
    pub fn adm(&self, v: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(v.len(), self.d, "adm: dimension mismatch");
        match self.structure {
            Structure::SeN3 { .. } => sen3::adm(v),
            Structure::Generic => {
                let mut m = DMatrix::zeros(self.d, self.d);
                for (k, &c) in self.structure_constants.iter().zip(v.iter()) {
                    if c != 0.0 {
                        m += k * c;
                    }
                }
                m
            }
        }
    }

    /// `vee([a^, b^])`.
    pub fn bracket(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        match self.structure {
            Structure::SeN3 { .. } => sen3::bracket(a, b),
            Structure::Generic => self.adm(a) * b,
        }
    }

    /// Truncated series `sum_{i=0}^{order} adm(v)^i / (i+1)!`.
    ///
    /// Summation stops early once the remaining terms are bounded below
    /// `1e-16 |result|`.
    pub fn dexp_series(&self, v: &DVector<f64>, order: usize) -> DMatrix<f64> {
        let ad = self.adm(v);
        let a = ad.norm();
        let mut result = DMatrix::identity(self.d, self.d);
        let mut power = DMatrix::identity(self.d, self.d);
        let mut bound = 1.0;
        let mut fact = 1.0;
        for i in 1..=order {
            fact *= (i + 1) as f64;
            bound *= a;
            if bound / fact <= 1e-16 * result.norm() {
                break;
            }
            power = &power * &ad;
            result += &power / fact;
        }
        result
    }

    /// `dexp_m(v)`, using the closed form when available and an adaptively
    /// truncated series otherwise. `dexp(-x)` is the right Jacobian.
    pub fn dexp(&self, v: &DVector<f64>) -> DMatrix<f64> {
        match self.structure {
            Structure::SeN3 { .. } if self.closed_forms.dexp => sen3::dexp(v),
            _ => self.dexp_series(v, self.adaptive_order(v)),
        }
    }

    fn adaptive_order(&self, v: &DVector<f64>) -> usize {
        let a = self.adm(v).norm();
        let mut bound = 1.0;
        let mut order = 0;
        while order < MAX_ADAPTIVE_ORDER {
            order += 1;
            bound *= a / (order + 1) as f64;
            if order >= self.series_order && bound < 1e-17 {
                break;
            }
        }
        order
    }

    /// Inverse of [`dexp`](Self::dexp) at `v`, with a singularity check on the
    /// reciprocal condition number.
    pub fn dexp_inv(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self.structure {
            Structure::SeN3 { .. } if self.closed_forms.dexp => {
                self.check_dim(v)?;
                sen3::dexp_inv(v)
            }
            _ => invert_checked(&self.dexp(v)),
        }
    }

    /// Directional derivative of `x -> adm(x)^n` along `g`:
    /// `sum_{r=0}^{n-1} adm_x^r adm_g adm_x^{n-1-r}`.
    pub fn dadmn(&self, x: &DVector<f64>, g: &DVector<f64>, n: usize) -> DMatrix<f64> {
        assert!(n >= 1, "dadmn requires n >= 1");
        let ax = self.adm(x);
        let ag = self.adm(g);
        let mut powers = Vec::with_capacity(n);
        powers.push(DMatrix::identity(self.d, self.d));
        for r in 1..n {
            let next = &powers[r - 1] * &ax;
            powers.push(next);
        }
        let mut out = DMatrix::zeros(self.d, self.d);
        for r in 0..n {
            out += &powers[r] * &ag * &powers[n - 1 - r];
        }
        out
    }

    /// Itô correction `C = sum_{i>=1} sign_i/(i+1)! dadmn(x, gamma, i) gamma`,
    /// truncated at `order`. `sign_i = (-1)^i` for [`DiffusionSide::Left`],
    /// `+1` for [`DiffusionSide::Right`].
    ///
    /// This is the derivative of `dexp_m(-x)` (left) or `dexp_m(x)` (right)
    /// along `gamma`, applied to `gamma`.
    pub fn c_correction_series(
        &self,
        x: &DVector<f64>,
        gamma: &DVector<f64>,
        side: DiffusionSide,
        order: usize,
    ) -> DVector<f64> {
        let ax = self.adm(x);
        let ag = self.adm(gamma);
        let a = ax.norm();
        let b = ag.norm() * gamma.norm();
        // t_i = dadmn(x, gamma, i) gamma, via t_i = adm_gamma adm_x^{i-1} gamma + adm_x t_{i-1}
        let mut x_power_gamma = gamma.clone();
        // t_1 = [gamma, gamma] vanishes identically
        let mut t = DVector::zeros(self.d);
        let mut result = DVector::zeros(self.d);
        let mut fact = 1.0;
        let mut a_pow = 1.0;
        for i in 1..=order {
            fact *= (i + 1) as f64;
            if i > 1 {
                x_power_gamma = &ax * &x_power_gamma;
                t = &ag * &x_power_gamma + &ax * &t;
                a_pow *= a;
                // tail bound for this and all following terms (geometric in a)
                let bound = i as f64 * a_pow * b / fact;
                if bound <= 1e-16 * result.norm() || bound <= 1e-300 {
                    break;
                }
            }
            let sign = match side {
                DiffusionSide::Left if i % 2 == 1 => -1.0,
                _ => 1.0,
            };
            result.axpy(sign / fact, &t, 1.0);
        }
        result
    }

    /// Itô correction using the closed form when available, else the series at
    /// [`DEFAULT_CORRECTION_ORDER`] with adaptive stopping.
    pub fn c_correction(
        &self,
        x: &DVector<f64>,
        gamma: &DVector<f64>,
        side: DiffusionSide,
    ) -> DVector<f64> {
        match self.structure {
            Structure::SeN3 { .. } if self.closed_forms.c_correction => {
                sen3::c_correction(x, gamma, side)
            }
            _ => {
                let order = self.adaptive_order(x).max(DEFAULT_CORRECTION_ORDER);
                self.c_correction_series(x, gamma, side, order)
            }
        }
    }

    /// `sum_k C(x, gamma_k)` over the columns of `gammas`.
    pub fn c_correction_sum(
        &self,
        x: &DVector<f64>,
        gammas: &DMatrix<f64>,
        side: DiffusionSide,
    ) -> DVector<f64> {
        match self.structure {
            Structure::SeN3 { .. } if self.closed_forms.c_correction => {
                sen3::c_correction_sum(x, gammas, side)
            }
            _ => {
                let order = self.adaptive_order(x).max(DEFAULT_CORRECTION_ORDER);
                let mut out = DVector::zeros(self.d);
                for g in gammas.column_iter() {
                    out += self.c_correction_series(x, &g.into_owned(), side, order);
                }
                out
            }
        }
    }

    /// Truncated Baker-Campbell-Hausdorff series `log(exp(a) exp(b))`, orders 1..=4.
    pub fn bch(&self, a: &DVector<f64>, b: &DVector<f64>, order: usize) -> Result<DVector<f64>> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        if !(1..=4).contains(&order) {
            return Err(LieError::InvalidArgument(format!(
                "BCH order must be in 1..=4, got {order}"
            )));
        }
        let mut z = a + b;
        if order >= 2 {
            let ab = self.bracket(a, b);
            z += &ab * 0.5;
            if order >= 3 {
                let a_ab = self.bracket(a, &ab);
                let b_ba = -self.bracket(b, &ab);
                z += (a_ab.clone() + b_ba) / 12.0;
                if order >= 4 {
                    z -= self.bracket(b, &a_ab) / 24.0;
                }
            }
        }
        Ok(z)
    }

    /// Gaussian algebra vector with i.i.d. `N(0, std^2)` coordinates.
    pub fn random_vector<R: Rng + ?Sized>(&self, rng: &mut R, std: f64) -> DVector<f64> {
        DVector::from_fn(self.d, |_, _| std * rng.sample::<f64, _>(StandardNormal))
    }

    /// `exp` of a Gaussian algebra vector.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R, std: f64) -> DMatrix<f64> {
        self.exp_unchecked(&self.random_vector(rng, std))
    }
}

/// Inverts a `dexp` matrix, reporting a singularity when the reciprocal
/// 1-norm condition number drops below [`SINGULAR_RCOND`].
pub fn invert_checked(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = j
        .clone()
        .try_inverse()
        .ok_or(LieError::Singular { rcond: 0.0 })?;
    check_rcond(j, &inv)?;
    Ok(inv)
}

pub(crate) fn check_rcond(j: &DMatrix<f64>, inv: &DMatrix<f64>) -> Result<()> {
    let rcond = 1.0 / (norm1(j) * norm1(inv));
    if !(rcond >= SINGULAR_RCOND) {
        return Err(LieError::Singular {
            rcond: if rcond.is_finite() { rcond } else { 0.0 },
        });
    }
    Ok(())
}

pub(crate) fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
