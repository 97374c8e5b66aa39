//! Closed forms for `SE_N(3)` (and `SO(3)` as `N = 0`).
//!
//! Basis convention: coordinates are ordered `(omega, v_1, ..., v_N)`. The
//! first three generators are the standard `so(3)` generators placed in the
//! top-left block; generator `3 + 3i + j` puts a one in row `j` of column
//! `3 + i`.
//!
//! The right Jacobian reduces to a degree-4 polynomial in `adm` because
//! `adm^5 + 2 theta^2 adm^3 + theta^4 adm = 0` on `se_N(3)`:
//!
//! ```text
//! dexp_m(-xi) = I + sum_{j=1..4} beta_j(theta) adm_xi^j,   theta = |omega|
//! ```
//!
//! For small `theta` the `beta_j` (and their derivatives) are evaluated from a
//! polynomial in `theta^2` obtained by reducing the `ad` series with the
//! minimal polynomial, which avoids the cancellation in the trigonometric
//! expressions.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::algebra::{check_rcond, ClosedForms, DiffusionSide, GroupModel, Structure};
use crate::error::{LieError, Result};

/// Rotation angles within this distance of `pi` are outside the log branch.
pub const BRANCH_EPS: f64 = 1e-9;

/// Below this angle the `beta` coefficients come from the reduced series.
pub const SMALL_ANGLE: f64 = 1.0;

const EXP_TAYLOR_ANGLE: f64 = 0.1;

impl GroupModel {
    /// `SO(3)` with the standard generators.
    pub fn so3() -> Self {
        Self::sen3_model(0)
    }

    /// `SE_N(3)` with `n_translations` translation columns.
    pub fn se_n3(n_translations: usize) -> Self {
        Self::sen3_model(n_translations)
    }

    fn sen3_model(n_translations: usize) -> Self {
        let n = 3 + n_translations;
        let d = 3 * (1 + n_translations);
        let basis = (0..d)
            .map(|i| {
                let mut v = DVector::zeros(d);
                v[i] = 1.0;
                hat(&v, n)
            })
            .collect();
        let name = match n_translations {
            0 => "SO3".to_string(),
            1 => "SE3".to_string(),
            k => format!("SE{k}3"),
        };
        GroupModel::build(
            name,
            basis,
            Structure::SeN3 {
                translations: n_translations,
            },
            ClosedForms::ALL,
        )
        .expect("SE_N(3) basis is valid")
    }
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

fn omega_of(v: &DVector<f64>) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn rotation_of(x: &DMatrix<f64>) -> Matrix3<f64> {
    x.fixed_view::<3, 3>(0, 0).into_owned()
}

pub(crate) fn hat(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&omega_of(v)));
    for i in 0..n - 3 {
        for r in 0..3 {
            m[(r, 3 + i)] = v[3 + 3 * i + r];
        }
    }
    m
}

pub(crate) fn vee_coords(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = DVector::zeros(3 * (n - 2));
    v[0] = 0.5 * (m[(2, 1)] - m[(1, 2)]);
    v[1] = 0.5 * (m[(0, 2)] - m[(2, 0)]);
    v[2] = 0.5 * (m[(1, 0)] - m[(0, 1)]);
    for i in 0..n - 3 {
        for r in 0..3 {
            v[3 + 3 * i + r] = m[(r, 3 + i)];
        }
    }
    v
}

/// `(sin t / t, (1 - cos t)/t^2, (t - sin t)/t^3)`.
fn exp_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < EXP_TAYLOR_ANGLE {
        let t2 = theta * theta;
        let a = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0)));
        let b = 0.5 - t2 / 24.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0 * (1.0 - t2 / 90.0)));
        let c = 1.0 / 6.0 - t2 / 120.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0 * (1.0 - t2 / 110.0)));
        (a, b, c)
    } else {
        let half = (0.5 * theta).sin();
        (
            theta.sin() / theta,
            2.0 * half * half / (theta * theta),
            (theta - theta.sin()) / (theta * theta * theta),
        )
    }
}

pub(crate) fn exp(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let w = omega_of(v);
    let theta = w.norm();
    let (a, b, c) = exp_coefficients(theta);
    let k = skew(&w);
    let k2 = k * k;
    let rot = Matrix3::identity() + k * a + k2 * b;
    let left_jac = Matrix3::identity() + k * b + k2 * c;
    let mut x = DMatrix::identity(n, n);
    x.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    for i in 0..n - 3 {
        let t = left_jac * Vector3::new(v[3 + 3 * i], v[4 + 3 * i], v[5 + 3 * i]);
        x.fixed_view_mut::<3, 1>(0, 3 + i).copy_from(&t);
    }
    x
}

/// Rotation angle in `[0, pi]` and the skew-part vector `vee((R - R^T)/2)`.
fn rotation_angle(r: &Matrix3<f64>) -> (f64, Vector3<f64>) {
    let sv = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let c = 0.5 * (r.trace() - 1.0);
    (sv.norm().atan2(c), sv)
}

pub(crate) fn check_branch(x: &DMatrix<f64>) -> Result<()> {
    let (theta, _) = rotation_angle(&rotation_of(x));
    if theta > PI - BRANCH_EPS {
        return Err(LieError::Branch { angle: theta });
    }
    Ok(())
}

fn log_rotation(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let (theta, sv) = rotation_angle(r);
    if theta > PI - BRANCH_EPS {
        return Err(LieError::Branch { angle: theta });
    }
    let s = sv.norm();
    if theta < 3.0 {
        if s == 0.0 {
            return Ok(sv);
        }
        let ratio = if theta < 1e-4 {
            1.0 + theta * theta / 6.0
        } else {
            theta / s
        };
        return Ok(sv * ratio);
    }
    // near pi the skew part is small; recover the axis from the symmetric part
    let c = theta.cos();
    let sym = 0.5 * (r + r.transpose()) - Matrix3::identity() * c;
    let k = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let one_minus_c = 1.0 - c;
    let ak = (sym[(k, k)] / one_minus_c).sqrt();
    let mut axis: Vector3<f64> = sym.column(k) / (one_minus_c * ak);
    axis /= axis.norm();
    if axis.dot(&sv) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Inverse of the left Jacobian of `SO(3)`: `I - K/2 + D K^2`.
fn inverse_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let dcoef = if theta < EXP_TAYLOR_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1209600.0
    } else {
        let h = 0.5 * theta;
        (1.0 - h * h.cos() / h.sin()) / (theta * theta)
    };
    let k = skew(w);
    Matrix3::identity() - k * 0.5 + k * k * dcoef
}

pub(crate) fn log(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = x.nrows();
    let w = log_rotation(&rotation_of(x))?;
    let vinv = inverse_left_jacobian(&w);
    let mut out = DVector::zeros(3 * (n - 2));
    out.fixed_rows_mut::<3>(0).copy_from(&w);
    for i in 0..n - 3 {
        let t = Vector3::new(x[(0, 3 + i)], x[(1, 3 + i)], x[(2, 3 + i)]);
        out.fixed_rows_mut::<3>(3 + 3 * i).copy_from(&(vinv * t));
    }
    Ok(out)
}

pub(crate) fn inverse(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let rt = rotation_of(x).transpose();
    let mut out = DMatrix::identity(n, n);
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    for i in 0..n - 3 {
        let t = Vector3::new(x[(0, 3 + i)], x[(1, 3 + i)], x[(2, 3 + i)]);
        out.fixed_view_mut::<3, 1>(0, 3 + i).copy_from(&(-(rt * t)));
    }
    out
}

pub(crate) fn membership_residual(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    if n < 3 || x.ncols() != n {
        return f64::INFINITY;
    }
    let r = rotation_of(x);
    if !(r.determinant() > 0.0) {
        return f64::INFINITY;
    }
    let mut res = (r.transpose() * r - Matrix3::identity()).norm();
    for i in 3..n {
        for j in 0..n {
            let expected = if i == j { 1.0 } else { 0.0 };
            res = res.max((x[(i, j)] - expected).abs());
        }
    }
    res
}

pub(crate) fn adjoint(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let d = 3 * (n - 2);
    let r = rotation_of(x);
    let mut out = DMatrix::zeros(d, d);
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    for i in 0..n - 3 {
        let t = Vector3::new(x[(0, 3 + i)], x[(1, 3 + i)], x[(2, 3 + i)]);
        let o = 3 + 3 * i;
        out.fixed_view_mut::<3, 3>(o, 0).copy_from(&(skew(&t) * r));
        out.fixed_view_mut::<3, 3>(o, o).copy_from(&r);
    }
    out
}

pub(crate) fn adm(v: &DVector<f64>) -> DMatrix<f64> {
    let d = v.len();
    let k = skew(&omega_of(v));
    let mut out = DMatrix::zeros(d, d);
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&k);
    for i in 0..(d / 3 - 1) {
        let o = 3 + 3 * i;
        let t = Vector3::new(v[o], v[o + 1], v[o + 2]);
        out.fixed_view_mut::<3, 3>(o, 0).copy_from(&skew(&t));
        out.fixed_view_mut::<3, 3>(o, o).copy_from(&k);
    }
    out
}

/// `beta_j(theta)` and their derivatives for the degree-4 right Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianCoefficients {
    pub theta: f64,
    pub beta: [f64; 4],
    /// `d beta_j / d theta`.
    pub beta_prime: [f64; 4],
    /// `(d beta_j / d theta) / theta`, finite at `theta = 0`.
    pub beta_prime_over_theta: [f64; 4],
}

const REDUCED_TERMS: usize = 64;
const REDUCED_DEGREE: usize = 24;

/// Polynomials `P_j(s)`, `s = theta^2`, with `beta_j = P_j(s)`.
fn reduced_polynomials() -> &'static [Vec<f64>; 4] {
    static POLYS: OnceLock<[Vec<f64>; 4]> = OnceLock::new();
    POLYS.get_or_init(|| {
        let zero = || vec![0.0; REDUCED_DEGREE + 1];
        // coefficients of adm^k on (adm, adm^2, adm^3, adm^4), as polynomials in s
        let mut c: [Vec<f64>; 4] = [zero(), zero(), zero(), zero()];
        c[0][0] = 1.0;
        let mut out: [Vec<f64>; 4] = [zero(), zero(), zero(), zero()];
        let mut fact = 1.0;
        for k in 1..=REDUCED_TERMS {
            fact *= (k + 1) as f64;
            let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
            for j in 0..4 {
                for (o, ci) in out[j].iter_mut().zip(&c[j]) {
                    *o += sign * ci / fact;
                }
            }
            // adm^{k+1} = -s^2 c4 adm + c1 adm^2 + (c2 - 2 s c4) adm^3 + c3 adm^4
            let mut next = [zero(), zero(), zero(), zero()];
            for p in 0..=REDUCED_DEGREE {
                if p + 2 <= REDUCED_DEGREE {
                    next[0][p + 2] -= c[3][p];
                }
                next[1][p] = c[0][p];
                next[2][p] += c[1][p];
                if p + 1 <= REDUCED_DEGREE {
                    next[2][p + 1] -= 2.0 * c[3][p];
                }
                next[3][p] = c[2][p];
            }
            c = next;
        }
        out
    })
}

fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
}

fn horner_derivative(coeffs: &[f64], s: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (p, &c)| acc * s + p as f64 * c)
}

impl JacobianCoefficients {
    pub fn new(theta: f64) -> Self {
        let theta = theta.abs();
        if theta < SMALL_ANGLE {
            let s = theta * theta;
            let polys = reduced_polynomials();
            let mut beta = [0.0; 4];
            let mut bpo = [0.0; 4];
            for j in 0..4 {
                beta[j] = horner(&polys[j], s);
                bpo[j] = 2.0 * horner_derivative(&polys[j], s);
            }
            let beta_prime = bpo.map(|b| b * theta);
            return JacobianCoefficients {
                theta,
                beta,
                beta_prime,
                beta_prime_over_theta: bpo,
            };
        }
        let (s, c) = theta.sin_cos();
        let t = theta;
        let t2 = t * t;
        let beta = [
            (4.0 * c - 4.0 + t * s) / (2.0 * t2),
            (4.0 * t - 5.0 * s + t * c) / (2.0 * t2 * t),
            (t * s + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * t - 3.0 * s + t * c) / (2.0 * t2 * t2 * t),
        ];
        let odd = 8.0 - 8.0 * c - 5.0 * t * s + t2 * c;
        let even = 15.0 * s - 8.0 * t - 7.0 * t * c - t2 * s;
        let beta_prime = [
            odd / (2.0 * t2 * t),
            even / (2.0 * t2 * t2),
            odd / (2.0 * t2 * t2 * t),
            even / (2.0 * t2 * t2 * t2),
        ];
        JacobianCoefficients {
            theta,
            beta,
            beta_prime,
            beta_prime_over_theta: beta_prime.map(|b| b / t),
        }
    }
}

/// Blocks of `I + sum_j c_j adm_v^j`, which is block lower-triangular with a
/// repeated diagonal block `D` and lower blocks `Q_i` in the first column.
fn jacobian_blocks(v: &DVector<f64>, c: [f64; 4]) -> (Matrix3<f64>, Vec<Matrix3<f64>>) {
    let w = skew(&omega_of(v));
    let translations = v.len() / 3 - 1;
    let mut offdiag: Vec<Matrix3<f64>> = (0..translations)
        .map(|i| skew(&Vector3::new(v[3 + 3 * i], v[4 + 3 * i], v[5 + 3 * i])))
        .collect();
    let vs = offdiag.clone();
    let mut wp = w;
    let mut diag = Matrix3::identity() + w * c[0];
    let mut lower: Vec<Matrix3<f64>> = offdiag.iter().map(|o| o * c[0]).collect();
    for cj in c.iter().skip(1) {
        // (adm^{j+1})_{i0} = (adm^j)_{i0} W + W^j V_i
        for (o, vi) in offdiag.iter_mut().zip(&vs) {
            *o = *o * w + wp * vi;
        }
        wp *= w;
        diag += wp * *cj;
        for (q, o) in lower.iter_mut().zip(&offdiag) {
            *q += o * *cj;
        }
    }
    (diag, lower)
}

fn assemble(diag: &Matrix3<f64>, lower: &[Matrix3<f64>]) -> DMatrix<f64> {
    let d = 3 * (lower.len() + 1);
    let mut out = DMatrix::zeros(d, d);
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(diag);
    for (i, q) in lower.iter().enumerate() {
        let o = 3 + 3 * i;
        out.fixed_view_mut::<3, 3>(o, 0).copy_from(q);
        out.fixed_view_mut::<3, 3>(o, o).copy_from(diag);
    }
    out
}

fn signed_beta(v: &DVector<f64>) -> [f64; 4] {
    let b = JacobianCoefficients::new(omega_of(v).norm()).beta;
    [-b[0], b[1], -b[2], b[3]]
}

/// Right Jacobian `dexp_m(-xi) = I + sum beta_j adm_xi^j`.
pub fn dexp_right(xi: &DVector<f64>) -> DMatrix<f64> {
    let coeffs = JacobianCoefficients::new(omega_of(xi).norm());
    let (diag, lower) = jacobian_blocks(xi, coeffs.beta);
    assemble(&diag, &lower)
}

/// `dexp_m(v) = dexp_m(-(-v))`.
pub(crate) fn dexp(v: &DVector<f64>) -> DMatrix<f64> {
    let (diag, lower) = jacobian_blocks(v, signed_beta(v));
    assemble(&diag, &lower)
}

/// Blockwise inverse of [`dexp`] with the same conditioning check as
/// [`invert_checked`](crate::algebra::invert_checked).
pub(crate) fn dexp_inv(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let (diag, lower) = jacobian_blocks(v, signed_beta(v));
    let diag_inv = diag.try_inverse().ok_or(LieError::Singular { rcond: 0.0 })?;
    let lower_inv: Vec<Matrix3<f64>> = lower.iter().map(|q| -(diag_inv * q * diag_inv)).collect();
    let inv = assemble(&diag_inv, &lower_inv);
    check_rcond(&assemble(&diag, &lower), &inv)?;
    Ok(inv)
}

/// `vee([a^, b^])` from cross products.
pub(crate) fn bracket(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let wa = omega_of(a);
    let wb = omega_of(b);
    let mut out = DVector::zeros(a.len());
    out.fixed_rows_mut::<3>(0).copy_from(&wa.cross(&wb));
    for o in (3..a.len()).step_by(3) {
        let ai = Vector3::new(a[o], a[o + 1], a[o + 2]);
        let bi = Vector3::new(b[o], b[o + 1], b[o + 2]);
        out.fixed_rows_mut::<3>(o).copy_from(&(wa.cross(&bi) + ai.cross(&wb)));
    }
    out
}

/// Closed-form Itô correction: derivative of the degree-4 Jacobian along
/// `gamma`, applied to `gamma`.
///
/// ```text
/// C = sum_j [ beta_j'(theta) (omega . gamma_omega / theta) adm^j gamma
///           + beta_j dadmn(xi, gamma, j) gamma ]
/// ```
///
/// For [`DiffusionSide::Right`] the `j`-th term picks up `(-1)^j`.
pub fn c_correction(xi: &DVector<f64>, gamma: &DVector<f64>, side: DiffusionSide) -> DVector<f64> {
    let coeffs = JacobianCoefficients::new(omega_of(xi).norm());
    let mut out = vec![Vector3::zeros(); xi.len() / 3];
    c_correction_with(&coeffs, &blocks(xi.iter()), &blocks(gamma.iter()), side, &mut out);
    from_blocks(&out)
}

/// `sum_k C(xi, gamma_k)` over the columns of `gammas`, sharing the
/// coefficient evaluation.
pub fn c_correction_sum(xi: &DVector<f64>, gammas: &DMatrix<f64>, side: DiffusionSide) -> DVector<f64> {
    let coeffs = JacobianCoefficients::new(omega_of(xi).norm());
    let xb = blocks(xi.iter());
    let mut out = vec![Vector3::zeros(); xb.len()];
    for g in gammas.column_iter() {
        c_correction_with(&coeffs, &xb, &blocks(g.iter()), side, &mut out);
    }
    from_blocks(&out)
}

fn blocks<'a>(v: impl Iterator<Item = &'a f64>) -> Vec<Vector3<f64>> {
    let v: Vec<f64> = v.copied().collect();
    v.chunks_exact(3).map(Vector3::from_column_slice).collect()
}

fn from_blocks(b: &[Vector3<f64>]) -> DVector<f64> {
    DVector::from_iterator(3 * b.len(), b.iter().flat_map(|v| v.iter().copied()))
}

fn bracket_blocks(a: &[Vector3<f64>], b: &[Vector3<f64>], out: &mut [Vector3<f64>]) {
    out[0] = a[0].cross(&b[0]);
    for i in 1..a.len() {
        out[i] = a[0].cross(&b[i]) + a[i].cross(&b[0]);
    }
}

/// Adds `C(xi, gamma)` to `out`.
fn c_correction_with(
    coeffs: &JacobianCoefficients,
    xi: &[Vector3<f64>],
    gamma: &[Vector3<f64>],
    side: DiffusionSide,
    out: &mut [Vector3<f64>],
) {
    let dtheta_scaled = xi[0].dot(&gamma[0]);
    let n = gamma.len();
    let mut x_pow_gamma = gamma.to_vec();
    let mut t = vec![Vector3::zeros(); n];
    let mut s1 = vec![Vector3::zeros(); n];
    let mut s2 = vec![Vector3::zeros(); n];
    for j in 0..4 {
        // t_j = adm_gamma adm^{j-1} gamma + adm t_{j-1}; t_1 = [gamma, gamma] = 0
        if j > 0 {
            bracket_blocks(gamma, &x_pow_gamma, &mut s1);
            bracket_blocks(xi, &t, &mut s2);
            for ((ti, a), b) in t.iter_mut().zip(&s1).zip(&s2) {
                *ti = a + b;
            }
        }
        bracket_blocks(xi, &x_pow_gamma, &mut s1);
        std::mem::swap(&mut x_pow_gamma, &mut s1);
        let sign = match side {
            DiffusionSide::Right if j % 2 == 0 => -1.0,
            _ => 1.0,
        };
        let cp = sign * coeffs.beta_prime_over_theta[j] * dtheta_scaled;
        let ct = sign * coeffs.beta[j];
        for ((o, p), ti) in out.iter_mut().zip(&x_pow_gamma).zip(&t) {
            *o += p * cp + ti * ct;
        }
    }
}

/// `|adm^5 + 2 theta^2 adm^3 + theta^4 adm|_F` for the given `adm` matrix.
pub fn minimal_polynomial_residual_of(ad: &DMatrix<f64>, theta: f64) -> f64 {
    let a2 = ad * ad;
    let a3 = &a2 * ad;
    let a5 = &a3 * &a2;
    let t2 = theta * theta;
    (a5 + a3 * (2.0 * t2) + ad * (t2 * t2)).norm()
}

/// Residual of the `se_N(3)` minimal-polynomial identity at `xi`.
pub fn minimal_polynomial_residual(xi: &DVector<f64>) -> f64 {
    minimal_polynomial_residual_of(&adm(xi), omega_of(xi).norm())
}
