//! Generic dense matrix exponential and logarithm.
//!
//! These are the fallback routes for models without closed forms, and the
//! reference implementations the closed forms are tested against.

use nalgebra::DMatrix;

use crate::error::{LieError, Result};

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm of a non-square matrix");
    let n = a.nrows();
    let norm = norm1(a);
    if !norm.is_finite() {
        return DMatrix::from_element(n, n, f64::NAN);
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a / 2f64.powi(squarings);
    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = &a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Principal square root by the Denman-Beavers iteration.
pub fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let y_inv = y
            .clone()
            .try_inverse()
            .ok_or_else(|| LieError::LogFailure("singular iterate in square root".into()))?;
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| LieError::LogFailure("singular iterate in square root".into()))?;
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let change = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if !change.is_finite() {
            break;
        }
        if change <= 1e-15 * y.norm().max(1.0) {
            return Ok(y);
        }
    }
    Err(LieError::LogFailure(
        "square root iteration did not converge (eigenvalue on the negative real axis?)".into(),
    ))
}

/// Principal matrix logarithm by inverse scaling and squaring.
pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    assert!(a.is_square(), "logm of a non-square matrix");
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let mut m = a.clone();
    let mut roots = 0;
    while norm1(&(&m - &ident)) > 0.25 {
        if roots >= 60 {
            return Err(LieError::LogFailure("too many square roots".into()));
        }
        m = sqrtm(&m)?;
        roots += 1;
    }
    let x = &m - &ident;
    let x_norm = norm1(&x);
    let mut power = x.clone();
    let mut sum = x.clone();
    for k in 2..400 {
        power = &power * &x;
        let term = &power / k as f64;
        if k % 2 == 0 {
            sum -= &term;
        } else {
            sum += &term;
        }
        if x_norm.powi(k as i32) / (k as f64) < 1e-18 {
            break;
        }
    }
    Ok(sum * 2f64.powi(roots))
}
