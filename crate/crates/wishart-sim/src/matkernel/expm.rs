//! Matrix exponential by scaling-and-squaring with a Padé(13) approximant.

use nalgebra::DMatrix;

use crate::error::{Result, SimError};

// Numerator coefficients of the [13/13] Padé approximant to exp;
// the denominator coefficients are the same with alternating signs.
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

fn one_norm(m: &DMatrix<f64>) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// exp(m) for a square real matrix.
///
/// Scaling count is ceil(log2(||m||_1 / 5.4)); relative accuracy is well
/// below 1e-12 for ||m|| up to ~50.
pub fn matrix_exp(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if d != m.ncols() {
        return Err(SimError::IncompatibleDims(d, m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite("matrix_exp"));
    }
    if d == 0 {
        return Ok(m.clone());
    }

    let norm = one_norm(m);
    let s = if norm > 5.4 { (norm / 5.4).log2().ceil() as u32 } else { 0 };
    let a = m / 2f64.powi(s as i32);

    let id = DMatrix::<f64>::identity(d, d);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let b = &PADE13;
    let u_inner = &a6 * (b[13] * &a6 + b[11] * &a4 + b[9] * &a2)
        + b[7] * &a6
        + b[5] * &a4
        + b[3] * &a2
        + b[1] * &id;
    let u = &a * u_inner;
    let v = &a6 * (b[12] * &a6 + b[10] * &a4 + b[8] * &a2)
        + b[6] * &a6
        + b[4] * &a4
        + b[2] * &a2
        + b[0] * &id;

    let denom = &v - &u;
    let numer = &v + &u;
    let mut res = denom
        .lu()
        .solve(&numer)
        .ok_or(SimError::SingularSolve("matrix_exp Pade denominator"))?;

    for _ in 0..s {
        res = &res * &res;
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor_exp(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let d = m.nrows();
        let mut acc = DMatrix::<f64>::identity(d, d);
        let mut term = DMatrix::<f64>::identity(d, d);
        for k in 1..=terms {
            term = &term * m / (k as f64);
            acc += &term;
        }
        acc
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(3, 3);
        let e = matrix_exp(&z).unwrap();
        assert_eq!(e, DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn exp_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let e = matrix_exp(&m).unwrap();
        assert!((e[(0, 0)] - 1f64.exp()).abs() < 1e-14);
        assert!((e[(1, 1)] - 2f64.exp()).abs() < 1e-13);
        assert!(e[(0, 1)].abs() < 1e-15 && e[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn exp_matches_taylor_series_for_small_norm() {
        // oracle: truncated Taylor series with 30 terms, accurate to ~1e-16 for ||m|| <= 1
        let mut rng = crate::randkit::RngStream::new(7, 0);
        for _ in 0..5 {
            let mut m = DMatrix::from_fn(4, 4, |_, _| 0.2 * rng.gauss());
            let n = one_norm(&m);
            if n > 1.0 {
                m /= n;
            }
            let e = matrix_exp(&m).unwrap();
            let t = taylor_exp(&m, 30);
            let rel = one_norm(&(&e - &t)) / one_norm(&t);
            assert!(rel < 1e-12, "relative error {rel}");
        }
    }

    #[test]
    fn exp_inverse_identity() {
        let mut rng = crate::randkit::RngStream::new(11, 0);
        for scale in [0.5, 3.0, 10.0] {
            let m = DMatrix::from_fn(5, 5, |_, _| rng.gauss());
            let m = &m * (scale / one_norm(&m));
            let e = matrix_exp(&m).unwrap();
            let einv = matrix_exp(&(-&m)).unwrap();
            let prod = &e * &einv;
            let err = one_norm(&(&prod - DMatrix::<f64>::identity(5, 5)));
            assert!(err < 1e-10, "||exp(m)exp(-m) - I|| = {err} at scale {scale}");
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = DMatrix::<f64>::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(matrix_exp(&m), Err(SimError::NonFinite(_))));
    }
}
