//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// `X' diag(w) X`.
pub fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        xw.row_mut(i).scale_mut(s);
    }
    let g = xw.tr_mul(&xw);
    symmetrize(g)
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Relative ridge added to the diagonal when a factorization fails.
pub const RIDGE: f64 = 1e-10;

/// Cholesky factorization, retrying once with a small relative ridge on the
/// diagonal. Returns the factor and the ridge that was applied.
pub fn cholesky_with_ridge(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, 0.0));
    }
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let ridge = RIDGE * scale;
    let mut b = a.clone();
    for i in 0..b.nrows() {
        b[(i, i)] += ridge;
    }
    Cholesky::new(b)
        .map(|c| (c, ridge))
        .ok_or_else(|| Error::NotPositiveDefinite("penalized information matrix".into()))
}

pub fn log_det_cholesky(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (c, _) = cholesky_with_ridge(a)?;
    Ok(c.solve(b))
}

/// Rank and log pseudo-determinant of a symmetric PSD matrix.
pub fn pseudo_log_det(s: &DMatrix<f64>) -> (usize, f64) {
    let eig = SymmetricEigen::new(s.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = max * 1e-10 * s.nrows() as f64;
    eig.eigenvalues
        .iter()
        .filter(|&&v| v > tol)
        .fold((0, 0.0), |(r, ld), v| (r + 1, ld + v.ln()))
}

/// Factor `L` with `L L' = V` for a symmetric PSD matrix, via the eigen
/// decomposition. Eigenvalues down to `-1e-10` (relative to the largest) are
/// clipped to zero; anything more negative is an error.
pub fn psd_factor(v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(v.clone()));
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut l = eig.eigenvectors;
    for (j, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev < -1e-10 * scale {
            return Err(Error::NotPositiveDefinite(format!(
                "covariance has eigenvalue {ev:e}"
            )));
        }
        let s = ev.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_matches_direct_product() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = [1.0, 2.0, 0.5];
        let direct = x.transpose() * DMatrix::from_diagonal(&DVector::from_row_slice(&w)) * &x;
        assert!((weighted_gram(&x, &w) - direct).norm() < 1e-12);
    }

    #[test]
    fn ridge_fallback_on_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, ridge) = cholesky_with_ridge(&a).unwrap();
        assert!(ridge > 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_with_ridge(&bad).is_err());
    }

    #[test]
    fn psd_factor_reconstructs() {
        let v = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.0, 2.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let l = psd_factor(&v).unwrap();
        assert!((&l * l.transpose() - &v).norm() < 1e-12);
        assert_eq!(psd_factor(&DMatrix::zeros(2, 2)).unwrap(), DMatrix::zeros(2, 2));
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(psd_factor(&neg).is_err());
    }

    #[test]
    fn pseudo_determinant_skips_null_space() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let (rank, ld) = pseudo_log_det(&s);
        assert_eq!(rank, 1);
        assert!((ld - 2f64.ln()).abs() < 1e-12);
    }
}
