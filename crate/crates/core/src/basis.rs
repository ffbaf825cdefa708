//! Smooth-term bases and their penalties.
//!
//! Cubic regression splines are parameterized by their values at the knots.
//! The second derivatives at the knots follow from continuity of the first
//! derivative, `B δ = D β`, and the wiggliness penalty is
//! `∫ f''(x)² dx = β' D' B⁻¹ D β`. The cyclic version identifies the last
//! knot with the first so the value and first two derivatives agree across
//! the wrap point.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::days_between;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothKind {
    /// Periodic on `[0, 1)`, `k` knots with the last identified with the first.
    CyclicCubic { k: usize },
    /// Natural cubic regression spline with `k` knots over the data range.
    /// Stands in for a thin plate regression spline for one covariate.
    CubicRegression { k: usize },
    /// Single centered unpenalized column.
    Linear,
}

/// Penalty matrix in a given coefficient parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix(pub DMatrix<f64>);

impl PenaltyMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn quadratic_form(&self, beta: &DVector<f64>) -> f64 {
        beta.dot(&(&self.0 * beta))
    }

    /// Dimension of the null space (eigenvalues numerically zero).
    pub fn null_space_dim(&self) -> usize {
        let eig = SymmetricEigen::new(self.0.clone());
        let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        eig.eigenvalues
            .iter()
            .filter(|v| v.abs() <= 1e-9 * max.max(1e-300))
            .count()
    }
}

fn tridiagonal_parts(h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (h.to_vec(), h.iter().map(|v| 1.0 / v).collect())
}

/// Cyclic cubic regression spline on `[0, 1)` with evenly spaced knots.
#[derive(Debug, Clone)]
pub struct CyclicCubicSpline {
    knots: Vec<f64>,
    /// Maps knot values to knot second derivatives: `δ = F β`.
    f: DMatrix<f64>,
    penalty: PenaltyMatrix,
}

impl CyclicCubicSpline {
    pub fn new(k: usize) -> Result<Self> {
        if k < 4 {
            return Err(Error::InvalidArgument(format!(
                "cyclic cubic basis needs k >= 4, got {k}"
            )));
        }
        let p = k - 1;
        let knots: Vec<f64> = (0..k).map(|i| i as f64 / p as f64).collect();
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let (h, inv_h) = tridiagonal_parts(&h);

        let mut b = DMatrix::zeros(p, p);
        let mut d = DMatrix::zeros(p, p);
        for j in 0..p {
            let prev = (j + p - 1) % p;
            let next = (j + 1) % p;
            b[(j, prev)] += h[prev] / 6.0;
            b[(j, j)] += (h[prev] + h[j]) / 3.0;
            b[(j, next)] += h[j] / 6.0;
            d[(j, prev)] += inv_h[prev];
            d[(j, j)] -= inv_h[prev] + inv_h[j];
            d[(j, next)] += inv_h[j];
        }
        let b_inv = b
            .try_inverse()
            .ok_or_else(|| Error::Numerical("cyclic spline B matrix is singular".into()))?;
        let f = &b_inv * &d;
        let s = crate::linalg::symmetrize(d.transpose() * &f);
        Ok(Self {
            knots,
            f,
            penalty: PenaltyMatrix(s),
        })
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn penalty(&self) -> &PenaltyMatrix {
        &self.penalty
    }

    /// Basis row at `x`, wrapped onto `[0, 1)`.
    pub fn row(&self, x: f64) -> DVector<f64> {
        let p = self.dim();
        let x = x.rem_euclid(1.0);
        let hh = 1.0 / p as f64;
        let j = ((x / hh).floor() as usize).min(p - 1);
        let next = (j + 1) % p;
        let (xl, xr) = (self.knots[j], self.knots[j + 1]);
        let (am, ap) = ((xr - x) / hh, (x - xl) / hh);
        let cm = ((xr - x).powi(3) / hh - hh * (xr - x)) / 6.0;
        let cp = ((x - xl).powi(3) / hh - hh * (x - xl)) / 6.0;
        let mut row = self.f.row(j).transpose() * cm + self.f.row(next).transpose() * cp;
        row[j] += am;
        row[next] += ap;
        row
    }

    pub fn design(&self, values: &[f64]) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(values.len(), self.dim());
        for (i, &v) in values.iter().enumerate() {
            x.row_mut(i).copy_from(&self.row(v).transpose());
        }
        x
    }
}

/// Basis columns and penalty for a cyclic smooth of `values`.
pub fn build_cyclic_basis(values: &[f64], k: usize) -> Result<(DMatrix<f64>, PenaltyMatrix)> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite basis input {v}")));
    }
    let spline = CyclicCubicSpline::new(k)?;
    Ok((spline.design(values), spline.penalty.clone()))
}

/// Natural cubic regression spline with evenly spaced knots on
/// `[lower, upper]`; linear beyond the end knots.
#[derive(Debug, Clone)]
pub struct NaturalCubicSpline {
    knots: Vec<f64>,
    /// Knot second derivatives (zero at both ends): `δ = F β`.
    f: DMatrix<f64>,
    penalty: PenaltyMatrix,
}

impl NaturalCubicSpline {
    pub fn new(lower: f64, upper: f64, k: usize) -> Result<Self> {
        if k < 3 {
            return Err(Error::InvalidArgument(format!(
                "cubic regression basis needs k >= 3, got {k}"
            )));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(Error::InvalidArgument(format!(
                "invalid knot range [{lower}, {upper}]"
            )));
        }
        let knots: Vec<f64> = (0..k)
            .map(|i| lower + (upper - lower) * i as f64 / (k - 1) as f64)
            .collect();
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let m = k - 2;
        let mut b = DMatrix::zeros(m, m);
        let mut d = DMatrix::zeros(m, k);
        for i in 0..m {
            b[(i, i)] = (h[i] + h[i + 1]) / 3.0;
            if i + 1 < m {
                b[(i, i + 1)] = h[i + 1] / 6.0;
                b[(i + 1, i)] = h[i + 1] / 6.0;
            }
            d[(i, i)] = 1.0 / h[i];
            d[(i, i + 1)] = -1.0 / h[i] - 1.0 / h[i + 1];
            d[(i, i + 2)] = 1.0 / h[i + 1];
        }
        let b_inv = b
            .try_inverse()
            .ok_or_else(|| Error::Numerical("natural spline B matrix is singular".into()))?;
        let interior = &b_inv * &d;
        let mut f = DMatrix::zeros(k, k);
        f.rows_mut(1, m).copy_from(&interior);
        let s = crate::linalg::symmetrize(d.transpose() * &interior);
        Ok(Self {
            knots,
            f,
            penalty: PenaltyMatrix(s),
        })
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn penalty(&self) -> &PenaltyMatrix {
        &self.penalty
    }

    pub fn row(&self, x: f64) -> DVector<f64> {
        let k = self.dim();
        let (lo, hi) = (self.knots[0], self.knots[k - 1]);
        if x < lo {
            return self.value_row(lo) + self.slope_row(0, lo) * (x - lo);
        }
        if x > hi {
            return self.value_row(hi) + self.slope_row(k - 2, hi) * (x - hi);
        }
        self.value_row(x)
    }

    fn interval(&self, x: f64) -> usize {
        let k = self.dim();
        self.knots[1..k - 1].iter().take_while(|&&t| x > t).count()
    }

    fn value_row(&self, x: f64) -> DVector<f64> {
        let j = self.interval(x);
        let (xl, xr) = (self.knots[j], self.knots[j + 1]);
        let hh = xr - xl;
        let cm = ((xr - x).powi(3) / hh - hh * (xr - x)) / 6.0;
        let cp = ((x - xl).powi(3) / hh - hh * (x - xl)) / 6.0;
        let mut row = self.f.row(j).transpose() * cm + self.f.row(j + 1).transpose() * cp;
        row[j] += (xr - x) / hh;
        row[j + 1] += (x - xl) / hh;
        row
    }

    fn slope_row(&self, j: usize, x: f64) -> DVector<f64> {
        let (xl, xr) = (self.knots[j], self.knots[j + 1]);
        let hh = xr - xl;
        let cm = (-3.0 * (xr - x).powi(2) / hh + hh) / 6.0;
        let cp = (3.0 * (x - xl).powi(2) / hh - hh) / 6.0;
        let mut row = self.f.row(j).transpose() * cm + self.f.row(j + 1).transpose() * cp;
        row[j] -= 1.0 / hh;
        row[j + 1] += 1.0 / hh;
        row
    }

    pub fn design(&self, values: &[f64]) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(values.len(), self.dim());
        for (i, &v) in values.iter().enumerate() {
            x.row_mut(i).copy_from(&self.row(v).transpose());
        }
        x
    }
}

/// Reparameterization that removes the constant from a basis: new
/// coefficients `β'` map back through `β = Z β'`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumToZero {
    pub z: DMatrix<f64>,
}

impl SumToZero {
    pub fn identity(p: usize) -> Self {
        Self {
            z: DMatrix::identity(p, p),
        }
    }

    pub fn constrained_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn apply_rows(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        b * &self.z
    }

    pub fn apply_penalty(&self, s: &PenaltyMatrix) -> PenaltyMatrix {
        PenaltyMatrix(crate::linalg::symmetrize(self.z.transpose() * &s.0 * &self.z))
    }

    pub fn expand_coefficients(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.z * beta
    }
}

/// Constrain `B` so its (weighted) column sums vanish, dropping one
/// dimension via a Householder null-space basis of `w'B`. If the columns
/// already sum to zero the basis is returned unchanged.
pub fn apply_sum_to_zero(
    b: &DMatrix<f64>,
    s: &[PenaltyMatrix],
    weights: Option<&[f64]>,
) -> Result<(DMatrix<f64>, Vec<PenaltyMatrix>, SumToZero)> {
    let p = b.ncols();
    if p < 2 {
        return Err(Error::InvalidArgument(
            "sum-to-zero constraint needs at least two columns".into(),
        ));
    }
    let c: DVector<f64> = match weights {
        Some(w) => {
            if w.len() != b.nrows() {
                return Err(Error::Alignment(format!(
                    "{} weights for {} basis rows",
                    w.len(),
                    b.nrows()
                )));
            }
            b.tr_mul(&DVector::from_column_slice(w))
        }
        None => b.row_sum().transpose(),
    };
    let scale = b.norm().max(1e-300) * (b.nrows() as f64).sqrt();
    let transform = if c.norm() <= 1e-12 * scale {
        SumToZero::identity(p)
    } else {
        let mut v = c.clone();
        let sign = if c[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * c.norm();
        let h = DMatrix::identity(p, p) - (&v * v.transpose()) * (2.0 / v.norm_squared());
        SumToZero {
            z: h.columns(1, p - 1).into_owned(),
        }
    };
    let b2 = transform.apply_rows(b);
    check_full_rank(&b2)?;
    let s2 = s.iter().map(|m| transform.apply_penalty(m)).collect();
    Ok((b2, s2, transform))
}

fn check_full_rank(b: &DMatrix<f64>) -> Result<()> {
    let eig = SymmetricEigen::new(b.tr_mul(b));
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    if max <= 0.0 || min <= 1e-12 * max {
        return Err(Error::RankDeficient(format!(
            "constrained basis loses rank (eigenvalue ratio {:e})",
            if max > 0.0 { min / max } else { 0.0 }
        )));
    }
    Ok(())
}

/// A centered linear column and the center that was removed.
pub fn build_linear_term(values: &[f64]) -> Result<(DVector<f64>, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("linear term needs data".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite value {v}")));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok((
        DVector::from_iterator(values.len(), values.iter().map(|v| v - mean)),
        mean,
    ))
}

pub const DAYS_PER_YEAR: f64 = 365.25;

/// Years elapsed since `origin`.
pub fn years_since(date: NaiveDate, origin: NaiveDate) -> f64 {
    days_between(origin, date) as f64 / DAYS_PER_YEAR
}

/// Midpoint of a date range as a day offset from `from` (may be a half day).
pub fn range_midpoint_offset(from: NaiveDate, to: NaiveDate) -> f64 {
    days_between(from, to) as f64 / 2.0
}

/// Normalized year for each day of `from..=to`: distance from the range
/// midpoint in units of 365.25 days.
pub fn normalized_years(from: NaiveDate, to: NaiveDate) -> Vec<f64> {
    let mid = range_midpoint_offset(from, to);
    (0..=days_between(from, to))
        .map(|i| (i as f64 - mid) / DAYS_PER_YEAR)
        .collect()
}
