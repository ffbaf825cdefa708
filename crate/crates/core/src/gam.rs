//! Penalized Poisson log-linear model with population offset.
//!
//! `log E[D_t] = log N_t + β₀ + Σ_l β_l p_{l,t} + Zθ + f₁(doy_t) + f₂(year_t)`
//!
//! Fitted by penalized IRLS for fixed smoothing parameters; the smoothing
//! parameters are chosen by minimizing the Laplace approximate restricted
//! marginal likelihood.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor};
use argmin::solver::goldensectionsearch::GoldenSectionSearch;
use argmin::solver::neldermead::NelderMead;
use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::basis::{
    apply_sum_to_zero, build_cyclic_basis, build_linear_term, normalized_years, NaturalCubicSpline,
    PenaltyMatrix, SmoothKind,
};
use crate::error::{Error, IterationRecord, Result};
use crate::linalg::{cholesky_with_ridge, log_det_cholesky, pseudo_log_det, symmetrize, weighted_gram};
use crate::timeseries::{align, day_of_year_fraction, DailyCountSeries, PeriodPartition, PopulationSeries};

pub const INTERCEPT: &str = "(Intercept)";
pub const YEAR: &str = "year";
pub const SEASONAL: &str = "s(doy)";
pub const TREND: &str = "s(year)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetSource {
    /// Population adjusted for net migration.
    #[default]
    Adjusted,
    /// Population unaltered by post-emergency migration.
    Counterfactual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub partition: PeriodPartition,
    /// 1-based periods that get an indicator column.
    pub include_periods: Vec<usize>,
    pub seasonal: SmoothKind,
    pub trend: SmoothKind,
    pub covariates: Vec<Covariate>,
    pub offset_source: OffsetSource,
}

impl ModelSpec {
    /// Indicators for every period, `k = 32` cyclic seasonality, linear year.
    pub fn new(partition: PeriodPartition) -> Self {
        let include_periods = (1..=partition.num_periods()).collect();
        Self {
            partition,
            include_periods,
            seasonal: SmoothKind::CyclicCubic { k: 32 },
            trend: SmoothKind::Linear,
            covariates: Vec::new(),
            offset_source: OffsetSource::Adjusted,
        }
    }

    pub fn with_periods(mut self, periods: Vec<usize>) -> Self {
        self.include_periods = periods;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        let l_max = self.partition.num_periods();
        let mut seen = vec![false; l_max + 1];
        for &l in &self.include_periods {
            if l == 0 || l > l_max {
                return Err(Error::InvalidArgument(format!(
                    "period {l} is outside 1..={l_max}"
                )));
            }
            if std::mem::replace(&mut seen[l], true) {
                return Err(Error::InvalidArgument(format!("period {l} included twice")));
            }
        }
        if !matches!(self.seasonal, SmoothKind::CyclicCubic { .. }) {
            return Err(Error::InvalidArgument(
                "the seasonal term must be a cyclic cubic smooth".into(),
            ));
        }
        if matches!(self.trend, SmoothKind::CyclicCubic { .. }) {
            return Err(Error::InvalidArgument(
                "the year trend cannot be cyclic".into(),
            ));
        }
        let mut names: Vec<&str> = self.covariates.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("covariate names must be unique".into()));
        }
        for c in &self.covariates {
            if c.values.len() != n {
                return Err(Error::Alignment(format!(
                    "covariate {} has {} values for {n} days",
                    c.name,
                    c.values.len()
                )));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "covariate {} has non-finite values",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

/// A penalized block of columns. Penalties are stored rescaled so that
/// smoothing parameters are comparable across terms.
#[derive(Debug, Clone)]
pub struct SmoothBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub penalty: PenaltyMatrix,
    pub rank: usize,
    /// Log pseudo-determinant of the stored penalty.
    pub log_det: f64,
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub dates: Vec<NaiveDate>,
    pub response: DVector<f64>,
    pub offset: DVector<f64>,
    pub x: DMatrix<f64>,
    pub column_names: Vec<String>,
    /// Leading unpenalized columns.
    pub parametric: usize,
    /// `(period, column)` for each indicator.
    pub period_columns: Vec<(usize, usize)>,
    pub smooths: Vec<SmoothBlock>,
}

impl DesignMatrix {
    /// A purely parametric design from raw parts.
    pub fn from_parts(
        x: DMatrix<f64>,
        response: Vec<f64>,
        offset: Vec<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        if response.len() != n || offset.len() != n || column_names.len() != x.ncols() {
            return Err(Error::Alignment(format!(
                "design {}x{} with {} responses, {} offsets, {} names",
                n,
                x.ncols(),
                response.len(),
                offset.len(),
                column_names.len()
            )));
        }
        if response.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("responses must be finite and nonnegative".into()));
        }
        if offset.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("design and offset must be finite".into()));
        }
        let design = Self {
            dates: Vec::new(),
            response: DVector::from_vec(response),
            offset: DVector::from_vec(offset),
            parametric: x.ncols(),
            x,
            column_names,
            period_columns: Vec::new(),
            smooths: Vec::new(),
        };
        design.check_rank()?;
        Ok(design)
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn smooth(&self, name: &str) -> Option<&SmoothBlock> {
        self.smooths.iter().find(|b| b.name == name)
    }

    /// Total penalty `Σ λ_j S_j` embedded in the full coefficient space.
    pub fn total_penalty(&self, lambdas: &[f64]) -> Result<DMatrix<f64>> {
        if lambdas.len() != self.smooths.len() {
            return Err(Error::InvalidArgument(format!(
                "{} smoothing parameters for {} smooth terms",
                lambdas.len(),
                self.smooths.len()
            )));
        }
        let p = self.ncols();
        let mut s = DMatrix::zeros(p, p);
        for (b, &lam) in self.smooths.iter().zip(lambdas) {
            if !(lam > 0.0 && lam.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "smoothing parameter for {} must be positive, got {lam}",
                    b.name
                )));
            }
            let mut view = s.view_mut((b.start, b.start), (b.len, b.len));
            view += &b.penalty.0 * lam;
        }
        Ok(s)
    }

    fn check_rank(&self) -> Result<()> {
        let p = self.ncols();
        if self.nrows() < p {
            return Err(Error::RankDeficient(format!(
                "{} rows for {p} columns",
                self.nrows()
            )));
        }
        let mut xs = self.x.clone();
        for (j, mut col) in xs.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 {
                return Err(Error::RankDeficient(format!(
                    "column {} is identically zero",
                    self.column_names[j]
                )));
            }
            col /= norm;
        }
        let eig = nalgebra::SymmetricEigen::new(xs.tr_mul(&xs));
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min <= 1e-12 * max {
            return Err(Error::RankDeficient(format!(
                "design columns are collinear (eigenvalue ratio {:e})",
                min / max
            )));
        }
        Ok(())
    }
}

fn block_penalty(name: &str, start: usize, x: &DMatrix<f64>, s: &PenaltyMatrix) -> SmoothBlock {
    let len = s.dim();
    let xb = x.columns(start, len);
    let xtx_norm = (xb.transpose() * xb).norm();
    let scale = xtx_norm / s.0.norm().max(1e-300);
    let scaled = PenaltyMatrix(&s.0 * scale);
    let (rank, log_det) = pseudo_log_det(&scaled.0);
    SmoothBlock {
        name: name.to_string(),
        start,
        len,
        penalty: scaled,
        rank,
        log_det,
    }
}

/// Build the model design on the days of `deaths`.
pub fn assemble_design(
    spec: &ModelSpec,
    deaths: &DailyCountSeries,
    pop: &PopulationSeries,
    pop_star: &PopulationSeries,
) -> Result<DesignMatrix> {
    align(deaths, pop)?;
    align(deaths, pop_star)?;
    let n = deaths.len();
    spec.validate(n)?;
    let dates: Vec<NaiveDate> = deaths.dates().collect();
    let offset_pop = match spec.offset_source {
        OffsetSource::Adjusted => pop,
        OffsetSource::Counterfactual => pop_star,
    };
    let offset: Vec<f64> = offset_pop.values().iter().map(|v| v.ln()).collect();

    let mut names = vec![INTERCEPT.to_string()];
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut period_columns = Vec::new();
    let mut periods = spec.include_periods.clone();
    periods.sort_unstable();
    for &l in &periods {
        let col: Vec<f64> = dates
            .iter()
            .map(|&d| f64::from(u8::from(spec.partition.period_of(d) == Some(l))))
            .collect();
        period_columns.push((l, columns.len()));
        names.push(format!("period_{l}"));
        columns.push(col);
    }
    for c in &spec.covariates {
        names.push(c.name.clone());
        columns.push(c.values.clone());
    }
    let years = normalized_years(deaths.start(), deaths.end());
    if spec.trend == SmoothKind::Linear {
        let (col, _) = build_linear_term(&years)?;
        names.push(YEAR.to_string());
        columns.push(col.iter().copied().collect());
    }
    let parametric = columns.len();

    let doy: Vec<f64> = dates.iter().map(|&d| day_of_year_fraction(d)).collect();
    let SmoothKind::CyclicCubic { k } = spec.seasonal else {
        unreachable!("validated")
    };
    let (b, s) = build_cyclic_basis(&doy, k)?;
    let (b, s, _) = apply_sum_to_zero(&b, &[s], None)?;
    let mut smooth_parts = vec![(SEASONAL, b, s.into_iter().next().expect("one penalty"))];
    if let SmoothKind::CubicRegression { k } = spec.trend {
        let lo = years.first().copied().unwrap_or(0.0);
        let hi = years.last().copied().unwrap_or(0.0);
        let spline = NaturalCubicSpline::new(lo, hi, k)?;
        let (b, s, _) = apply_sum_to_zero(&spline.design(&years), &[spline.penalty().clone()], None)?;
        smooth_parts.push((TREND, b, s.into_iter().next().expect("one penalty")));
    }

    let p = parametric + smooth_parts.iter().map(|(_, b, _)| b.ncols()).sum::<usize>();
    let mut x = DMatrix::zeros(n, p);
    for (j, col) in columns.iter().enumerate() {
        x.column_mut(j).copy_from_slice(col);
    }
    let mut smooths = Vec::new();
    let mut start = parametric;
    for (name, b, s) in smooth_parts {
        x.columns_mut(start, b.ncols()).copy_from(&b);
        for i in 0..b.ncols() {
            names.push(format!("{name}.{}", i + 1));
        }
        smooths.push(block_penalty(name, start, &x, &s));
        start += b.ncols();
    }

    let design = DesignMatrix {
        dates,
        response: DVector::from_iterator(n, deaths.counts().iter().map(|&c| c as f64)),
        offset: DVector::from_vec(offset),
        x,
        column_names: names,
        parametric,
        period_columns,
        smooths,
    };
    design.check_rank()?;
    Ok(design)
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub deviance_tolerance: f64,
    pub score_tolerance: f64,
    pub max_step_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            deviance_tolerance: 1e-9,
            score_tolerance: 1e-8,
            max_step_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TermEdf {
    pub name: String,
    pub edf: f64,
    pub basis_dim: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub gamma: DVector<f64>,
    /// Posterior covariance `(X'WX + Σλ_jS_j)⁻¹`.
    pub covariance: DMatrix<f64>,
    pub lambdas: Vec<f64>,
    pub edf: Vec<TermEdf>,
    pub edf_total: f64,
    pub deviance: f64,
    pub pearson: f64,
    /// `γ' S_λ γ`.
    pub penalty: f64,
    pub log_det_hessian: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub score_norm: f64,
    pub fitted: DVector<f64>,
    pub response: DVector<f64>,
    pub column_names: Vec<String>,
    pub parametric: usize,
    pub period_columns: Vec<(usize, usize)>,
    /// `(name, start, len)` of each smooth block.
    pub smooth_blocks: Vec<(String, usize, usize)>,
}

impl FitResult {
    pub fn nobs(&self) -> usize {
        self.response.len()
    }

    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let j = self.column_names.iter().position(|c| c == name)?;
        Some((self.gamma[j], self.covariance[(j, j)].max(0.0).sqrt()))
    }

    pub fn period_column(&self, l: usize) -> Result<usize> {
        self.period_columns
            .iter()
            .find(|(p, _)| *p == l)
            .map(|(_, c)| *c)
            .ok_or_else(|| Error::InvalidArgument(format!("period {l} is not in the model")))
    }

    /// Estimate and standard error of the period-`l` log-effect.
    pub fn period_effect(&self, l: usize) -> Result<(f64, f64)> {
        let j = self.period_column(l)?;
        Ok((self.gamma[j], self.covariance[(j, j)].max(0.0).sqrt()))
    }

    /// Laplace approximate REML criterion (up to a constant).
    pub fn reml_criterion(&self, design: &DesignMatrix) -> f64 {
        let log_s: f64 = design
            .smooths
            .iter()
            .zip(&self.lambdas)
            .map(|(b, lam)| b.rank as f64 * lam.ln() + b.log_det)
            .sum();
        0.5 * self.deviance + 0.5 * self.penalty + 0.5 * self.log_det_hessian - 0.5 * log_s
    }
}

fn poisson_deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    2.0 * y
        .iter()
        .zip(mu.iter())
        .map(|(&yi, &mi)| {
            let t = if yi > 0.0 { yi * (yi / mi).ln() } else { 0.0 };
            t - (yi - mi)
        })
        .sum::<f64>()
}

fn means(design: &DesignMatrix, gamma: &DVector<f64>) -> Option<DVector<f64>> {
    let eta = &design.x * gamma + &design.offset;
    if eta.iter().any(|v| !v.is_finite() || *v > 700.0) {
        return None;
    }
    Some(eta.map(f64::exp))
}

fn initial_coefficients(design: &DesignMatrix, s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let w: Vec<f64> = design.response.iter().map(|y| y + 0.1).collect();
    let z = DVector::from_iterator(
        design.nrows(),
        w.iter().zip(design.offset.iter()).map(|(wi, o)| wi.ln() - o),
    );
    let h = weighted_gram(&design.x, &w) + s;
    let rhs = design.x.tr_mul(&z.component_mul(&DVector::from_vec(w)));
    let (c, _) = cholesky_with_ridge(&h)?;
    Ok(c.solve(&rhs))
}

/// Penalized IRLS at fixed smoothing parameters.
pub fn pirls_fit(design: &DesignMatrix, lambdas: &[f64]) -> Result<FitResult> {
    pirls_fit_with(design, lambdas, None, FitOptions::default())
}

pub fn pirls_fit_with(
    design: &DesignMatrix,
    lambdas: &[f64],
    start: Option<&DVector<f64>>,
    options: FitOptions,
) -> Result<FitResult> {
    let s = design.total_penalty(lambdas)?;
    let col_norms: Vec<f64> = design.x.column_iter().map(|c| c.norm().max(1e-300)).collect();
    let y = &design.response;
    let mut gamma = match start {
        Some(g) if g.len() == design.ncols() => g.clone(),
        _ => initial_coefficients(design, &s)?,
    };
    let mut mu = match means(design, &gamma) {
        Some(mu) => mu,
        None => {
            gamma = initial_coefficients(design, &s)?;
            means(design, &gamma)
                .ok_or_else(|| Error::Numerical("initial linear predictor overflows".into()))?
        }
    };
    let pdev = |mu: &DVector<f64>, g: &DVector<f64>| poisson_deviance(y, mu) + g.dot(&(&s * g));
    let mut current = pdev(&mu, &gamma);
    // deviance is only accurate to rounding in its summands
    let slack = 1e-12 * (y.sum() + y.len() as f64);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        let w: Vec<f64> = mu.iter().copied().collect();
        let h = weighted_gram(&design.x, &w) + &s;
        let score = design.x.tr_mul(&(y - &mu)) - &s * &gamma;
        let score_norm = score
            .iter()
            .zip(&col_norms)
            .map(|(g, c)| (g / c).abs())
            .fold(0.0, f64::max);
        if score_norm < options.score_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let (chol, _) = cholesky_with_ridge(&h)?;
        let delta = chol.solve(&score);
        let mut step = 1.0;
        let mut halvings = 0;
        let accepted = loop {
            let candidate = &gamma + &delta * step;
            if let Some(mu_c) = means(design, &candidate) {
                let value = pdev(&mu_c, &candidate);
                if value.is_finite() && value <= current + slack + 1e-12 * current.abs() {
                    break Some((candidate, mu_c, value));
                }
            }
            if halvings == options.max_step_halvings {
                break None;
            }
            step *= 0.5;
            halvings += 1;
        };
        let Some((candidate, mu_c, value)) = accepted else {
            trace.push(IterationRecord {
                iteration: iterations,
                penalized_deviance: current,
                score_norm,
                step_halvings: halvings,
            });
            // no descent possible: accept only if already at the optimum to rounding
            converged = score_norm < 1e-6;
            break;
        };
        let change = (current - value).abs() / (value.abs() + 0.1);
        trace.push(IterationRecord {
            iteration: iterations,
            penalized_deviance: value,
            score_norm,
            step_halvings: halvings,
        });
        gamma = candidate;
        mu = mu_c;
        current = value;
        if change < options.deviance_tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { iterations, trace });
    }
    let mean_y = (y.sum() / y.len() as f64).max(1.0);
    if mu
        .iter()
        .zip(y.iter())
        .any(|(&m, &yi)| yi == 0.0 && m < 1e-8 * mean_y)
    {
        return Err(Error::Numerical(
            "fitted means collapse to zero: coefficients diverge (separation)".into(),
        ));
    }
    finish_fit(design, lambdas, gamma, mu, &s, iterations, trace)
}

fn finish_fit(
    design: &DesignMatrix,
    lambdas: &[f64],
    gamma: DVector<f64>,
    mu: DVector<f64>,
    s: &DMatrix<f64>,
    iterations: usize,
    trace: Vec<IterationRecord>,
) -> Result<FitResult> {
    let y = &design.response;
    let w: Vec<f64> = mu.iter().copied().collect();
    let xwx = weighted_gram(&design.x, &w);
    let h = &xwx + s;
    let (chol, _) = cholesky_with_ridge(&h)?;
    let covariance = symmetrize(chol.inverse());
    let f = &covariance * &xwx;
    let diag = f.diagonal();
    let mut edf = Vec::new();
    let parametric_edf: f64 = diag.rows(0, design.parametric).sum();
    edf.push(TermEdf {
        name: "parametric".into(),
        edf: parametric_edf,
        basis_dim: design.parametric,
    });
    for b in &design.smooths {
        edf.push(TermEdf {
            name: b.name.clone(),
            edf: diag.rows(b.start, b.len).sum(),
            basis_dim: b.len,
        });
    }
    let score = design.x.tr_mul(&(y - &mu)) - s * &gamma;
    let col_norms: Vec<f64> = design.x.column_iter().map(|c| c.norm().max(1e-300)).collect();
    let score_norm = score
        .iter()
        .zip(&col_norms)
        .map(|(g, c)| (g / c).abs())
        .fold(0.0, f64::max);
    let pearson = y
        .iter()
        .zip(mu.iter())
        .map(|(yi, mi)| (yi - mi).powi(2) / mi)
        .sum();
    Ok(FitResult {
        deviance: poisson_deviance(y, &mu),
        penalty: gamma.dot(&(s * &gamma)),
        log_det_hessian: log_det_cholesky(&chol),
        edf_total: diag.sum(),
        edf,
        covariance,
        lambdas: lambdas.to_vec(),
        gamma,
        pearson,
        converged: true,
        iterations,
        trace,
        score_norm,
        fitted: mu,
        response: y.clone(),
        column_names: design.column_names.clone(),
        parametric: design.parametric,
        period_columns: design.period_columns.clone(),
        smooth_blocks: design
            .smooths
            .iter()
            .map(|b| (b.name.clone(), b.start, b.len))
            .collect(),
    })
}

/// One criterion evaluation during smoothing-parameter selection.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionEvaluation {
    pub log_lambdas: Vec<f64>,
    pub criterion: f64,
}

#[derive(Debug, Clone)]
pub struct SmoothingSelection {
    pub lambdas: Vec<f64>,
    pub fit: FitResult,
    pub criterion: f64,
    pub trace: Vec<CriterionEvaluation>,
}

pub const LOG_LAMBDA_MIN: f64 = -4.0 * std::f64::consts::LN_10;
pub const LOG_LAMBDA_MAX: f64 = 6.0 * std::f64::consts::LN_10;
pub const GRID_POINTS: usize = 7;

struct Reml<'a> {
    design: &'a DesignMatrix,
    warm: RefCell<Option<DVector<f64>>>,
    trace: RefCell<Vec<CriterionEvaluation>>,
    best: RefCell<Option<(f64, FitResult)>>,
}

impl Reml<'_> {
    fn evaluate(&self, log_lambdas: &[f64]) -> f64 {
        let clamped: Vec<f64> = log_lambdas
            .iter()
            .map(|v| v.clamp(LOG_LAMBDA_MIN - 10.0, LOG_LAMBDA_MAX + 10.0))
            .collect();
        let lambdas: Vec<f64> = clamped.iter().map(|v| v.exp()).collect();
        let warm = self.warm.borrow().clone();
        let value = match pirls_fit_with(self.design, &lambdas, warm.as_ref(), FitOptions::default()) {
            Ok(fit) => {
                let v = fit.reml_criterion(self.design);
                *self.warm.borrow_mut() = Some(fit.gamma.clone());
                let mut best = self.best.borrow_mut();
                if v.is_finite() && best.as_ref().is_none_or(|(b, _)| v < *b) {
                    *best = Some((v, fit));
                }
                v
            }
            Err(_) => f64::INFINITY,
        };
        self.trace.borrow_mut().push(CriterionEvaluation {
            log_lambdas: clamped,
            criterion: value,
        });
        value
    }
}

struct Scalar<'a, 'b>(&'a Reml<'b>);

impl CostFunction for Scalar<'_, '_> {
    type Param = f64;
    type Output = f64;
    fn cost(&self, p: &f64) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.0.evaluate(&[*p]))
    }
}

struct Vector<'a, 'b>(&'a Reml<'b>);

impl CostFunction for Vector<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.0.evaluate(p))
    }
}

fn grid_values() -> Vec<f64> {
    (0..GRID_POINTS)
        .map(|i| LOG_LAMBDA_MIN + (LOG_LAMBDA_MAX - LOG_LAMBDA_MIN) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect()
}

/// Choose smoothing parameters by minimizing the REML criterion: a grid
/// scan over `[1e-4, 1e6]` followed by golden-section search (one smooth)
/// or Nelder-Mead (several).
pub fn select_smoothing(design: &DesignMatrix) -> Result<SmoothingSelection> {
    let q = design.smooths.len();
    if q == 0 {
        return Err(Error::InvalidArgument(
            "smoothing selection needs at least one smooth term".into(),
        ));
    }
    let reml = Reml {
        design,
        warm: RefCell::new(None),
        trace: RefCell::new(Vec::new()),
        best: RefCell::new(None),
    };
    let grid = grid_values();
    let step = grid[1] - grid[0];
    let mut best_point = vec![grid[0]; q];
    let mut best_value = f64::INFINITY;
    let mut index = vec![0usize; q];
    'scan: loop {
        let point: Vec<f64> = index.iter().map(|&i| grid[i]).collect();
        let v = reml.evaluate(&point);
        if v < best_value {
            best_value = v;
            best_point = point;
        }
        for slot in index.iter_mut() {
            *slot += 1;
            if *slot < GRID_POINTS {
                continue 'scan;
            }
            *slot = 0;
        }
        break;
    }
    if !best_value.is_finite() {
        return Err(optimizer_failure(&reml, "no grid point produced a converged fit"));
    }

    if q == 1 {
        let centre = best_point[0];
        let lo = (centre - step).max(LOG_LAMBDA_MIN - step);
        let hi = (centre + step).min(LOG_LAMBDA_MAX + step);
        let solver = GoldenSectionSearch::new(lo, hi)
            .and_then(|s| s.with_tolerance(1e-6))
            .map_err(|e| Error::Numerical(e.to_string()))?;
        Executor::new(Scalar(&reml), solver)
            .configure(|state| state.param(centre).max_iters(200))
            .run()
            .map_err(|e| optimizer_failure(&reml, &e.to_string()))?;
    } else {
        let mut simplex = vec![best_point.clone()];
        for d in 0..q {
            let mut v = best_point.clone();
            v[d] += step / 2.0;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-7)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        Executor::new(Vector(&reml), solver)
            .configure(|state| state.max_iters(400))
            .run()
            .map_err(|e| optimizer_failure(&reml, &e.to_string()))?;
    }

    let trace = reml.trace.take();
    let (criterion, fit) = reml
        .best
        .take()
        .ok_or_else(|| Error::Numerical("smoothing selection produced no fit".into()))?;
    Ok(SmoothingSelection {
        lambdas: fit.lambdas.clone(),
        fit,
        criterion,
        trace,
    })
}

fn optimizer_failure(reml: &Reml, message: &str) -> Error {
    let trace: Vec<String> = reml
        .trace
        .borrow()
        .iter()
        .map(|e| format!("{:?} -> {}", e.log_lambdas, e.criterion))
        .collect();
    Error::Numerical(format!(
        "smoothing selection failed: {message}; criterion trace: [{}]",
        trace.join(", ")
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldResult {
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

pub fn two_sided_normal_p(z: f64) -> f64 {
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Wald test that the period-`l` coefficient is zero.
pub fn wald_test(fit: &FitResult, l: usize) -> Result<WaldResult> {
    let (estimate, se) = fit.period_effect(l)?;
    let z = if estimate == 0.0 { 0.0 } else { estimate / se };
    Ok(WaldResult {
        estimate,
        se,
        z,
        p: two_sided_normal_p(z),
    })
}

/// Render a p-value for tables: tiny values collapse to `<0.0001`.
pub fn format_p_value(p: f64) -> String {
    if p < 1e-4 {
        "<0.0001".into()
    } else {
        format!("{p:.4}")
    }
}

/// `exp(γ̂_l)`: the rate ratio for period `l`.
pub fn multiplicative_effect(fit: &FitResult, l: usize) -> Result<f64> {
    Ok(fit.period_effect(l)?.0.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p: f64,
}

/// Generalized likelihood ratio test of a nested null against an
/// alternative. `df` must equal the number of parametric terms dropped.
pub fn glrt(null_fit: &FitResult, alt_fit: &FitResult, df: usize) -> Result<GlrtResult> {
    let null_smooths: Vec<(&str, usize)> = null_fit
        .smooth_blocks
        .iter()
        .map(|(n, _, l)| (n.as_str(), *l))
        .collect();
    let alt_smooths: Vec<(&str, usize)> = alt_fit
        .smooth_blocks
        .iter()
        .map(|(n, _, l)| (n.as_str(), *l))
        .collect();
    if null_smooths != alt_smooths || null_fit.nobs() != alt_fit.nobs() {
        return Err(Error::InvalidArgument(
            "models are not nested: smooth terms or observations differ".into(),
        ));
    }
    let alt_params = &alt_fit.column_names[..alt_fit.parametric];
    if let Some(missing) = null_fit.column_names[..null_fit.parametric]
        .iter()
        .find(|c| !alt_params.contains(c))
    {
        return Err(Error::InvalidArgument(format!(
            "models are not nested: {missing} is absent from the alternative"
        )));
    }
    let dropped = alt_fit.parametric - null_fit.parametric;
    if df != dropped {
        return Err(Error::InvalidArgument(format!(
            "df = {df} but the models differ by {dropped} parametric terms"
        )));
    }
    let statistic = (null_fit.deviance - alt_fit.deviance).max(0.0);
    let p = if df == 0 || statistic == 0.0 {
        1.0
    } else {
        let chi = ChiSquared::new(df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        chi.sf(statistic)
    };
    Ok(GlrtResult { statistic, df, p })
}

pub const ACF_LAGS: usize = 30;

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub dispersion: f64,
    pub residual_df: f64,
    pub acf: Vec<f64>,
    pub acf_bound: f64,
    pub lags_outside: usize,
    pub overdispersion_flag: bool,
    pub autocorrelation_flag: bool,
}

pub fn deviance_residuals(fit: &FitResult) -> Vec<f64> {
    fit.response
        .iter()
        .zip(fit.fitted.iter())
        .map(|(&y, &m)| {
            let t = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
            let d = (2.0 * (t - (y - m))).max(0.0).sqrt();
            if y >= m {
                d
            } else {
                -d
            }
        })
        .collect()
}

/// Sample autocorrelation at lags `1..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    (1..=max_lag)
        .map(|lag| {
            if lag >= n || c0 == 0.0 {
                return 0.0;
            }
            let c: f64 = (0..n - lag).map(|t| (x[t] - mean) * (x[t + lag] - mean)).sum();
            c / c0
        })
        .collect()
}

pub fn diagnostics(fit: &FitResult) -> Diagnostics {
    let n = fit.nobs();
    let residual_df = n as f64 - fit.edf_total;
    let dispersion = fit.pearson / residual_df;
    let acf = autocorrelation(&deviance_residuals(fit), ACF_LAGS);
    let acf_bound = 1.96 / (n as f64).sqrt();
    let lags_outside = acf.iter().filter(|r| r.abs() > acf_bound).count();
    Diagnostics {
        dispersion,
        residual_df,
        overdispersion_flag: dispersion > 1.2,
        autocorrelation_flag: lags_outside as f64 > 0.1 * acf.len() as f64,
        acf,
        acf_bound,
        lags_outside,
    }
}

/// Values and standard errors of a smooth term at the design rows.
pub fn smooth_term(fit: &FitResult, design: &DesignMatrix, name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let b = design
        .smooth(name)
        .ok_or_else(|| Error::InvalidArgument(format!("no smooth term {name}")))?;
    let xb = design.x.columns(b.start, b.len);
    let coef = fit.gamma.rows(b.start, b.len);
    let v = fit.covariance.view((b.start, b.start), (b.len, b.len));
    let values = (xb * coef).iter().copied().collect();
    let se = xb
        .row_iter()
        .map(|r| (r * v * r.transpose())[(0, 0)].max(0.0).sqrt())
        .collect();
    Ok((values, se))
}
