//! Excess deaths from a fitted model and their simulation-based intervals.
//!
//! For a day `t` in period `l` the expected excess is
//! `exp(b₀ + f₁(doy_t) + f₂(year_t)) · (N_t·exp(b_l) − N*_t)`:
//! deaths expected with the period effect and the adjusted population,
//! minus deaths expected without it at the counterfactual population.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gam::{DesignMatrix, FitResult};
use crate::linalg::psd_factor;
use crate::timeseries::{days_between, PopulationSeries};

pub const DEFAULT_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Serialize)]
pub struct ExcessCurve {
    pub dates: Vec<NaiveDate>,
    pub excess: Vec<f64>,
    /// Expected deaths with the period effect at the adjusted population.
    pub mu: Vec<f64>,
    /// Expected deaths without it at the counterfactual population.
    pub psi: Vec<f64>,
    /// Period index per day; 0 when no indicator is active.
    pub period: Vec<usize>,
}

/// Evaluates excess deaths for arbitrary coefficient vectors on a fixed
/// design. Only rows with an active indicator are touched.
#[derive(Debug, Clone)]
pub struct ExcessModel {
    dates: Vec<NaiveDate>,
    rows: Vec<usize>,
    periods: Vec<usize>,
    columns: Vec<usize>,
    /// Design rows restricted to `rows`, indicator columns zeroed.
    base: DMatrix<f64>,
    log_n: Vec<f64>,
    log_n_star: Vec<f64>,
}

fn check_aligned(design: &DesignMatrix, pop: &PopulationSeries, what: &str) -> Result<()> {
    let start = design
        .dates
        .first()
        .copied()
        .ok_or_else(|| Error::InvalidArgument("design carries no dates".into()))?;
    if pop.start() != start || pop.len() != design.nrows() {
        return Err(Error::Alignment(format!(
            "{what} population has {} days from {}, design has {} from {start}",
            pop.len(),
            pop.start(),
            design.nrows()
        )));
    }
    Ok(())
}

impl ExcessModel {
    pub fn new(design: &DesignMatrix, pop_adjusted: &PopulationSeries, pop_star: &PopulationSeries) -> Result<Self> {
        check_aligned(design, pop_adjusted, "adjusted")?;
        check_aligned(design, pop_star, "counterfactual")?;
        let mut rows = Vec::new();
        let mut periods = Vec::new();
        let mut columns = Vec::new();
        for i in 0..design.nrows() {
            if let Some(&(l, c)) = design.period_columns.iter().find(|(_, c)| design.x[(i, *c)] != 0.0) {
                rows.push(i);
                periods.push(l);
                columns.push(c);
            }
        }
        let mut base = design.x.select_rows(&rows);
        for &(_, c) in &design.period_columns {
            base.column_mut(c).fill(0.0);
        }
        Ok(Self {
            dates: design.dates.clone(),
            log_n: rows.iter().map(|&i| pop_adjusted.values()[i].ln()).collect(),
            log_n_star: rows.iter().map(|&i| pop_star.values()[i].ln()).collect(),
            rows,
            periods,
            columns,
            base,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    fn components(&self, gamma: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let eta = &self.base * gamma;
        let mu = (0..self.rows.len())
            .map(|k| (eta[k] + self.log_n[k] + gamma[self.columns[k]]).exp())
            .collect();
        let psi = (0..self.rows.len())
            .map(|k| (eta[k] + self.log_n_star[k]).exp())
            .collect();
        (mu, psi)
    }

    /// Daily excess over every design day; exactly zero off-period.
    pub fn daily(&self, gamma: &DVector<f64>) -> Vec<f64> {
        let (mu, psi) = self.components(gamma);
        let mut out = vec![0.0; self.dates.len()];
        for (k, &i) in self.rows.iter().enumerate() {
            out[i] = mu[k] - psi[k];
        }
        out
    }

    pub fn curve(&self, gamma: &DVector<f64>) -> ExcessCurve {
        let (mu_k, psi_k) = self.components(gamma);
        let n = self.dates.len();
        let (mut excess, mut mu, mut psi, mut period) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0; n]);
        for (k, &i) in self.rows.iter().enumerate() {
            mu[i] = mu_k[k];
            psi[i] = psi_k[k];
            excess[i] = mu_k[k] - psi_k[k];
            period[i] = self.periods[k];
        }
        ExcessCurve {
            dates: self.dates.clone(),
            excess,
            mu,
            psi,
            period,
        }
    }

    fn window(&self, from: NaiveDate, to: NaiveDate) -> Result<(usize, usize)> {
        window(&self.dates, from, to)
    }

    /// The functional evaluated at the estimate and at every draw.
    pub fn samples(
        &self,
        draws: &PosteriorDraws,
        functional: Functional,
        from: NaiveDate,
        to: NaiveDate,
    ) -> Result<FunctionalSamples> {
        let (a, b) = self.window(from, to)?;
        let eval = |gamma: &DVector<f64>| functional.apply(&self.daily(gamma)[a..=b]);
        let estimate = eval(&draws.mean);
        let samples = draws.draws.par_iter().map(eval).collect();
        Ok(FunctionalSamples {
            dates: self.dates[a..=b].to_vec(),
            estimate,
            samples,
        })
    }
}

fn window(dates: &[NaiveDate], from: NaiveDate, to: NaiveDate) -> Result<(usize, usize)> {
    let (Some(&first), Some(&last)) = (dates.first(), dates.last()) else {
        return Err(Error::InvalidArgument("empty curve".into()));
    };
    if from > to || from < first || to > last {
        return Err(Error::InvalidArgument(format!(
            "window {from}..{to} is outside {first}..{last}"
        )));
    }
    Ok((days_between(first, from) as usize, days_between(first, to) as usize))
}

pub fn excess_curve(
    fit: &FitResult,
    design: &DesignMatrix,
    pop_adjusted: &PopulationSeries,
    pop_star: &PopulationSeries,
) -> Result<ExcessCurve> {
    if fit.gamma.len() != design.ncols() {
        return Err(Error::Alignment(format!(
            "fit has {} coefficients, design has {} columns",
            fit.gamma.len(),
            design.ncols()
        )));
    }
    Ok(ExcessModel::new(design, pop_adjusted, pop_star)?.curve(&fit.gamma))
}

/// Sum of daily excess over `q..=r`.
pub fn cumulative_excess(curve: &ExcessCurve, q: NaiveDate, r: NaiveDate) -> Result<f64> {
    let (a, b) = window(&curve.dates, q, r)?;
    Ok(curve.excess[a..=b].iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    /// Daily excess on each date.
    Daily,
    /// Running total from the start of the window.
    Cumulative,
}

impl Functional {
    fn apply(self, daily: &[f64]) -> Vec<f64> {
        match self {
            Functional::Daily => daily.to_vec(),
            Functional::Cumulative => daily
                .iter()
                .scan(0.0, |acc, v| {
                    *acc += v;
                    Some(*acc)
                })
                .collect(),
        }
    }
}

/// Coefficient draws from `N(γ̂, V)`. Draw `i` uses its own random stream
/// so the result does not depend on evaluation order.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub mean: DVector<f64>,
    pub draws: Vec<DVector<f64>>,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

pub fn posterior_draws(fit: &FitResult, s: usize, seed: u64) -> Result<PosteriorDraws> {
    draws_from(&fit.gamma, &fit.covariance, s, seed)
}

pub fn draws_from(mean: &DVector<f64>, cov: &DMatrix<f64>, s: usize, seed: u64) -> Result<PosteriorDraws> {
    if s == 0 {
        return Err(Error::InvalidArgument("need at least one posterior draw".into()));
    }
    let p = mean.len();
    if cov.nrows() != p || cov.ncols() != p {
        return Err(Error::Alignment(format!(
            "covariance is {}x{} for {p} coefficients",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let l = psd_factor(cov)?;
    let draws = (0..s)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let z = DVector::from_iterator(p, (0..p).map(|_| StandardNormal.sample(&mut rng)));
            mean + &l * z
        })
        .collect();
    Ok(PosteriorDraws {
        mean: mean.clone(),
        draws,
        seed,
    })
}

/// A functional at the estimate and at every posterior draw.
#[derive(Debug, Clone)]
pub struct FunctionalSamples {
    pub dates: Vec<NaiveDate>,
    pub estimate: Vec<f64>,
    /// One vector per draw, aligned with `dates`.
    pub samples: Vec<Vec<f64>>,
}

impl FunctionalSamples {
    fn column(&self, t: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[t]).collect()
    }

    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.dates.len())
            .map(|t| {
                let col = self.column(t);
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                var.sqrt()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    Pointwise,
    Simultaneous,
}

#[derive(Debug, Clone, Serialize)]
pub struct Band {
    pub kind: BandKind,
    pub level: f64,
    pub dates: Vec<NaiveDate>,
    pub estimate: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Multiplier of the per-date standard deviation (simultaneous only).
    pub critical_value: Option<f64>,
}

/// Sample quantile with linear interpolation between order statistics
/// (`(n-1)p` positioning). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_alpha(alpha: f64, samples: &FunctionalSamples) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if samples.samples.is_empty() {
        return Err(Error::InvalidArgument("no draws to summarize".into()));
    }
    Ok(())
}

/// Per-date `α/2` and `1-α/2` quantiles of the draws.
pub fn interval_pointwise(samples: &FunctionalSamples, alpha: f64) -> Result<Band> {
    check_alpha(alpha, samples)?;
    let (lo, hi) = (0..samples.dates.len())
        .map(|t| {
            let mut col = samples.column(t);
            col.sort_by(f64::total_cmp);
            (quantile_sorted(&col, alpha / 2.0), quantile_sorted(&col, 1.0 - alpha / 2.0))
        })
        .unzip();
    Ok(Band {
        kind: BandKind::Pointwise,
        level: 1.0 - alpha,
        dates: samples.dates.clone(),
        estimate: samples.estimate.clone(),
        lo,
        hi,
        critical_value: None,
    })
}

pub const SD_FLOOR: f64 = 1e-12;

/// Band `ĝ_t ± c·sd_t` where `c` is the `1-α` quantile over draws of the
/// largest standardized deviation from the estimate.
pub fn band_simultaneous(samples: &FunctionalSamples, alpha: f64) -> Result<Band> {
    check_alpha(alpha, samples)?;
    let sd: Vec<f64> = samples.std_devs().into_iter().map(|s| s.max(SD_FLOOR)).collect();
    let mut maxima: Vec<f64> = samples
        .samples
        .iter()
        .map(|g| {
            g.iter()
                .zip(&samples.estimate)
                .zip(&sd)
                .map(|((v, e), s)| (v - e).abs() / s)
                .fold(0.0, f64::max)
        })
        .collect();
    maxima.sort_by(f64::total_cmp);
    let c = quantile_sorted(&maxima, 1.0 - alpha);
    Ok(Band {
        kind: BandKind::Simultaneous,
        level: 1.0 - alpha,
        dates: samples.dates.clone(),
        lo: samples.estimate.iter().zip(&sd).map(|(e, s)| e - c * s).collect(),
        hi: samples.estimate.iter().zip(&sd).map(|(e, s)| e + c * s).collect(),
        estimate: samples.estimate.clone(),
        critical_value: Some(c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gam::{assemble_design, pirls_fit, ModelSpec};
    use crate::timeseries::{DailyCountSeries, PeriodPartition};
    use chrono::Duration;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    struct Setup {
        design: DesignMatrix,
        fit: FitResult,
        pop: PopulationSeries,
        star: PopulationSeries,
    }

    fn setup(seed: u64) -> Setup {
        let start = date(2016, 1, 1);
        let end = date(2018, 2, 28);
        let n = (end - start).num_days() as usize + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = (0..n).map(|i| 70 + (i % 7) as u64 + rng.random_range(0..20)).collect();
        let deaths = DailyCountSeries::new(start, counts).unwrap();
        let star = PopulationSeries::new(start, vec![3.3e6; n]).unwrap();
        let pop = PopulationSeries::new(
            start,
            (0..n).map(|i| 3.3e6 - 200.0 * i.saturating_sub(600) as f64).collect(),
        )
        .unwrap();
        let partition = PeriodPartition::monthly(date(2017, 9, 20), end).unwrap();
        let spec = ModelSpec::new(partition).with_periods(vec![1, 2, 3, 4]);
        let design = assemble_design(&spec, &deaths, &pop, &star).unwrap();
        let fit = pirls_fit(&design, &[1.0]).unwrap();
        Setup { design, fit, pop, star }
    }

    #[test]
    fn matches_hand_evaluation() {
        let s = setup(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gamma = DVector::from_fn(s.fit.gamma.len(), |i, _| s.fit.gamma[i] + rng.random_range(-0.1..0.1));
        let curve = ExcessModel::new(&s.design, &s.pop, &s.star).unwrap().curve(&gamma);
        let period_cols: Vec<usize> = s.design.period_columns.iter().map(|(_, c)| *c).collect();
        for _ in 0..5 {
            let t = rng.random_range(0..s.design.nrows());
            let mut base = 0.0;
            let mut effect = None;
            for j in 0..gamma.len() {
                if period_cols.contains(&j) {
                    if s.design.x[(t, j)] == 1.0 {
                        effect = Some(gamma[j]);
                    }
                } else {
                    base += s.design.x[(t, j)] * gamma[j];
                }
            }
            let expected = match effect {
                Some(b) => base.exp() * (s.pop.values()[t] * b.exp() - s.star.values()[t]),
                None => 0.0,
            };
            assert!((curve.excess[t] - expected).abs() <= 1e-10 * expected.abs().max(1.0));
        }
        for (i, d) in curve.dates.iter().enumerate() {
            if *d < date(2017, 9, 20) || *d > date(2017, 12, 31) {
                assert_eq!(curve.excess[i], 0.0);
            }
        }
    }

    #[test]
    fn zero_effect_equal_population_is_zero() {
        let s = setup(3);
        let mut gamma = s.fit.gamma.clone();
        for &(_, c) in &s.design.period_columns {
            gamma[c] = 0.0;
        }
        let curve = ExcessModel::new(&s.design, &s.star, &s.star).unwrap().curve(&gamma);
        assert!(curve.excess.iter().all(|&e| e.abs() < 1e-9));
    }

    #[test]
    fn cumulative_additive() {
        let s = setup(4);
        let curve = excess_curve(&s.fit, &s.design, &s.pop, &s.star).unwrap();
        let q = date(2017, 9, 25);
        let m = date(2017, 10, 14);
        let r = date(2017, 12, 2);
        let whole = cumulative_excess(&curve, q, r).unwrap();
        let parts = cumulative_excess(&curve, q, m).unwrap()
            + cumulative_excess(&curve, m + Duration::days(1), r).unwrap();
        assert!((whole - parts).abs() < 1e-9);
        let single = cumulative_excess(&curve, q, q).unwrap();
        assert_eq!(single, curve.excess[curve.dates.iter().position(|d| *d == q).unwrap()]);
        assert!(cumulative_excess(&curve, r, q).is_err());
        assert!(cumulative_excess(&curve, q, date(2019, 1, 1)).is_err());
        let other = PopulationSeries::new(date(2016, 1, 2), vec![1.0; s.design.nrows()]).unwrap();
        assert!(excess_curve(&s.fit, &s.design, &other, &s.star).is_err());
    }

    #[test]
    fn draws_reproducible_and_degenerate() {
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let zero = DMatrix::zeros(2, 2);
        let d = draws_from(&mean, &zero, 10, 1).unwrap();
        assert!(d.draws.iter().all(|g| *g == mean));
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let a = draws_from(&mean, &cov, 100, 7).unwrap();
        let b = draws_from(&mean, &cov, 100, 7).unwrap();
        assert_eq!(a.draws, b.draws);
        let c = draws_from(&mean, &cov, 100, 8).unwrap();
        assert_ne!(a.draws, c.draws);
        // a prefix of a longer run is the same draws
        let longer = draws_from(&mean, &cov, 150, 7).unwrap();
        assert_eq!(&longer.draws[..100], &a.draws[..]);
    }

    #[test]
    fn draw_covariance_converges() {
        let mean = DVector::from_vec(vec![0.5, 1.0, -1.0]);
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, -0.2, 0.1, -0.2, 0.3]);
        let d = draws_from(&mean, &cov, 100_000, 11).unwrap();
        let n = d.len() as f64;
        let emp_mean = d.draws.iter().fold(DVector::zeros(3), |acc, g| acc + g) / n;
        for i in 0..3 {
            let var = d.draws.iter().map(|g| (g[i] - emp_mean[i]).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(((var - cov[(i, i)]) / cov[(i, i)]).abs() < 0.02);
            assert!((emp_mean[i] - mean[i]).abs() < 4.0 * (cov[(i, i)] / n).sqrt());
        }
    }

    #[test]
    fn quantiles_match_sorted_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..3.0)).collect();
        let samples = FunctionalSamples {
            dates: vec![date(2017, 1, 1)],
            estimate: vec![0.0],
            samples: values.iter().map(|v| vec![*v]).collect(),
        };
        let band = interval_pointwise(&samples, 0.05).unwrap();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        // (n-1)p = 24.975 and 974.025
        let lo = sorted[24] + 0.975 * (sorted[25] - sorted[24]);
        let hi = sorted[974] + 0.025 * (sorted[975] - sorted[974]);
        assert_eq!(band.lo[0], lo);
        assert_eq!(band.hi[0], hi);
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
    }

    #[test]
    fn degenerate_draws_give_zero_width() {
        let samples = FunctionalSamples {
            dates: vec![date(2017, 1, 1), date(2017, 1, 2)],
            estimate: vec![3.0, 4.0],
            samples: vec![vec![3.0, 4.0]; 50],
        };
        let p = interval_pointwise(&samples, 0.05).unwrap();
        assert_eq!((p.lo.clone(), p.hi.clone()), (vec![3.0, 4.0], vec![3.0, 4.0]));
        let s = band_simultaneous(&samples, 0.05).unwrap();
        assert_eq!(s.lo, vec![3.0, 4.0]);
        assert_eq!(s.hi, vec![3.0, 4.0]);
        assert!(interval_pointwise(&samples, 1.5).is_err());
    }

    #[test]
    fn bands_nest_and_widen_with_level() {
        let s = setup(6);
        let draws = posterior_draws(&s.fit, 4000, 9).unwrap();
        let model = ExcessModel::new(&s.design, &s.pop, &s.star).unwrap();
        let samples = model
            .samples(&draws, Functional::Cumulative, date(2017, 9, 20), date(2017, 12, 31))
            .unwrap();
        let p95 = interval_pointwise(&samples, 0.05).unwrap();
        let s95 = band_simultaneous(&samples, 0.05).unwrap();
        let p80 = interval_pointwise(&samples, 0.2).unwrap();
        let s80 = band_simultaneous(&samples, 0.2).unwrap();
        for t in 0..samples.dates.len() {
            assert!(s95.lo[t] <= p95.lo[t] && p95.hi[t] <= s95.hi[t]);
            assert!(p95.lo[t] <= p80.lo[t] && p80.hi[t] <= p95.hi[t]);
            assert!(s95.lo[t] <= s80.lo[t] && s80.hi[t] <= s95.hi[t]);
            assert!(p95.lo[t] <= p95.estimate[t] && p95.estimate[t] <= p95.hi[t]);
        }
        // one date: simultaneous and pointwise agree up to Monte Carlo error
        let single = model
            .samples(&draws, Functional::Daily, date(2017, 10, 5), date(2017, 10, 5))
            .unwrap();
        let a = interval_pointwise(&single, 0.05).unwrap();
        let b = band_simultaneous(&single, 0.05).unwrap();
        let width = a.hi[0] - a.lo[0];
        assert!(((b.hi[0] - b.lo[0]) - width).abs() < 0.05 * width);
    }

    #[test]
    fn linear_functional_matches_delta_method() {
        let s = setup(7);
        let draws = posterior_draws(&s.fit, 20_000, 3).unwrap();
        let a = DVector::from_fn(s.fit.gamma.len(), |i, _| if i < 3 { 1.0 } else { 0.1 });
        let values: Vec<f64> = draws.draws.iter().map(|g| a.dot(g)).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let delta = (a.transpose() * &s.fit.covariance * &a)[(0, 0)].sqrt();
        assert!(((sd - delta) / delta).abs() < 0.1);
    }
}
