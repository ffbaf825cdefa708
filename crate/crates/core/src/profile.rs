//! Before/after Poisson model with a profile-likelihood interval for the
//! excess death rate.
//!
//! Pre-emergency daily deaths are Poisson(λ), post-emergency daily deaths
//! are Poisson(λ + ρ). Only the totals `x`, `y` and day counts `m`, `n`
//! enter the likelihood. For a fixed ρ₀ the nuisance λ is profiled out in
//! closed form; the interval for ρ is where −2 log LRT stays below the χ²₁
//! quantile.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::timeseries::DailyCountSeries;

/// Sufficient statistics: `x` deaths over `m` pre days, `y` over `n` post days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SummaryCounts {
    pub x: u64,
    pub m: u64,
    pub y: u64,
    pub n: u64,
}

impl SummaryCounts {
    pub fn new(x: u64, m: u64, y: u64, n: u64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "day counts must be positive (m = {m}, n = {n})"
            )));
        }
        Ok(Self { x, m, y, n })
    }

    pub fn from_series(pre: &DailyCountSeries, post: &DailyCountSeries) -> Result<Self> {
        Self::new(pre.total(), pre.len() as u64, post.total(), post.len() as u64)
    }

    /// `λ̂ = x/m`
    pub fn lambda_mle(&self) -> f64 {
        self.x as f64 / self.m as f64
    }

    /// `ρ̂ = y/n − x/m`
    pub fn rho_mle(&self) -> f64 {
        self.y as f64 / self.n as f64 - self.lambda_mle()
    }

    fn swapped(&self) -> Self {
        Self {
            x: self.y,
            m: self.n,
            y: self.x,
            n: self.m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub rho0: f64,
    pub lambda_hat_hat: f64,
    pub neg2loglrt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Model1Result {
    pub counts: SummaryCounts,
    pub alpha: f64,
    pub lambda_mle: f64,
    pub rho_mle: f64,
    pub excess_mle: f64,
    pub ci_rho: (f64, f64),
    pub ci_excess: (f64, f64),
}

/// Larger root of `(m+n)λ² − (x+y−(m+n)ρ₀)λ − xρ₀ = 0`, evaluated without
/// cancellation.
fn plus_root(c: &SummaryCounts, rho0: f64) -> f64 {
    let a = (c.m + c.n) as f64;
    let x = c.x as f64;
    let b = (c.x + c.y) as f64 - a * rho0;
    let disc = b * b + 4.0 * a * x * rho0;
    let sq = disc.max(0.0).sqrt();
    if b >= 0.0 {
        (b + sq) / (2.0 * a)
    } else {
        // b < 0 forces ρ₀ > 0, so x·ρ₀ ≥ 0 and the product form is stable.
        2.0 * x * rho0 / (sq - b)
    }
}

/// Restricted MLE `λ̂̂(ρ₀)`: the background rate maximizing the likelihood
/// with the excess rate held at `rho0`.
pub fn restricted_lambda(counts: &SummaryCounts, rho0: f64) -> Result<f64> {
    Ok(restricted_means(counts, rho0)?.0)
}

/// `(λ̂̂, λ̂̂ + ρ₀)`. The post-period mean solves the mirrored quadratic, which
/// keeps it accurate when ρ₀ is large and negative.
fn restricted_means(counts: &SummaryCounts, rho0: f64) -> Result<(f64, f64)> {
    if !rho0.is_finite() {
        return Err(Error::Domain(format!("rho0 must be finite, got {rho0}")));
    }
    let lambda = plus_root(counts, rho0).max(0.0);
    let post = plus_root(&counts.swapped(), -rho0).max(0.0);
    if !(lambda.is_finite() && post.is_finite()) {
        return Err(Error::Domain(format!("no admissible background rate at rho0 = {rho0}")));
    }
    if counts.y > 0 && post <= 0.0 {
        return Err(Error::Domain(format!(
            "post-emergency mean is not positive at rho0 = {rho0}"
        )));
    }
    if counts.x > 0 && lambda <= 0.0 {
        return Err(Error::Domain(format!(
            "background rate is not positive at rho0 = {rho0}"
        )));
    }
    Ok((lambda, post))
}

/// `k·[a·log(a/b) − a + b]` with `0·log 0 = 0`; one Poisson deviance term
/// per group, with `a` the unrestricted mean and `b` the restricted one.
fn deviance_term(days: f64, total: u64, restricted: f64) -> f64 {
    let observed = total as f64;
    let log_part = if total == 0 {
        0.0
    } else {
        observed * ((observed / days) / restricted).ln()
    };
    log_part - observed + days * restricted
}

/// −2 log LRT for `H₀: ρ = rho0`.
pub fn neg2_log_lrt(counts: &SummaryCounts, rho0: f64) -> Result<f64> {
    let (lambda, post) = restricted_means(counts, rho0)?;
    let stat = 2.0
        * (deviance_term(counts.m as f64, counts.x, lambda)
            + deviance_term(counts.n as f64, counts.y, post));
    Ok(stat.max(0.0))
}

pub fn profile_point(counts: &SummaryCounts, rho0: f64) -> Result<ProfilePoint> {
    Ok(ProfilePoint {
        rho0,
        lambda_hat_hat: restricted_lambda(counts, rho0)?,
        neg2loglrt: neg2_log_lrt(counts, rho0)?,
    })
}

pub fn chi2_quantile(df: f64, p: f64) -> f64 {
    ChiSquared::new(df).expect("df > 0").inverse_cdf(p)
}

const CI_TOL: f64 = 1e-8;
const MAX_EXPANSIONS: usize = 200;

/// Wilks interval for ρ at level `1 − alpha`.
pub fn profile_ci(counts: &SummaryCounts, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let cutoff = chi2_quantile(1.0, 1.0 - alpha);
    let rho_hat = counts.rho_mle();
    let f = |rho: f64| neg2_log_lrt(counts, rho).map(|s| s - cutoff);

    // Initial step on the scale of the Wald standard error.
    let (m, n) = (counts.m as f64, counts.n as f64);
    let se = ((counts.x as f64).max(1.0) / (m * m) + (counts.y as f64).max(1.0) / (n * n)).sqrt();

    let bracket = |dir: f64| -> Result<f64> {
        let mut inner = rho_hat;
        let mut step = se;
        for _ in 0..MAX_EXPANSIONS {
            let outer = rho_hat + dir * step;
            if f(outer)? > 0.0 {
                return bisect(&f, inner, outer);
            }
            inner = outer;
            step *= 2.0;
        }
        Err(Error::Numerical(format!(
            "profile interval could not be bracketed on the {} side",
            if dir < 0.0 { "lower" } else { "upper" }
        )))
    };
    let lo = bracket(-1.0)?;
    let hi = bracket(1.0)?;
    Ok((lo, hi))
}

/// Root of `f` between `inside` (f ≤ 0) and `outside` (f > 0).
fn bisect(f: &impl Fn(f64) -> Result<f64>, mut inside: f64, mut outside: f64) -> Result<f64> {
    while (outside - inside).abs() > CI_TOL {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        if f(mid)? > 0.0 {
            outside = mid;
        } else {
            inside = mid;
        }
    }
    Ok(0.5 * (inside + outside))
}

/// `n(y/n − x/m)`; negative values are a death deficit.
pub fn cumulative_excess_mle(counts: &SummaryCounts) -> f64 {
    counts.n as f64 * counts.rho_mle()
}

pub fn model1(counts: &SummaryCounts, alpha: f64) -> Result<Model1Result> {
    let ci_rho = profile_ci(counts, alpha)?;
    let n = counts.n as f64;
    Ok(Model1Result {
        counts: *counts,
        alpha,
        lambda_mle: counts.lambda_mle(),
        rho_mle: counts.rho_mle(),
        excess_mle: cumulative_excess_mle(counts),
        ci_rho,
        ci_excess: (n * ci_rho.0, n * ci_rho.1),
    })
}

/// −2 log LRT sampled on a grid spanning the interval, for plotting.
pub fn profile_curve(
    counts: &SummaryCounts,
    ci: (f64, f64),
    points: usize,
) -> Result<Vec<ProfilePoint>> {
    let width = (ci.1 - ci.0).max(1e-6);
    let (lo, hi) = (ci.0 - 0.5 * width, ci.1 + 0.5 * width);
    (0..points)
        .map(|i| {
            let t = i as f64 / (points.max(2) - 1) as f64;
            profile_point(counts, lo + t * (hi - lo))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HorizonInterval {
    pub k: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Bonferroni-adjusted intervals for cumulative excess deaths at each
/// horizon. `horizons[k-1]` holds the counts through post day `k`; each
/// interval is the profile interval at level `1 − alpha/H` scaled by the
/// horizon length.
pub fn bonferroni_cumulative(
    horizons: &[SummaryCounts],
    alpha: f64,
) -> Result<Vec<HorizonInterval>> {
    if horizons.is_empty() {
        return Err(Error::InvalidArgument("no horizons".into()));
    }
    let first = horizons[0];
    if horizons
        .iter()
        .any(|h| h.x != first.x || h.m != first.m)
        || horizons.windows(2).any(|w| w[1].n <= w[0].n || w[1].y < w[0].y)
    {
        return Err(Error::InvalidArgument(
            "horizons must share pre-period counts and grow in length".into(),
        ));
    }
    let per = alpha / horizons.len() as f64;
    horizons
        .iter()
        .map(|h| {
            let (lo, hi) = profile_ci(h, per)?;
            let k = h.n as f64;
            Ok(HorizonInterval {
                k: h.n,
                estimate: cumulative_excess_mle(h),
                lo: k * lo,
                hi: k * hi,
            })
        })
        .collect()
}

/// Nested horizons `1..=post.len()` from a pre- and post-period series.
pub fn horizons_from_series(
    pre: &DailyCountSeries,
    post: &DailyCountSeries,
) -> Result<Vec<SummaryCounts>> {
    let (x, m) = (pre.total(), pre.len() as u64);
    let mut y = 0;
    post.counts()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            y += c;
            SummaryCounts::new(x, m, y, i as u64 + 1)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
}

/// One-way ANOVA on daily counts for equality of group means.
pub fn anova_precheck(groups: &[&[u64]]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument("ANOVA needs at least two groups".into()));
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(Error::InvalidArgument(
            "every ANOVA group needs at least two observations".into(),
        ));
    }
    let total_n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<u64>() as f64 / total_n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let mean = g.iter().sum::<u64>() as f64 / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand).powi(2);
        ss_within += g.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
    }
    let df_between = groups.len() - 1;
    let df_within = total_n - groups.len();
    if ss_within <= 0.0 {
        return Err(Error::Domain(
            "ANOVA groups have no within-group variation".into(),
        ));
    }
    let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
    let dist = FisherSnedecor::new(df_between as f64, df_within as f64)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(AnovaResult {
        f,
        p: dist.sf(f),
        df_between,
        df_within,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(x: u64, m: u64, y: u64, n: u64) -> SummaryCounts {
        SummaryCounts::new(x, m, y, n).unwrap()
    }

    /// Root of the score equation by bisection, independent of the quadratic.
    fn score_root(s: &SummaryCounts, rho0: f64) -> f64 {
        let (x, m, y, n) = (s.x as f64, s.m as f64, s.y as f64, s.n as f64);
        let score = |l: f64| x / l - m + y / (l + rho0) - n;
        let mut lo = (-rho0).max(0.0);
        let mut hi = lo + 1.0;
        while score(hi) > 0.0 {
            hi = lo + 2.0 * (hi - lo);
        }
        if x == 0.0 && score(lo + 1e-300) <= 0.0 {
            return lo;
        }
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if score(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Log-likelihood without the constant, 0·log 0 = 0.
    fn loglik(s: &SummaryCounts, lambda: f64, rho: f64) -> f64 {
        let xlog = |k: u64, mu: f64| if k == 0 { 0.0 } else { k as f64 * mu.ln() };
        xlog(s.x, lambda) - s.m as f64 * lambda + xlog(s.y, lambda + rho)
            - s.n as f64 * (lambda + rho)
    }

    #[test]
    fn pooled_mle_at_zero_excess() {
        assert_eq!(restricted_lambda(&c(50, 10, 40, 5), 0.0).unwrap(), 6.0);
    }

    #[test]
    fn quadratic_example() {
        let l = restricted_lambda(&c(50, 10, 40, 5), 3.0).unwrap();
        assert!((l - 5.0).abs() < 1e-12, "{l}");
        assert!((score_root(&c(50, 10, 40, 5), 3.0) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn zero_background_collapses() {
        for y in [0, 3, 40] {
            let s = c(0, 10, y, 5);
            for rho0 in [y as f64 / 5.0, y as f64 / 5.0 + 1.0, 100.0] {
                assert_eq!(restricted_lambda(&s, rho0).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn zero_background_matches_grid_maximum() {
        let s = c(0, 10, 12, 5);
        let rho0 = 0.2;
        let best = (0..200_000)
            .map(|i| i as f64 * 1e-5)
            .max_by(|a, b| loglik(&s, *a, rho0).total_cmp(&loglik(&s, *b, rho0)))
            .unwrap();
        let l = restricted_lambda(&s, rho0).unwrap();
        assert!((l - best).abs() < 2e-5, "{l} vs {best}");
        assert!((l - (12.0 - 15.0 * 0.2) / 15.0).abs() < 1e-14);
    }

    #[test]
    fn lrt_zero_at_mle() {
        let s = c(50, 10, 40, 5);
        assert!(neg2_log_lrt(&s, s.rho_mle()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn lrt_matches_direct_loglik_difference() {
        let s = c(50, 10, 40, 5);
        let direct = -2.0 * (loglik(&s, 6.0, 0.0) - loglik(&s, 5.0, 3.0));
        let got = neg2_log_lrt(&s, 0.0).unwrap();
        assert!((got - direct).abs() < 1e-10, "{got} vs {direct}");
    }

    #[test]
    fn lrt_monotone_away_from_mle() {
        let s = c(50, 10, 40, 5);
        let rho_hat = s.rho_mle();
        let grid: Vec<f64> = (0..400).map(|i| rho_hat + i as f64 * 0.025).collect();
        let vals: Vec<f64> = grid.iter().map(|&r| neg2_log_lrt(&s, r).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        let grid: Vec<f64> = (0..400).map(|i| rho_hat - i as f64 * 0.025).collect();
        let vals: Vec<f64> = grid.iter().map(|&r| neg2_log_lrt(&s, r).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn ci_straddles_zero_without_effect() {
        let (lo, hi) = profile_ci(&c(500, 100, 150, 30), 0.05).unwrap();
        assert!(lo < 0.0 && hi > 0.0);
    }

    #[test]
    fn ci_matches_grid_scan() {
        let s = c(50, 10, 40, 5);
        let (lo, hi) = profile_ci(&s, 0.05).unwrap();
        let cut = 3.841_458_820_694_124;
        let step = 2e-5;
        let full = loglik(&s, s.lambda_mle(), s.rho_mle());
        let inside: Vec<f64> = (0..750_000)
            .map(|i| -3.0 + i as f64 * step)
            .filter(|&r| -2.0 * (loglik(&s, score_root(&s, r), r) - full) <= cut)
            .collect();
        assert!(inside[0] > -3.0 + step && *inside.last().unwrap() < 12.0 - step);
        let (glo, ghi) = (inside[0], *inside.last().unwrap());
        assert!((lo - glo).abs() < 1e-4, "{lo} vs {glo}");
        assert!((hi - ghi).abs() < 1e-4, "{hi} vs {ghi}");
    }

    #[test]
    fn alpha_validation() {
        assert!(profile_ci(&c(5, 1, 5, 1), 0.0).is_err());
        assert!(profile_ci(&c(5, 1, 5, 1), 1.0).is_err());
    }

    #[test]
    fn tiny_counts_still_bracket() {
        for s in [c(0, 1, 0, 1), c(0, 3, 1, 1), c(2, 1, 0, 4)] {
            let (lo, hi) = profile_ci(&s, 0.05).unwrap();
            assert!(lo <= s.rho_mle() && s.rho_mle() <= hi);
        }
    }

    #[test]
    fn cumulative_excess_examples() {
        assert_eq!(cumulative_excess_mle(&c(50, 10, 40, 5)), 15.0);
        assert_eq!(cumulative_excess_mle(&c(50, 10, 25, 5)), 0.0);
        let r = model1(&c(50, 10, 40, 5), 0.05).unwrap();
        assert_eq!(r.excess_mle, 5.0 * r.rho_mle);
        assert!(r.ci_rho.0 < r.rho_mle && r.rho_mle < r.ci_rho.1);
        assert_eq!(r.ci_excess, (5.0 * r.ci_rho.0, 5.0 * r.ci_rho.1));
    }

    #[test]
    fn bonferroni_single_horizon_is_plain_interval() {
        let s = c(500, 100, 9, 1);
        let b = bonferroni_cumulative(&[s], 0.05).unwrap();
        let (lo, hi) = profile_ci(&s, 0.05).unwrap();
        assert_eq!((b[0].lo, b[0].hi), (lo, hi));
    }

    #[test]
    fn bonferroni_contains_pointwise() {
        let horizons: Vec<_> = (1..=10).map(|k| c(500, 100, 7 * k, k)).collect();
        let b = bonferroni_cumulative(&horizons, 0.05).unwrap();
        for (h, iv) in horizons.iter().zip(&b) {
            let (lo, hi) = profile_ci(h, 0.05).unwrap();
            let k = h.n as f64;
            assert!(iv.lo < k * lo && iv.hi > k * hi);
        }
    }

    #[test]
    fn bonferroni_rejects_non_nested() {
        assert!(bonferroni_cumulative(&[c(5, 1, 5, 2), c(5, 1, 5, 1)], 0.05).is_err());
        assert!(bonferroni_cumulative(&[c(5, 1, 5, 1), c(6, 1, 5, 2)], 0.05).is_err());
    }

    #[test]
    fn anova_identical_groups() {
        let g = [80u64, 85, 90, 75];
        let r = anova_precheck(&[&g, &g, &g]).unwrap();
        assert!(r.f.abs() < 1e-12);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anova_hand_computed() {
        // groups {1,2,3} and {4,5,6}: SSB = 13.5, SSW = 4, F = 13.5 / (4/4) = 13.5
        let r = anova_precheck(&[&[1, 2, 3], &[4, 5, 6]]).unwrap();
        assert!((r.f - 13.5).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (1, 4));
        // F(1,4) survival at 13.5, equal to the two-sided t(4) p-value at sqrt(13.5)
        assert!((r.p - 0.021_311_641_128_756_2).abs() < 1e-9, "{}", r.p);
    }

    #[test]
    fn anova_degenerate() {
        assert!(anova_precheck(&[&[1, 2]]).is_err());
        assert!(anova_precheck(&[&[1, 2], &[3]]).is_err());
        assert!(anova_precheck(&[&[4, 4], &[4, 4]]).is_err());
    }

    #[test]
    fn anova_null_calibration() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Poisson};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pois = Poisson::new(80.0).unwrap();
        let reps = 2000;
        let mut below = [0usize; 4];
        for _ in 0..reps {
            let a: Vec<u64> = (0..31).map(|_| pois.sample(&mut rng) as u64).collect();
            let b: Vec<u64> = (0..31).map(|_| pois.sample(&mut rng) as u64).collect();
            let p = anova_precheck(&[&a, &b]).unwrap().p;
            for (i, q) in [0.1, 0.25, 0.5, 0.75].iter().enumerate() {
                if p < *q {
                    below[i] += 1;
                }
            }
        }
        for (i, q) in [0.1, 0.25, 0.5, 0.75].iter().enumerate() {
            let frac = below[i] as f64 / reps as f64;
            let se = (q * (1.0 - q) / reps as f64).sqrt();
            assert!((frac - q).abs() < 4.0 * se, "P(p<{q}) = {frac}");
        }
    }

    proptest! {
        #[test]
        fn restriction_inactive_at_mle(x in 0u64..5000, m in 1u64..400, y in 0u64..5000, n in 1u64..400) {
            let s = c(x, m, y, n);
            let l = restricted_lambda(&s, s.rho_mle()).unwrap();
            prop_assert!((l - s.lambda_mle()).abs() <= 1e-12 * s.lambda_mle().max(1.0));
        }

        #[test]
        fn lrt_nonnegative_and_zero_only_at_mle(
            x in 0u64..3000, m in 1u64..200, y in 0u64..3000, n in 1u64..200, off in -20.0f64..20.0,
        ) {
            let s = c(x, m, y, n);
            let v = neg2_log_lrt(&s, s.rho_mle() + off).unwrap();
            prop_assert!(v >= -1e-9);
            if off.abs() > 1e-3 {
                prop_assert!(v > 1e-9);
            }
        }

        #[test]
        fn closed_form_matches_score_root(
            x in 1u64..5000, m in 1u64..300, y in 0u64..5000, n in 1u64..300, t in -0.95f64..3.0,
        ) {
            let s = c(x, m, y, n);
            let rho0 = t * s.lambda_mle().max(0.1);
            let a = restricted_lambda(&s, rho0).unwrap();
            let b = score_root(&s, rho0);
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-300), "{} vs {}", a, b);
        }

        #[test]
        fn doubling_data_narrows_interval(x in 10u64..2000, m in 2u64..100, y in 10u64..2000, n in 2u64..100) {
            let a = profile_ci(&c(x, m, y, n), 0.05).unwrap();
            let b = profile_ci(&c(2 * x, 2 * m, 2 * y, 2 * n), 0.05).unwrap();
            prop_assert!(b.1 - b.0 < a.1 - a.0);
        }

        #[test]
        fn excess_scales_with_horizon(lam in 1u64..50, rho in 0u64..20, n in 1u64..50, k in 2u64..5) {
            let s1 = c(lam * 10, 10, (lam + rho) * n, n);
            let s2 = c(lam * 10, 10, (lam + rho) * n * k, n * k);
            prop_assert!((cumulative_excess_mle(&s2) - k as f64 * cumulative_excess_mle(&s1)).abs() < 1e-9);
        }
    }
}
