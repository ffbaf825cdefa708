//! C ABI over the excess-deaths library.
//!
//! Every fallible call returns an [`ExdStatus`]; on failure the message is
//! available from [`exd_last_error`] on the same thread. Dates cross the
//! boundary as `YYYY-MM-DD` strings. A fitted model is an opaque
//! [`ExdModel2`] handle released with [`exd_model2_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use chrono::NaiveDate;
use excess_deaths::error::Error;
use excess_deaths::excess::{band_simultaneous, interval_pointwise, posterior_draws, ExcessModel, Functional};
use excess_deaths::gam::{assemble_design, diagnostics, select_smoothing, wald_test, DesignMatrix, FitResult, ModelSpec};
use excess_deaths::ingest::{load_anchors, load_deaths, load_movements, population_pipeline, Extrapolation};
use excess_deaths::profile::{model1, neg2_log_lrt, restricted_lambda, SummaryCounts};
use excess_deaths::timeseries::{DailyCountSeries, PeriodPartition, PopulationSeries, RATE_SCALE};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Input = 4,
    RankDeficient = 5,
    NotPositiveDefinite = 6,
    NonConvergence = 7,
    Numerical = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExdExtrapolation {
    None = 0,
    Linear = 1,
    Hold = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ExdModel1 {
    pub lambda_mle: f64,
    pub rho_mle: f64,
    pub excess_mle: f64,
    pub ci_rho_lo: f64,
    pub ci_rho_hi: f64,
    pub ci_excess_lo: f64,
    pub ci_excess_hi: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ExdPeriodEffect {
    /// Log-rate coefficient.
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    /// `exp(estimate)`.
    pub effect: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ExdFitSummary {
    pub nobs: usize,
    pub num_periods: usize,
    pub deviance: f64,
    pub edf_total: f64,
    pub dispersion: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ExdInterval {
    pub estimate: f64,
    pub pointwise_lo: f64,
    pub pointwise_hi: f64,
    pub simultaneous_lo: f64,
    pub simultaneous_hi: f64,
}

/// Opaque fitted model.
pub struct ExdModel2 {
    design: DesignMatrix,
    fit: FitResult,
    pop: PopulationSeries,
    pop_star: PopulationSeries,
    partition: PeriodPartition,
}

struct Fail {
    status: ExdStatus,
    message: String,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Alignment(_) | Error::InvalidArgument(_) | Error::Gap { .. } | Error::Config(_) => {
                ExdStatus::InvalidArgument
            }
            Error::Domain(_) => ExdStatus::Domain,
            Error::Ingest { .. } | Error::Io { .. } => ExdStatus::Input,
            Error::RankDeficient(_) => ExdStatus::RankDeficient,
            Error::NotPositiveDefinite(_) => ExdStatus::NotPositiveDefinite,
            Error::NonConvergence { .. } => ExdStatus::NonConvergence,
            Error::Numerical(_) => ExdStatus::Numerical,
        };
        Fail {
            status,
            message: e.to_string(),
        }
    }
}

fn fail(status: ExdStatus, message: impl Into<String>) -> Fail {
    Fail {
        status,
        message: message.into(),
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ExdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ExdStatus::Ok
        }
        Ok(Err(Fail { status, message })) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            ExdStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| fail(ExdStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn handle<'a>(h: *const ExdModel2) -> Result<&'a ExdModel2, Fail> {
    h.as_ref()
        .ok_or_else(|| fail(ExdStatus::NullPointer, "model handle is null"))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(ExdStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ExdStatus::InvalidArgument, format!("`{name}` is not valid UTF-8")))
}

unsafe fn c_date(p: *const c_char, name: &str) -> Result<NaiveDate, Fail> {
    let s = c_str(p, name)?;
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| fail(ExdStatus::InvalidArgument, format!("`{name}`: bad date {s:?}: {e}")))
}

unsafe fn c_slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(fail(ExdStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn exd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call into the library.
#[no_mangle]
pub extern "C" fn exd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Deaths per 1000 person-years.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn exd_mortality_rate(deaths: u64, population: f64, out: *mut f64) -> ExdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if !(population.is_finite() && population > 0.0) {
            return Err(fail(ExdStatus::Domain, format!("population must be positive, got {population}")));
        }
        *out = deaths as f64 / population * RATE_SCALE;
        Ok(())
    })
}

/// Before/after comparison: `x` deaths over `m` days before, `y` over `n`
/// days after.
///
/// # Safety
/// `out` must be a valid pointer to an `ExdModel1`.
#[no_mangle]
pub unsafe extern "C" fn exd_model1(x: u64, m: u64, y: u64, n: u64, alpha: f64, out: *mut ExdModel1) -> ExdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let r = model1(&SummaryCounts::new(x, m, y, n)?, alpha)?;
        *out = ExdModel1 {
            lambda_mle: r.lambda_mle,
            rho_mle: r.rho_mle,
            excess_mle: r.excess_mle,
            ci_rho_lo: r.ci_rho.0,
            ci_rho_hi: r.ci_rho.1,
            ci_excess_lo: r.ci_excess.0,
            ci_excess_hi: r.ci_excess.1,
        };
        Ok(())
    })
}

/// Baseline rate maximizing the likelihood with the excess rate held at `rho0`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn exd_restricted_lambda(
    x: u64,
    m: u64,
    y: u64,
    n: u64,
    rho0: f64,
    out: *mut f64,
) -> ExdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = restricted_lambda(&SummaryCounts::new(x, m, y, n)?, rho0)?;
        Ok(())
    })
}

/// Likelihood ratio statistic for the excess rate equal to `rho0`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn exd_neg2_log_lrt(
    x: u64,
    m: u64,
    y: u64,
    n: u64,
    rho0: f64,
    out: *mut f64,
) -> ExdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = neg2_log_lrt(&SummaryCounts::new(x, m, y, n)?, rho0)?;
        Ok(())
    })
}

fn fit_model(
    deaths: DailyCountSeries,
    pop: PopulationSeries,
    pop_star: PopulationSeries,
    partition: PeriodPartition,
) -> Result<Box<ExdModel2>, Fail> {
    let spec = ModelSpec::new(partition.clone());
    let design = assemble_design(&spec, &deaths, &pop, &pop_star)?;
    let fit = select_smoothing(&design)?.fit;
    Ok(Box::new(ExdModel2 {
        design,
        fit,
        pop,
        pop_star,
        partition,
    }))
}

/// Fit the penalized model to in-memory daily series starting at `start`.
/// Periods are monthly from `emergency` through the last day of data.
/// `counterfactual` may be NULL, in which case `population` is used.
///
/// # Safety
/// Array pointers must reference `len` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn exd_model2_fit(
    start: *const c_char,
    deaths: *const u64,
    population: *const f64,
    counterfactual: *const f64,
    len: usize,
    emergency: *const c_char,
    out: *mut *mut ExdModel2,
) -> ExdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let start = c_date(start, "start")?;
        let emergency = c_date(emergency, "emergency")?;
        let deaths = DailyCountSeries::new(start, c_slice(deaths, len, "deaths")?.to_vec())?;
        let pop = PopulationSeries::new(start, c_slice(population, len, "population")?.to_vec())?;
        let pop_star = if counterfactual.is_null() {
            pop.clone()
        } else {
            PopulationSeries::new(start, c_slice(counterfactual, len, "counterfactual")?.to_vec())?
        };
        let partition = PeriodPartition::monthly(emergency, deaths.end())?;
        *out = Box::into_raw(fit_model(deaths, pop, pop_star, partition)?);
        Ok(())
    })
}

/// Fit from CSV files. `movements` may be NULL for no migration adjustment.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn exd_model2_fit_files(
    deaths: *const c_char,
    anchors: *const c_char,
    movements: *const c_char,
    emergency: *const c_char,
    extrapolate: ExdExtrapolation,
    out: *mut *mut ExdModel2,
) -> ExdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let deaths = load_deaths(Path::new(c_str(deaths, "deaths")?), None)?;
        let anchors = load_anchors(Path::new(c_str(anchors, "anchors")?))?;
        let movements = if movements.is_null() {
            Vec::new()
        } else {
            load_movements(Path::new(c_str(movements, "movements")?))?
        };
        let emergency = c_date(emergency, "emergency")?;
        let extrapolate = match extrapolate {
            ExdExtrapolation::None => Extrapolation::None,
            ExdExtrapolation::Linear => Extrapolation::Linear,
            ExdExtrapolation::Hold => Extrapolation::Hold,
        };
        let (pop, pop_star, _) = population_pipeline(&anchors, &movements, deaths.start(), deaths.end(), extrapolate)?;
        let partition = PeriodPartition::monthly(emergency, deaths.end())?;
        *out = Box::into_raw(fit_model(deaths, pop, pop_star, partition)?);
        Ok(())
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must come from an `exd_model2_fit*` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn exd_model2_free(model: *mut ExdModel2) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn exd_model2_summary(model: *const ExdModel2, out: *mut ExdFitSummary) -> ExdStatus {
    guard(|| {
        let m = handle(model)?;
        let out = out_ref(out, "out")?;
        *out = ExdFitSummary {
            nobs: m.fit.nobs(),
            num_periods: m.design.period_columns.len(),
            deviance: m.fit.deviance,
            edf_total: m.fit.edf_total,
            dispersion: diagnostics(&m.fit).dispersion,
            iterations: m.fit.iterations,
            converged: m.fit.converged,
        };
        Ok(())
    })
}

/// Wald summary of period `period` (1-based).
///
/// # Safety
/// `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn exd_model2_period(
    model: *const ExdModel2,
    period: usize,
    out: *mut ExdPeriodEffect,
) -> ExdStatus {
    guard(|| {
        let m = handle(model)?;
        let out = out_ref(out, "out")?;
        let w = wald_test(&m.fit, period)?;
        *out = ExdPeriodEffect {
            estimate: w.estimate,
            se: w.se,
            z: w.z,
            p: w.p,
            effect: w.estimate.exp(),
        };
        Ok(())
    })
}

/// Number of days from the emergency through the last period.
///
/// # Safety
/// `model` must be valid or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn exd_model2_excess_days(model: *const ExdModel2) -> usize {
    model.as_ref().map_or(0, |m| {
        (m.partition.last_day() - m.partition.emergency()).num_days() as usize + 1
    })
}

/// Write the point estimate of daily excess deaths for each day from the
/// emergency into `buf`, which must hold `exd_model2_excess_days` values.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn exd_model2_daily_excess(model: *const ExdModel2, buf: *mut f64, len: usize) -> ExdStatus {
    guard(|| {
        let m = handle(model)?;
        if buf.is_null() {
            return Err(fail(ExdStatus::NullPointer, "`buf` is null"));
        }
        let need = exd_model2_excess_days(model);
        if len < need {
            return Err(fail(
                ExdStatus::InvalidArgument,
                format!("buffer holds {len} values, {need} needed"),
            ));
        }
        let em = ExcessModel::new(&m.design, &m.pop, &m.pop_star)?;
        let curve = em.curve(&m.fit.gamma);
        let from = m.partition.emergency();
        let first = curve
            .dates
            .iter()
            .position(|d| *d == from)
            .ok_or_else(|| fail(ExdStatus::Numerical, "emergency outside the fitted range"))?;
        let out = std::slice::from_raw_parts_mut(buf, need);
        out.copy_from_slice(&curve.excess[first..first + need]);
        Ok(())
    })
}

/// Cumulative excess deaths from the emergency through the last period,
/// with intervals from `draws` posterior draws.
///
/// # Safety
/// `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn exd_model2_cumulative_excess(
    model: *const ExdModel2,
    draws: usize,
    seed: u64,
    alpha: f64,
    out: *mut ExdInterval,
) -> ExdStatus {
    guard(|| {
        let m = handle(model)?;
        let out = out_ref(out, "out")?;
        let em = ExcessModel::new(&m.design, &m.pop, &m.pop_star)?;
        let d = posterior_draws(&m.fit, draws, seed)?;
        let s = em.samples(&d, Functional::Cumulative, m.partition.emergency(), m.partition.last_day())?;
        let pw = interval_pointwise(&s, alpha)?;
        let sim = band_simultaneous(&s, alpha)?;
        let t = pw.estimate.len() - 1;
        *out = ExdInterval {
            estimate: pw.estimate[t],
            pointwise_lo: pw.lo[t],
            pointwise_hi: pw.hi[t],
            simultaneous_lo: sim.lo[t],
            simultaneous_hi: sim.hi[t],
        };
        Ok(())
    })
}
