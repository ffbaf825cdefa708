//! Command-line front end.
//!
//! Every subcommand takes the same run settings, from flags or from a TOML
//! file passed with `--config` (flags win). A `run_manifest.json` written
//! by an earlier run is also accepted as a config file.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::basis::SmoothKind;
use crate::error::{Error, Result};
use crate::excess::{
    band_simultaneous, interval_pointwise, posterior_draws, Band, ExcessModel, Functional, DEFAULT_DRAWS,
};
use crate::gam::{
    assemble_design, diagnostics, format_p_value, glrt, pirls_fit, select_smoothing, wald_test, DesignMatrix,
    FitResult, ModelSpec, OffsetSource, SmoothingSelection,
};
use crate::ingest::{
    load_anchors, load_deaths, load_movements, monthend_declines, population_pipeline, vintage_value_at,
    AnchorKind, Extrapolation, NetMovementRecord, PopulationAnchor,
};
use crate::profile::{
    anova_precheck, bonferroni_cumulative, horizons_from_series, model1, profile_curve, SummaryCounts,
};
use crate::simgen::{simulate, write_simulation, Scenario};
use crate::svg::{Plot, Ribbon, Series, Style};
use crate::timeseries::{days_between, mortality_rate, DailyCountSeries, PeriodPartition, PopulationSeries};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "excess-deaths", version, about = "Excess deaths after an emergency from daily death counts")]
pub struct Cli {
    /// TOML config file or a previous run_manifest.json; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Before/after Poisson comparison with a profile-likelihood interval.
    Model1(RunConfig),
    /// Penalized Poisson model with excess-death bands.
    Model2(RunConfig),
    /// Likelihood ratio test between nested period sets.
    Glrt(RunConfig),
    /// Generate synthetic data from a scenario file.
    Simulate(RunConfig),
    /// Build the daily population and report month-end declines.
    Population(RunConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrendOption {
    Linear,
    Spline,
}

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Daily deaths CSV (`date,deaths`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deaths: Option<PathBuf>,
    /// Population anchors CSV (`date,population,kind`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<PathBuf>,
    /// Monthly net movement CSV (`month,leaving,arriving`).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub movements: Option<PathBuf>,
    /// Scenario file for `simulate`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    /// First day of the emergency.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emergency: Option<NaiveDate>,
    /// Period end dates (comma separated); monthly through `end` if omitted.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<NaiveDate>>,
    /// First day of data to use.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDate>,
    /// Last day of data to use; later rows are dropped.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDate>,
    /// Model 1: first day of the pre-emergency window.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre_start: Option<NaiveDate>,
    /// Model 1: last day of the post-emergency window.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub post_end: Option<NaiveDate>,
    /// Periods with an indicator (1-based, comma separated); all by default.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include_periods: Option<Vec<usize>>,
    /// GLRT null model periods.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_periods: Option<Vec<usize>>,
    /// GLRT alternative model periods.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alt_periods: Option<Vec<usize>>,
    /// GLRT: select smoothing separately for the null model instead of
    /// reusing the alternative's.
    #[arg(long, action = ArgAction::Set)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refit_smoothing: Option<bool>,
    /// One minus the confidence level (default 0.05).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Posterior draws (default 10000).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    /// Random seed; required for model2.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Seasonal basis dimension (default 32).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis_dim: Option<usize>,
    /// Year term: linear (default) or penalized spline.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trend: Option<TrendOption>,
    /// Basis dimension of the spline trend (default 10).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trend_dim: Option<usize>,
    /// Use the migration-adjusted population as offset (default true).
    #[arg(long, action = ArgAction::Set)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjust_population: Option<bool>,
    /// Population outside the anchor range: none, linear or hold.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extrapolate: Option<String>,
    /// Output directory (default `out`).
    #[arg(long)]
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($a:expr, $b:expr, $($f:ident),*) => {
        RunConfig { $($f: $a.$f.or($b.$f)),* }
    };
}

impl RunConfig {
    /// Field-wise: values in `self` win over `other`.
    pub fn merge(self, other: RunConfig) -> RunConfig {
        merge_fields!(
            self, other, deaths, anchors, movements, scenario, emergency, boundaries, start, end, pre_start,
            post_end, include_periods, null_periods, alt_periods, refit_smoothing, alpha, draws, seed,
            basis_dim, trend, trend_dim, adjust_population, extrapolate, out
        )
    }

    /// Parse a TOML config, or the `config` object of a run manifest.
    /// Relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let bad = |m: String| Error::Config(format!("{}: {m}", path.display()));
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            let inner = v.get("config").cloned().unwrap_or(v);
            serde_json::from_value(inner).map_err(|e| bad(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.deaths,
            &mut cfg.anchors,
            &mut cfg.movements,
            &mut cfg.scenario,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn alpha(&self) -> Result<f64> {
        let a = self.alpha.unwrap_or(0.05);
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {a}")));
        }
        Ok(a)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn extrapolation(&self) -> Result<Extrapolation> {
        match &self.extrapolate {
            None => Ok(Extrapolation::None),
            Some(s) => s.parse().map_err(Error::Config),
        }
    }

    fn required<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing required setting `{name}`")))
    }
}

/// Tracks inputs and outputs of a run for the manifest.
struct Run {
    command: &'static str,
    config: RunConfig,
    out: PathBuf,
    inputs: Vec<serde_json::Value>,
    outputs: Vec<String>,
}

impl Run {
    fn new(command: &'static str, config: RunConfig) -> Result<Self> {
        let out = config.out_dir();
        fs::create_dir_all(&out).map_err(|source| Error::Io {
            path: out.display().to_string(),
            source,
        })?;
        Ok(Self {
            command,
            config,
            out,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push(json!({ "path": path.display().to_string(), "sha256": hex }));
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    fn finish(mut self) -> Result<()> {
        let mut outputs = self.outputs.clone();
        outputs.push("run_manifest.json".into());
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.config,
            "seed": self.config.seed,
            "inputs": self.inputs,
            "outputs": outputs,
        });
        self.write_json("run_manifest.json", &manifest)
    }
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Numerical(format!("csv formatting failed: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Parse arguments, run, and map the outcome to an exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INPUT
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Model1(flags) => cmd_model1(flags.merge(file)),
        Command::Model2(flags) => cmd_model2(flags.merge(file)),
        Command::Glrt(flags) => cmd_glrt(flags.merge(file)),
        Command::Simulate(flags) => cmd_simulate(flags.merge(file)),
        Command::Population(flags) => cmd_population(flags.merge(file)),
    }
}

fn load_death_series(run: &mut Run) -> Result<DailyCountSeries> {
    let path = run.config.required(&run.config.deaths, "deaths")?.clone();
    run.record_input(&path)?;
    let series = load_deaths(&path, run.config.end)?;
    match run.config.start {
        Some(start) if start > series.start() => series.slice(start, series.end()),
        Some(start) if start < series.start() => Err(Error::Config(format!(
            "start {start} precedes the first death record {}",
            series.start()
        ))),
        _ => Ok(series),
    }
}

fn cmd_model1(cfg: RunConfig) -> Result<()> {
    let mut run = Run::new("model1", cfg)?;
    let alpha = run.config.alpha()?;
    let deaths = load_death_series(&mut run)?;
    let emergency = *run.config.required(&run.config.emergency, "emergency")?;
    let pre_start = run.config.pre_start.unwrap_or(deaths.start());
    let post_end = run.config.post_end.unwrap_or(deaths.end());
    if emergency <= pre_start || emergency > post_end {
        return Err(Error::Config(format!(
            "emergency {emergency} must fall after pre_start {pre_start} and by post_end {post_end}"
        )));
    }
    let pre = deaths.slice(pre_start, emergency - Duration::days(1))?;
    let post = deaths.slice(emergency, post_end)?;
    let counts = SummaryCounts::from_series(&pre, &post)?;
    let result = model1(&counts, alpha)?;
    let curve = profile_curve(&counts, result.ci_rho, 201)?;
    let horizons = bonferroni_cumulative(&horizons_from_series(&pre, &post)?, alpha)?;

    let mut months: Vec<Vec<u64>> = Vec::new();
    let mut last_key = None;
    for (d, &c) in pre.dates().zip(pre.counts()) {
        let key = (d.year(), d.month());
        if last_key != Some(key) {
            months.push(Vec::new());
            last_key = Some(key);
        }
        months.last_mut().expect("pushed").push(c);
    }
    let groups: Vec<&[u64]> = months.iter().filter(|g| g.len() >= 2).map(|g| g.as_slice()).collect();
    let anova = anova_precheck(&groups).ok();

    let profile: Vec<_> = curve
        .iter()
        .map(|p| {
            json!({
                "rho": p.rho0,
                "cumulative_excess": p.rho0 * counts.n as f64,
                "lambda_restricted": p.lambda_hat_hat,
                "neg2_log_lrt": p.neg2loglrt,
            })
        })
        .collect();
    let report = json!({
        "config": run.config,
        "pre_period": [pre.start(), pre.end()],
        "post_period": [post.start(), post.end()],
        "counts": counts,
        "alpha": alpha,
        "lambda_mle": result.lambda_mle,
        "rho_mle": result.rho_mle,
        "excess_mle": result.excess_mle,
        "ci_rho": [result.ci_rho.0, result.ci_rho.1],
        "ci_excess": [result.ci_excess.0, result.ci_excess.1],
        "anova_precheck": anova,
        "profile": profile,
    });
    run.write_json("model1_result.json", &report)?;

    let rows = horizons.iter().map(|h| {
        let date = emergency + Duration::days(h.k as i64 - 1);
        vec![h.k.to_string(), date.to_string(), num(h.estimate), num(h.lo), num(h.hi)]
    });
    run.write("model1_cumulative.csv", &csv_string(&["k", "date", "estimate", "lo", "hi"], rows)?)?;

    let n = counts.n as f64;
    let mut plot = Plot::new("Profile likelihood of cumulative excess deaths", "cumulative excess deaths", "-2 log LRT");
    plot.series.push(Series::new(
        "profile",
        curve.iter().map(|p| (p.rho0 * n, p.neg2loglrt)).collect(),
        "steelblue",
    ));
    plot.hlines.push(crate::profile::chi2_quantile(1.0, 1.0 - alpha));
    plot.vlines.extend([result.ci_excess.0, result.ci_excess.1]);
    run.write("model1_profile.svg", &plot.render())?;

    println!(
        "excess deaths {:.1} ({:.0}% CI {:.1} to {:.1}) over {} days",
        result.excess_mle,
        100.0 * (1.0 - alpha),
        result.ci_excess.0,
        result.ci_excess.1,
        counts.n
    );
    run.finish()
}

struct Model2Inputs {
    deaths: DailyCountSeries,
    /// Population used as the offset.
    pop: PopulationSeries,
    counterfactual: PopulationSeries,
    adjusted_anchors: Vec<PopulationAnchor>,
    partition: PeriodPartition,
}

fn load_model2_inputs(run: &mut Run) -> Result<Model2Inputs> {
    let deaths = load_death_series(run)?;
    let anchors_path = run.config.required(&run.config.anchors, "anchors")?.clone();
    run.record_input(&anchors_path)?;
    let anchors = load_anchors(&anchors_path)?;
    let adjust = run.config.adjust_population.unwrap_or(true);
    let movements: Vec<NetMovementRecord> = match (&run.config.movements, adjust) {
        (Some(p), true) => {
            let p = p.clone();
            run.record_input(&p)?;
            load_movements(&p)?
        }
        _ => Vec::new(),
    };
    let (adjusted, counterfactual, adjusted_anchors) = population_pipeline(
        &anchors,
        &movements,
        deaths.start(),
        deaths.end(),
        run.config.extrapolation()?,
    )?;
    let emergency = *run.config.required(&run.config.emergency, "emergency")?;
    let partition = match &run.config.boundaries {
        Some(b) => PeriodPartition::new(emergency, b.clone())?,
        None => PeriodPartition::monthly(emergency, deaths.end())?,
    };
    if partition.last_day() > deaths.end() {
        return Err(Error::Config(format!(
            "last period ends {} after the last death record {}",
            partition.last_day(),
            deaths.end()
        )));
    }
    Ok(Model2Inputs {
        deaths,
        pop: if adjust { adjusted } else { counterfactual.clone() },
        counterfactual,
        adjusted_anchors,
        partition,
    })
}

fn model_spec(cfg: &RunConfig, partition: &PeriodPartition, periods: Option<&Vec<usize>>) -> ModelSpec {
    let mut spec = ModelSpec::new(partition.clone());
    if let Some(p) = periods {
        spec.include_periods = p.clone();
    }
    spec.seasonal = SmoothKind::CyclicCubic {
        k: cfg.basis_dim.unwrap_or(32),
    };
    spec.trend = match cfg.trend.unwrap_or(TrendOption::Linear) {
        TrendOption::Linear => SmoothKind::Linear,
        TrendOption::Spline => SmoothKind::CubicRegression {
            k: cfg.trend_dim.unwrap_or(10),
        },
    };
    spec.offset_source = if cfg.adjust_population.unwrap_or(true) {
        OffsetSource::Adjusted
    } else {
        OffsetSource::Counterfactual
    };
    spec
}

/// Fit and, on non-convergence, leave the iteration trace in the output.
fn fit_or_trace(run: &mut Run, design: &DesignMatrix) -> Result<SmoothingSelection> {
    match select_smoothing(design) {
        Err(Error::NonConvergence { iterations, trace }) => {
            run.write_json("nonconvergence_trace.json", &json!({ "iterations": iterations, "trace": trace }))?;
            Err(Error::NonConvergence { iterations, trace })
        }
        Err(Error::Numerical(m)) => {
            run.write_json("nonconvergence_trace.json", &json!({ "message": m }))?;
            Err(Error::Numerical(m))
        }
        other => other,
    }
}

fn band_rows(pointwise: &Band, simultaneous: &Band, extra: impl Fn(usize) -> Vec<String>) -> Vec<Vec<String>> {
    (0..pointwise.dates.len())
        .map(|t| {
            let mut row = vec![pointwise.dates[t].to_string()];
            row.extend(extra(t));
            row.extend([
                num(pointwise.estimate[t]),
                num(pointwise.lo[t]),
                num(pointwise.hi[t]),
                num(simultaneous.lo[t]),
                num(simultaneous.hi[t]),
            ]);
            row
        })
        .collect()
}

fn day_x(origin: NaiveDate, d: NaiveDate) -> f64 {
    days_between(origin, d) as f64
}

fn cmd_model2(cfg: RunConfig) -> Result<()> {
    let mut run = Run::new("model2", cfg)?;
    let alpha = run.config.alpha()?;
    let seed = *run.config.required(&run.config.seed, "seed")?;
    let draws_n = run.config.draws.unwrap_or(DEFAULT_DRAWS);
    if draws_n < 1000 {
        eprintln!("warning: {draws_n} posterior draws; at least 1000 are recommended for intervals");
    }
    let inputs = load_model2_inputs(&mut run)?;
    let spec = model_spec(&run.config, &inputs.partition, run.config.include_periods.as_ref());
    let design = assemble_design(&spec, &inputs.deaths, &inputs.pop, &inputs.counterfactual)?;
    let selection = fit_or_trace(&mut run, &design)?;
    let fit = &selection.fit;
    let z = statrs::distribution::ContinuousCDF::inverse_cdf(
        &statrs::distribution::Normal::standard(),
        1.0 - alpha / 2.0,
    );

    let mut periods = Vec::new();
    for &(l, _) in &design.period_columns {
        let w = wald_test(fit, l)?;
        let (a, b) = inputs.partition.period_range(l).expect("period in partition");
        periods.push(json!({
            "period": l,
            "start": a,
            "end": b,
            "estimate": w.estimate,
            "se": w.se,
            "multiplicative_effect": w.estimate.exp(),
            "effect_lo": (w.estimate - z * w.se).exp(),
            "effect_hi": (w.estimate + z * w.se).exp(),
            "z": w.z,
            "p": w.p,
            "p_display": format_p_value(w.p),
        }));
    }
    let coefficients: Vec<_> = (0..fit.parametric)
        .map(|j| {
            let se = fit.covariance[(j, j)].max(0.0).sqrt();
            json!({ "name": fit.column_names[j], "estimate": fit.gamma[j], "se": se })
        })
        .collect();

    let model = ExcessModel::new(&design, &inputs.pop, &inputs.counterfactual)?;
    let draws = posterior_draws(fit, draws_n, seed)?;
    let (from, to) = (inputs.partition.emergency(), inputs.partition.last_day());
    let daily = model.samples(&draws, Functional::Daily, from, to)?;
    let cumulative = model.samples(&draws, Functional::Cumulative, from, to)?;
    let daily_pw = interval_pointwise(&daily, alpha)?;
    let daily_sim = band_simultaneous(&daily, alpha)?;
    let cum_pw = interval_pointwise(&cumulative, alpha)?;
    let cum_sim = band_simultaneous(&cumulative, alpha)?;

    let totals: Vec<_> = inputs
        .partition
        .boundaries()
        .iter()
        .map(|b| {
            let t = days_between(from, *b) as usize;
            json!({
                "from": from,
                "through": b,
                "estimate": cum_pw.estimate[t],
                "pointwise": [cum_pw.lo[t], cum_pw.hi[t]],
                "simultaneous": [cum_sim.lo[t], cum_sim.hi[t]],
            })
        })
        .collect();
    let edf: Vec<_> = fit.edf.iter().map(|e| json!({ "term": e.name, "edf": e.edf, "basis_dim": e.basis_dim })).collect();
    let report = json!({
        "config": run.config,
        "alpha": alpha,
        "offset": spec.offset_source,
        "nobs": fit.nobs(),
        "coefficients": coefficients,
        "periods": periods,
        "smoothing": {
            "lambdas": selection.lambdas,
            "reml_criterion": selection.criterion,
            "evaluations": selection.trace.len(),
        },
        "edf": edf,
        "edf_total": fit.edf_total,
        "deviance": fit.deviance,
        "pearson": fit.pearson,
        "iterations": fit.iterations,
        "diagnostics": diagnostics(fit),
        "draws": draws_n,
        "seed": seed,
        "simultaneous_critical_value": {
            "daily": daily_sim.critical_value,
            "cumulative": cum_sim.critical_value,
        },
        "cumulative_totals": totals,
    });
    run.write_json("model2_fit.json", &report)?;

    let header = ["date", "period", "excess", "pointwise_lo", "pointwise_hi", "simultaneous_lo", "simultaneous_hi"];
    let period_of = |t: usize| vec![inputs.partition.period_of(daily_pw.dates[t]).unwrap_or(0).to_string()];
    run.write("excess_daily.csv", &csv_string(&header, band_rows(&daily_pw, &daily_sim, period_of))?)?;
    let header = ["date", "cumulative_excess", "pointwise_lo", "pointwise_hi", "simultaneous_lo", "simultaneous_hi"];
    run.write("excess_cumulative.csv", &csv_string(&header, band_rows(&cum_pw, &cum_sim, |_| Vec::new()))?)?;

    run.write("fit_band.svg", &fit_plot(&design, fit, &inputs, alpha)?)?;
    run.write("cumulative_band.svg", &cumulative_plot(&cum_pw, &cum_sim))?;
    run.write("population.svg", &population_plot(&inputs.pop, &inputs.counterfactual, Some(&inputs.adjusted_anchors)))?;

    for p in &periods {
        println!(
            "period {} ({}..{}): effect {:.3} p {}",
            p["period"], p["start"].as_str().unwrap_or(""), p["end"].as_str().unwrap_or(""),
            p["multiplicative_effect"].as_f64().unwrap_or(f64::NAN),
            p["p_display"].as_str().unwrap_or("")
        );
    }
    if let Some(last) = cum_pw.estimate.last() {
        let t = cum_pw.estimate.len() - 1;
        println!(
            "cumulative excess {from}..{to}: {last:.0} (pointwise {:.0} to {:.0})",
            cum_pw.lo[t], cum_pw.hi[t]
        );
    }
    run.finish()
}

fn fit_plot(design: &DesignMatrix, fit: &FitResult, inputs: &Model2Inputs, alpha: f64) -> Result<String> {
    let origin = inputs.deaths.start();
    let rates = mortality_rate(&inputs.deaths, &inputs.pop)?;
    let z = statrs::distribution::ContinuousCDF::inverse_cdf(
        &statrs::distribution::Normal::standard(),
        1.0 - alpha / 2.0,
    );
    let mut x = Vec::new();
    let (mut mid, mut lo, mut hi, mut base) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut no_effect = fit.gamma.clone();
    for &(_, c) in &design.period_columns {
        no_effect[c] = 0.0;
    }
    for (i, d) in design.dates.iter().enumerate() {
        let row = design.x.row(i);
        let eta = (row * &fit.gamma)[(0, 0)];
        let se = (row * &fit.covariance * row.transpose())[(0, 0)].max(0.0).sqrt();
        let scale = crate::timeseries::RATE_SCALE;
        x.push(day_x(origin, *d));
        mid.push(eta.exp() * scale);
        lo.push((eta - z * se).exp() * scale);
        hi.push((eta + z * se).exp() * scale);
        base.push((row * &no_effect)[(0, 0)].exp() * scale);
    }
    let mut plot = Plot::new("Daily mortality rate and model fit", "date", "deaths per 1000 person-years");
    plot.date_origin = Some(origin);
    plot.series.push(
        Series::new(
            "observed",
            x.iter().copied().zip(rates.rates.iter().copied()).collect(),
            "gray",
        )
        .style(Style::Points),
    );
    plot.ribbons.push(Ribbon {
        label: format!("{:.0}% pointwise", 100.0 * (1.0 - alpha)),
        x: x.clone(),
        lo,
        hi,
        color: "steelblue",
    });
    plot.series.push(Series::new("fit", x.iter().copied().zip(mid).collect(), "blue"));
    plot.series.push(
        Series::new("without period effects", x.iter().copied().zip(base).collect(), "red")
            .style(Style::Step)
            .dashed(),
    );
    plot.vlines.push(day_x(origin, inputs.partition.emergency()));
    Ok(plot.render())
}

fn cumulative_plot(pointwise: &Band, simultaneous: &Band) -> String {
    let origin = pointwise.dates[0];
    let x: Vec<f64> = pointwise.dates.iter().map(|d| day_x(origin, *d)).collect();
    let mut plot = Plot::new("Cumulative excess deaths", "date", "excess deaths");
    plot.date_origin = Some(origin);
    plot.ribbons.push(Ribbon {
        label: "simultaneous".into(),
        x: x.clone(),
        lo: simultaneous.lo.clone(),
        hi: simultaneous.hi.clone(),
        color: "orange",
    });
    plot.ribbons.push(Ribbon {
        label: "pointwise".into(),
        x: x.clone(),
        lo: pointwise.lo.clone(),
        hi: pointwise.hi.clone(),
        color: "steelblue",
    });
    plot.series.push(Series::new(
        "estimate",
        x.iter().copied().zip(pointwise.estimate.iter().copied()).collect(),
        "black",
    ));
    plot.hlines.push(0.0);
    plot.render()
}

fn population_plot(
    adjusted: &PopulationSeries,
    counterfactual: &PopulationSeries,
    anchors: Option<&[PopulationAnchor]>,
) -> String {
    let origin = adjusted.start();
    let mut plot = Plot::new("Population", "date", "persons");
    plot.date_origin = Some(origin);
    let pts = |p: &PopulationSeries| {
        p.dates()
            .zip(p.values())
            .map(|(d, v)| (day_x(origin, d), *v))
            .collect::<Vec<_>>()
    };
    plot.series.push(Series::new("without migration", pts(counterfactual), "gray").dashed());
    plot.series.push(Series::new("adjusted", pts(adjusted), "blue"));
    if let Some(anchors) = anchors {
        let marks: Vec<_> = anchors
            .iter()
            .filter(|a| a.kind == AnchorKind::DerivedMonthend && a.date >= origin && a.date <= adjusted.end())
            .map(|a| (day_x(origin, a.date), a.population))
            .collect();
        if !marks.is_empty() {
            plot.series.push(Series::new("month-end anchors", marks, "red").style(Style::Points));
        }
    }
    plot.render()
}

fn fit_glrt_pair(
    run: &mut Run,
    inputs: &Model2Inputs,
    null_periods: &[usize],
    alt_periods: &[usize],
) -> Result<(FitResult, FitResult)> {
    let alt_spec = model_spec(&run.config, &inputs.partition, Some(&alt_periods.to_vec()));
    let null_spec = model_spec(&run.config, &inputs.partition, Some(&null_periods.to_vec()));
    let alt_design = assemble_design(&alt_spec, &inputs.deaths, &inputs.pop, &inputs.counterfactual)?;
    let null_design = assemble_design(&null_spec, &inputs.deaths, &inputs.pop, &inputs.counterfactual)?;
    let alt = fit_or_trace(run, &alt_design)?.fit;
    let null = if run.config.refit_smoothing.unwrap_or(false) {
        fit_or_trace(run, &null_design)?.fit
    } else {
        pirls_fit(&null_design, &alt.lambdas)?
    };
    Ok((null, alt))
}

fn cmd_glrt(cfg: RunConfig) -> Result<()> {
    let mut run = Run::new("glrt", cfg)?;
    let null_periods = run.config.required(&run.config.null_periods, "null_periods")?.clone();
    let alt_periods = run.config.required(&run.config.alt_periods, "alt_periods")?.clone();
    if let Some(p) = null_periods.iter().find(|p| !alt_periods.contains(p)) {
        return Err(Error::Config(format!(
            "null period {p} is not in the alternative: models are not nested"
        )));
    }
    let inputs = load_model2_inputs(&mut run)?;
    let (null_fit, alt) = fit_glrt_pair(&mut run, &inputs, &null_periods, &alt_periods)?;
    let result = glrt(&null_fit, &alt, alt_periods.len() - null_periods.len())?;
    let report = json!({
        "config": run.config,
        "null_periods": null_periods,
        "alt_periods": alt_periods,
        "smoothing": if run.config.refit_smoothing.unwrap_or(false) { "refit" } else { "pinned" },
        "null_deviance": null_fit.deviance,
        "alt_deviance": alt.deviance,
        "statistic": result.statistic,
        "df": result.df,
        "p": result.p,
        "p_display": format_p_value(result.p),
    });
    run.write_json("glrt.json", &report)?;
    println!(
        "statistic {:.4} df {} p {}",
        result.statistic,
        result.df,
        format_p_value(result.p)
    );
    run.finish()
}

fn cmd_simulate(cfg: RunConfig) -> Result<()> {
    let mut run = Run::new("simulate", cfg)?;
    let path = run.config.required(&run.config.scenario, "scenario")?.clone();
    run.record_input(&path)?;
    let mut scenario = Scenario::load(&path)?;
    if let Some(seed) = run.config.seed {
        scenario.seed = seed;
    }
    run.config.seed = Some(scenario.seed);
    let sim = simulate(&scenario)?;
    write_simulation(&run.out, &scenario, &sim)?;
    run.outputs.extend(["deaths.csv".to_string(), "population_anchors.csv".to_string()]);
    if !scenario.movements()?.is_empty() {
        run.outputs.push("net_movement.csv".into());
    }
    run.outputs.push("truth.json".into());
    println!(
        "{} days, {} deaths, true cumulative excess {:.1}",
        sim.deaths.len(),
        sim.deaths.total(),
        sim.truth.cumulative_excess
    );
    run.finish()
}

fn cmd_population(cfg: RunConfig) -> Result<()> {
    let mut run = Run::new("population", cfg)?;
    let anchors_path = run.config.required(&run.config.anchors, "anchors")?.clone();
    run.record_input(&anchors_path)?;
    let anchors = load_anchors(&anchors_path)?;
    let movements = match run.config.movements.clone() {
        Some(p) => {
            run.record_input(&p)?;
            load_movements(&p)?
        }
        None => Vec::new(),
    };
    let vintage: Vec<_> = anchors
        .iter()
        .copied()
        .filter(|a| a.kind == AnchorKind::CensusVintage)
        .collect();
    let first_vintage = vintage
        .first()
        .ok_or_else(|| Error::Config("no census vintage anchors".into()))?;
    let to = run.config.end.unwrap_or_else(|| {
        movements
            .last()
            .map_or(vintage.last().expect("non-empty").date, |m| m.month.last_day())
    });
    let from = run.config.start.unwrap_or(first_vintage.date);
    let extrapolate = match run.config.extrapolate {
        Some(_) => run.config.extrapolation()?,
        None => Extrapolation::Hold,
    };
    let (adjusted, counterfactual, adjusted_anchors) =
        population_pipeline(&anchors, &movements, from, to, extrapolate)?;
    let seed_value = movements
        .first()
        .map(|m| vintage_value_at(&vintage, m.month.pred().last_day()));
    let declines = seed_value.map(|s| monthend_declines(&adjusted_anchors, s)).unwrap_or_default();

    let rows = adjusted
        .dates()
        .zip(adjusted.values().iter().zip(counterfactual.values()))
        .map(|(d, (a, c))| vec![d.to_string(), num(*a), num(*c)]);
    run.write("population.csv", &csv_string(&["date", "adjusted", "counterfactual"], rows)?)?;
    let report = json!({
        "config": run.config,
        "seed_population": seed_value,
        "adjusted_anchors": adjusted_anchors,
        "monthend_declines": declines,
    });
    run.write_json("population.json", &report)?;
    run.write("population.svg", &population_plot(&adjusted, &counterfactual, Some(&adjusted_anchors)))?;
    if let Some(seed) = seed_value {
        println!("month end     population   % below {seed:.0}");
        for d in &declines {
            println!("{}  {:>11.0}   {:>6.2}", d.date, d.population, d.percent_below_seed);
        }
    }
    run.finish()
}
