//! Synthetic daily mortality with known truth.
//!
//! `D_t ~ Poisson(N_t / 365000 · r_t)` where the rate per 1000 person-years
//! is `r_t = baseline · exp(A sin(2π(doy_t + phase)) + trend · year_t) · effect_t`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::basis::normalized_years;
use crate::error::{Error, Result};
use crate::ingest::{
    population_pipeline, write_anchors, write_deaths, write_movements, AnchorKind, Extrapolation,
    NetMovementRecord, PopulationAnchor, YearMonth,
};
use crate::timeseries::{
    date_range, day_of_year_fraction, days_between, DailyCountSeries, PeriodPartition, PopulationSeries,
    RATE_SCALE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub date: NaiveDate,
    pub population: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementSpec {
    /// `YYYY-MM`.
    pub month: String,
    pub leaving: u64,
    pub arriving: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationSpec {
    Constant { value: f64 },
    /// Straight line between the values on the first and last day.
    Linear { start: f64, end: f64 },
    /// Vintage anchors, optionally adjusted by monthly net movement.
    Anchored {
        anchors: Vec<AnchorSpec>,
        #[serde(default)]
        movements: Vec<MovementSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEffect {
    /// 1-based period of the partition.
    pub period: usize,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Deaths per 1000 person-years.
    pub baseline: f64,
    #[serde(default)]
    pub seasonal_amplitude: f64,
    /// Fraction of a year added to the day-of-year before the sine.
    #[serde(default)]
    pub seasonal_phase: f64,
    /// Log-rate change per year.
    #[serde(default)]
    pub trend_per_year: f64,
    pub population: PopulationSpec,
    pub emergency: NaiveDate,
    /// Period end dates; monthly through `end` when omitted.
    #[serde(default)]
    pub boundaries: Vec<NaiveDate>,
    #[serde(default)]
    pub effects: Vec<PeriodEffect>,
    pub seed: u64,
}

impl Scenario {
    /// Three years of daily data with a September 20 emergency, monthly
    /// periods through February and a large short-lived first-period
    /// effect that fades over the following months.
    pub fn example(seed: u64) -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        Self {
            start: d(2015, 1, 1),
            end: d(2018, 2, 28),
            baseline: 8.5,
            seasonal_amplitude: 0.1,
            seasonal_phase: 0.0,
            trend_per_year: 0.0,
            population: PopulationSpec::Constant { value: 3.3e6 },
            emergency: d(2017, 9, 20),
            boundaries: Vec::new(),
            effects: [1.517, 1.272, 1.150, 1.064]
                .iter()
                .enumerate()
                .map(|(i, &effect)| PeriodEffect { period: i + 1, effect })
                .collect(),
            seed,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn partition(&self) -> Result<PeriodPartition> {
        if self.boundaries.is_empty() {
            PeriodPartition::monthly(self.emergency, self.end)
        } else {
            PeriodPartition::new(self.emergency, self.boundaries.clone())
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.end < self.start {
            return Err(Error::Config(format!("end {} precedes start {}", self.end, self.start)));
        }
        if !(self.baseline > 0.0 && self.baseline.is_finite()) {
            return Err(Error::Config(format!("baseline must be positive, got {}", self.baseline)));
        }
        for v in [self.seasonal_amplitude, self.seasonal_phase, self.trend_per_year] {
            if !v.is_finite() {
                return Err(Error::Config("seasonal and trend parameters must be finite".into()));
            }
        }
        if self.emergency < self.start || self.emergency > self.end {
            return Err(Error::Config(format!(
                "emergency {} outside {}..{}",
                self.emergency, self.start, self.end
            )));
        }
        let partition = self.partition()?;
        if partition.last_day() > self.end {
            return Err(Error::Config(format!(
                "last period ends {} after the data end {}",
                partition.last_day(),
                self.end
            )));
        }
        let mut seen = vec![false; partition.num_periods() + 1];
        for e in &self.effects {
            if e.period == 0 || e.period > partition.num_periods() {
                return Err(Error::Config(format!("effect for unknown period {}", e.period)));
            }
            if std::mem::replace(&mut seen[e.period], true) {
                return Err(Error::Config(format!("period {} has two effects", e.period)));
            }
            if !(e.effect > 0.0 && e.effect.is_finite()) {
                return Err(Error::Config(format!("effect must be positive, got {}", e.effect)));
            }
        }
        Ok(())
    }

    pub fn movements(&self) -> Result<Vec<NetMovementRecord>> {
        let PopulationSpec::Anchored { movements, .. } = &self.population else {
            return Ok(Vec::new());
        };
        movements
            .iter()
            .map(|m| {
                Ok(NetMovementRecord {
                    month: m.month.parse::<YearMonth>().map_err(Error::Config)?,
                    leaving: m.leaving,
                    arriving: m.arriving,
                })
            })
            .collect()
    }

    /// Vintage anchors in the ingest schema that reproduce the population.
    pub fn anchors(&self) -> Vec<PopulationAnchor> {
        match &self.population {
            PopulationSpec::Constant { value } => vec![
                PopulationAnchor::vintage(self.start, *value),
                PopulationAnchor::vintage(self.end, *value),
            ],
            PopulationSpec::Linear { start, end } => vec![
                PopulationAnchor::vintage(self.start, *start),
                PopulationAnchor::vintage(self.end, *end),
            ],
            PopulationSpec::Anchored { anchors, .. } => anchors
                .iter()
                .map(|a| PopulationAnchor {
                    date: a.date,
                    population: a.population,
                    kind: AnchorKind::CensusVintage,
                })
                .collect(),
        }
    }

    /// Adjusted and counterfactual populations.
    pub fn populations(&self) -> Result<(PopulationSeries, PopulationSeries)> {
        let anchors = self.anchors();
        if self.start == self.end {
            let v = anchors[0].population;
            let p = PopulationSeries::new(self.start, vec![v])?;
            return Ok((p.clone(), p));
        }
        let (adjusted, counterfactual, _) =
            population_pipeline(&anchors, &self.movements()?, self.start, self.end, Extrapolation::Hold)?;
        Ok((adjusted, counterfactual))
    }
}

/// Every generating quantity, per day.
#[derive(Debug, Clone, Serialize)]
pub struct Truth {
    pub dates: Vec<NaiveDate>,
    /// Deaths per 1000 person-years including the period effect.
    pub rate: Vec<f64>,
    /// Expected deaths.
    pub expected: Vec<f64>,
    pub log_effect: Vec<f64>,
    pub period: Vec<usize>,
    /// `expected · (1 − 1/effect)`.
    pub excess: Vec<f64>,
    pub cumulative_excess: f64,
    pub effects: Vec<PeriodEffect>,
    pub seed: u64,
}

impl Truth {
    pub fn excess_between(&self, from: NaiveDate, to: NaiveDate) -> f64 {
        self.dates
            .iter()
            .zip(&self.excess)
            .filter(|(d, _)| **d >= from && **d <= to)
            .map(|(_, e)| e)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub deaths: DailyCountSeries,
    pub population: PopulationSeries,
    pub counterfactual: PopulationSeries,
    pub truth: Truth,
}

pub fn simulate(scenario: &Scenario) -> Result<Simulation> {
    scenario.validate()?;
    let partition = scenario.partition()?;
    let (population, counterfactual) = scenario.populations()?;
    let n = days_between(scenario.start, scenario.end) as usize + 1;
    let years = normalized_years(scenario.start, scenario.end);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut truth = Truth {
        dates: date_range(scenario.start, n).collect(),
        rate: Vec::with_capacity(n),
        expected: Vec::with_capacity(n),
        log_effect: Vec::with_capacity(n),
        period: Vec::with_capacity(n),
        excess: Vec::with_capacity(n),
        cumulative_excess: 0.0,
        effects: scenario.effects.clone(),
        seed: scenario.seed,
    };
    let mut counts = Vec::with_capacity(n);
    for (i, &date) in truth.dates.clone().iter().enumerate() {
        let period = partition.period_of(date).unwrap_or(0);
        let effect = scenario
            .effects
            .iter()
            .find(|e| e.period == period)
            .map_or(1.0, |e| e.effect);
        let seasonal = scenario.seasonal_amplitude
            * (2.0 * PI * (day_of_year_fraction(date) + scenario.seasonal_phase)).sin();
        let rate = scenario.baseline * (seasonal + scenario.trend_per_year * years[i]).exp() * effect;
        let expected = population.values()[i] / RATE_SCALE * rate;
        let excess = expected * (1.0 - 1.0 / effect);
        let draw = Poisson::new(expected)
            .map_err(|e| Error::Numerical(format!("Poisson mean {expected}: {e}")))?
            .sample(&mut rng);
        counts.push(draw as u64);
        truth.rate.push(rate);
        truth.expected.push(expected);
        truth.log_effect.push(effect.ln());
        truth.period.push(period);
        truth.excess.push(excess);
        truth.cumulative_excess += excess;
    }
    Ok(Simulation {
        deaths: DailyCountSeries::new(scenario.start, counts)?,
        population,
        counterfactual,
        truth,
    })
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Write `deaths.csv`, `population_anchors.csv`, `net_movement.csv` (when
/// the scenario has movements) and `truth.json` into `dir`.
pub fn write_simulation(dir: &Path, scenario: &Scenario, sim: &Simulation) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_deaths(create(&dir.join("deaths.csv"))?, &sim.deaths)?;
    write_anchors(create(&dir.join("population_anchors.csv"))?, &scenario.anchors())?;
    let movements = scenario.movements()?;
    if !movements.is_empty() {
        write_movements(create(&dir.join("net_movement.csv"))?, &movements)?;
    }
    let json = serde_json::to_string_pretty(&sim.truth).expect("truth serializes");
    fs::write(dir.join("truth.json"), json + "\n").map_err(|source| Error::Io {
        path: dir.join("truth.json").display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{load_anchors, load_deaths, load_movements};

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn flat(seed: u64) -> Scenario {
        Scenario {
            seasonal_amplitude: 0.0,
            effects: Vec::new(),
            ..Scenario::example(seed)
        }
    }

    #[test]
    fn flat_scenario_mean() {
        let sim = simulate(&flat(1)).unwrap();
        let n = sim.deaths.len() as f64;
        let mean = sim.deaths.total() as f64 / n;
        let expected = 3.3e6 * 8.5 / RATE_SCALE;
        assert!((mean - expected).abs() < 3.0 * (expected / n).sqrt(), "{mean} vs {expected}");
        assert_eq!(sim.truth.cumulative_excess, 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = simulate(&Scenario::example(5)).unwrap();
        let b = simulate(&Scenario::example(5)).unwrap();
        let c = simulate(&Scenario::example(6)).unwrap();
        assert_eq!(a.deaths, b.deaths);
        assert_ne!(a.deaths, c.deaths);
    }

    #[test]
    fn effect_ratio_over_replications() {
        let mut sc = flat(0);
        sc.effects = vec![PeriodEffect { period: 2, effect: 1.5 }];
        let partition = sc.partition().unwrap();
        let (a, b) = partition.period_range(2).unwrap();
        let mut ratios = Vec::new();
        for seed in 0..50 {
            sc.seed = seed;
            let sim = simulate(&sc).unwrap();
            let post = sim.deaths.slice(a, b).unwrap();
            let pre = sim.deaths.slice(d(2017, 1, 1), d(2017, 8, 31)).unwrap();
            ratios.push((post.total() as f64 / post.len() as f64) / (pre.total() as f64 / pre.len() as f64));
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 1.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn truth_excess_identity() {
        let sc = Scenario::example(2);
        let sim = simulate(&sc).unwrap();
        let mut total = 0.0;
        for (i, &p) in sim.truth.period.iter().enumerate() {
            if let Some(e) = sc.effects.iter().find(|e| e.period == p) {
                total += sim.population.values()[i] / RATE_SCALE * sim.truth.rate[i] * (1.0 - 1.0 / e.effect);
            }
        }
        assert_eq!(total, sim.truth.cumulative_excess);
        assert!(total > 0.0);
    }

    #[test]
    fn validation() {
        let mut sc = Scenario::example(1);
        sc.baseline = 0.0;
        assert!(simulate(&sc).is_err());
        let mut sc = Scenario::example(1);
        sc.effects.push(PeriodEffect { period: 9, effect: 1.1 });
        assert!(sc.validate().is_err());
        let mut sc = Scenario::example(1);
        sc.effects[0].effect = -1.0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn toml_roundtrip_and_csv_pipeline() {
        let mut sc = Scenario::example(3);
        sc.population = PopulationSpec::Anchored {
            anchors: vec![
                AnchorSpec { date: d(2014, 7, 1), population: 3.40e6 },
                AnchorSpec { date: d(2015, 7, 1), population: 3.38e6 },
                AnchorSpec { date: d(2016, 7, 1), population: 3.36e6 },
                AnchorSpec { date: d(2017, 7, 1), population: 3.34e6 },
            ],
            movements: vec![
                MovementSpec { month: "2017-09".into(), leaving: 80_000, arriving: 35_000 },
                MovementSpec { month: "2017-10".into(), leaving: 150_000, arriving: 50_000 },
            ],
        };
        let text = sc.to_toml_string();
        assert_eq!(Scenario::from_toml_str(&text).unwrap(), sc);

        let sim = simulate(&sc).unwrap();
        assert!(sim
            .population
            .values()
            .iter()
            .zip(sim.counterfactual.values())
            .all(|(a, c)| a <= c));
        let dir = tempfile::tempdir().unwrap();
        write_simulation(dir.path(), &sc, &sim).unwrap();
        let deaths = load_deaths(&dir.path().join("deaths.csv"), None).unwrap();
        assert_eq!(deaths, sim.deaths);
        let anchors = load_anchors(&dir.path().join("population_anchors.csv")).unwrap();
        let movements = load_movements(&dir.path().join("net_movement.csv")).unwrap();
        let (adj, cf, _) = population_pipeline(&anchors, &movements, sc.start, sc.end, Extrapolation::Hold).unwrap();
        assert_eq!(adj, sim.population);
        assert_eq!(cf, sim.counterfactual);
        assert!(dir.path().join("truth.json").exists());
    }

    #[test]
    fn bad_toml_is_config_error() {
        assert!(matches!(Scenario::from_toml_str("start = 3"), Err(Error::Config(_))));
    }
}
