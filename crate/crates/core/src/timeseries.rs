//! Dated daily series shared by every model.
//!
//! Series are stored as a start date plus one value per consecutive day, so a
//! gap can never be represented. The integer time index of a value is its
//! offset from the start date.

use chrono::{Datelike, Duration, NaiveDate};
use serde::Serialize;

use crate::error::{Error, Result};

/// Persons-days to annualized deaths per 1000 persons.
pub const RATE_SCALE: f64 = 1000.0 * 365.0;

pub fn date_range(start: NaiveDate, len: usize) -> impl Iterator<Item = NaiveDate> + Clone {
    (0..len).map(move |i| start + Duration::days(i as i64))
}

pub fn days_between(from: NaiveDate, to: NaiveDate) -> i64 {
    (to - from).num_days()
}

pub fn is_leap_year(year: i32) -> bool {
    NaiveDate::from_ymd_opt(year, 2, 29).is_some()
}

pub fn days_in_year(year: i32) -> u32 {
    if is_leap_year(year) {
        366
    } else {
        365
    }
}

/// Day of year mapped onto `[0, 1)`: `(ordinal - 1) / days_in_year`.
pub fn day_of_year_fraction(date: NaiveDate) -> f64 {
    (date.ordinal0() as f64) / days_in_year(date.year()) as f64
}

pub fn last_day_of_month(year: i32, month: u32) -> NaiveDate {
    let (ny, nm) = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
    NaiveDate::from_ymd_opt(ny, nm, 1).expect("valid month") - Duration::days(1)
}

/// Daily death counts `D_t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DailyCountSeries {
    start: NaiveDate,
    counts: Vec<u64>,
}

impl DailyCountSeries {
    pub fn new(start: NaiveDate, counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidArgument("count series is empty".into()));
        }
        Ok(Self { start, counts })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.counts.len() as i64 - 1)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + Clone {
        date_range(self.start, self.counts.len())
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let off = days_between(self.start, date);
        (off >= 0 && (off as usize) < self.counts.len()).then_some(off as usize)
    }

    pub fn get(&self, date: NaiveDate) -> Option<u64> {
        self.index_of(date).map(|i| self.counts[i])
    }

    /// Sub-series over the inclusive date range.
    pub fn slice(&self, from: NaiveDate, to: NaiveDate) -> Result<Self> {
        let (i, j) = slice_bounds(self.start, self.end(), from, to)?;
        Self::new(from, self.counts[i..=j].to_vec())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Daily population sizes `N_t` (or the counterfactual `N*_t`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationSeries {
    start: NaiveDate,
    values: Vec<f64>,
}

impl PopulationSeries {
    pub fn new(start: NaiveDate, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("population series is empty".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::Domain(format!(
                "population must be positive and finite, got {v} on {}",
                start + Duration::days(i as i64)
            )));
        }
        Ok(Self { start, values })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.values.len() as i64 - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + Clone {
        date_range(self.start, self.values.len())
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        let off = days_between(self.start, date);
        (off >= 0 && (off as usize) < self.values.len()).then(|| self.values[off as usize])
    }

    pub fn slice(&self, from: NaiveDate, to: NaiveDate) -> Result<Self> {
        let (i, j) = slice_bounds(self.start, self.end(), from, to)?;
        Self::new(from, self.values[i..=j].to_vec())
    }
}

fn slice_bounds(
    start: NaiveDate,
    end: NaiveDate,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<(usize, usize)> {
    if from > to || from < start || to > end {
        return Err(Error::InvalidArgument(format!(
            "range {from}..={to} outside series {start}..={end}"
        )));
    }
    Ok((
        days_between(start, from) as usize,
        days_between(start, to) as usize,
    ))
}

/// Anything indexed by consecutive days from a start date.
pub trait DailySeries {
    fn series_start(&self) -> NaiveDate;
    fn series_len(&self) -> usize;
}

impl DailySeries for DailyCountSeries {
    fn series_start(&self) -> NaiveDate {
        self.start
    }
    fn series_len(&self) -> usize {
        self.counts.len()
    }
}

impl DailySeries for PopulationSeries {
    fn series_start(&self) -> NaiveDate {
        self.start
    }
    fn series_len(&self) -> usize {
        self.values.len()
    }
}

/// Succeeds iff both series start on the same date and have the same length.
pub fn align<A: DailySeries, B: DailySeries>(a: &A, b: &B) -> Result<()> {
    if a.series_start() != b.series_start() || a.series_len() != b.series_len() {
        return Err(Error::Alignment(format!(
            "{} days from {} vs {} days from {}",
            a.series_len(),
            a.series_start(),
            b.series_len(),
            b.series_start()
        )));
    }
    Ok(())
}

/// Post-emergency periods. Period `l` (1-based) covers the days after
/// boundary `l-1` up to and including boundary `l`; period 1 starts on the
/// emergency date. Days before the emergency are period 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeriodPartition {
    emergency: NaiveDate,
    boundaries: Vec<NaiveDate>,
}

impl PeriodPartition {
    pub fn new(emergency: NaiveDate, boundaries: Vec<NaiveDate>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::InvalidArgument(
                "period partition needs at least one boundary".into(),
            ));
        }
        if boundaries[0] <= emergency {
            return Err(Error::InvalidArgument(format!(
                "first period boundary {} must fall after the emergency date {emergency}",
                boundaries[0]
            )));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "period boundaries must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            emergency,
            boundaries,
        })
    }

    /// One period per calendar month: the first runs from the emergency date
    /// to the end of its month, the last ends on `through`.
    pub fn monthly(emergency: NaiveDate, through: NaiveDate) -> Result<Self> {
        if through < emergency {
            return Err(Error::InvalidArgument(format!(
                "partition end {through} precedes emergency {emergency}"
            )));
        }
        let mut boundaries = Vec::new();
        let (mut y, mut m) = (emergency.year(), emergency.month());
        loop {
            let end = last_day_of_month(y, m);
            if end >= through {
                boundaries.push(through);
                break;
            }
            boundaries.push(end);
            if m == 12 {
                y += 1;
                m = 1;
            } else {
                m += 1;
            }
        }
        Self::new(emergency, boundaries)
    }

    pub fn emergency(&self) -> NaiveDate {
        self.emergency
    }

    pub fn boundaries(&self) -> &[NaiveDate] {
        &self.boundaries
    }

    pub fn num_periods(&self) -> usize {
        self.boundaries.len()
    }

    pub fn last_day(&self) -> NaiveDate {
        *self.boundaries.last().expect("non-empty")
    }

    /// Inclusive date range of period `l` (1-based).
    pub fn period_range(&self, l: usize) -> Option<(NaiveDate, NaiveDate)> {
        if l == 0 || l > self.boundaries.len() {
            return None;
        }
        let start = if l == 1 {
            self.emergency
        } else {
            self.boundaries[l - 2] + Duration::days(1)
        };
        Some((start, self.boundaries[l - 1]))
    }

    /// Period containing `date`: `Some(0)` before the emergency, `Some(l)`
    /// inside period `l`, `None` after the last boundary.
    pub fn period_of(&self, date: NaiveDate) -> Option<usize> {
        if date < self.emergency {
            return Some(0);
        }
        self.boundaries
            .iter()
            .position(|b| date <= *b)
            .map(|i| i + 1)
    }

    pub fn label(&self, l: usize) -> String {
        match self.period_range(l) {
            Some((a, b)) => format!("{a}..{b}"),
            None => "baseline".into(),
        }
    }
}

/// Daily mortality rates `R_t` in annualized deaths per 1000 persons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MortalityRateSeries {
    pub start: NaiveDate,
    pub rates: Vec<f64>,
}

pub fn mortality_rate(
    deaths: &DailyCountSeries,
    pop: &PopulationSeries,
) -> Result<MortalityRateSeries> {
    align(deaths, pop)?;
    let rates = deaths
        .counts()
        .iter()
        .zip(pop.values())
        .map(|(&d, &n)| {
            if n > 0.0 {
                Ok(d as f64 / n * RATE_SCALE)
            } else {
                Err(Error::Domain(format!("non-positive population {n}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MortalityRateSeries {
        start: deaths.start(),
        rates,
    })
}
