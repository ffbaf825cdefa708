//! CSV loading and daily population construction.
//!
//! Population is built from sparse anchors by piecewise-linear interpolation.
//! Census vintage anchors give the counterfactual trajectory `N*`; applying
//! monthly net passenger movement after the emergency produces month-end
//! anchors for the adjusted trajectory `N`.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{days_between, last_day_of_month, DailyCountSeries, PopulationSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    CensusVintage,
    DerivedMonthend,
}

impl FromStr for AnchorKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "census_vintage" => Ok(AnchorKind::CensusVintage),
            "derived_monthend" => Ok(AnchorKind::DerivedMonthend),
            other => Err(format!("unknown anchor kind `{other}`")),
        }
    }
}

impl fmt::Display for AnchorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnchorKind::CensusVintage => "census_vintage",
            AnchorKind::DerivedMonthend => "derived_monthend",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationAnchor {
    pub date: NaiveDate,
    pub population: f64,
    pub kind: AnchorKind,
}

impl PopulationAnchor {
    pub fn vintage(date: NaiveDate, population: f64) -> Self {
        Self {
            date,
            population,
            kind: AnchorKind::CensusVintage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidArgument(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    pub fn of(date: NaiveDate) -> Self {
        Self {
            year: date.year(),
            month: date.month(),
        }
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    pub fn pred(self) -> Self {
        if self.month == 1 {
            Self {
                year: self.year - 1,
                month: 12,
            }
        } else {
            Self {
                year: self.year,
                month: self.month - 1,
            }
        }
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month")
    }

    pub fn last_day(self) -> NaiveDate {
        last_day_of_month(self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| format!("expected YYYY-MM, got `{s}`"))?;
        let year = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let month: u32 = m.parse().map_err(|_| format!("bad month in `{s}`"))?;
        YearMonth::new(year, month).map_err(|e| e.to_string())
    }
}

impl TryFrom<String> for YearMonth {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<YearMonth> for String {
    fn from(ym: YearMonth) -> String {
        ym.to_string()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Monthly air passenger counts; `net` is departures minus arrivals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetMovementRecord {
    pub month: YearMonth,
    pub leaving: u64,
    pub arriving: u64,
}

impl NetMovementRecord {
    pub fn net(&self) -> i64 {
        self.leaving as i64 - self.arriving as i64
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn ingest_err(source: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Ingest {
        path: source.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_date(source: &str, line: u64, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|_| ingest_err(source, line, format!("invalid ISO-8601 date `{s}`")))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(reader)
}

fn header_index(
    source: &str,
    headers: &csv::StringRecord,
    name: &str,
) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| ingest_err(source, 1, format!("missing `{name}` column")))
}

/// Load `date,deaths` rows into a gap-free series, dropping rows after
/// `cutoff`.
pub fn load_deaths(path: &Path, cutoff: Option<NaiveDate>) -> Result<DailyCountSeries> {
    read_deaths(open(path)?, &path.display().to_string(), cutoff)
}

pub fn read_deaths<R: Read>(
    reader: R,
    source: &str,
    cutoff: Option<NaiveDate>,
) -> Result<DailyCountSeries> {
    let mut rdr = csv_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ingest_err(source, 1, e.to_string()))?
        .clone();
    let date_col = header_index(source, &headers, "date")?;
    let deaths_col = header_index(source, &headers, "deaths")?;

    let mut start = None;
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest_err(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = parse_date(source, line, rec.get(date_col).unwrap_or(""))?;
        if cutoff.is_some_and(|c| date > c) {
            continue;
        }
        let raw = rec.get(deaths_col).unwrap_or("");
        let value: i64 = raw
            .parse()
            .map_err(|_| ingest_err(source, line, format!("invalid death count `{raw}`")))?;
        if value < 0 {
            return Err(ingest_err(
                source,
                line,
                format!("negative death count {value}"),
            ));
        }
        match start {
            None => start = Some(date),
            Some(s) => {
                let expected = s + Duration::days(counts.len() as i64);
                if date > expected {
                    return Err(ingest_err(
                        source,
                        line,
                        format!("gap in dates: missing {expected}"),
                    ));
                }
                if date < expected {
                    return Err(ingest_err(
                        source,
                        line,
                        format!("date {date} out of order or duplicated (expected {expected})"),
                    ));
                }
            }
        }
        counts.push(value as u64);
    }
    let start = start.ok_or_else(|| ingest_err(source, 1, "no data rows"))?;
    DailyCountSeries::new(start, counts)
}

pub fn load_anchors(path: &Path) -> Result<Vec<PopulationAnchor>> {
    read_anchors(open(path)?, &path.display().to_string())
}

pub fn read_anchors<R: Read>(reader: R, source: &str) -> Result<Vec<PopulationAnchor>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ingest_err(source, 1, e.to_string()))?
        .clone();
    let date_col = header_index(source, &headers, "date")?;
    let pop_col = header_index(source, &headers, "population")?;
    let kind_col = headers.iter().position(|h| h == "kind");

    let mut anchors: Vec<PopulationAnchor> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest_err(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = parse_date(source, line, rec.get(date_col).unwrap_or(""))?;
        let raw = rec.get(pop_col).unwrap_or("");
        let population: f64 = raw
            .parse()
            .map_err(|_| ingest_err(source, line, format!("invalid population `{raw}`")))?;
        if !(population.is_finite() && population > 0.0) {
            return Err(ingest_err(
                source,
                line,
                format!("population must be positive, got {population}"),
            ));
        }
        let kind = match kind_col.and_then(|c| rec.get(c)) {
            Some(k) if !k.is_empty() => k.parse().map_err(|e| ingest_err(source, line, e))?,
            _ => AnchorKind::CensusVintage,
        };
        if let Some(prev) = anchors.last() {
            if date <= prev.date {
                return Err(ingest_err(
                    source,
                    line,
                    format!("anchor dates must be strictly increasing ({date} after {})", prev.date),
                ));
            }
        }
        anchors.push(PopulationAnchor {
            date,
            population,
            kind,
        });
    }
    Ok(anchors)
}

pub fn load_movements(path: &Path) -> Result<Vec<NetMovementRecord>> {
    read_movements(open(path)?, &path.display().to_string())
}

pub fn read_movements<R: Read>(reader: R, source: &str) -> Result<Vec<NetMovementRecord>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ingest_err(source, 1, e.to_string()))?
        .clone();
    let month_col = header_index(source, &headers, "month")?;
    let leaving_col = header_index(source, &headers, "leaving")?;
    let arriving_col = header_index(source, &headers, "arriving")?;
    let net_col = headers.iter().position(|h| h == "net");

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest_err(source, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let month: YearMonth = rec
            .get(month_col)
            .unwrap_or("")
            .parse()
            .map_err(|e| ingest_err(source, line, e))?;
        let count = |col: usize, what: &str| -> Result<u64> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse()
                .map_err(|_| ingest_err(source, line, format!("invalid {what} count `{raw}`")))
        };
        let record = NetMovementRecord {
            month,
            leaving: count(leaving_col, "leaving")?,
            arriving: count(arriving_col, "arriving")?,
        };
        if let Some(raw) = net_col.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
            let net: i64 = raw
                .parse()
                .map_err(|_| ingest_err(source, line, format!("invalid net `{raw}`")))?;
            if net != record.net() {
                return Err(ingest_err(
                    source,
                    line,
                    format!(
                        "net column {net} disagrees with leaving - arriving = {}",
                        record.net()
                    ),
                ));
            }
        }
        out.push(record);
    }
    Ok(out)
}

/// Derive month-end anchors by subtracting cumulative net movement from the
/// vintage trajectory.
///
/// An anchor holding the vintage value is placed at the end of the month
/// before the first movement month; the end of each movement month then gets
/// the vintage value there minus the net movement accumulated so far. Months
/// after the last record up to `through` carry the same cumulative
/// displacement. Outside the vintage hull the vintage value is held at the
/// nearest anchor, so with a single vintage estimate this is the plain chain
/// `anchor_k = anchor_{k-1} - net_k`. Vintage anchors inside or after the
/// adjusted window are superseded and dropped.
pub fn apply_net_movement(
    vintage: &[PopulationAnchor],
    movements: &[NetMovementRecord],
    through: Option<YearMonth>,
) -> Result<Vec<PopulationAnchor>> {
    validate_anchor_order(vintage)?;
    let Some(first) = movements.first() else {
        return Ok(vintage.to_vec());
    };
    for w in movements.windows(2) {
        if w[1].month != w[0].month.succ() {
            return Err(Error::InvalidArgument(format!(
                "net movement months must be consecutive: {} followed by {}",
                w[0].month, w[1].month
            )));
        }
    }
    if vintage.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one vintage anchor is needed to seed the adjustment".into(),
        ));
    }
    let pre_end = first.month.pred().last_day();
    let mut out: Vec<PopulationAnchor> = vintage
        .iter()
        .copied()
        .filter(|a| a.date <= pre_end)
        .collect();
    if out.last().is_none_or(|a| a.date < pre_end) {
        out.push(PopulationAnchor {
            date: pre_end,
            population: vintage_value_at(vintage, pre_end),
            kind: AnchorKind::DerivedMonthend,
        });
    }

    let mut displaced = 0i64;
    let push_month = |out: &mut Vec<PopulationAnchor>, month: YearMonth, displaced: i64| {
        let date = month.last_day();
        let pop = vintage_value_at(vintage, date) - displaced as f64;
        if pop <= 0.0 {
            return Err(Error::Domain(format!(
                "population at the end of {month} after net movement is {pop}"
            )));
        }
        out.push(PopulationAnchor {
            date,
            population: pop,
            kind: AnchorKind::DerivedMonthend,
        });
        Ok(())
    };
    for rec in movements {
        displaced += rec.net();
        push_month(&mut out, rec.month, displaced)?;
    }
    if let Some(through) = through {
        let mut month = movements.last().expect("non-empty").month.succ();
        while month <= through {
            push_month(&mut out, month, displaced)?;
            month = month.succ();
        }
    }
    Ok(out)
}

/// Vintage trajectory at `date`: linear inside the anchor hull, held at the
/// nearest anchor outside it.
pub fn vintage_value_at(anchors: &[PopulationAnchor], date: NaiveDate) -> f64 {
    let first = anchors.first().expect("non-empty anchors");
    let last = anchors.last().expect("non-empty anchors");
    if date <= first.date {
        return first.population;
    }
    if date >= last.date {
        return last.population;
    }
    let seg = anchors
        .windows(2)
        .find(|w| date <= w[1].date)
        .expect("date inside hull");
    let span = days_between(seg[0].date, seg[1].date) as f64;
    let t = days_between(seg[0].date, date) as f64 / span;
    seg[0].population + t * (seg[1].population - seg[0].population)
}

/// How `interpolate_population` treats dates outside the anchor hull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    /// Dates outside the hull are an error.
    #[default]
    None,
    /// Continue the first or last segment linearly.
    Linear,
    /// Hold the first or last anchor value.
    Hold,
}

impl FromStr for Extrapolation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "linear" => Ok(Self::Linear),
            "hold" => Ok(Self::Hold),
            other => Err(format!("unknown extrapolation `{other}` (none|linear|hold)")),
        }
    }
}

fn validate_anchor_order(anchors: &[PopulationAnchor]) -> Result<()> {
    if anchors.windows(2).any(|w| w[1].date <= w[0].date) {
        return Err(Error::InvalidArgument(
            "anchors must be strictly ordered by date".into(),
        ));
    }
    if let Some(a) = anchors
        .iter()
        .find(|a| !(a.population.is_finite() && a.population > 0.0))
    {
        return Err(Error::Domain(format!(
            "anchor on {} has non-positive population {}",
            a.date, a.population
        )));
    }
    Ok(())
}

/// Piecewise-linear daily population over `from..=to`, exact on anchor dates.
pub fn interpolate_population(
    anchors: &[PopulationAnchor],
    from: NaiveDate,
    to: NaiveDate,
    extrapolate: Extrapolation,
) -> Result<PopulationSeries> {
    validate_anchor_order(anchors)?;
    if from > to {
        return Err(Error::InvalidArgument(format!("empty range {from}..={to}")));
    }
    // A lone anchor only defines a level, which holding can extend.
    if let [only] = anchors {
        if extrapolate == Extrapolation::Hold {
            let n = days_between(from, to) as usize + 1;
            return PopulationSeries::new(from, vec![only.population; n]);
        }
    }
    if anchors.len() < 2 {
        return Err(Error::InvalidArgument(
            "interpolation needs at least two anchors, or one with hold extrapolation".into(),
        ));
    }
    let first = anchors[0].date;
    let last = anchors[anchors.len() - 1].date;
    if extrapolate == Extrapolation::None && (from < first || to > last) {
        return Err(Error::InvalidArgument(format!(
            "range {from}..={to} outside anchor hull {first}..={last}"
        )));
    }

    let n = days_between(from, to) as usize + 1;
    let mut values = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let date = from + Duration::days(i as i64);
        while seg + 2 < anchors.len() && date > anchors[seg + 1].date {
            seg += 1;
        }
        let (a, b) = (anchors[seg], anchors[seg + 1]);
        let v = if extrapolate == Extrapolation::Hold && date < first {
            a.population
        } else if extrapolate == Extrapolation::Hold && date > last {
            b.population
        } else if date == a.date {
            a.population
        } else if date == b.date {
            b.population
        } else {
            let span = days_between(a.date, b.date) as f64;
            let t = days_between(a.date, date) as f64 / span;
            a.population + t * (b.population - a.population)
        };
        values.push(v);
    }
    PopulationSeries::new(from, values)
}

/// `N*`: interpolation over census vintage anchors only.
pub fn counterfactual_population(
    anchors: &[PopulationAnchor],
    from: NaiveDate,
    to: NaiveDate,
    extrapolate: Extrapolation,
) -> Result<PopulationSeries> {
    let vintage: Vec<_> = anchors
        .iter()
        .copied()
        .filter(|a| a.kind == AnchorKind::CensusVintage)
        .collect();
    interpolate_population(&vintage, from, to, extrapolate)
}

/// Month-end decline of each derived anchor relative to the seed anchor.
#[derive(Debug, Clone, Serialize)]
pub struct MonthEndDecline {
    pub date: NaiveDate,
    pub population: f64,
    pub percent_below_seed: f64,
}

pub fn monthend_declines(adjusted: &[PopulationAnchor], seed: f64) -> Vec<MonthEndDecline> {
    adjusted
        .iter()
        .filter(|a| a.kind == AnchorKind::DerivedMonthend && a.population != seed)
        .map(|a| MonthEndDecline {
            date: a.date,
            population: a.population,
            percent_below_seed: (seed - a.population) / seed * 100.0,
        })
        .collect()
}

fn write_err(e: csv::Error) -> Error {
    Error::Io {
        path: "<csv output>".into(),
        source: e.into(),
    }
}

/// Adjusted and counterfactual daily populations over `from..=to`, with
/// the anchors used for the adjusted series. Without movement records the
/// two series coincide.
pub fn population_pipeline(
    vintage: &[PopulationAnchor],
    movements: &[NetMovementRecord],
    from: NaiveDate,
    to: NaiveDate,
    extrapolate: Extrapolation,
) -> Result<(PopulationSeries, PopulationSeries, Vec<PopulationAnchor>)> {
    let vintage: Vec<_> = vintage
        .iter()
        .copied()
        .filter(|a| a.kind == AnchorKind::CensusVintage)
        .collect();
    let adjusted_anchors = apply_net_movement(&vintage, movements, Some(YearMonth::of(to)))?;
    let adjusted = interpolate_population(&adjusted_anchors, from, to, extrapolate)?;
    let counterfactual = counterfactual_population(&vintage, from, to, extrapolate)?;
    Ok((adjusted, counterfactual, adjusted_anchors))
}

pub fn write_deaths<W: Write>(w: W, series: &DailyCountSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = write_err;
    wtr.write_record(["date", "deaths"]).map_err(io)?;
    for (date, c) in series.dates().zip(series.counts()) {
        wtr.write_record([date.to_string(), c.to_string()]).map_err(io)?;
    }
    wtr.flush().map_err(|e| write_err(e.into()))
}

pub fn write_anchors<W: Write>(w: W, anchors: &[PopulationAnchor]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = write_err;
    wtr.write_record(["date", "population", "kind"]).map_err(io)?;
    for a in anchors {
        wtr.write_record([a.date.to_string(), a.population.to_string(), a.kind.to_string()])
            .map_err(io)?;
    }
    wtr.flush().map_err(|e| write_err(e.into()))
}

pub fn write_movements<W: Write>(w: W, records: &[NetMovementRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = write_err;
    wtr.write_record(["month", "leaving", "arriving", "net"])
        .map_err(io)?;
    for r in records {
        wtr.write_record([
            r.month.to_string(),
            r.leaving.to_string(),
            r.arriving.to_string(),
            r.net().to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| write_err(e.into()))
}
