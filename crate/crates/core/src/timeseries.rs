//! Frequency-regular time series, long-format CSV ingestion and the
//! last-window / rolling-origin splits used by evaluation and calibration.
//!
//! A series is stored as `(start, freq, values)`: the timestamp of value `i`
//! is `freq.advance(start, i)`. Irregular inputs are rejected at ingestion.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, Duration, Months, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Timestamp = NaiveDateTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Hourly,
    Daily,
    Weekly,
    Monthly,
}

impl Frequency {
    pub const ALL: [Frequency; 4] = [
        Frequency::Hourly,
        Frequency::Daily,
        Frequency::Weekly,
        Frequency::Monthly,
    ];

    pub fn season_length(self) -> usize {
        match self {
            Frequency::Hourly => 24,
            Frequency::Daily => 7,
            Frequency::Weekly => 52,
            Frequency::Monthly => 12,
        }
    }

    /// Evaluation horizon used by the benchmark protocol.
    pub fn default_horizon(self) -> usize {
        match self {
            Frequency::Hourly => 24,
            Frequency::Daily => 7,
            Frequency::Weekly => 1,
            Frequency::Monthly => 12,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Frequency::Hourly => "hourly",
            Frequency::Daily => "daily",
            Frequency::Weekly => "weekly",
            Frequency::Monthly => "monthly",
        }
    }

    /// Timestamp `steps` grid points after `start`.
    pub fn advance(self, start: Timestamp, steps: usize) -> Timestamp {
        match self {
            Frequency::Hourly => start + Duration::hours(steps as i64),
            Frequency::Daily => start + Duration::days(steps as i64),
            Frequency::Weekly => start + Duration::weeks(steps as i64),
            Frequency::Monthly => start
                .checked_add_months(Months::new(steps as u32))
                .expect("month arithmetic overflow"),
        }
    }

    /// Number of grid steps from `start` to `ts`, or `None` when `ts` is
    /// before `start` or not on the grid anchored at `start`.
    pub fn steps_between(self, start: Timestamp, ts: Timestamp) -> Option<usize> {
        if ts < start {
            return None;
        }
        let steps = match self {
            Frequency::Hourly => exact_div((ts - start).num_seconds(), 3600)?,
            Frequency::Daily => exact_div((ts - start).num_seconds(), 86_400)?,
            Frequency::Weekly => exact_div((ts - start).num_seconds(), 7 * 86_400)?,
            Frequency::Monthly => {
                if ts.day() != start.day() || ts.time() != start.time() {
                    return None;
                }
                (ts.year() as i64 - start.year() as i64) * 12 + ts.month() as i64
                    - start.month() as i64
            }
        };
        usize::try_from(steps).ok()
    }

    /// Canonical textual form of a timestamp at this frequency.
    pub fn format_ts(self, ts: Timestamp) -> String {
        match self {
            Frequency::Monthly => ts.format("%Y-%m").to_string(),
            Frequency::Daily | Frequency::Weekly => ts.format("%Y-%m-%d").to_string(),
            Frequency::Hourly => ts.format("%Y-%m-%dT%H").to_string(),
        }
    }

    /// Parse a timestamp in this frequency's format. Monthly also accepts
    /// `YYYY-MM-01`; hourly also accepts whole-hour `YYYY-MM-DDTHH:MM[:SS]`.
    pub fn parse_ts(self, text: &str) -> Result<Timestamp> {
        let text = text.trim();
        let bad = || Error::data(format!("unparseable {} timestamp '{}'", self.as_str(), text));
        match self {
            Frequency::Monthly => {
                let date = NaiveDate::parse_from_str(&format!("{text}-01"), "%Y-%m-%d")
                    .or_else(|_| NaiveDate::parse_from_str(text, "%Y-%m-%d"))
                    .map_err(|_| bad())?;
                if date.day() != 1 {
                    return Err(bad());
                }
                Ok(date.and_time(NaiveTime::MIN))
            }
            Frequency::Daily | Frequency::Weekly => NaiveDate::parse_from_str(text, "%Y-%m-%d")
                .map(|d| d.and_time(NaiveTime::MIN))
                .map_err(|_| bad()),
            Frequency::Hourly => {
                let ts = NaiveDateTime::parse_from_str(&format!("{text}:00:00"), "%Y-%m-%dT%H:%M:%S")
                    .or_else(|_| NaiveDateTime::parse_from_str(&format!("{text}:00"), "%Y-%m-%dT%H:%M:%S"))
                    .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S"))
                    .map_err(|_| bad())?;
                if ts.minute() != 0 || ts.second() != 0 {
                    return Err(bad());
                }
                Ok(ts)
            }
        }
    }
}

fn exact_div(num: i64, den: i64) -> Option<i64> {
    (num % den == 0).then_some(num / den)
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hourly" | "h" => Ok(Frequency::Hourly),
            "daily" | "d" => Ok(Frequency::Daily),
            "weekly" | "w" => Ok(Frequency::Weekly),
            "monthly" | "m" | "ms" => Ok(Frequency::Monthly),
            other => Err(Error::config(format!("unknown frequency '{other}'"))),
        }
    }
}

/// A named exogenous covariate aligned with the target values. It may run
/// past the last target value to carry known future covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExoChannel {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    id: String,
    start: Timestamp,
    freq: Frequency,
    values: Vec<f64>,
    exogenous: Vec<ExoChannel>,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, start: Timestamp, freq: Frequency, values: Vec<f64>) -> Result<Self> {
        Self::with_exogenous(id, start, freq, values, Vec::new())
    }

    pub fn with_exogenous(
        id: impl Into<String>,
        start: Timestamp,
        freq: Frequency,
        values: Vec<f64>,
        exogenous: Vec<ExoChannel>,
    ) -> Result<Self> {
        let id = id.into();
        if values.is_empty() {
            return Err(Error::data(format!("series '{id}' has no values")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("series '{id}' has a non-finite value at index {pos}")));
        }
        for ch in &exogenous {
            if ch.values.len() < values.len() {
                return Err(Error::data(format!(
                    "series '{id}': exogenous channel '{}' has {} values, fewer than the {} targets",
                    ch.name,
                    ch.values.len(),
                    values.len()
                )));
            }
            if ch.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!(
                    "series '{id}': exogenous channel '{}' has non-finite entries",
                    ch.name
                )));
            }
        }
        Ok(Self {
            id,
            start,
            freq,
            values,
            exogenous,
        })
    }

    /// Convenience constructor for synthetic data; starts at 2000-01-01.
    pub fn from_values(id: impl Into<String>, freq: Frequency, values: Vec<f64>) -> Result<Self> {
        Self::new(id, default_start(), freq, values)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn start(&self) -> Timestamp {
        self.start
    }

    pub fn freq(&self) -> Frequency {
        self.freq
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn exogenous(&self) -> &[ExoChannel] {
        &self.exogenous
    }

    /// How many future covariate steps every exogenous channel provides.
    pub fn future_exo_len(&self) -> usize {
        self.exogenous
            .iter()
            .map(|c| c.values.len() - self.values.len())
            .min()
            .unwrap_or(0)
    }

    pub fn timestamp(&self, index: usize) -> Timestamp {
        self.freq.advance(self.start, index)
    }

    /// Timestamps of the `horizon` steps following the last observation.
    pub fn future_timestamps(&self, horizon: usize) -> Vec<Timestamp> {
        (0..horizon).map(|j| self.timestamp(self.len() + j)).collect()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// The first `cut` observations. Exogenous channels keep up to `future`
    /// extra steps so the history still carries its future covariates.
    pub fn history(&self, cut: usize, future: usize) -> Result<TimeSeries> {
        if cut == 0 || cut > self.len() {
            return Err(Error::data(format!(
                "cannot cut series '{}' of length {} at {cut}",
                self.id,
                self.len()
            )));
        }
        let exogenous = self
            .exogenous
            .iter()
            .map(|c| ExoChannel {
                name: c.name.clone(),
                values: c.values[..(cut + future).min(c.values.len())].to_vec(),
            })
            .collect();
        Ok(TimeSeries {
            id: self.id.clone(),
            start: self.start,
            freq: self.freq,
            values: self.values[..cut].to_vec(),
            exogenous,
        })
    }
}

pub fn default_start() -> Timestamp {
    NaiveDate::from_ymd_opt(2000, 1, 1)
        .expect("valid date")
        .and_time(NaiveTime::MIN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetRole {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    freq: Frequency,
    series: Vec<TimeSeries>,
    role: DatasetRole,
    season_length: usize,
}

impl Dataset {
    pub fn new(freq: Frequency, series: Vec<TimeSeries>, role: DatasetRole) -> Result<Self> {
        let mut seen = HashSet::new();
        let exo_names = |s: &TimeSeries| s.exogenous.iter().map(|c| c.name.clone()).collect::<Vec<_>>();
        let first_names = series.first().map(exo_names);
        for s in &series {
            if s.freq != freq {
                return Err(Error::data(format!(
                    "series '{}' has frequency {}, dataset is {}",
                    s.id, s.freq, freq
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::data(format!("duplicate series id '{}'", s.id)));
            }
            if Some(exo_names(s)) != first_names {
                return Err(Error::data(format!(
                    "series '{}' has a different set of exogenous channels",
                    s.id
                )));
            }
        }
        Ok(Self {
            freq,
            series,
            role,
            season_length: freq.season_length(),
        })
    }

    pub fn freq(&self) -> Frequency {
        self.freq
    }

    pub fn series(&self) -> &[TimeSeries] {
        &self.series
    }

    pub fn role(&self) -> DatasetRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn season_length(&self) -> usize {
        self.season_length
    }

    pub fn n_exo(&self) -> usize {
        self.series.first().map_or(0, |s| s.exogenous.len())
    }

    pub fn with_role(mut self, role: DatasetRole) -> Self {
        self.role = role;
        self
    }

    /// Override the season length (for example to treat weekly data as
    /// non-seasonal).
    pub fn with_season_length(mut self, season_length: usize) -> Result<Self> {
        if season_length == 0 {
            return Err(Error::config("season length must be positive"));
        }
        self.season_length = season_length;
        Ok(self)
    }

    pub fn get(&self, id: &str) -> Option<&TimeSeries> {
        self.series.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FillPolicy {
    #[default]
    ForwardThenBackFill,
    Zero,
    Error,
}

impl FromStr for FillPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ffill" | "forward" | "forwardthenbackfill" => Ok(FillPolicy::ForwardThenBackFill),
            "zero" => Ok(FillPolicy::Zero),
            "error" => Ok(FillPolicy::Error),
            other => Err(Error::config(format!("unknown fill policy '{other}'"))),
        }
    }
}

struct RawRow {
    ts: Timestamp,
    y: Option<f64>,
    exo: Vec<Option<f64>>,
}

fn parse_cell(text: &str, what: &str, line: u64) -> Result<Option<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(None);
    }
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::data(format!("line {line}: non-numeric {what} '{text}'"))),
    }
}

/// Parse long-format CSV (`unique_id,ds,y[,exo...]`) into a dataset.
///
/// Series appear in first-seen order. Rows after a series' last observed
/// `y` are treated as future covariate rows and only feed the exogenous
/// channels.
pub fn ingest_long_csv<R: Read>(reader: R, freq: Frequency, fill: FillPolicy) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::data("empty stream"));
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id_col, ds_col, y_col) = match (col("unique_id"), col("ds"), col("y")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::data("header must contain unique_id, ds and y columns")),
    };
    let exo_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| ![id_col, ds_col, y_col].contains(i))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<RawRow>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(format!("malformed csv: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(id_col).to_string();
        if id.is_empty() {
            return Err(Error::data(format!("line {line}: empty unique_id")));
        }
        let ts = freq
            .parse_ts(field(ds_col))
            .map_err(|e| Error::data(format!("line {line}: {e}")))?;
        let y = parse_cell(field(y_col), "y", line)?;
        let exo = exo_cols
            .iter()
            .map(|(i, name)| parse_cell(field(*i), name, line))
            .collect::<Result<Vec<_>>>()?;
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        entry.push(RawRow { ts, y, exo });
    }
    if order.is_empty() {
        return Err(Error::data("empty stream: no data rows"));
    }

    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let mut raw = rows.remove(&id).expect("grouped id");
        raw.sort_by_key(|r| r.ts);
        if let Some(w) = raw.windows(2).find(|w| w[0].ts == w[1].ts) {
            return Err(Error::data(format!(
                "duplicate row for series '{id}' at {}",
                freq.format_ts(w[0].ts)
            )));
        }
        let start = raw[0].ts;
        let mut grid_y: Vec<Option<f64>> = Vec::new();
        let mut grid_exo: Vec<Vec<Option<f64>>> = vec![Vec::new(); exo_cols.len()];
        for r in &raw {
            let idx = freq.steps_between(start, r.ts).ok_or_else(|| {
                Error::data(format!(
                    "series '{id}': timestamp {} is off the {} grid",
                    freq.format_ts(r.ts),
                    freq
                ))
            })?;
            if grid_y.len() <= idx {
                grid_y.resize(idx + 1, None);
                for ch in &mut grid_exo {
                    ch.resize(idx + 1, None);
                }
            }
            grid_y[idx] = r.y;
            for (ch, v) in grid_exo.iter_mut().zip(&r.exo) {
                ch[idx] = *v;
            }
        }
        let n_obs = match grid_y.iter().rposition(Option::is_some) {
            Some(last) => last + 1,
            None => return Err(Error::data(format!("series '{id}' has no observed y values"))),
        };
        if n_obs < grid_y.len() && exo_cols.is_empty() {
            return Err(Error::data(format!(
                "series '{id}' has trailing rows without y and no exogenous columns"
            )));
        }
        grid_y.truncate(n_obs);
        let values = fill_gaps(&grid_y, fill).map_err(|e| Error::data(format!("series '{id}', y: {e}")))?;
        let exogenous = exo_cols
            .iter()
            .zip(grid_exo)
            .map(|((_, name), ch)| {
                fill_gaps(&ch, fill)
                    .map(|values| ExoChannel {
                        name: name.clone(),
                        values,
                    })
                    .map_err(|e| Error::data(format!("series '{id}', {name}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        series.push(TimeSeries::with_exogenous(id, start, freq, values, exogenous)?);
    }
    Dataset::new(freq, series, DatasetRole::Target)
}

/// Guess the frequency of a long-format CSV from the timestamp text and the
/// spacing of the first series' first two rows.
pub fn infer_frequency<R: Read>(reader: R) -> Result<Frequency> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id_col, ds_col) = match (col("unique_id"), col("ds")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::data("header must contain unique_id and ds columns")),
    };
    let mut first_id: Option<String> = None;
    let mut stamps: Vec<String> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::data(format!("malformed csv: {e}")))?;
        let id = record.get(id_col).unwrap_or("");
        if first_id.get_or_insert_with(|| id.to_string()) != id {
            continue;
        }
        stamps.push(record.get(ds_col).unwrap_or("").to_string());
        if stamps.len() == 2 {
            break;
        }
    }
    let first = stamps.first().ok_or_else(|| Error::data("empty stream: no data rows"))?;
    if first.contains('T') || first.contains(':') {
        return Ok(Frequency::Hourly);
    }
    if first.len() == 7 {
        return Ok(Frequency::Monthly);
    }
    let day = Frequency::Daily.parse_ts(first)?;
    let Some(second) = stamps.get(1) else {
        return Ok(Frequency::Daily);
    };
    let next = Frequency::Daily.parse_ts(second)?;
    let gap = (next - day).num_days().abs();
    match gap {
        1 => Ok(Frequency::Daily),
        7 => Ok(Frequency::Weekly),
        28..=31 if day.day() == 1 && next.day() == 1 => Ok(Frequency::Monthly),
        _ => Err(Error::data(format!(
            "cannot infer frequency from '{first}' and '{second}'; specify the frequency"
        ))),
    }
}

fn fill_gaps(grid: &[Option<f64>], fill: FillPolicy) -> std::result::Result<Vec<f64>, String> {
    let first = grid
        .iter()
        .position(Option::is_some)
        .ok_or_else(|| "no observed values".to_string())?;
    let mut out = Vec::with_capacity(grid.len());
    let mut prev = grid[first].expect("observed");
    for (i, cell) in grid.iter().enumerate() {
        match (cell, fill) {
            (Some(v), _) => {
                prev = *v;
                out.push(*v);
            }
            (None, FillPolicy::Error) => return Err(format!("missing value at grid position {i}")),
            (None, FillPolicy::Zero) => out.push(0.0),
            // before the first observation `prev` is the first observed value
            (None, FillPolicy::ForwardThenBackFill) => out.push(prev),
        }
    }
    Ok(out)
}

/// Serialize a dataset back to long-format CSV, including future covariate
/// rows (with an empty `y`).
pub fn write_long_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let exo_names: Vec<String> = ds
        .series
        .first()
        .map(|s| s.exogenous.iter().map(|c| c.name.clone()).collect())
        .unwrap_or_default();
    let mut header = vec!["unique_id".to_string(), "ds".to_string(), "y".to_string()];
    header.extend(exo_names);
    w.write_record(&header).map_err(csv_io)?;
    for s in &ds.series {
        let rows = s.exogenous.iter().map(|c| c.values.len()).fold(s.len(), usize::max);
        for i in 0..rows {
            let mut record = vec![s.id.clone(), ds.freq.format_ts(s.timestamp(i))];
            record.push(s.values.get(i).map(|v| v.to_string()).unwrap_or_default());
            for ch in &s.exogenous {
                record.push(ch.values.get(i).map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&record).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Hold out the final `horizon` values of every series.
///
/// Train series keep the exogenous values for the held-out window so that
/// future covariates remain available to the forecaster.
pub fn last_window_split(ds: &Dataset, horizon: usize) -> Result<(Dataset, Dataset)> {
    if horizon == 0 {
        return Err(Error::config("horizon must be positive"));
    }
    let mut train = Vec::with_capacity(ds.len());
    let mut test = Vec::with_capacity(ds.len());
    for s in &ds.series {
        if s.len() <= horizon {
            return Err(Error::InsufficientData {
                series: s.id.clone(),
                needed: horizon + 1,
                got: s.len(),
            });
        }
        let cut = s.len() - horizon;
        train.push(s.history(cut, horizon)?);
        let exogenous = s
            .exogenous
            .iter()
            .map(|c| ExoChannel {
                name: c.name.clone(),
                values: c.values[cut..].to_vec(),
            })
            .collect();
        test.push(TimeSeries::with_exogenous(
            s.id.clone(),
            s.timestamp(cut),
            s.freq,
            s.values[cut..].to_vec(),
            exogenous,
        )?);
    }
    let train = Dataset {
        series: train,
        ..ds.clone_empty()
    };
    let test = Dataset {
        series: test,
        ..ds.clone_empty()
    };
    Ok((train, test))
}

impl Dataset {
    fn clone_empty(&self) -> Dataset {
        Dataset {
            freq: self.freq,
            series: Vec::new(),
            role: self.role,
            season_length: self.season_length,
        }
    }

    /// Copy of this dataset with a different set of series (same metadata).
    pub fn with_series(&self, series: Vec<TimeSeries>) -> Result<Dataset> {
        Dataset::new(self.freq, series, self.role)?.with_season_length(self.season_length)
    }
}

/// One rolling-origin window: history is `values[..cut]`, followed by
/// `actuals`.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingWindow {
    pub cut: usize,
    pub actuals: Vec<f64>,
}

/// `n_windows` back-to-back windows of length `horizon` tiling the end of
/// the series, oldest first.
pub fn rolling_origins(series: &TimeSeries, horizon: usize, n_windows: usize) -> Result<Vec<RollingWindow>> {
    if horizon == 0 || n_windows == 0 {
        return Err(Error::config("horizon and n_windows must be positive"));
    }
    let needed = horizon * n_windows + 1;
    if series.len() < needed {
        return Err(Error::InsufficientData {
            series: series.id.clone(),
            needed,
            got: series.len(),
        });
    }
    let n = series.len();
    Ok((1..=n_windows)
        .map(|k| {
            let cut = n - (n_windows - k + 1) * horizon;
            RollingWindow {
                cut,
                actuals: series.values[cut..cut + horizon].to_vec(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_inference() {
        let guess = |body: &str| infer_frequency(format!("unique_id,ds,y\n{body}").as_bytes());
        assert_eq!(guess("a,2020-01,1\na,2020-02,2").unwrap(), Frequency::Monthly);
        assert_eq!(guess("a,2020-01-01,1\na,2020-02-01,2").unwrap(), Frequency::Monthly);
        assert_eq!(guess("a,2020-01-01,1\na,2020-01-08,2").unwrap(), Frequency::Weekly);
        assert_eq!(guess("a,2020-01-01,1\nb,2020-01-09,1\na,2020-01-02,2").unwrap(), Frequency::Daily);
        assert_eq!(guess("a,2020-01-01T05,1").unwrap(), Frequency::Hourly);
        assert!(guess("a,2020-01-01,1\na,2020-01-04,2").is_err());
        assert!(guess("").is_err());
    }

    fn monthly(text: &str, fill: FillPolicy) -> Result<Dataset> {
        ingest_long_csv(text.as_bytes(), Frequency::Monthly, fill)
    }

    #[test]
    fn forward_fill_closes_gap() {
        let ds = monthly("unique_id,ds,y\na,2020-01,1\na,2020-03,3\n", FillPolicy::ForwardThenBackFill).unwrap();
        assert_eq!(ds.series()[0].values(), &[1.0, 1.0, 3.0]);
    }

    #[test]
    fn zero_fill_and_error_policy() {
        let text = "unique_id,ds,y\na,2020-01,1\na,2020-03,3\n";
        let ds = monthly(text, FillPolicy::Zero).unwrap();
        assert_eq!(ds.series()[0].values(), &[1.0, 0.0, 3.0]);
        assert!(matches!(monthly(text, FillPolicy::Error), Err(Error::Data(_))));
    }

    #[test]
    fn leading_missing_value_is_back_filled() {
        let ds = monthly("unique_id,ds,y\na,2020-01,\na,2020-02,4\n", FillPolicy::ForwardThenBackFill).unwrap();
        assert_eq!(ds.series()[0].values(), &[4.0, 4.0]);
    }

    #[test]
    fn rows_are_sorted_by_timestamp() {
        let ds = monthly("unique_id,ds,y\na,2020-02,5\na,2020-01,2\n", FillPolicy::Error).unwrap();
        assert_eq!(ds.series()[0].values(), &[2.0, 5.0]);
        assert_eq!(Frequency::Monthly.format_ts(ds.series()[0].start()), "2020-01");
    }

    #[test]
    fn ingestion_errors() {
        let dup = "unique_id,ds,y\na,2020-01,1\na,2020-01,2\n";
        assert!(monthly(dup, FillPolicy::Error).unwrap_err().to_string().contains("duplicate"));
        assert!(monthly("unique_id,ds,y\na,2020-13,1\n", FillPolicy::Error).is_err());
        assert!(monthly("unique_id,ds,y\na,2020-01,abc\n", FillPolicy::Error).is_err());
        assert!(monthly("unique_id,ds,y\n", FillPolicy::Error).is_err());
        assert!(monthly("", FillPolicy::Error).is_err());
        assert!(monthly("id,ds,value\na,2020-01,1\n", FillPolicy::Error).is_err());
    }

    #[test]
    fn irregular_timestamps_are_rejected() {
        let text = "unique_id,ds,y\na,2020-01-01T00,1\na,2020-01-01T05,2\n";
        assert!(ingest_long_csv(text.as_bytes(), Frequency::Hourly, FillPolicy::Zero).is_ok());
        let weekly = "unique_id,ds,y\na,2020-01-01,1\na,2020-01-09,2\n";
        assert!(ingest_long_csv(weekly.as_bytes(), Frequency::Weekly, FillPolicy::Zero).is_err());
    }

    #[test]
    fn exogenous_columns_and_future_rows() {
        let text = "unique_id,ds,y,price\na,2020-01,1,10\na,2020-02,2,11\na,2020-03,,12\n";
        let ds = monthly(text, FillPolicy::Error).unwrap();
        let s = &ds.series()[0];
        assert_eq!(s.values(), &[1.0, 2.0]);
        assert_eq!(s.exogenous()[0].name, "price");
        assert_eq!(s.exogenous()[0].values, vec![10.0, 11.0, 12.0]);
        assert_eq!(s.future_exo_len(), 1);
    }

    #[test]
    fn csv_round_trip_preserves_dataset() {
        let text = "unique_id,ds,y,price\nb,2020-01,1.5,10\nb,2020-02,-2.25,11\nb,2020-03,,12\na,2021-05,0.1,3\na,2021-06,7,4\n";
        let ds = monthly(text, FillPolicy::Error).unwrap();
        let mut buf = Vec::new();
        write_long_csv(&ds, &mut buf).unwrap();
        let again = monthly(std::str::from_utf8(&buf).unwrap(), FillPolicy::Error).unwrap();
        assert_eq!(ds, again);
        assert_eq!(again.series()[0].id(), "b");
    }

    fn series(values: Vec<f64>) -> TimeSeries {
        TimeSeries::from_values("s", Frequency::Monthly, values).unwrap()
    }

    #[test]
    fn last_window_split_examples() {
        let ds = Dataset::new(Frequency::Monthly, vec![series(vec![1., 2., 3., 4., 5.])], DatasetRole::Target).unwrap();
        let (train, test) = last_window_split(&ds, 2).unwrap();
        assert_eq!(train.series()[0].values(), &[1., 2., 3.]);
        assert_eq!(test.series()[0].values(), &[4., 5.]);
        assert_eq!(test.series()[0].start(), ds.series()[0].timestamp(3));

        let twelve = Dataset::new(Frequency::Monthly, vec![series(vec![0.0; 12])], DatasetRole::Target).unwrap();
        assert!(last_window_split(&twelve, 12).is_err());

        let two = Dataset::new(
            Frequency::Monthly,
            vec![series(vec![0.0; 10]), series(vec![0.0; 30]).with_id("t")],
            DatasetRole::Target,
        )
        .unwrap();
        let (train, _) = last_window_split(&two, 7).unwrap();
        let lens: Vec<_> = train.series().iter().map(TimeSeries::len).collect();
        assert_eq!(lens, vec![3, 23]);
    }

    #[test]
    fn split_keeps_future_covariates_on_train() {
        let exo = vec![ExoChannel {
            name: "x".into(),
            values: (0..6).map(f64::from).collect(),
        }];
        let s = TimeSeries::with_exogenous("s", default_start(), Frequency::Monthly, vec![1., 2., 3., 4., 5.], exo).unwrap();
        let ds = Dataset::new(Frequency::Monthly, vec![s], DatasetRole::Target).unwrap();
        let (train, test) = last_window_split(&ds, 2).unwrap();
        assert_eq!(train.series()[0].exogenous()[0].values, vec![0., 1., 2., 3., 4.]);
        assert_eq!(test.series()[0].exogenous()[0].values, vec![3., 4., 5.]);
    }

    #[test]
    fn rolling_origin_examples() {
        let s = series((1..=10).map(f64::from).collect());
        let w = rolling_origins(&s, 2, 2).unwrap();
        assert_eq!(w[0], RollingWindow { cut: 6, actuals: vec![7., 8.] });
        assert_eq!(w[1], RollingWindow { cut: 8, actuals: vec![9., 10.] });
        assert!(rolling_origins(&s, 5, 2).is_err());

        let one = rolling_origins(&s, 3, 1).unwrap();
        let ds = Dataset::new(Frequency::Monthly, vec![s], DatasetRole::Target).unwrap();
        let (train, test) = last_window_split(&ds, 3).unwrap();
        assert_eq!(one[0].cut, train.series()[0].len());
        assert_eq!(one[0].actuals, test.series()[0].values());
    }

    #[test]
    fn frequency_constants() {
        let expect = [(Frequency::Hourly, 24, 24), (Frequency::Daily, 7, 7), (Frequency::Weekly, 52, 1), (Frequency::Monthly, 12, 12)];
        for (f, s, h) in expect {
            assert_eq!((f.season_length(), f.default_horizon()), (s, h));
        }
    }

    #[test]
    fn timestamps_advance_on_grid() {
        let start = Frequency::Monthly.parse_ts("2020-11").unwrap();
        assert_eq!(Frequency::Monthly.format_ts(Frequency::Monthly.advance(start, 3)), "2021-02");
        let h = Frequency::Hourly.parse_ts("2020-01-01T23").unwrap();
        assert_eq!(Frequency::Hourly.format_ts(Frequency::Hourly.advance(h, 2)), "2020-01-02T01");
        for f in Frequency::ALL {
            let t0 = default_start();
            assert_eq!(f.steps_between(t0, f.advance(t0, 17)), Some(17));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_concatenation_reproduces_series(values in prop::collection::vec(-1e6f64..1e6, 2..60), h in 1usize..20) {
                prop_assume!(values.len() > h);
                let ds = Dataset::new(Frequency::Monthly, vec![series(values.clone())], DatasetRole::Target).unwrap();
                let (train, test) = last_window_split(&ds, h).unwrap();
                let mut joined = train.series()[0].values().to_vec();
                joined.extend_from_slice(test.series()[0].values());
                prop_assert_eq!(joined, values);
            }

            #[test]
            fn rolling_windows_tile_the_tail(len in 2usize..80, h in 1usize..6, k in 1usize..6) {
                prop_assume!(len > h * k);
                let s = series((0..len).map(|i| i as f64).collect());
                let w = rolling_origins(&s, h, k).unwrap();
                let mut covered = Vec::new();
                for win in &w {
                    prop_assert_eq!(win.actuals.len(), h);
                    covered.extend(win.cut..win.cut + h);
                }
                let expect: Vec<usize> = (len - h * k..len).collect();
                prop_assert_eq!(covered, expect);
            }

            #[test]
            fn csv_round_trip(values in prop::collection::vec(-1e9f64..1e9, 1..30), day in 1u32..28) {
                let start = NaiveDate::from_ymd_opt(2021, 3, day).unwrap().and_time(NaiveTime::MIN);
                let s = TimeSeries::new("x", start, Frequency::Daily, values).unwrap();
                let ds = Dataset::new(Frequency::Daily, vec![s], DatasetRole::Target).unwrap();
                let mut buf = Vec::new();
                write_long_csv(&ds, &mut buf).unwrap();
                let again = ingest_long_csv(buf.as_slice(), Frequency::Daily, FillPolicy::Error).unwrap();
                prop_assert_eq!(ds, again);
            }
        }
    }
}
