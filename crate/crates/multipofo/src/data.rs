//! Load-series ingestion, gap filling, min-max scaling and the
//! chronological train/test split.
//!
//! CSV schema: header `timestamp,circuit_id,load_kw`, ISO-8601 UTC
//! timestamps, plain decimal loads. Lines starting with `#` are comments.
//! A series is kept on a fixed grid; a missing grid point is held as NaN
//! until [`fill_gaps`] resolves it, and every consumer downstream rejects
//! series that still contain gaps.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 3] = ["timestamp", "circuit_id", "load_kw"];

/// Uniformly sampled load observations for one circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub circuit_id: String,
    pub start_time: DateTime<Utc>,
    pub step: Duration,
    /// Load in kW on the fixed grid; NaN marks an unfilled gap.
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp_at(&self, index: usize) -> DateTime<Utc> {
        self.start_time + self.step * index as i32
    }

    pub fn end_time(&self) -> DateTime<Utc> {
        self.timestamp_at(self.len().saturating_sub(1))
    }

    pub fn has_gaps(&self) -> bool {
        self.values.iter().any(|v| v.is_nan())
    }

    /// Errors if the series still contains unfilled gaps or non-finite values.
    pub fn ensure_dense(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "series {} contains unfilled gaps or non-finite values",
                self.circuit_id
            )));
        }
        Ok(())
    }
}

/// Expected CSV layout; only the sampling step is configurable.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub step: Duration,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            step: Duration::minutes(30),
        }
    }
}

/// Reads every circuit from a CSV file. Rows may arrive in any order;
/// the result is sorted by circuit id and, within a circuit, by time.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<TimeSeries>> {
    let file = File::open(path).map_err(|e| {
        Error::Validation(format!("cannot open data file {}: {e}", path.display()))
    })?;
    ingest_csv_reader(file, schema)
}

pub fn ingest_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<Vec<TimeSeries>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);

    {
        let headers = rdr
            .headers()
            .map_err(|e| csv_error_to_parse(&e, "header"))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != CSV_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header {:?}, got {:?}",
                    CSV_HEADER.join(","),
                    got.join(",")
                ),
            });
        }
    }

    let mut per_circuit: BTreeMap<String, Vec<(DateTime<Utc>, f64)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error_to_parse(&e, "record"))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let timestamp = DateTime::parse_from_rfc3339(&record[0])
            .map_err(|e| Error::Parse {
                line,
                message: format!("bad timestamp {:?}: {e}", &record[0]),
            })?
            .with_timezone(&Utc);
        let circuit = record[1].to_string();
        if circuit.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty circuit_id".to_string(),
            });
        }
        let load: f64 = record[2].parse().map_err(|e| Error::Parse {
            line,
            message: format!("bad load_kw {:?}: {e}", &record[2]),
        })?;
        if !load.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite load_kw {:?}", &record[2]),
            });
        }
        per_circuit.entry(circuit).or_default().push((timestamp, load));
    }

    let mut out = Vec::with_capacity(per_circuit.len());
    for (circuit_id, mut rows) in per_circuit {
        rows.sort_by_key(|(ts, _)| *ts);
        out.push(series_from_rows(circuit_id, rows, schema.step)?);
    }
    Ok(out)
}

fn csv_error_to_parse(e: &csv::Error, what: &str) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: format!("malformed {what}: {e}"),
    }
}

fn series_from_rows(
    circuit_id: String,
    rows: Vec<(DateTime<Utc>, f64)>,
    step: Duration,
) -> Result<TimeSeries> {
    let start_time = rows[0].0;
    let step_secs = step.num_seconds();
    let mut values = Vec::with_capacity(rows.len());
    let mut prev: Option<DateTime<Utc>> = None;
    for (ts, load) in rows {
        if let Some(p) = prev {
            if ts == p {
                return Err(Error::Validation(format!(
                    "duplicate timestamp {} for circuit {}",
                    ts.to_rfc3339_opts(SecondsFormat::Secs, true),
                    circuit_id
                )));
            }
            let gap_secs = (ts - p).num_seconds();
            if gap_secs % step_secs != 0 {
                return Err(Error::Validation(format!(
                    "non-uniform step for circuit {}: {} between {} and {} is not a multiple of the {}-second step",
                    circuit_id,
                    format_gap(gap_secs),
                    p.to_rfc3339_opts(SecondsFormat::Secs, true),
                    ts.to_rfc3339_opts(SecondsFormat::Secs, true),
                    step_secs
                )));
            }
            let missing = gap_secs / step_secs - 1;
            for _ in 0..missing {
                values.push(f64::NAN);
            }
        }
        values.push(load);
        prev = Some(ts);
    }
    Ok(TimeSeries {
        circuit_id,
        start_time,
        step,
        values,
    })
}

fn format_gap(secs: i64) -> String {
    if secs % 60 == 0 {
        format!("{} minutes", secs / 60)
    } else {
        format!("{secs} seconds")
    }
}

/// Writes series in the standard CSV schema, one row per observation,
/// circuits in id order. `comments` become leading `#` lines.
pub fn write_csv<W: Write>(w: &mut W, series: &[TimeSeries], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", CSV_HEADER.join(","))?;
    let mut ordered: Vec<&TimeSeries> = series.iter().collect();
    ordered.sort_by(|a, b| a.circuit_id.cmp(&b.circuit_id));
    for s in ordered {
        for (i, v) in s.values.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}",
                s.timestamp_at(i).to_rfc3339_opts(SecondsFormat::Secs, true),
                s.circuit_id,
                v
            )?;
        }
    }
    Ok(())
}

/// Policy for resolving gaps left by ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FillPolicy {
    #[default]
    Linear,
    Forward,
    Reject,
}

impl fmt::Display for FillPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            FillPolicy::Linear => "linear",
            FillPolicy::Forward => "forward",
            FillPolicy::Reject => "reject",
        };
        f.write_str(name)
    }
}

/// Resolves NaN gaps according to `policy`. Linear interpolation needs both
/// neighbours; forward fill needs a value before the gap; reject errors on
/// the first gap, naming its extent.
pub fn fill_gaps(series: &TimeSeries, policy: FillPolicy) -> Result<TimeSeries> {
    let mut values = series.values.clone();
    let n = values.len();
    let mut i = 0;
    while i < n {
        if !values[i].is_nan() {
            i += 1;
            continue;
        }
        let gap_start = i;
        let mut j = i;
        while j < n && values[j].is_nan() {
            j += 1;
        }
        let gap_len = j - gap_start;
        let extent = format!(
            "gap of {gap_len} step(s) starting at {} in circuit {}",
            series
                .timestamp_at(gap_start)
                .to_rfc3339_opts(SecondsFormat::Secs, true),
            series.circuit_id
        );
        match policy {
            FillPolicy::Reject => {
                return Err(Error::Validation(format!(
                    "gaps present under reject policy: {extent}"
                )));
            }
            FillPolicy::Forward => {
                if gap_start == 0 {
                    return Err(Error::Validation(format!(
                        "cannot forward-fill a gap at series start: {extent}"
                    )));
                }
                let left = values[gap_start - 1];
                for v in values.iter_mut().take(j).skip(gap_start) {
                    *v = left;
                }
            }
            FillPolicy::Linear => {
                if gap_start == 0 || j == n {
                    return Err(Error::Validation(format!(
                        "cannot interpolate a gap without both neighbours: {extent}"
                    )));
                }
                let left = values[gap_start - 1];
                let right = values[j];
                let span = (gap_len + 1) as f64;
                for (k, v) in values.iter_mut().enumerate().take(j).skip(gap_start) {
                    let frac = (k - gap_start + 1) as f64 / span;
                    *v = left + (right - left) * frac;
                }
            }
        }
        i = j;
    }
    Ok(TimeSeries {
        circuit_id: series.circuit_id.clone(),
        start_time: series.start_time,
        step: series.step,
        values,
    })
}

/// Per-circuit min-max scaler fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
    /// Descriptor of the sample range the statistics came from.
    pub fitted_on: String,
}

impl Scaler {
    /// Fits on the given values (the caller passes the training partition).
    /// A constant series has no usable range and is rejected.
    pub fn fit(values: &[f64], fitted_on: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("cannot fit scaler on empty data".to_string()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "cannot fit scaler on data with gaps or non-finite values".to_string(),
            ));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max <= min {
            return Err(Error::Validation(format!(
                "constant series (min == max == {min}); min-max scaling undefined"
            )));
        }
        Ok(Scaler {
            min,
            max,
            fitted_on: fitted_on.into(),
        })
    }

    /// Maps the fitted min to 0 and max to 1. Values outside the fitted
    /// range map outside [0, 1]; nothing is clipped, so `inverse` stays
    /// exact for every prediction.
    #[inline]
    pub fn transform(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        y * (self.max - self.min) + self.min
    }

    pub fn transform_slice(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| self.transform(*v)).collect()
    }

    pub fn inverse_slice(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| self.inverse(*v)).collect()
    }
}

/// Chronological split boundary: train takes timestamps strictly before
/// `train_end`, test takes timestamps at or after `test_start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: DateTime<Utc>,
    pub test_start: DateTime<Utc>,
}

impl SplitSpec {
    /// A contiguous split at one boundary.
    pub fn at(boundary: DateTime<Utc>) -> Self {
        SplitSpec {
            train_end: boundary,
            test_start: boundary,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_end > self.test_start {
            return Err(Error::Config(format!(
                "split train_end {} is after test_start {} (would leak future data)",
                self.train_end, self.test_start
            )));
        }
        Ok(())
    }
}

/// Splits a series into disjoint, chronologically ordered partitions.
pub fn split(series: &TimeSeries, spec: &SplitSpec) -> Result<(TimeSeries, TimeSeries)> {
    spec.validate()?;
    series.ensure_dense()?;
    let n = series.len();
    let step_secs = series.step.num_seconds();
    let count_before = |ts: DateTime<Utc>| -> usize {
        let delta = (ts - series.start_time).num_seconds();
        if delta <= 0 {
            0
        } else {
            // number of grid points strictly before ts
            (((delta - 1) / step_secs) + 1).min(n as i64) as usize
        }
    };

    let train_len = count_before(spec.train_end);
    let test_skip = {
        // first index with timestamp >= test_start
        let delta = (spec.test_start - series.start_time).num_seconds();
        if delta <= 0 {
            0
        } else {
            ((delta + step_secs - 1) / step_secs).min(n as i64) as usize
        }
    };

    if train_len == 0 {
        return Err(Error::Validation(format!(
            "empty train partition for circuit {}: train_end {} is at or before series start {}",
            series.circuit_id, spec.train_end, series.start_time
        )));
    }
    if test_skip >= n {
        return Err(Error::Validation(format!(
            "empty test partition for circuit {}: test_start {} is after series end {}",
            series.circuit_id,
            spec.test_start,
            series.end_time()
        )));
    }

    let train = TimeSeries {
        circuit_id: series.circuit_id.clone(),
        start_time: series.start_time,
        step: series.step,
        values: series.values[..train_len].to_vec(),
    };
    let test = TimeSeries {
        circuit_id: series.circuit_id.clone(),
        start_time: series.timestamp_at(test_skip),
        step: series.step,
        values: series.values[test_skip..].to_vec(),
    };
    Ok((train, test))
}
