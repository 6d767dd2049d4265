//! Gap-aware univariate series, gap scanning, and the `index,value` CSV format.
//!
//! A missing sample is stored as `f64::NAN`. Time is the integer step index;
//! equal spacing is implicit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GapFillError, Result};

/// Equally spaced scalar sequence with explicit missing markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    origin: i64,
}

impl TimeSeries {
    /// Builds a series; NaN marks a missing sample, infinities are rejected.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_origin(values, 0)
    }

    pub fn with_origin(values: Vec<f64>, origin: i64) -> Result<Self> {
        if values.is_empty() {
            return Err(GapFillError::InvalidSeries("series must have at least one sample".into()));
        }
        if let Some(i) = values.iter().position(|v| v.is_infinite()) {
            return Err(GapFillError::InvalidSeries(format!("infinite value at position {i}")));
        }
        Ok(Self { values, origin })
    }

    /// Convenience constructor from optional samples.
    pub fn from_options(values: &[Option<f64>]) -> Result<Self> {
        Self::new(values.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.values.get(i).copied().filter(|v| !v.is_nan())
    }

    pub fn is_missing(&self, i: usize) -> bool {
        self.values[i].is_nan()
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    pub fn missing_count(&self) -> usize {
        self.len() - self.observed_count()
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| !v.is_nan())
    }

    /// Index-reversed copy; the origin is kept.
    pub fn reversed(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self { values, origin: self.origin }
    }

    /// Same origin, new samples. Panics on length change in debug builds.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(values.len(), self.values.len());
        Self::with_origin(values, self.origin)
    }

    /// Observed `(index, value)` pairs in index order.
    pub fn observed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().copied().enumerate().filter(|(_, v)| !v.is_nan())
    }
}

/// A maximal run of missing samples `[start, start + length)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GapSegment {
    pub start: usize,
    pub length: usize,
}

impl GapSegment {
    pub fn new(start: usize, length: usize) -> Self {
        Self { start, length }
    }

    /// One past the last missing index.
    pub fn end(&self) -> usize {
        self.start + self.length
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }

    /// Mirror image of this segment in a reversed series of length `n`.
    pub fn reversed(&self, n: usize) -> Self {
        Self { start: n - self.end(), length: self.length }
    }
}

/// Observed windows on either side of a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct FillContext {
    pub pre_window: Vec<f64>,
    pub post_window: Vec<f64>,
    pub gap: GapSegment,
}

/// Maximal missing runs in ascending order of start.
pub fn scan_gaps(series: &TimeSeries) -> Vec<GapSegment> {
    let mut gaps = Vec::new();
    let mut run_start = None;
    for (i, v) in series.values().iter().enumerate() {
        match (v.is_nan(), run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                gaps.push(GapSegment::new(s, i - s));
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        gaps.push(GapSegment::new(s, series.len() - s));
    }
    gaps
}

/// Pre-gap window of at most `w1` and post-gap window of at most `w2`
/// observed samples; each stops at the nearest other gap or boundary.
pub fn extract_context(series: &TimeSeries, gap: GapSegment, w1: usize, w2: usize) -> FillContext {
    let values = series.values();
    let mut pre_start = gap.start;
    while pre_start > 0 && gap.start - pre_start < w1 && !values[pre_start - 1].is_nan() {
        pre_start -= 1;
    }
    let mut post_end = gap.end().min(values.len());
    while post_end < values.len() && post_end - gap.end() < w2 && !values[post_end].is_nan() {
        post_end += 1;
    }
    FillContext {
        pre_window: values[pre_start..gap.start].to_vec(),
        post_window: values[gap.end().min(values.len())..post_end].to_vec(),
        gap,
    }
}

/// Options for reading the CSV format.
#[derive(Debug, Clone, Copy, Default)]
pub struct CsvOptions {
    /// Skip the first non-empty line.
    pub header: bool,
}

/// Parses `index,value` rows. Empty value or `NaN` marks a missing sample.
pub fn parse_csv(text: &str, options: CsvOptions) -> Result<TimeSeries> {
    let mut values = Vec::new();
    let mut origin = None;
    let mut header_pending = options.header;
    for (lineno, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let line_no = lineno + 1;
        let mut fields = line.split(',');
        let (index, value) = match (fields.next(), fields.next(), fields.next()) {
            (Some(i), Some(v), None) => (i.trim(), v.trim()),
            _ => {
                return Err(GapFillError::Parse {
                    line: line_no,
                    message: "expected two comma-separated fields".into(),
                })
            }
        };
        if origin.is_none() {
            origin = Some(index.parse::<i64>().unwrap_or(0));
        }
        let parsed = if value.is_empty() || value.eq_ignore_ascii_case("nan") {
            f64::NAN
        } else {
            match value.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => return Err(GapFillError::Parse { line: line_no, message: format!("invalid value {value:?}") }),
            }
        };
        values.push(parsed);
    }
    if values.is_empty() {
        return Err(GapFillError::EmptyInput);
    }
    TimeSeries::with_origin(values, origin.unwrap_or(0))
}

pub fn read_csv(path: impl AsRef<Path>, options: CsvOptions) -> Result<TimeSeries> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, options)
}

/// Renders the series as LF-terminated `index,value` rows.
pub fn format_csv(series: &TimeSeries) -> String {
    let mut out = String::with_capacity(series.len() * 16);
    for (i, v) in series.values().iter().enumerate() {
        let index = series.origin() + i as i64;
        if v.is_nan() {
            let _ = writeln!(out, "{index},");
        } else {
            let _ = writeln!(out, "{index},{v}");
        }
    }
    out
}

pub fn write_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_csv(series))?;
    Ok(())
}
