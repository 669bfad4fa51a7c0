//! Epoch-level telemetry ingestion.
//!
//! The upstream activity classifier writes one CSV per participant with one row per
//! fixed-length epoch: a timestamp, the epoch-averaged acceleration magnitude in
//! milli-gravity units and a predicted activity label. This module turns such a file
//! into an [`EpochSeries`], splitting it into contiguous segments wherever the time
//! grid has a gap, and offers activity filtering on top of it.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default epoch length in seconds.
pub const DEFAULT_EPOCH_LENGTH: f64 = 5.0;
/// Default maximum fraction of malformed rows before a file is rejected.
pub const DEFAULT_CORRUPT_THRESHOLD: f64 = 0.5;

// Relative tolerance used when deciding whether two timestamps are one epoch apart.
const GRID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file contains no epoch rows")]
    NoData,
    #[error("{skipped} of {total} rows malformed, above threshold {threshold}")]
    CorruptFile {
        skipped: usize,
        total: usize,
        threshold: f64,
    },
    #[error("no epochs labelled {0}")]
    EmptySelection(Activity),
    #[error("column {0} not found in header")]
    MissingColumn(String),
    #[error("invalid ingest options: {0}")]
    InvalidOptions(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Predicted behaviour for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activity {
    Sleep,
    Sedentary,
    Light,
    Moderate,
    Walking,
}

impl Activity {
    pub const ALL: [Activity; 5] = [
        Activity::Sleep,
        Activity::Sedentary,
        Activity::Light,
        Activity::Moderate,
        Activity::Walking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Sleep => "sleep",
            Activity::Sedentary => "sedentary",
            Activity::Light => "light",
            Activity::Moderate => "moderate",
            Activity::Walking => "walking",
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        let norm = norm
            .strip_suffix(" tasks")
            .or_else(|| norm.strip_suffix("-tasks"))
            .unwrap_or(&norm);
        match norm {
            "sleep" => Ok(Activity::Sleep),
            "sedentary" => Ok(Activity::Sedentary),
            "light" => Ok(Activity::Light),
            "moderate" | "mvpa" => Ok(Activity::Moderate),
            "walking" | "walk" => Ok(Activity::Walking),
            other => Err(format!("unknown activity label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    /// Seconds since the first epoch of the file.
    pub t: f64,
    /// Epoch-averaged force in milli-gravity units.
    pub force: f64,
    pub activity: Activity,
}

/// A participant's epochs, ordered in time and split into gap-free segments.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSeries {
    pub participant_id: String,
    pub epoch_length: f64,
    epochs: Vec<Epoch>,
    segments: Vec<Range<usize>>,
}

impl EpochSeries {
    /// Builds a series from time-ordered epochs, deriving segment boundaries.
    ///
    /// Fails if times are not strictly increasing or forces are negative/non-finite.
    pub fn new(
        participant_id: impl Into<String>,
        epoch_length: f64,
        epochs: Vec<Epoch>,
    ) -> Result<Self, IngestError> {
        if !(epoch_length.is_finite() && epoch_length > 0.0) {
            return Err(IngestError::InvalidOptions(format!(
                "epoch length must be positive, got {epoch_length}"
            )));
        }
        for pair in epochs.windows(2) {
            if !(pair[1].t > pair[0].t) {
                return Err(IngestError::InvalidOptions(format!(
                    "epoch times not strictly increasing at t={}",
                    pair[1].t
                )));
            }
        }
        if let Some(bad) = epochs
            .iter()
            .find(|e| !(e.force.is_finite() && e.force >= 0.0) || !e.t.is_finite())
        {
            return Err(IngestError::InvalidOptions(format!(
                "invalid epoch at t={}: force {}",
                bad.t, bad.force
            )));
        }
        let segments = derive_segments(&epochs, epoch_length);
        Ok(Self {
            participant_id: participant_id.into(),
            epoch_length,
            epochs,
            segments,
        })
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    /// Index ranges of contiguous (gap-free) runs of epochs.
    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn segment_slices(&self) -> impl Iterator<Item = &[Epoch]> {
        self.segments.iter().map(|r| &self.epochs[r.clone()])
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Number of in-segment neighbouring pairs, i.e. derivative points downstream.
    pub fn adjacent_pairs(&self) -> usize {
        self.segments.iter().map(|r| r.len().saturating_sub(1)).sum()
    }

    pub fn count_activity(&self, activity: Activity) -> usize {
        self.epochs.iter().filter(|e| e.activity == activity).count()
    }

    /// Writes the series as `time,force,activity` CSV. `parse_epoch_file` reads it back exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "force", "activity"])?;
        for e in &self.epochs {
            w.write_record([e.t.to_string(), e.force.to_string(), e.activity.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn is_next_epoch(prev: f64, next: f64, epoch_length: f64) -> bool {
    ((next - prev) - epoch_length).abs() <= GRID_TOLERANCE * epoch_length
}

fn derive_segments(epochs: &[Epoch], epoch_length: f64) -> Vec<Range<usize>> {
    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..epochs.len() {
        if !is_next_epoch(epochs[i - 1].t, epochs[i].t, epoch_length) {
            segments.push(start..i);
            start = i;
        }
    }
    if !epochs.is_empty() {
        segments.push(start..epochs.len());
    }
    segments
}

/// Where to find a column: by header name or zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    fn resolve(&self, headers: &csv::StringRecord) -> Result<usize, IngestError> {
        match self {
            ColumnRef::Index(i) if *i < headers.len() => Ok(*i),
            ColumnRef::Index(i) => Err(IngestError::MissingColumn(format!("#{i}"))),
            ColumnRef::Name(name) => headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| IngestError::MissingColumn(name.clone())),
        }
    }
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        ColumnRef::Name(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub time: ColumnRef,
    pub force: ColumnRef,
    pub activity: ColumnRef,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            time: "time".into(),
            force: "force".into(),
            activity: "activity".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    pub epoch_length: f64,
    /// Files with a malformed-row fraction strictly above this are rejected.
    pub corrupt_threshold: f64,
    pub columns: ColumnMapping,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            epoch_length: DEFAULT_EPOCH_LENGTH,
            corrupt_threshold: DEFAULT_CORRUPT_THRESHOLD,
            columns: ColumnMapping::default(),
        }
    }
}

impl ParseOptions {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.epoch_length.is_finite() && self.epoch_length > 0.0) {
            return Err(IngestError::InvalidOptions(format!(
                "epoch_length must be positive, got {}",
                self.epoch_length
            )));
        }
        if !(0.0..=1.0).contains(&self.corrupt_threshold) {
            return Err(IngestError::InvalidOptions(format!(
                "corrupt_threshold must lie in [0, 1], got {}",
                self.corrupt_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub rows: usize,
    pub skipped: usize,
    pub segments: usize,
}

/// Parses timestamps given either as seconds or as a calendar date-time.
///
/// Date-times may carry a trailing zone annotation such as `+0100 [Europe/London]`;
/// the offset is ignored since only differences between rows matter.
fn parse_timestamp(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let head = raw.split(" [").next().unwrap_or(raw);
    let head = match head.rfind(['+', '-']) {
        // strip a numeric offset like +0100 that follows the time part
        Some(pos) if pos > 10 && head[pos + 1..].chars().all(|c| c.is_ascii_digit() || c == ':') => {
            &head[..pos]
        }
        _ => head,
    };
    const FORMATS: [&str; 4] = [
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
    ];
    FORMATS.iter().find_map(|fmt| {
        NaiveDateTime::parse_from_str(head.trim_end_matches('Z'), fmt)
            .ok()
            .map(|dt| dt.and_utc().timestamp_millis() as f64 / 1000.0)
    })
}

/// Reads one participant's epoch CSV.
///
/// Rows whose timestamp, force or activity cannot be interpreted, and rows that do not
/// advance in time, are skipped and counted.
pub fn parse_epoch_file<R: Read>(
    reader: R,
    participant_id: &str,
    options: &ParseOptions,
) -> Result<(EpochSeries, ParseStats), IngestError> {
    options.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().all(str::is_empty) {
        return Err(IngestError::NoData);
    }
    let t_col = options.columns.time.resolve(&headers)?;
    let f_col = options.columns.force.resolve(&headers)?;
    let a_col = options.columns.activity.resolve(&headers)?;

    let mut epochs: Vec<Epoch> = Vec::new();
    let mut origin: Option<f64> = None;
    let mut stats = ParseStats::default();
    for record in rdr.records() {
        stats.rows += 1;
        let Ok(record) = record else {
            stats.skipped += 1;
            continue;
        };
        let parsed = (|| {
            let t = parse_timestamp(record.get(t_col)?)?;
            let force: f64 = record.get(f_col)?.parse().ok()?;
            if !(force.is_finite() && force >= 0.0) {
                return None;
            }
            let activity: Activity = record.get(a_col)?.parse().ok()?;
            Some((t, force, activity))
        })();
        let Some((t_abs, force, activity)) = parsed else {
            stats.skipped += 1;
            continue;
        };
        let t0 = *origin.get_or_insert(t_abs);
        let t = t_abs - t0;
        if epochs.last().is_some_and(|prev| t <= prev.t) {
            stats.skipped += 1;
            continue;
        }
        epochs.push(Epoch { t, force, activity });
    }

    if stats.rows == 0 {
        return Err(IngestError::NoData);
    }
    if stats.skipped as f64 > options.corrupt_threshold * stats.rows as f64 {
        return Err(IngestError::CorruptFile {
            skipped: stats.skipped,
            total: stats.rows,
            threshold: options.corrupt_threshold,
        });
    }
    if epochs.is_empty() {
        return Err(IngestError::NoData);
    }
    let series = EpochSeries::new(participant_id, options.epoch_length, epochs)?;
    stats.segments = series.segments().len();
    Ok((series, stats))
}

/// Keeps only epochs with the given activity label; non-adjacent survivors start new segments.
pub fn filter_by_activity(
    series: &EpochSeries,
    activity: Activity,
) -> Result<EpochSeries, IngestError> {
    let epochs: Vec<Epoch> = series
        .epochs
        .iter()
        .filter(|e| e.activity == activity)
        .copied()
        .collect();
    if epochs.is_empty() {
        return Err(IngestError::EmptySelection(activity));
    }
    let segments = derive_segments(&epochs, series.epoch_length);
    Ok(EpochSeries {
        participant_id: series.participant_id.clone(),
        epoch_length: series.epoch_length,
        epochs,
        segments,
    })
}
