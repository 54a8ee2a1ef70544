//! Dataset plumbing: file layout configuration, day-file parsing, z-score
//! normalization, sliding-window extraction, day-based train/test splitting,
//! and a synthetic order-book generator for environments without the real
//! benchmark files.
//!
//! Conventions fixed here and relied on everywhere else:
//!
//! - a day file is a numeric matrix, one row per line, whitespace- or
//!   comma-separated, with feature rows and trailing label rows selected by
//!   a [`LayoutConfig`] (all row indices 1-based, ranges inclusive);
//! - stored label values are `1` (up), `2` (stationary), `3` (down) and are
//!   remapped to classes `0 / 1 / 2` when windows are cut;
//! - a window of length `w` ending at event `t` pairs feature columns
//!   `t-w+1..=t` with the label at event `t`; windows never cross day
//!   boundaries;
//! - normalization statistics are fitted on the training days only.

use crate::error::{Error, Result};
use crate::tensor::Matrix2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::Path;

/// Number of classes (up, stationary, down); re-exported via `defaults`.
use crate::defaults::CLASSES;

/// Describes how day files are organized on disk and how the experiment
/// splits them. Deserialized from a flat TOML file; every field has a
/// default matching the public benchmark's z-score files.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    /// 1-based inclusive range of rows holding the input features.
    pub feature_row_range: [usize; 2],
    /// 1-based inclusive range of rows holding per-horizon labels.
    pub label_rows: [usize; 2],
    /// 1-based position of the wanted horizon within `label_rows`.
    pub horizon_index: usize,
    /// Sliding-window length in events.
    pub window_len: usize,
    /// Fit z-score statistics on the train days and apply them everywhere.
    /// Off by default because the benchmark files are already normalized.
    pub normalize: bool,
    /// File-name pattern; `{day}` is replaced by the day index.
    pub day_file_pattern: String,
    /// Inclusive day-index range used for training.
    pub train_days: [u32; 2],
    /// Inclusive day-index range used for testing.
    pub test_days: [u32; 2],
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            feature_row_range: [1, 40],
            label_rows: [145, 149],
            horizon_index: 4,
            window_len: 10,
            normalize: false,
            day_file_pattern: "day_{day}.txt".into(),
            train_days: [1, 7],
            test_days: [8, 10],
        }
    }
}

impl LayoutConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let layout: LayoutConfig = toml::from_str(text)
            .map_err(|e| Error::ConfigInvalid(format!("layout config: {e}")))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::DataNotFound(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered =
            |name: &str, lo: usize, hi: usize| -> Result<()> {
                if lo < 1 || hi < lo {
                    return Err(Error::ConfigInvalid(format!(
                        "{name} range [{lo}, {hi}] must be 1-based and ascending"
                    )));
                }
                Ok(())
            };
        ordered(
            "feature_row_range",
            self.feature_row_range[0],
            self.feature_row_range[1],
        )?;
        ordered("label_rows", self.label_rows[0], self.label_rows[1])?;
        ordered(
            "train_days",
            self.train_days[0] as usize,
            self.train_days[1] as usize,
        )?;
        ordered(
            "test_days",
            self.test_days[0] as usize,
            self.test_days[1] as usize,
        )?;
        let horizons = self.label_row_count();
        if self.horizon_index < 1 || self.horizon_index > horizons {
            return Err(Error::ConfigInvalid(format!(
                "horizon_index {} outside the {} configured label rows",
                self.horizon_index, horizons
            )));
        }
        if self.window_len < 1 {
            return Err(Error::ConfigInvalid("window_len must be >= 1".into()));
        }
        if !self.day_file_pattern.contains("{day}") {
            return Err(Error::ConfigInvalid(format!(
                "day_file_pattern `{}` must contain the {{day}} placeholder",
                self.day_file_pattern
            )));
        }
        if self.train_days[1] >= self.test_days[0] && self.test_days[1] >= self.train_days[0] {
            return Err(Error::ConfigInvalid(format!(
                "train days {:?} and test days {:?} overlap",
                self.train_days, self.test_days
            )));
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        self.feature_row_range[1] - self.feature_row_range[0] + 1
    }

    pub fn label_row_count(&self) -> usize {
        self.label_rows[1] - self.label_rows[0] + 1
    }

    /// File name for one day under this layout.
    pub fn day_file_name(&self, day: u32) -> String {
        self.day_file_pattern.replace("{day}", &day.to_string())
    }

    /// All day indices the experiment needs, ascending.
    pub fn all_days(&self) -> Vec<u32> {
        let mut days: Vec<u32> = (self.train_days[0]..=self.train_days[1])
            .chain(self.test_days[0]..=self.test_days[1])
            .collect();
        days.sort_unstable();
        days.dedup();
        days
    }
}

/// One day's worth of events: selected feature rows plus every configured
/// label row (values already validated to be 1, 2, or 3).
#[derive(Debug, Clone, PartialEq)]
pub struct RawDayMatrix {
    pub day_index: u32,
    /// `features x events`.
    pub features: Matrix2D<f32>,
    /// One vector per configured label row, each `events` long.
    pub labels: Vec<Vec<u8>>,
}

impl RawDayMatrix {
    pub fn events(&self) -> usize {
        self.features.cols()
    }

    /// Builds a day from already-extracted parts, validating label values.
    pub fn new(day_index: u32, features: Matrix2D<f32>, labels: Vec<Vec<u8>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::DataInvalid(format!(
                "day {day_index} has no label rows"
            )));
        }
        for (r, row) in labels.iter().enumerate() {
            if row.len() != features.cols() {
                return Err(Error::DataInvalid(format!(
                    "day {day_index}: label row {} has {} entries for {} events",
                    r + 1,
                    row.len(),
                    features.cols()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                if !(1..=3).contains(&v) {
                    return Err(Error::DataInvalid(format!(
                        "day {day_index}: label {v} at label row {}, column {} (expected 1, 2, or 3)",
                        r + 1,
                        c + 1
                    )));
                }
            }
        }
        Ok(RawDayMatrix {
            day_index,
            features,
            labels,
        })
    }
}

/// Parses one day file's text. `origin` only labels error messages.
pub fn parse_day_text(
    text: &str,
    layout: &LayoutConfig,
    day_index: u32,
    origin: &Path,
) -> Result<RawDayMatrix> {
    let parse_err = |line: usize, msg: String| Error::DataParse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains(',') {
            trimmed.split(',').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        let mut values = Vec::with_capacity(fields.len());
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(lineno, format!("column {}: bad number `{field}`", col + 1))
            })?;
            values.push(v);
        }
        if let Some((first_line, first)) = rows.first() {
            if values.len() != first.len() {
                return Err(parse_err(
                    lineno,
                    format!(
                        "row has {} columns but line {first_line} had {}",
                        values.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push((lineno, values));
    }
    if rows.len() < layout.label_rows[1] {
        return Err(parse_err(
            rows.last().map_or(0, |(l, _)| *l),
            format!(
                "file has {} rows but the layout expects label rows {}..{}",
                rows.len(),
                layout.label_rows[0],
                layout.label_rows[1]
            ),
        ));
    }
    let feature_rows: Vec<Vec<f32>> = rows
        [layout.feature_row_range[0] - 1..layout.feature_row_range[1]]
        .iter()
        .map(|(_, r)| r.iter().map(|&v| v as f32).collect())
        .collect();
    let features = Matrix2D::from_rows(&feature_rows)?;
    let mut labels = Vec::with_capacity(layout.label_row_count());
    for (lineno, row) in &rows[layout.label_rows[0] - 1..layout.label_rows[1]] {
        let mut out = Vec::with_capacity(row.len());
        for (col, &v) in row.iter().enumerate() {
            if v != 1.0 && v != 2.0 && v != 3.0 {
                return Err(parse_err(
                    *lineno,
                    format!("column {}: label {v} (expected 1, 2, or 3)", col + 1),
                ));
            }
            out.push(v as u8);
        }
        labels.push(out);
    }
    RawDayMatrix::new(day_index, features, labels)
}

/// Serializes a day back into file text: feature rows then label rows,
/// space-separated, one row per line. Inverse of [`parse_day_text`] under a
/// layout whose feature/label ranges cover the rows contiguously.
pub fn write_fixture(day: &RawDayMatrix) -> String {
    let mut out = String::new();
    for r in 0..day.features.rows() {
        for c in 0..day.features.cols() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", day.features.at(r, c));
        }
        out.push('\n');
    }
    for row in &day.labels {
        for (c, v) in row.iter().enumerate() {
            if c > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Loads every day the layout asks for from `dir`.
pub fn load_days(dir: &Path, layout: &LayoutConfig) -> Result<Vec<RawDayMatrix>> {
    if !dir.is_dir() {
        return Err(Error::DataNotFound(dir.to_path_buf()));
    }
    let mut days = Vec::new();
    for day in layout.all_days() {
        let path = dir.join(layout.day_file_name(day));
        if !path.exists() {
            return Err(Error::DataNotFound(path));
        }
        let text = std::fs::read_to_string(&path)?;
        days.push(parse_day_text(&text, layout, day, &path)?);
    }
    Ok(days)
}

/// Per-feature mean and standard deviation fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits per-feature (row-wise) statistics over the concatenated columns of
/// the given days. Population standard deviation.
pub fn fit_stats<'a>(days: impl IntoIterator<Item = &'a RawDayMatrix>) -> Result<NormStats> {
    let days: Vec<&RawDayMatrix> = days.into_iter().collect();
    let first = days
        .first()
        .ok_or_else(|| Error::DataInvalid("cannot fit statistics on zero days".into()))?;
    let rows = first.features.rows();
    let mut sum = vec![0.0f64; rows];
    let mut sumsq = vec![0.0f64; rows];
    let mut n = 0u64;
    for day in &days {
        if day.features.rows() != rows {
            return Err(Error::DataInvalid(format!(
                "day {} has {} feature rows, expected {rows}",
                day.day_index,
                day.features.rows()
            )));
        }
        for r in 0..rows {
            for &v in day.features.row(r) {
                sum[r] += v as f64;
                sumsq[r] += (v as f64) * (v as f64);
            }
        }
        n += day.features.cols() as u64;
    }
    let n = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std: Vec<f64> = sumsq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt())
        .collect();
    Ok(NormStats { mean, std })
}

/// Standardizes each feature row with the given statistics. A feature whose
/// fitted deviation is zero passes through unchanged (with a warning) rather
/// than dividing by zero.
pub fn zscore(features: &Matrix2D<f32>, stats: &NormStats) -> Result<Matrix2D<f32>> {
    if features.rows() != stats.mean.len() {
        return Err(Error::DataInvalid(format!(
            "{} feature rows but statistics for {}",
            features.rows(),
            stats.mean.len()
        )));
    }
    let mut out = features.clone();
    for r in 0..out.rows() {
        if stats.std[r] == 0.0 {
            log::warn!("feature row {} is constant; leaving it unnormalized", r + 1);
            continue;
        }
        let (mean, std) = (stats.mean[r] as f32, stats.std[r] as f32);
        for c in 0..out.cols() {
            *out.at_mut(r, c) = (out.at(r, c) - mean) / std;
        }
    }
    Ok(out)
}

/// One training sample: a `features x window_len` slab and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Matrix2D<f32>,
    /// Class index: 0 = up, 1 = stationary, 2 = down.
    pub label: u8,
}

/// Cuts stride-1 sliding windows out of one day. The window ending at event
/// `t` (0-based column `t-1`) is labeled by the chosen horizon row at `t`,
/// remapped from stored `1/2/3` to classes `0/1/2`.
pub fn make_windows(
    day: &RawDayMatrix,
    window_len: usize,
    horizon_index: usize,
) -> Result<Vec<Sample>> {
    if horizon_index < 1 || horizon_index > day.labels.len() {
        return Err(Error::DataInvalid(format!(
            "horizon_index {horizon_index} outside the {} label rows of day {}",
            day.labels.len(),
            day.day_index
        )));
    }
    let n = day.events();
    if n < window_len {
        return Err(Error::DataInvalid(format!(
            "day {} has {n} events, shorter than the window length {window_len}",
            day.day_index
        )));
    }
    let labels = &day.labels[horizon_index - 1];
    let rows = day.features.rows();
    let mut samples = Vec::with_capacity(n - window_len + 1);
    for end in (window_len - 1)..n {
        let mut x = Matrix2D::zeros(rows, window_len);
        for r in 0..rows {
            for (k, c) in (end + 1 - window_len..=end).enumerate() {
                *x.at_mut(r, k) = day.features.at(r, c);
            }
        }
        samples.push(Sample {
            x,
            label: labels[end] - 1,
        });
    }
    Ok(samples)
}

/// Per-class sample counts in class order (up, stationary, down).
pub fn class_counts(samples: &[Sample]) -> [u64; CLASSES] {
    let mut counts = [0u64; CLASSES];
    for s in samples {
        counts[s.label as usize] += 1;
    }
    counts
}

/// Partitions loaded days into train and test by day index. Day order
/// within each split is ascending.
pub fn split_by_day<'a>(
    days: &'a [RawDayMatrix],
    layout: &LayoutConfig,
) -> Result<(Vec<&'a RawDayMatrix>, Vec<&'a RawDayMatrix>)> {
    let pick = |range: [u32; 2], split: &str| -> Result<Vec<&'a RawDayMatrix>> {
        let mut picked = Vec::new();
        let mut missing = Vec::new();
        for want in range[0]..=range[1] {
            match days.iter().find(|d| d.day_index == want) {
                Some(day) => picked.push(day),
                None => missing.push(want.to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::DataInvalid(format!(
                "missing {split} days: {}",
                missing.join(", ")
            )));
        }
        Ok(picked)
    };
    Ok((
        pick(layout.train_days, "train")?,
        pick(layout.test_days, "test")?,
    ))
}

/// A fully assembled experiment: windowed train and test samples plus the
/// train-split class counts that drive the loss weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Train-split class counts (up, stationary, down).
    pub class_counts: [u64; CLASSES],
    /// Normalization statistics, when the layout asked for normalization.
    pub stats: Option<NormStats>,
}

/// Splits days, optionally fits-and-applies normalization (train statistics
/// only), and cuts windows.
pub fn build_datasets(days: &[RawDayMatrix], layout: &LayoutConfig) -> Result<Dataset> {
    let (train_days, test_days) = split_by_day(days, layout)?;
    let stats = if layout.normalize {
        Some(fit_stats(train_days.iter().copied())?)
    } else {
        None
    };
    let windows_of = |split: &[&RawDayMatrix]| -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for day in split {
            let normalized;
            let day: &RawDayMatrix = match &stats {
                Some(stats) => {
                    normalized = RawDayMatrix {
                        day_index: day.day_index,
                        features: zscore(&day.features, stats)?,
                        labels: day.labels.clone(),
                    };
                    &normalized
                }
                None => day,
            };
            out.extend(make_windows(day, layout.window_len, layout.horizon_index)?);
        }
        Ok(out)
    };
    let train = windows_of(&train_days)?;
    let test = windows_of(&test_days)?;
    let counts = class_counts(&train);
    Ok(Dataset {
        train,
        test,
        class_counts: counts,
        stats,
    })
}

/// Mean label-segment length (events) in the synthetic generator.
const SEGMENT_MEAN: f64 = 250.0;
/// Base noise scale; `class_signal_strength` is measured in units of it.
const NOISE_STD: f64 = 1.0;
/// Mean-reversion rate of the synthetic series.
const REVERSION: f64 = 0.8;

/// Generates synthetic order-book days: 40 mean-reverting feature series
/// whose level tracks a class-dependent center (`+s·σ` for up, `0` for
/// stationary, `-s·σ` for down, where `s` is `class_signal_strength`), with
/// label segments of geometric length (mean 250 events). Deterministic for
/// a given seed. Emits 5 identical label rows so the default layout's
/// horizon selection applies unchanged.
pub fn synthetic_lob(
    n_days: u32,
    events_per_day: usize,
    class_signal_strength: f64,
    seed: u64,
) -> Result<Vec<RawDayMatrix>> {
    if n_days < 1 || events_per_day < 1 {
        return Err(Error::ConfigInvalid(
            "synthetic data needs at least one day and one event".into(),
        ));
    }
    if !(class_signal_strength >= 0.0) {
        return Err(Error::ConfigInvalid(format!(
            "class_signal_strength must be >= 0, got {class_signal_strength}"
        )));
    }
    const FEATURES: usize = crate::defaults::FEATURES;
    const LABEL_ROWS: usize = 5;
    // Uniform steps with the same variance as NOISE_STD keep the generator
    // free of any particular Gaussian-sampling dependency.
    let half_width = NOISE_STD * 3.0f64.sqrt();
    let switch_prob = 1.0 / SEGMENT_MEAN;
    let mut days = Vec::with_capacity(n_days as usize);
    for day in 1..=n_days {
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed.wrapping_add((day as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let mut labels = Vec::with_capacity(events_per_day);
        let mut class: u8 = rng.gen_range(0..3);
        for _ in 0..events_per_day {
            if rng.gen_bool(switch_prob) {
                // Move to one of the two other classes, uniformly.
                class = (class + rng.gen_range(1..3)) % 3;
            }
            labels.push(class + 1);
        }
        let center = |stored: u8| -> f64 {
            let direction = match stored {
                1 => 1.0,
                2 => 0.0,
                _ => -1.0,
            };
            class_signal_strength * NOISE_STD * direction
        };
        let mut features = Matrix2D::zeros(FEATURES, events_per_day);
        let mut level = vec![0.0f64; FEATURES];
        for (t, &stored) in labels.iter().enumerate() {
            let c = center(stored);
            for (r, value) in level.iter_mut().enumerate() {
                let noise: f64 = rng.gen_range(-half_width..=half_width);
                *value = if t == 0 {
                    c + noise
                } else {
                    c + REVERSION * (*value - c) + noise
                };
                *features.at_mut(r, t) = *value as f32;
            }
        }
        let label_rows = vec![labels.clone(); LABEL_ROWS];
        days.push(RawDayMatrix::new(day, features, label_rows)?);
    }
    Ok(days)
}
