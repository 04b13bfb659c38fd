//! Per-scale supervised sample construction.
//!
//! A sample at scale `i` is a window of `L_i` normalized observations,
//! zero-padded to `L_max`, concatenated with a one-hot scale vector of
//! length `I`, and paired with the maximum of the following period slice.
//! By default the target covers the next `L_i - 1` steps; the
//! `target_full_period` flag extends it to `L_i` steps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Named temporal scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleName {
    Daily,
    Weekly,
    Monthly,
    Yearly,
}

impl ScaleName {
    /// Conventional window length in 30-minute steps. A month is a fixed
    /// 30-day window so every input of a scale has one length.
    pub fn default_window_len(self) -> usize {
        match self {
            ScaleName::Daily => 48,
            ScaleName::Weekly => 336,
            ScaleName::Monthly => 1440,
            ScaleName::Yearly => 17520,
        }
    }
}

impl fmt::Display for ScaleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ScaleName::Daily => "daily",
            ScaleName::Weekly => "weekly",
            ScaleName::Monthly => "monthly",
            ScaleName::Yearly => "yearly",
        };
        f.write_str(name)
    }
}

impl FromStr for ScaleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(ScaleName::Daily),
            "weekly" => Ok(ScaleName::Weekly),
            "monthly" => Ok(ScaleName::Monthly),
            "yearly" => Ok(ScaleName::Yearly),
            other => Err(Error::Config(format!(
                "unknown scale name {other:?}; expected daily, weekly, monthly or yearly"
            ))),
        }
    }
}

/// One enabled scale: its window length, stride and one-hot position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub name: ScaleName,
    pub window_len: usize,
    /// Anchor spacing; equals `window_len` for non-overlapping period-ahead
    /// windows.
    pub stride: usize,
    pub one_hot_index: usize,
}

impl ScaleSpec {
    pub fn validate(&self, n_scales: usize) -> Result<()> {
        if self.window_len < 2 {
            return Err(Error::Config(format!(
                "scale {} window_len must be >= 2, got {}",
                self.name, self.window_len
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config(format!("scale {} stride must be >= 1", self.name)));
        }
        if self.one_hot_index >= n_scales {
            return Err(Error::Config(format!(
                "scale {} one_hot_index {} out of range for {} scales",
                self.name, self.one_hot_index, n_scales
            )));
        }
        Ok(())
    }
}

/// Target definition: horizon length and aggregation. The pipeline predicts
/// a single future maximum, so `horizon` is 1 everywhere by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub horizon: usize,
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec { horizon: 1 }
    }
}

/// Where a sample came from: circuit and the anchor index of the last
/// window element, relative to the partition the sample was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub circuit_id: String,
    pub anchor: usize,
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Window padded with zeros to `L_max`.
    pub padded_input: Vec<f64>,
    /// One-hot scale vector of length `I`.
    pub scale_onehot: Vec<f64>,
    /// `[padded_input; scale_onehot]`, the encoder input.
    pub embedded: Vec<f64>,
    /// Normalized max of the future slice.
    pub target: f64,
    /// Number of real (unpadded) entries, i.e. the window length `L_i`.
    pub valid_len: usize,
    /// Index of this sample's scale.
    pub scale_index: usize,
    pub origin: SampleOrigin,
}

/// Sliding windows with max-over-next-period targets.
///
/// For an anchor ending at index `t` the input is `values[t-L+1..=t]` and
/// the target is `max(values[t+1..=t+L-1])`; with `full_period` the slice
/// extends one more step to `t+L`. Anchors advance by `stride` and never
/// reach past the end of `values`, so windows built from one partition
/// cannot straddle a split boundary.
pub fn build_windows(
    values: &[f64],
    scale: &ScaleSpec,
    full_period: bool,
) -> Result<Vec<(Vec<f64>, f64, usize)>> {
    let window = scale.window_len;
    let target_len = if full_period { window } else { window - 1 };
    let needed = window + target_len;
    if values.len() < needed {
        return Err(Error::Validation(format!(
            "series too short for scale {}: need at least {} steps (window {} + target {}), got {}",
            scale.name,
            needed,
            window,
            target_len,
            values.len()
        )));
    }
    let mut out = Vec::new();
    let mut start = 0usize;
    while start + needed <= values.len() {
        let input = values[start..start + window].to_vec();
        let target = max_of(&values[start + window..start + window + target_len]);
        out.push((input, target, start + window - 1));
        start += scale.stride;
    }
    Ok(out)
}

fn max_of(slice: &[f64]) -> f64 {
    slice.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Zero-pads a window to `l_max`: data first, zeros after.
pub fn pad_to_max(window: &[f64], l_max: usize) -> Result<Vec<f64>> {
    if window.is_empty() {
        return Err(Error::Validation("cannot pad an empty window".to_string()));
    }
    if window.len() > l_max {
        return Err(Error::Shape {
            context: "pad_to_max window".to_string(),
            expected: l_max,
            actual: window.len(),
        });
    }
    let mut padded = Vec::with_capacity(l_max);
    padded.extend_from_slice(window);
    padded.resize(l_max, 0.0);
    Ok(padded)
}

/// Appends the one-hot scale vector to a padded window.
pub fn embed(padded: &[f64], scale: &ScaleSpec, n_scales: usize) -> Result<Vec<f64>> {
    if scale.one_hot_index >= n_scales {
        return Err(Error::Config(format!(
            "scale {} one_hot_index {} out of range for {} scales",
            scale.name, scale.one_hot_index, n_scales
        )));
    }
    let mut embedded = Vec::with_capacity(padded.len() + n_scales);
    embedded.extend_from_slice(padded);
    let mut onehot = vec![0.0; n_scales];
    onehot[scale.one_hot_index] = 1.0;
    embedded.extend_from_slice(&onehot);
    Ok(embedded)
}

/// Builds all samples for one normalized partition at one scale.
pub fn build_samples_for_scale(
    series: &TimeSeries,
    scale: &ScaleSpec,
    l_max: usize,
    n_scales: usize,
    full_period: bool,
) -> Result<Vec<Sample>> {
    series.ensure_dense()?;
    let windows = build_windows(&series.values, scale, full_period)?;
    let mut onehot = vec![0.0; n_scales];
    onehot[scale.one_hot_index] = 1.0;
    let mut samples = Vec::with_capacity(windows.len());
    for (window, target, anchor) in windows {
        let padded = pad_to_max(&window, l_max)?;
        let embedded = embed(&padded, scale, n_scales)?;
        samples.push(Sample {
            padded_input: padded,
            scale_onehot: onehot.clone(),
            embedded,
            target,
            valid_len: scale.window_len,
            scale_index: scale.one_hot_index,
            origin: SampleOrigin {
                circuit_id: series.circuit_id.clone(),
                anchor,
            },
        });
    }
    Ok(samples)
}

/// Builds the pooled sample set over every (circuit, scale) pair,
/// sequentially. Output order is circuits in the given order, scales in
/// the given order within each circuit.
pub fn build_samples_seq(
    series: &[TimeSeries],
    scales: &[ScaleSpec],
    l_max: usize,
    full_period: bool,
) -> Result<Vec<Sample>> {
    let n_scales = scales.len();
    let mut out = Vec::new();
    for s in series {
        for scale in scales {
            out.extend(build_samples_for_scale(s, scale, l_max, n_scales, full_period)?);
        }
    }
    Ok(out)
}

/// Data-parallel sample construction over (circuit, scale) pairs. The
/// collected order matches [`build_samples_seq`] exactly, so results are
/// identical bit for bit.
#[cfg(feature = "parallel")]
pub fn build_samples_par(
    series: &[TimeSeries],
    scales: &[ScaleSpec],
    l_max: usize,
    full_period: bool,
) -> Result<Vec<Sample>> {
    let n_scales = scales.len();
    let tasks: Vec<(&TimeSeries, &ScaleSpec)> = series
        .iter()
        .flat_map(|s| scales.iter().map(move |sc| (s, sc)))
        .collect();
    let per_task: Vec<Vec<Sample>> = tasks
        .into_par_iter()
        .map(|(s, scale)| build_samples_for_scale(s, scale, l_max, n_scales, full_period))
        .collect::<Result<_>>()?;
    Ok(per_task.into_iter().flatten().collect())
}

/// Builds the pooled sample set, using the data-parallel path when the
/// `parallel` feature is enabled.
pub fn build_samples(
    series: &[TimeSeries],
    scales: &[ScaleSpec],
    l_max: usize,
    full_period: bool,
) -> Result<Vec<Sample>> {
    #[cfg(feature = "parallel")]
    {
        build_samples_par(series, scales, l_max, full_period)
    }
    #[cfg(not(feature = "parallel"))]
    {
        build_samples_seq(series, scales, l_max, full_period)
    }
}

/// The padding length: the longest window among the given scales.
pub fn l_max(scales: &[ScaleSpec]) -> usize {
    scales.iter().map(|s| s.window_len).max().unwrap_or(0)
}
