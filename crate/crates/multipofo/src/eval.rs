//! Evaluation: per-scale MAE in kW, signed-error quantile summaries and
//! naive baselines (persistence and train-mean).
//!
//! Everything reported is in kW after the per-circuit inverse transform.
//! Vectors headed for a report carry a unit tag; building a report row
//! from normalized values fails loudly instead of silently reporting
//! numbers in the wrong unit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::model::MultipofoModel;
use crate::multiscale::{Sample, ScaleSpec};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Unit of a measured vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Normalized,
    Kw,
}

/// A vector of values tagged with its unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Measured {
    pub values: Vec<f64>,
    pub unit: Unit,
}

impl Measured {
    pub fn kw(values: Vec<f64>) -> Self {
        Measured {
            values,
            unit: Unit::Kw,
        }
    }

    pub fn normalized(values: Vec<f64>) -> Self {
        Measured {
            values,
            unit: Unit::Normalized,
        }
    }
}

/// Mean absolute error between equal-length vectors.
pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Validation("mae of empty input".to_string()));
    }
    if preds.len() != targets.len() {
        return Err(Error::Shape {
            context: "mae target".to_string(),
            expected: preds.len(),
            actual: targets.len(),
        });
    }
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Five-number summary plus mean, using linear interpolation between order
/// statistics (the type-7 convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Type-7 quantile of already-sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[n - 1]
    }
}

/// Summarizes a (signed) error vector.
pub fn error_distribution(errors: &[f64]) -> Result<QuantileSummary> {
    if errors.is_empty() {
        return Err(Error::Validation(
            "error distribution of empty input".to_string(),
        ));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::Validation(
            "error distribution of non-finite values".to_string(),
        ));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(QuantileSummary {
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        mean,
    })
}

/// One report row: model and baseline MAE plus the error distribution for
/// a (circuit group, scale) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub scale: String,
    pub sample_count: usize,
    pub model_mae_kw: f64,
    pub persistence_mae_kw: f64,
    pub train_mean_mae_kw: f64,
    pub error_quantiles_kw: QuantileSummary,
}

/// Full metrics report; the export schema is versioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Report(format!("cannot serialize report: {e}")))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Report(format!("cannot parse report: {e}")))
    }

    pub const CSV_HEADER: &'static str = "group,scale,samples,model_mae_kw,persistence_mae_kw,train_mean_mae_kw,err_min_kw,err_q1_kw,err_median_kw,err_q3_kw,err_max_kw,err_mean_kw";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let q = &r.error_quantiles_kw;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.group,
                r.scale,
                r.sample_count,
                r.model_mae_kw,
                r.persistence_mae_kw,
                r.train_mean_mae_kw,
                q.min,
                q.q1,
                q.median,
                q.q3,
                q.max,
                q.mean
            ));
        }
        out
    }

    /// Writes the report in the requested format.
    pub fn export(&self, path: &Path, format: ReportFormat) -> Result<()> {
        let body = match format {
            ReportFormat::Json => self.to_json()?,
            ReportFormat::Csv => self.to_csv(),
        };
        fs::write(path, body)
            .map_err(|e| Error::Report(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Builds one row from kW-tagged predictions and targets. Rejects vectors
/// still in normalized units.
pub fn build_row(
    group: &str,
    scale: &str,
    model_preds: &Measured,
    persistence_preds: &Measured,
    train_mean_kw: f64,
    targets: &Measured,
) -> Result<ReportRow> {
    for (name, m) in [
        ("model predictions", model_preds),
        ("persistence predictions", persistence_preds),
        ("targets", targets),
    ] {
        if m.unit != Unit::Kw {
            return Err(Error::Report(format!(
                "{name} for group {group} scale {scale} are still normalized; inverse transform missing"
            )));
        }
    }
    let n = targets.values.len();
    let model_mae = mae(&model_preds.values, &targets.values)?;
    let persistence_mae = mae(&persistence_preds.values, &targets.values)?;
    let mean_vec = vec![train_mean_kw; n];
    let train_mean_mae = mae(&mean_vec, &targets.values)?;
    let errors: Vec<f64> = model_preds
        .values
        .iter()
        .zip(&targets.values)
        .map(|(p, t)| p - t)
        .collect();
    Ok(ReportRow {
        group: group.to_string(),
        scale: scale.to_string(),
        sample_count: n,
        model_mae_kw: model_mae,
        persistence_mae_kw: persistence_mae,
        train_mean_mae_kw: train_mean_mae,
        error_quantiles_kw: error_distribution(&errors)?,
    })
}

fn scaler_for<'a>(
    scalers: &'a BTreeMap<String, Scaler>,
    circuit_id: &str,
) -> Result<&'a Scaler> {
    scalers.get(circuit_id).ok_or_else(|| {
        Error::Report(format!(
            "no scaler for circuit {circuit_id}; known circuits: {}",
            scalers.keys().cloned().collect::<Vec<_>>().join(", ")
        ))
    })
}

/// Denormalized targets of the given samples, in kW.
pub fn targets_kw(samples: &[&Sample], scalers: &BTreeMap<String, Scaler>) -> Result<Measured> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        out.push(scaler_for(scalers, &s.origin.circuit_id)?.inverse(s.target));
    }
    Ok(Measured::kw(out))
}

/// Persistence baseline: predict the observed maximum of the input window
/// (the previous period) as the next period's maximum, in kW. The inverse
/// transform is affine and increasing, so it commutes with the max.
pub fn persistence_predictions(
    samples: &[&Sample],
    scalers: &BTreeMap<String, Scaler>,
) -> Result<Measured> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let window_max = s.padded_input[..s.valid_len]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        out.push(scaler_for(scalers, &s.origin.circuit_id)?.inverse(window_max));
    }
    Ok(Measured::kw(out))
}

/// Train-mean baseline: the mean training-set target in kW.
pub fn train_mean_kw(
    train_samples: &[&Sample],
    scalers: &BTreeMap<String, Scaler>,
) -> Result<f64> {
    if train_samples.is_empty() {
        return Err(Error::Report(
            "train-mean baseline needs at least one training sample".to_string(),
        ));
    }
    let kw = targets_kw(train_samples, scalers)?;
    Ok(kw.values.iter().sum::<f64>() / kw.values.len() as f64)
}

/// Model predictions for the given samples, denormalized to kW.
pub fn model_predictions_kw(
    model: &MultipofoModel,
    samples: &[&Sample],
    scalers: &BTreeMap<String, Scaler>,
) -> Result<Measured> {
    let embedded: Vec<&[f64]> = samples.iter().map(|s| s.embedded.as_slice()).collect();
    let raw = model.forecast_batch(&embedded)?;
    let mut out = Vec::with_capacity(samples.len());
    for (s, pred) in samples.iter().zip(&raw) {
        out.push(scaler_for(scalers, &s.origin.circuit_id)?.inverse(pred[0]));
    }
    Ok(Measured::kw(out))
}

/// Evaluates the model and both baselines for every (group, scale) cell,
/// sequentially over cells.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_seq(
    model: &MultipofoModel,
    train_samples: &[Sample],
    test_samples: &[Sample],
    scalers: &BTreeMap<String, Scaler>,
    scales: &[ScaleSpec],
    groups: &BTreeMap<String, Vec<String>>,
    seed: u64,
    config_hash: &str,
) -> Result<MetricsReport> {
    let cells = group_scale_cells(groups, scales);
    let rows = cells
        .iter()
        .map(|cell| evaluate_cell(model, train_samples, test_samples, scalers, cell))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed,
        config_hash: config_hash.to_string(),
        rows,
    })
}

/// Data-parallel evaluation over (group, scale) cells; row order matches
/// the sequential path.
#[cfg(feature = "parallel")]
#[allow(clippy::too_many_arguments)]
pub fn evaluate_par(
    model: &MultipofoModel,
    train_samples: &[Sample],
    test_samples: &[Sample],
    scalers: &BTreeMap<String, Scaler>,
    scales: &[ScaleSpec],
    groups: &BTreeMap<String, Vec<String>>,
    seed: u64,
    config_hash: &str,
) -> Result<MetricsReport> {
    let cells = group_scale_cells(groups, scales);
    let rows = cells
        .par_iter()
        .map(|cell| evaluate_cell(model, train_samples, test_samples, scalers, cell))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed,
        config_hash: config_hash.to_string(),
        rows,
    })
}

/// Evaluates every (group, scale) cell, in parallel when the feature is
/// enabled.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &MultipofoModel,
    train_samples: &[Sample],
    test_samples: &[Sample],
    scalers: &BTreeMap<String, Scaler>,
    scales: &[ScaleSpec],
    groups: &BTreeMap<String, Vec<String>>,
    seed: u64,
    config_hash: &str,
) -> Result<MetricsReport> {
    #[cfg(feature = "parallel")]
    {
        evaluate_par(
            model,
            train_samples,
            test_samples,
            scalers,
            scales,
            groups,
            seed,
            config_hash,
        )
    }
    #[cfg(not(feature = "parallel"))]
    {
        evaluate_seq(
            model,
            train_samples,
            test_samples,
            scalers,
            scales,
            groups,
            seed,
            config_hash,
        )
    }
}

struct Cell {
    group: String,
    circuits: Vec<String>,
    scale_name: String,
    scale_index: usize,
}

fn group_scale_cells(groups: &BTreeMap<String, Vec<String>>, scales: &[ScaleSpec]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for (group, circuits) in groups {
        for scale in scales {
            cells.push(Cell {
                group: group.clone(),
                circuits: circuits.clone(),
                scale_name: scale.name.to_string(),
                scale_index: scale.one_hot_index,
            });
        }
    }
    cells
}

fn evaluate_cell(
    model: &MultipofoModel,
    train_samples: &[Sample],
    test_samples: &[Sample],
    scalers: &BTreeMap<String, Scaler>,
    cell: &Cell,
) -> Result<ReportRow> {
    fn select<'a>(samples: &'a [Sample], cell: &Cell) -> Vec<&'a Sample> {
        samples
            .iter()
            .filter(|s| {
                s.scale_index == cell.scale_index
                    && cell.circuits.iter().any(|c| *c == s.origin.circuit_id)
            })
            .collect()
    }
    let test = select(test_samples, cell);
    if test.is_empty() {
        return Err(Error::Report(format!(
            "no test samples for group {} at scale {}",
            cell.group, cell.scale_name
        )));
    }
    let train = select(train_samples, cell);
    let model_preds = model_predictions_kw(model, &test, scalers)?;
    let persistence = persistence_predictions(&test, scalers)?;
    let mean_kw = train_mean_kw(&train, scalers)?;
    let targets = targets_kw(&test, scalers)?;
    build_row(
        &cell.group,
        &cell.scale_name,
        &model_preds,
        &persistence,
        mean_kw,
        &targets,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::nn::seed_rng;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[2.0, 4.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn mae_detects_uniform_translation() {
        let targets = [5.0, 6.0, 7.0];
        let preds: Vec<f64> = targets.iter().map(|t| t + 2.5).collect();
        assert!((mae(&preds, &targets).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn distribution_of_constant_vector() {
        let q = error_distribution(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max, q.mean),
            (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn median_interpolates_between_two_points() {
        let q = error_distribution(&[0.0, 10.0]).unwrap();
        assert_eq!(q.median, 5.0);
        assert_eq!(q.q1, 2.5);
        assert_eq!(q.q3, 7.5);
    }

    /// Independent sort-and-index oracle for the type-7 quantile.
    fn quantile_oracle(data: &[f64], p: f64) -> f64 {
        let mut sorted = data.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let rank = p * (n as f64 - 1.0);
        let lower_idx = rank as usize;
        let upper_idx = if lower_idx + 1 < n { lower_idx + 1 } else { lower_idx };
        let weight = rank - lower_idx as f64;
        sorted[lower_idx] * (1.0 - weight) + sorted[upper_idx] * weight
    }

    #[test]
    fn summary_matches_oracle_on_random_vectors() {
        let mut rng = seed_rng(31);
        for len in [1usize, 2, 3, 5, 17, 100, 999, 10_000] {
            let data: Vec<f64> = (0..len).map(|_| rng.random_range(-1e3..1e3)).collect();
            let q = error_distribution(&data).unwrap();
            for (got, p) in [(q.q1, 0.25), (q.median, 0.5), (q.q3, 0.75)] {
                let want = quantile_oracle(&data, p);
                assert!(
                    (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                    "len {len} p {p}: got {got}, oracle {want}"
                );
            }
            assert!(q.min <= q.q1 && q.q1 <= q.median && q.median <= q.q3 && q.q3 <= q.max);
        }
    }

    #[test]
    fn row_building_rejects_normalized_values() {
        let preds = Measured::normalized(vec![0.5, 0.7]);
        let persistence = Measured::kw(vec![100.0, 120.0]);
        let targets = Measured::kw(vec![110.0, 115.0]);
        let err = build_row("all", "daily", &preds, &persistence, 100.0, &targets).unwrap_err();
        assert!(err.to_string().contains("still normalized"), "{err}");
    }

    #[test]
    fn constant_data_gives_zero_baseline_mae() {
        // On constant targets, both persistence (window max equals target)
        // and train-mean (mean equals target) score an MAE of exactly 0.
        let targets = Measured::kw(vec![42.0; 8]);
        let persistence = Measured::kw(vec![42.0; 8]);
        let model = Measured::kw(vec![43.0; 8]);
        let row = build_row("all", "daily", &model, &persistence, 42.0, &targets).unwrap();
        assert_eq!(row.persistence_mae_kw, 0.0);
        assert_eq!(row.train_mean_mae_kw, 0.0);
        assert_eq!(row.model_mae_kw, 1.0);
        assert_eq!(row.error_quantiles_kw.median, 1.0);
    }

    #[test]
    fn json_round_trip_preserves_report() {
        let report = MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: 9,
            config_hash: "deadbeef".to_string(),
            rows: vec![ReportRow {
                group: "all".to_string(),
                scale: "daily".to_string(),
                sample_count: 3,
                model_mae_kw: 1.25,
                persistence_mae_kw: 2.5,
                train_mean_mae_kw: 3.75,
                error_quantiles_kw: QuantileSummary {
                    min: -2.0,
                    q1: -0.5,
                    median: 0.25,
                    q3: 1.0,
                    max: 2.0,
                    mean: 0.15,
                },
            }],
        };
        let json = report.to_json().unwrap();
        let parsed = MetricsReport::from_json(&json).unwrap();
        assert_eq!(parsed, report);
        // and the same bytes come out again
        assert_eq!(parsed.to_json().unwrap(), json);
    }

    #[test]
    fn csv_has_header_and_one_row_per_cell() {
        let report = MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: 0,
            config_hash: String::new(),
            rows: vec![
                ReportRow {
                    group: "all".to_string(),
                    scale: "daily".to_string(),
                    sample_count: 1,
                    model_mae_kw: 1.0,
                    persistence_mae_kw: 2.0,
                    train_mean_mae_kw: 3.0,
                    error_quantiles_kw: QuantileSummary {
                        min: 0.0,
                        q1: 0.0,
                        median: 0.0,
                        q3: 0.0,
                        max: 0.0,
                        mean: 0.0,
                    },
                },
                ReportRow {
                    group: "all".to_string(),
                    scale: "weekly".to_string(),
                    sample_count: 2,
                    model_mae_kw: 1.5,
                    persistence_mae_kw: 2.5,
                    train_mean_mae_kw: 3.5,
                    error_quantiles_kw: QuantileSummary {
                        min: -1.0,
                        q1: -0.5,
                        median: 0.0,
                        q3: 0.5,
                        max: 1.0,
                        mean: 0.0,
                    },
                },
            ],
        };
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], MetricsReport::CSV_HEADER);
        assert!(lines[1].starts_with("all,daily,1,"));
        assert!(lines[2].starts_with("all,weekly,2,"));
    }

    #[test]
    fn report_json_matches_shipped_schema() {
        // Hand-rolled structural check against the shipped schema file.
        let schema_path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../schemas/metrics_report.schema.json");
        let schema: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
        let report = MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: 1,
            config_hash: "ff".to_string(),
            rows: vec![],
        };
        let value: serde_json::Value =
            serde_json::from_str(&report.to_json().unwrap()).unwrap();
        for required in schema["required"].as_array().unwrap() {
            let key = required.as_str().unwrap();
            assert!(value.get(key).is_some(), "missing required field {key}");
        }
        let row_required: Vec<&str> = schema["properties"]["rows"]["items"]["required"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap())
            .collect();
        for key in [
            "group",
            "scale",
            "sample_count",
            "model_mae_kw",
            "persistence_mae_kw",
            "train_mean_mae_kw",
            "error_quantiles_kw",
        ] {
            assert!(row_required.contains(&key), "schema lost row field {key}");
        }
    }
}
