//! Displacement metrics, miss rate, and the cross-scenario matrix.
//!
//! All metrics run over batches of aligned `(prediction, truth, mask)`
//! triples, each `[t_f, 2]` with a validity-prefix mask. With a
//! single-mode predictor the per-case minimum is over a singleton set, so
//! reports average per-case values over the batch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

use crate::grad::Tensor;
use crate::ingest::DatasetSplit;
use crate::model::{self, HyperParams, ModelError, ModelParams, TrainConfig};
use crate::scene::PredictionCase;

/// Lateral miss threshold, meters.
pub const LATERAL_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("misaligned batch inputs: {0}")]
    Misaligned(String),
    #[error("case {0} has no valid frames")]
    EmptyMask(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub case_count: usize,
}

fn check_batch(
    predictions: &[Tensor],
    truths: &[Tensor],
    masks: &[Vec<bool>],
) -> Result<(), EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    if predictions.len() != truths.len() || predictions.len() != masks.len() {
        return Err(EvalError::Misaligned(format!(
            "{} predictions, {} truths, {} masks",
            predictions.len(),
            truths.len(),
            masks.len()
        )));
    }
    for (i, ((p, t), m)) in predictions.iter().zip(truths).zip(masks).enumerate() {
        if p.shape() != t.shape() || p.cols() != 2 || p.rows() != m.len() {
            return Err(EvalError::Misaligned(format!(
                "case {i}: prediction {:?}, truth {:?}, mask {}",
                p.shape(),
                t.shape(),
                m.len()
            )));
        }
        if !m.iter().any(|v| *v) {
            return Err(EvalError::EmptyMask(i));
        }
    }
    Ok(())
}

fn last_valid(mask: &[bool]) -> usize {
    mask.iter()
        .rposition(|m| *m)
        .expect("mask checked non-empty")
}

/// Mean displacement over valid frames, averaged over cases.
pub fn min_ade(
    predictions: &[Tensor],
    truths: &[Tensor],
    masks: &[Vec<bool>],
) -> Result<f64, EvalError> {
    check_batch(predictions, truths, masks)?;
    let mut total = 0.0;
    for ((p, t), m) in predictions.iter().zip(truths).zip(masks) {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (frame, valid) in m.iter().enumerate() {
            if *valid {
                acc += (p.at2(frame, 0) - t.at2(frame, 0)).hypot(p.at2(frame, 1) - t.at2(frame, 1));
                n += 1;
            }
        }
        total += acc / n as f64;
    }
    Ok(total / predictions.len() as f64)
}

/// Displacement at the last valid frame, averaged over cases.
pub fn min_fde(
    predictions: &[Tensor],
    truths: &[Tensor],
    masks: &[Vec<bool>],
) -> Result<f64, EvalError> {
    check_batch(predictions, truths, masks)?;
    let mut total = 0.0;
    for ((p, t), m) in predictions.iter().zip(truths).zip(masks) {
        let last = last_valid(m);
        total += (p.at2(last, 0) - t.at2(last, 0)).hypot(p.at2(last, 1) - t.at2(last, 1));
    }
    Ok(total / predictions.len() as f64)
}

/// Speed-dependent longitudinal miss threshold, meters.
///
/// 1 m below 1.4 m/s, 2 m above 11 m/s, linear in between; continuous at
/// both knees.
pub fn longitudinal_threshold(v: f64) -> f64 {
    if v < 1.4 {
        1.0
    } else if v <= 11.0 {
        1.0 + (v - 1.4) / 9.6
    } else {
        2.0
    }
}

fn is_miss(err_lon: f64, err_lat: f64, thr_lon: f64, thr_lat: f64) -> bool {
    err_lat.abs() > thr_lat || err_lon.abs() > thr_lon
}

/// Fraction of cases whose final-frame error, in the ground-truth frame at
/// the final valid frame, exceeds the lateral or longitudinal threshold.
pub fn miss_rate(
    predictions: &[Tensor],
    truths: &[Tensor],
    masks: &[Vec<bool>],
    final_speeds: &[f64],
    final_headings: &[f64],
) -> Result<f64, EvalError> {
    check_batch(predictions, truths, masks)?;
    if final_speeds.len() != predictions.len() || final_headings.len() != predictions.len() {
        return Err(EvalError::Misaligned(format!(
            "{} predictions, {} speeds, {} headings",
            predictions.len(),
            final_speeds.len(),
            final_headings.len()
        )));
    }
    let mut misses = 0usize;
    for i in 0..predictions.len() {
        let (p, t, m) = (&predictions[i], &truths[i], &masks[i]);
        let last = last_valid(m);
        let ex = p.at2(last, 0) - t.at2(last, 0);
        let ey = p.at2(last, 1) - t.at2(last, 1);
        let (sin_h, cos_h) = final_headings[i].sin_cos();
        let lon = ex * cos_h + ey * sin_h;
        let lat = -ex * sin_h + ey * cos_h;
        if is_miss(
            lon,
            lat,
            longitudinal_threshold(final_speeds[i]),
            LATERAL_THRESHOLD,
        ) {
            misses += 1;
        }
    }
    Ok(misses as f64 / predictions.len() as f64)
}

/// Runs the model over the cases and reports all three metrics.
pub fn evaluate_model(
    params: &ModelParams,
    cases: &[PredictionCase],
) -> Result<MetricsReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    let predictions: Vec<Tensor> = cases
        .par_iter()
        .map(|case| model::predict(case, params))
        .collect::<Result<_, ModelError>>()?;
    let truths: Vec<Tensor> = cases.iter().map(|c| model::truth_tensors(c).0).collect();
    let masks: Vec<Vec<bool>> = cases.iter().map(|c| c.future_mask.clone()).collect();
    let speeds: Vec<f64> = cases.iter().map(|c| c.final_speed).collect();
    let headings: Vec<f64> = cases.iter().map(|c| c.final_heading).collect();
    Ok(MetricsReport {
        min_ade: min_ade(&predictions, &truths, &masks)?,
        min_fde: min_fde(&predictions, &truths, &masks)?,
        miss_rate: miss_rate(&predictions, &truths, &masks, &speeds, &headings)?,
        case_count: cases.len(),
    })
}

/// Mean and dispersion (population standard deviation over seeds).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub mean: f64,
    pub std: f64,
}

impl CellStats {
    fn over(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCell {
    pub min_ade: CellStats,
    pub min_fde: CellStats,
    pub miss_rate: CellStats,
}

/// The (train scenario × test scenario) grid; the diagonal is the
/// in-distribution benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossScenarioMatrix {
    pub scenarios: Vec<String>,
    /// `cells[train][test]`; `None` when that training row failed.
    pub cells: Vec<Vec<Option<CrossCell>>>,
    /// Per-train-row failure report, aligned with `scenarios`.
    pub row_errors: Vec<Option<String>>,
}

impl CrossScenarioMatrix {
    pub fn cell(&self, train: &str, test: &str) -> Option<&CrossCell> {
        let ti = self.scenarios.iter().position(|s| s == train)?;
        let te = self.scenarios.iter().position(|s| s == test)?;
        self.cells[ti][te].as_ref()
    }
}

/// Trains one model per (scenario, seed) and evaluates every model on
/// every scenario's test split.
///
/// A training failure poisons only that scenario's row; other rows are
/// still filled and the failure is reported in `row_errors`.
pub fn cross_scenario(
    scenarios: &BTreeMap<String, DatasetSplit>,
    hp: &HyperParams,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<CrossScenarioMatrix, EvalError> {
    if scenarios.len() < 2 {
        return Err(EvalError::Misaligned(format!(
            "need at least 2 scenarios, got {}",
            scenarios.len()
        )));
    }
    if seeds.is_empty() {
        return Err(EvalError::Misaligned("need at least 1 seed".into()));
    }
    let names: Vec<String> = scenarios.keys().cloned().collect();
    let mut cells: Vec<Vec<Option<CrossCell>>> = Vec::with_capacity(names.len());
    let mut row_errors: Vec<Option<String>> = Vec::with_capacity(names.len());

    for train_name in &names {
        let split = &scenarios[train_name];
        let mut models = Vec::with_capacity(seeds.len());
        let mut failure = None;
        for &seed in seeds {
            let seeded = TrainConfig {
                seed,
                ..config.clone()
            };
            match model::train(&split.train, hp.clone(), &seeded) {
                Ok(outcome) => models.push(outcome.params),
                Err(e) => {
                    failure = Some(format!("seed {seed}: {e}"));
                    break;
                }
            }
        }
        if let Some(message) = failure {
            cells.push(vec![None; names.len()]);
            row_errors.push(Some(message));
            continue;
        }
        let mut row = Vec::with_capacity(names.len());
        for test_name in &names {
            let test_cases = &scenarios[test_name].test;
            let mut ades = Vec::with_capacity(models.len());
            let mut fdes = Vec::with_capacity(models.len());
            let mut mrs = Vec::with_capacity(models.len());
            for params in &models {
                let report = evaluate_model(params, test_cases)?;
                ades.push(report.min_ade);
                fdes.push(report.min_fde);
                mrs.push(report.miss_rate);
            }
            row.push(Some(CrossCell {
                min_ade: CellStats::over(&ades),
                min_fde: CellStats::over(&fdes),
                miss_rate: CellStats::over(&mrs),
            }));
        }
        cells.push(row);
        row_errors.push(None);
    }
    Ok(CrossScenarioMatrix {
        scenarios: names,
        cells,
        row_errors,
    })
}

pub fn write_matrix_json(path: &Path, matrix: &CrossScenarioMatrix) -> Result<(), EvalError> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), matrix)?;
    Ok(())
}

/// Flat CSV: one row per (train, test, metric) with the diagonal flagged.
pub fn write_matrix_csv(path: &Path, matrix: &CrossScenarioMatrix) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| EvalError::Csv(e.to_string()))?;
    writer
        .write_record(["train", "test", "in_distribution", "metric", "mean", "std"])
        .map_err(|e| EvalError::Csv(e.to_string()))?;
    for (ti, train) in matrix.scenarios.iter().enumerate() {
        for (te, test) in matrix.scenarios.iter().enumerate() {
            let Some(cell) = &matrix.cells[ti][te] else {
                continue;
            };
            for (metric, stats) in [
                ("min_ade", cell.min_ade),
                ("min_fde", cell.min_fde),
                ("miss_rate", cell.miss_rate),
            ] {
                writer
                    .write_record([
                        train.as_str(),
                        test.as_str(),
                        if ti == te { "true" } else { "false" },
                        metric,
                        &format!("{}", stats.mean),
                        &format!("{}", stats.std),
                    ])
                    .map_err(|e| EvalError::Csv(e.to_string()))?;
            }
        }
    }
    writer.flush().map_err(|e| EvalError::Csv(e.to_string()))?;
    Ok(())
}
