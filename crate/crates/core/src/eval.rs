//! Detection metrics, alpha sweeps and report files.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::{build_band, Variant};
use crate::detector::{detect_rollout, DecisionRule, DetectionResult};
use crate::error::{Error, Result};
use crate::scores::stac_calibrate_threshold;
use crate::types::{Label, ScoreSeries};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn label_of(labels: &HashMap<String, Label>, id: &str) -> Result<Label> {
    match labels.get(id) {
        Some(Label::Unknown) => Err(Error::invalid(format!("rollout `{id}` has an unknown label"))),
        Some(&l) => Ok(l),
        None => Err(Error::invalid(format!("no label for rollout `{id}`"))),
    }
}

/// Failures are positives: `tp` counts flagged failures, `fp` flagged successes.
pub fn confusion(results: &[DetectionResult], labels: &HashMap<String, Label>) -> Result<Confusion> {
    let mut c = Confusion::default();
    for r in results {
        match (label_of(labels, &r.rollout_id)?, r.flagged) {
            (Label::Failure, true) => c.tp += 1,
            (Label::Failure, false) => c.fn_ += 1,
            (Label::Success, true) => c.fp += 1,
            (Label::Success, false) => c.tn += 1,
            (Label::Unknown, _) => unreachable!("rejected by label_of"),
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub balanced_acc: Option<f64>,
    pub weighted_acc: Option<f64>,
    /// Fraction of successful rollouts.
    pub beta: Option<f64>,
    /// Mean detection time over flagged rollouts.
    pub mean_detection_time: Option<f64>,
    /// Rollouts left out of the detection-time mean because they were never flagged.
    pub n_never_flagged: usize,
    pub alpha_used: f64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: Confusion, results: &[DetectionResult], alpha: f64) -> MetricsReport {
    let tpr = ratio(c.tp, c.tp + c.fn_);
    let tnr = ratio(c.tn, c.tn + c.fp);
    let beta = ratio(c.tn + c.fp, c.total());
    let balanced_acc = match (tpr, tnr) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        _ => None,
    };
    let weighted_acc = match (tpr, tnr, beta) {
        (Some(a), Some(b), Some(beta)) => Some(beta * a + (1.0 - beta) * b),
        (Some(a), None, Some(_)) => Some(a),
        (None, Some(b), Some(_)) => Some(b),
        _ => None,
    };
    let times: Vec<f64> = results
        .iter()
        .filter_map(|r| r.detection_time.map(|t| t as f64))
        .collect();
    let mean_detection_time = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
    MetricsReport {
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        fn_: c.fn_,
        tpr,
        tnr,
        balanced_acc,
        weighted_acc,
        beta,
        mean_detection_time,
        n_never_flagged: results.len() - times.len(),
        alpha_used: alpha,
    }
}

/// Confusion counts and metrics in one call.
pub fn evaluate(results: &[DetectionResult], labels: &HashMap<String, Label>, alpha: f64) -> Result<MetricsReport> {
    Ok(metrics(confusion(results, labels)?, results, alpha))
}

/// `n` equally spaced values over `[0.01, 0.1]`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 100.0).collect()
}

/// Recalibrates the band for each alpha on the same calibration series and
/// evaluates the test series against it.
pub fn alpha_sweep(
    calibration: &[ScoreSeries],
    test: &[ScoreSeries],
    labels: &HashMap<String, Label>,
    grid: &[f64],
    variant: Variant,
    split_ratio: f64,
    seed: u64,
) -> Result<Vec<MetricsReport>> {
    if grid.is_empty() {
        return Err(Error::invalid("alpha grid is empty"));
    }
    grid.iter()
        .map(|&alpha| {
            let band = build_band(calibration, alpha, variant, split_ratio, seed)?;
            let rule = DecisionRule::Band(band);
            let results = test
                .iter()
                .map(|s| detect_rollout(&rule, s))
                .collect::<Result<Vec<_>>>()?;
            evaluate(&results, labels, alpha)
        })
        .collect()
}

/// Alpha sweep for the cumulative-sum rule: the threshold for each alpha is
/// the conformal quantile of the calibration series' total scores.
pub fn alpha_sweep_cumulative(
    calibration: &[ScoreSeries],
    test: &[ScoreSeries],
    labels: &HashMap<String, Label>,
    grid: &[f64],
) -> Result<Vec<MetricsReport>> {
    if grid.is_empty() {
        return Err(Error::invalid("alpha grid is empty"));
    }
    let cal: Vec<Vec<f64>> = calibration.iter().map(ScoreSeries::scores).collect();
    grid.iter()
        .map(|&alpha| {
            let rule = DecisionRule::Cumulative(stac_calibrate_threshold(&cal, alpha)?);
            let results = test
                .iter()
                .map(|s| detect_rollout(&rule, s))
                .collect::<Result<Vec<_>>>()?;
            evaluate(&results, labels, alpha)
        })
        .collect()
}

/// One line of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub setting: String,
    pub alpha: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub balanced: Option<f64>,
    pub weighted: Option<f64>,
    pub mean_detection_time: Option<f64>,
    pub n_test: usize,
}

impl ReportRow {
    pub fn from_metrics(method: impl Into<String>, setting: impl Into<String>, m: &MetricsReport) -> Self {
        Self {
            method: method.into(),
            setting: setting.into(),
            alpha: m.alpha_used,
            tpr: m.tpr,
            tnr: m.tnr,
            balanced: m.balanced_acc,
            weighted: m.weighted_acc,
            mean_detection_time: m.mean_detection_time,
            n_test: m.tp + m.fp + m.tn + m.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// `.json` selects JSON; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

/// Sorts rows by method, then alpha, then setting.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.setting.cmp(&b.setting))
    });
}

pub fn emit_report(rows: &[ReportRow], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            for r in &rows {
                w.serialize(r)?;
            }
            if rows.is_empty() {
                w.write_record([
                    "method",
                    "setting",
                    "alpha",
                    "tpr",
                    "tnr",
                    "balanced",
                    "weighted",
                    "mean_detection_time",
                    "n_test",
                ])?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            let mut w = BufWriter::new(File::create(path)?);
            serde_json::to_writer_pretty(&mut w, &rows)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    match ReportFormat::from_path(path) {
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_path(path)?;
            Ok(r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?)
        }
        ReportFormat::Json => Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?),
    }
}
