//! Browser demo: band explorer, alpha sweep, and SPARC explorer.
//!
//! Each operation is a plain function returning a serializable value, with a
//! thin `wasm_bindgen` wrapper that hands JSON to the page.

use std::collections::HashMap;

use failband::conformal::{build_band, Variant};
use failband::detector::{detect_rollout, DecisionRule};
use failband::eval::{alpha_sweep, default_alpha_grid, evaluate, MetricsReport};
use failband::scores::sparc::{sparc, SparcParams};
use failband::synth::{synthetic_score_series, SyntheticScoreConfig};
use failband::{CpBand, Label, Result, ScoreSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Calibration successes; the rest of the synthetic successes form the test set.
const N_CAL: usize = 60;
const N_TEST_SUCCESS: usize = 40;
/// Test series returned for plotting.
const N_PLOTTED: usize = 8;

#[derive(Debug, Serialize)]
pub struct PlottedSeries {
    pub id: String,
    pub label: Label,
    pub times: Vec<usize>,
    pub scores: Vec<f64>,
    pub flagged: bool,
    pub detection_time: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct BandView {
    pub band: CpBand,
    pub series: Vec<PlottedSeries>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub balanced_acc: Option<f64>,
    pub mean_detection_time: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct SparcView {
    pub signal: Vec<f64>,
    pub score: f64,
    pub clean_score: f64,
}

struct Split {
    cal: Vec<ScoreSeries>,
    test: Vec<ScoreSeries>,
    labels: HashMap<String, Label>,
}

fn synthetic_split(n_failure: usize, seed: u64) -> Result<Split> {
    let data = synthetic_score_series(&SyntheticScoreConfig {
        n_success: N_CAL + N_TEST_SUCCESS,
        n_failure,
        seed,
        ..SyntheticScoreConfig::default()
    })?;
    let labels = data.iter().map(|(s, l)| (s.rollout_id.clone(), *l)).collect();
    let mut series: Vec<ScoreSeries> = data.into_iter().map(|(s, _)| s).collect();
    let test = series.split_off(N_CAL);
    Ok(Split {
        cal: series,
        test,
        labels,
    })
}

/// Calibrates a band on synthetic success scores and runs detection on a
/// mixed test set.
pub fn band_view(alpha: f64, variant: &str, n_failure: usize, seed: u64) -> Result<BandView> {
    let variant: Variant = variant.parse()?;
    let split = synthetic_split(n_failure, seed)?;
    let band = build_band(&split.cal, alpha, variant, 0.3, seed)?;
    let rule = DecisionRule::Band(band.clone());
    let results = split
        .test
        .iter()
        .map(|s| detect_rollout(&rule, s))
        .collect::<Result<Vec<_>>>()?;
    let metrics = evaluate(&results, &split.labels, alpha)?;
    // Interleave the two classes so both show up in the plot.
    let (ok, bad): (Vec<_>, Vec<_>) = split
        .test
        .iter()
        .zip(&results)
        .partition(|(s, _)| split.labels[&s.rollout_id] == Label::Success);
    let series = ok
        .into_iter()
        .zip(bad.into_iter().map(Some).chain(std::iter::repeat(None)))
        .flat_map(|(a, b)| std::iter::once(a).chain(b))
        .take(N_PLOTTED)
        .map(|(s, r)| PlottedSeries {
            id: s.rollout_id.clone(),
            label: split.labels[&s.rollout_id],
            times: s.times(),
            scores: s.scores(),
            flagged: r.flagged,
            detection_time: r.detection_time,
        })
        .collect();
    Ok(BandView { band, series, metrics })
}

/// Metrics over the default alpha grid.
pub fn sweep(variant: &str, n_failure: usize, seed: u64) -> Result<Vec<SweepRow>> {
    let variant: Variant = variant.parse()?;
    let split = synthetic_split(n_failure, seed)?;
    let reports = alpha_sweep(
        &split.cal,
        &split.test,
        &split.labels,
        &default_alpha_grid(),
        variant,
        0.3,
        seed,
    )?;
    Ok(reports
        .into_iter()
        .map(|m| SweepRow {
            alpha: m.alpha_used,
            tpr: m.tpr,
            tnr: m.tnr,
            balanced_acc: m.balanced_acc,
            mean_detection_time: m.mean_detection_time,
        })
        .collect())
}

/// Smooth bell-shaped speed profile with random-sign jitter of the given amplitude.
pub fn sparc_view(jitter: f64, len: usize, seed: u64) -> Result<SparcView> {
    let len = len.max(2);
    let clean: Vec<f64> = (0..len)
        .map(|i| {
            let x = i as f64 / (len - 1) as f64;
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * x).cos())
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal: Vec<f64> = clean
        .iter()
        .map(|v| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            (v + sign * jitter).max(0.0)
        })
        .collect();
    let params = SparcParams::default();
    Ok(SparcView {
        score: sparc(&signal, &params)?,
        clean_score: sparc(&clean, &params)?,
        signal,
    })
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = bandView)]
pub fn band_view_js(alpha: f64, variant: &str, n_failure: usize, seed: u64) -> std::result::Result<String, JsError> {
    to_js(band_view(alpha, variant, n_failure, seed))
}

#[wasm_bindgen(js_name = sweep)]
pub fn sweep_js(variant: &str, n_failure: usize, seed: u64) -> std::result::Result<String, JsError> {
    to_js(sweep(variant, n_failure, seed))
}

#[wasm_bindgen(js_name = sparcView)]
pub fn sparc_view_js(jitter: f64, len: usize, seed: u64) -> std::result::Result<String, JsError> {
    to_js(sparc_view(jitter, len, seed))
}
