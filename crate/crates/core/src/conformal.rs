//! One-sided, time-varying conformal prediction bands over score series.
//!
//! Calibration series are split into two parts. The first fixes the mean
//! curve `mu_t` and the modulation `s_t`; the second supplies normalized
//! maximal deviations whose conformal quantile `h` sets
//! `upper_t = mu_t + h * s_t`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ScoreMethodId, ScoreSeries};

/// Floor applied to every modulation value.
pub const S_FLOOR: f64 = 1e-12;

/// Slack for ceilings and comparisons of products such as `(N + 1)(1 - alpha)`
/// that are integers in exact arithmetic but not in floating point.
const RANK_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Constant modulation `1 / T`.
    V1,
    /// Pointwise maximum absolute deviation over the non-outlying series.
    V2,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            _ => Err(Error::invalid(format!(
                "unknown band variant `{s}` (expected v1 or v2)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpBand {
    pub alpha: f64,
    pub variant: Variant,
    pub n1: usize,
    pub n2: usize,
    pub t_grid: Vec<usize>,
    pub mu: Vec<f64>,
    pub s: Vec<f64>,
    pub h: f64,
    pub upper: Vec<f64>,
    pub lower: f64,
    pub warnings: Vec<String>,
    /// Score method the band was calibrated for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<ScoreMethodId>,
    /// STAC kernel bandwidth fixed at calibration time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stac_bandwidth: Option<f64>,
    /// STAC time-invariant threshold on the running cumulative score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stac_threshold: Option<f64>,
}

impl CpBand {
    /// Threshold for step index `k`; steps past the calibration horizon use the last value.
    pub fn threshold_at(&self, k: usize) -> f64 {
        self.upper[k.min(self.upper.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.t_grid.len();
        if n == 0 || self.mu.len() != n || self.s.len() != n || self.upper.len() != n {
            return Err(Error::schema("band arrays must share the length of t_grid"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::schema("band alpha must lie in (0, 1)"));
        }
        if self.s.iter().any(|&s| !(s > 0.0)) || !(self.h >= 0.0) {
            return Err(Error::schema("band modulation must be positive and width non-negative"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let band: CpBand = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        band.check_invariants()?;
        Ok(band)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Conformal rank `ceil((n + 1)(1 - alpha))`; may exceed `n`.
pub fn conformal_rank(n: usize, alpha: f64) -> Result<usize> {
    check_alpha(alpha)?;
    Ok(((n as f64 + 1.0) * (1.0 - alpha) - RANK_SLACK).ceil().max(1.0) as usize)
}

/// Pads series to a common length by holding their final value.
///
/// Every series must follow the same time grid; the grid of the longest one
/// is returned.
pub fn align_series(series: &[ScoreSeries]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let longest = series
        .iter()
        .max_by_key(|s| s.len())
        .ok_or_else(|| Error::invalid("cannot align an empty set of series"))?;
    if longest.is_empty() {
        return Err(Error::invalid("cannot align empty score series"));
    }
    let grid = longest.times();
    for s in series {
        if s.is_empty() {
            return Err(Error::invalid(format!("score series `{}` is empty", s.rollout_id)));
        }
        if s.times() != grid[..s.len()] {
            return Err(Error::schema(format!(
                "score series `{}` is not on the common time grid",
                s.rollout_id
            )));
        }
    }
    let values: Vec<Vec<f64>> = series.iter().map(|s| s.scores()).collect();
    Ok((align_values(&values)?, grid))
}

/// Hold-last padding of raw value sequences to the longest length.
pub fn align_values(series: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let t = series.iter().map(Vec::len).max().unwrap_or(0);
    if t == 0 {
        return Err(Error::invalid("cannot align empty series"));
    }
    series
        .iter()
        .map(|s| {
            let last = *s.last().ok_or_else(|| Error::invalid("cannot align an empty series"))?;
            let mut v = s.clone();
            v.resize(t, last);
            Ok(v)
        })
        .collect()
}

/// Seeded disjoint split of `0..n`; the first `ceil(ratio * n)` shuffled indices go to part A.
pub fn split_calibration(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid(format!("calibration needs at least 2 series, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n1 = (ratio * n as f64 - RANK_SLACK).ceil() as usize;
    if n1 == 0 || n1 >= n {
        return Err(Error::invalid(format!(
            "split ratio {ratio} leaves an empty part for {n} series"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let b = idx.split_off(n1);
    Ok((idx, b))
}

pub fn mean_curve(cal_a: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = cal_a.first().ok_or_else(|| Error::invalid("mean curve of no series"))?;
    let t = first.len();
    let mut mu = vec![0.0; t];
    for s in cal_a {
        Error::check_dim(t, s.len())?;
        for (m, v) in mu.iter_mut().zip(s) {
            *m += v;
        }
    }
    let n = cal_a.len() as f64;
    Ok(mu.into_iter().map(|m| m / n).collect())
}

pub fn modulation_v1(t: usize) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::invalid("modulation over an empty grid"));
    }
    Ok(vec![1.0 / t as f64; t])
}

fn max_abs_deviation(series: &[f64], mu: &[f64]) -> f64 {
    series.iter().zip(mu).map(|(d, m)| (d - m).abs()).fold(0.0, f64::max)
}

/// Indices of the series kept when forming the V2 modulation.
pub fn modulation_v2_members(cal_a: &[Vec<f64>], mu: &[f64], alpha: f64) -> Result<Vec<usize>> {
    check_alpha(alpha)?;
    let n1 = cal_a.len();
    if n1 == 0 {
        return Err(Error::invalid("modulation of no series"));
    }
    if (n1 as f64 + 1.0) * (1.0 - alpha) > n1 as f64 + RANK_SLACK {
        return Ok((0..n1).collect());
    }
    let devs: Vec<f64> = cal_a.iter().map(|s| max_abs_deviation(s, mu)).collect();
    let mut sorted = devs.clone();
    sorted.sort_by(f64::total_cmp);
    let k = conformal_rank(n1, alpha)?.min(n1);
    let gamma = sorted[k - 1];
    let members: Vec<usize> = (0..n1).filter(|&i| devs[i] <= gamma).collect();
    assert!(
        !members.is_empty(),
        "the conformal quantile always keeps at least one series"
    );
    Ok(members)
}

pub fn modulation_v2(cal_a: &[Vec<f64>], mu: &[f64], alpha: f64) -> Result<Vec<f64>> {
    for s in cal_a {
        Error::check_dim(mu.len(), s.len())?;
    }
    let members = modulation_v2_members(cal_a, mu, alpha)?;
    Ok((0..mu.len())
        .map(|t| {
            let m = members.iter().map(|&k| (cal_a[k][t] - mu[t]).abs()).fold(0.0, f64::max);
            m.max(S_FLOOR)
        })
        .collect())
}

/// Largest normalized excess of a series over the mean curve.
pub fn max_deviation(series: &[f64], mu: &[f64], s: &[f64]) -> Result<f64> {
    Error::check_dim(mu.len(), series.len())?;
    Error::check_dim(mu.len(), s.len())?;
    Ok(series
        .iter()
        .zip(mu)
        .zip(s)
        .map(|((d, m), s)| (d - m) / s)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Conformal order statistic of the deviations, with a warning when the rank
/// exceeds the sample size and the maximum is used instead.
pub fn band_width(deviations: &[f64], alpha: f64) -> Result<(f64, Option<String>)> {
    let n = deviations.len();
    if n == 0 {
        return Err(Error::invalid("band width of no deviations"));
    }
    let k = conformal_rank(n, alpha)?;
    let mut sorted = deviations.to_vec();
    sorted.sort_by(f64::total_cmp);
    if k > n {
        let warning = format!(
            "coverage not guaranteed: rank {k} exceeds N2 = {n} at alpha = {alpha}; using the maximum deviation"
        );
        return Ok((sorted[n - 1], Some(warning)));
    }
    Ok((sorted[k - 1], None))
}

/// Band from an explicit split of aligned series.
pub fn build_band_from_split(
    cal_a: &[Vec<f64>],
    cal_b: &[Vec<f64>],
    t_grid: &[usize],
    alpha: f64,
    variant: Variant,
) -> Result<CpBand> {
    check_alpha(alpha)?;
    if cal_a.is_empty() || cal_b.is_empty() {
        return Err(Error::invalid("both calibration parts must be non-empty"));
    }
    let t = t_grid.len();
    for s in cal_a.iter().chain(cal_b) {
        Error::check_dim(t, s.len())?;
    }
    let mu = mean_curve(cal_a)?;
    let s = match variant {
        Variant::V1 => modulation_v1(t)?,
        Variant::V2 => modulation_v2(cal_a, &mu, alpha)?,
    };
    let deviations = cal_b
        .iter()
        .map(|d| max_deviation(d, &mu, &s))
        .collect::<Result<Vec<_>>>()?;
    let (h_raw, warning) = band_width(&deviations, alpha)?;
    let mut warnings: Vec<String> = warning.into_iter().collect();
    let h = if h_raw < 0.0 {
        warnings.push(format!("negative band width {h_raw} raised to 0"));
        0.0
    } else {
        h_raw
    };
    let upper = mu.iter().zip(&s).map(|(m, s)| m + h * s).collect();
    let lower = cal_a
        .iter()
        .chain(cal_b)
        .flatten()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(CpBand {
        alpha,
        variant,
        n1: cal_a.len(),
        n2: cal_b.len(),
        t_grid: t_grid.to_vec(),
        mu,
        s,
        h,
        upper,
        lower,
        warnings,
        method: None,
        stac_bandwidth: None,
        stac_threshold: None,
    })
}

/// Aligns, splits and calibrates a band from successful-rollout score series.
pub fn build_band(series: &[ScoreSeries], alpha: f64, variant: Variant, split_ratio: f64, seed: u64) -> Result<CpBand> {
    let (aligned, grid) = align_series(series)?;
    let mut band = build_band_from_values(&aligned, &grid, alpha, variant, split_ratio, seed)?;
    band.method = series.first().map(|s| s.method);
    Ok(band)
}

/// `build_band` on already aligned values.
pub fn build_band_from_values(
    aligned: &[Vec<f64>],
    t_grid: &[usize],
    alpha: f64,
    variant: Variant,
    split_ratio: f64,
    seed: u64,
) -> Result<CpBand> {
    let (ia, ib) = split_calibration(aligned.len(), split_ratio, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| aligned[i].clone()).collect::<Vec<_>>();
    build_band_from_split(&pick(&ia), &pick(&ib), t_grid, alpha, variant)
}
