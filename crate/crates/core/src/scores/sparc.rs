//! Spectral arc length of a speed profile.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparcParams {
    /// Sampling rate of the speed profile.
    pub fs: f64,
    /// Extra doublings of the FFT length beyond the next power of two.
    pub pad_level: u32,
    /// Upper frequency cutoff, in the units of `fs`.
    pub f_cut: f64,
    /// Spectrum magnitudes below this (after max-normalization) close the band.
    pub amp_threshold: f64,
}

impl Default for SparcParams {
    fn default() -> Self {
        Self {
            fs: 20.0,
            pad_level: 2,
            f_cut: 10.0,
            amp_threshold: 0.05,
        }
    }
}

/// Euclidean norms of consecutive row differences of an action chunk.
pub fn speed_profile(chunk: &[Vec<f64>]) -> Vec<f64> {
    chunk
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// FFT length: next power of two of the signal length, doubled `pad_level` times.
pub fn fft_len(n: usize, pad_level: u32) -> usize {
    n.next_power_of_two() << pad_level
}

/// Positive spectral arc length; larger means less smooth.
pub fn sparc(signal: &[f64], params: &SparcParams) -> Result<f64> {
    if signal.len() < 2 {
        return Err(Error::invalid("SPARC needs a signal of length at least 2"));
    }
    if !(params.fs > 0.0 && params.f_cut > 0.0) {
        return Err(Error::invalid("SPARC sample rate and cutoff must be positive"));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SPARC signal".into()));
    }
    if signal.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let nfft = fft_len(signal.len(), params.pad_level);
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(nfft, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let mags: Vec<f64> = buf.iter().map(|c| c.norm()).collect();
    Ok(arc_length_of_spectrum(&mags, params))
}

/// Arc length of a full-length magnitude spectrum (bins `k·fs/nfft`).
pub(crate) fn arc_length_of_spectrum(mags: &[f64], params: &SparcParams) -> f64 {
    let nfft = mags.len();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0.0;
    }
    let step = params.fs / nfft as f64;
    let (freqs, norm): (Vec<f64>, Vec<f64>) = (0..nfft)
        .map(|k| (k as f64 * step, mags[k] / max))
        .take_while(|&(f, _)| f <= params.f_cut)
        .unzip();
    let above: Vec<usize> = (0..norm.len()).filter(|&i| norm[i] >= params.amp_threshold).collect();
    let (Some(&lo), Some(&hi)) = (above.first(), above.last()) else {
        return 0.0;
    };
    if hi == lo {
        return 0.0;
    }
    let span = freqs[hi] - freqs[lo];
    (lo..hi)
        .map(|i| {
            let df = (freqs[i + 1] - freqs[i]) / span;
            let dm = norm[i + 1] - norm[i];
            (df * df + dm * dm).sqrt()
        })
        .sum()
}

/// SPARC of one action chunk's speed profile.
pub fn sparc_chunk(chunk: &[Vec<f64>], params: &SparcParams) -> Result<f64> {
    sparc(&speed_profile(chunk), params)
}
