use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WELCH_WINDOW: usize = 500;
pub const WELCH_OVERLAP: usize = 250;

/// One-sided power spectral density, power per Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub fs: f64,
    pub window_len: usize,
    pub overlap: usize,
    pub segments: usize,
    /// The requested window was longer than the series; a single tapered
    /// periodogram over the whole series was used instead.
    pub window_truncated: bool,
    pub scaling: String,
}

impl PsdEstimate {
    pub fn argmax_frequency(&self) -> f64 {
        let i = self
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.frequencies[i]
    }

    /// Integrated power over [lo, hi] Hz (rectangle rule on the grid).
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let df = self.fs / self.window_len as f64;
        self.frequencies
            .iter()
            .zip(&self.power)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, p)| p * df)
            .sum()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("frequency_hz\tpower_per_hz\n");
        for (f, p) in self.frequencies.iter().zip(&self.power) {
            s.push_str(&format!("{f}\t{p}\n"));
        }
        s
    }

    /// Element-wise mean of estimates sharing a grid.
    pub fn average(items: &[PsdEstimate]) -> Result<PsdEstimate> {
        let Some(first) = items.first() else {
            return Err(Error::invalid("no spectra to average"));
        };
        if items.iter().any(|p| p.frequencies != first.frequencies) {
            return Err(Error::shape("psd average", "frequency grids differ"));
        }
        let mut out = first.clone();
        for (i, v) in out.power.iter_mut().enumerate() {
            *v = items.iter().map(|p| p.power[i]).sum::<f64>() / items.len() as f64;
        }
        out.segments = items.iter().map(|p| p.segments).sum();
        Ok(out)
    }
}

/// Welch's method: periodic Hann taper, averaged modified periodograms, no
/// detrending, density scaling `|X_k|^2 / (fs * sum w^2)`, doubled for every
/// bin except DC and Nyquist.
pub fn welch_psd(series: &[f64], fs: f64, window_len: usize, overlap: usize) -> Result<PsdEstimate> {
    if series.is_empty() {
        return Err(Error::invalid("cannot estimate the spectrum of an empty series"));
    }
    if !(fs > 0.0) {
        return Err(Error::invalid("fs must be positive"));
    }
    if window_len == 0 || overlap >= window_len {
        return Err(Error::invalid(format!("need 0 <= overlap < window, got {overlap} / {window_len}")));
    }
    let truncated = window_len > series.len();
    let (nw, overlap) = if truncated { (series.len(), 0) } else { (window_len, overlap) };
    let step = nw - overlap;
    let window: Vec<f64> = (0..nw)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / nw as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(nw);
    let bins = nw / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut count = 0;
    let mut buf = vec![Complex::new(0.0, 0.0); nw];
    let mut start = 0;
    while start + nw <= series.len() {
        for (b, (x, w)) in buf.iter_mut().zip(series[start..start + nw].iter().zip(&window)) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            let mut v = buf[k].norm_sqr() / (fs * wss);
            if k != 0 && !(nw % 2 == 0 && k == nw / 2) {
                v *= 2.0;
            }
            *p += v;
        }
        count += 1;
        start += step;
    }
    for p in &mut power {
        *p /= count as f64;
    }
    Ok(PsdEstimate {
        frequencies: (0..bins).map(|k| k as f64 * fs / nw as f64).collect(),
        power,
        fs,
        window_len: nw,
        overlap,
        segments: count,
        window_truncated: truncated,
        scaling: "density".into(),
    })
}
