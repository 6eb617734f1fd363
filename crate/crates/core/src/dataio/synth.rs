//! Synthetic EEG-like segments with a 1/f background and alpha/beta peaks.
//!
//! Each channel is white Gaussian noise shaped in the frequency domain by the
//! square root of the target power profile, then inverse transformed. Phases
//! are independent across channels and segments.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::artifacts::{inject_line_noise, inject_muscle, inject_saturation};
use super::SegmentTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ArtifactKind {
    /// Drives a span of `duration_frac * T` samples into the amplifier rail.
    Saturation { rail_uv: f64, duration_frac: f64 },
    LineNoise { f0: f64, amplitude_uv: f64 },
    Muscle { low_hz: f64, high_hz: f64, gain_uv: f64 },
}

impl ArtifactKind {
    pub fn name(&self) -> &'static str {
        match self {
            ArtifactKind::Saturation { .. } => "saturation",
            ArtifactKind::LineNoise { .. } => "line_noise",
            ArtifactKind::Muscle { .. } => "muscle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPlan {
    pub kind: ArtifactKind,
    /// Probability that a given segment receives this artifact.
    pub rate: f64,
    /// Affected channels; `None` means all.
    pub channels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub channels: usize,
    pub samples: usize,
    pub fs: f64,
    /// Exponent of the 1/f^slope power background.
    pub slope: f64,
    pub alpha_hz: f64,
    pub alpha_gain: f64,
    pub alpha_width_hz: f64,
    pub beta_hz: f64,
    pub beta_gain: f64,
    pub beta_width_hz: f64,
    /// Flat power added at every frequency, relative to the 1 Hz background.
    pub noise_floor: f64,
    /// Target standard deviation of every channel, microvolts.
    pub amplitude_uv: f64,
    pub subject_id: u32,
    /// Labels cycle through 0..n_labels.
    pub n_labels: u32,
    pub artifacts: Vec<ArtifactPlan>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            samples: 256,
            fs: 128.0,
            slope: 1.0,
            alpha_hz: 10.0,
            alpha_gain: 0.5,
            alpha_width_hz: 1.0,
            beta_hz: 20.0,
            beta_gain: 0.05,
            beta_width_hz: 2.0,
            noise_floor: 1e-4,
            amplitude_uv: 10.0,
            subject_id: 1,
            n_labels: 4,
            artifacts: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let nyq = self.fs / 2.0;
        if self.channels == 0 || self.samples < 2 {
            return Err(Error::invalid("synthetic segments need C >= 1 and T >= 2"));
        }
        if !(self.fs > 0.0) {
            return Err(Error::invalid("fs must be positive"));
        }
        for (name, f) in [("alpha", self.alpha_hz), ("beta", self.beta_hz)] {
            if !(f > 0.0 && f < nyq) {
                return Err(Error::invalid(format!("{name} frequency {f} must lie in (0, {nyq})")));
            }
        }
        let nonneg = [
            self.slope,
            self.alpha_gain,
            self.beta_gain,
            self.noise_floor,
            self.amplitude_uv,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("slope, gains, floor and amplitude must be finite and >= 0"));
        }
        if !(self.alpha_width_hz > 0.0 && self.beta_width_hz > 0.0) {
            return Err(Error::invalid("peak widths must be positive"));
        }
        if self.n_labels == 0 {
            return Err(Error::invalid("n_labels must be >= 1"));
        }
        for a in &self.artifacts {
            if !(0.0..=1.0).contains(&a.rate) {
                return Err(Error::invalid(format!("artifact rate {} outside [0, 1]", a.rate)));
            }
            if let Some(ch) = &a.channels {
                if let Some(c) = ch.iter().find(|&&c| c >= self.channels) {
                    return Err(Error::invalid(format!("artifact channel {c} out of range")));
                }
            }
            match a.kind {
                ArtifactKind::LineNoise { f0, .. } if !(f0 > 0.0 && f0 < nyq) => {
                    return Err(Error::invalid(format!("line frequency {f0} must lie in (0, {nyq})")))
                }
                ArtifactKind::Muscle { low_hz, high_hz, .. }
                    if !(low_hz >= 0.0 && low_hz < high_hz && high_hz <= nyq) =>
                {
                    return Err(Error::invalid("muscle band must satisfy 0 <= low < high <= fs/2"))
                }
                ArtifactKind::Saturation { duration_frac, rail_uv }
                    if !(0.0..=1.0).contains(&duration_frac) || !(rail_uv > 0.0) =>
                {
                    return Err(Error::invalid("saturation needs rail > 0 and duration in [0, 1]"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Target one-sided power at frequency `f` (arbitrary units).
    pub fn power_at(&self, f: f64) -> f64 {
        if f <= 0.0 {
            return 0.0;
        }
        let bump = |g: f64, c: f64, w: f64| g * (-(f - c).powi(2) / (2.0 * w * w)).exp();
        f.powf(-self.slope)
            + bump(self.alpha_gain, self.alpha_hz, self.alpha_width_hz)
            + bump(self.beta_gain, self.beta_hz, self.beta_width_hz)
            + self.noise_floor
    }
}

/// A ground-truth record of one injected artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEvent {
    pub segment: usize,
    pub kind: String,
    pub channels: Vec<usize>,
    pub start: usize,
    pub duration: usize,
}

fn segment_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Shapes white noise by `gains[k]` (amplitude per rfft bin) and inverse
/// transforms to a real series of length `t`.
pub(crate) fn shaped_noise<R: Rng + ?Sized>(
    rng: &mut R,
    gains: &[f64],
    t: usize,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let mut spec = vec![Complex::new(0.0, 0.0); t];
    for k in 1..=t / 2 {
        let g = gains[k];
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        if 2 * k == t {
            spec[k] = Complex::new(g * re, 0.0);
        } else {
            let c = Complex::new(g * re, g * im) * std::f64::consts::FRAC_1_SQRT_2;
            spec[k] = c;
            spec[t - k] = c.conj();
        }
    }
    planner.plan_fft_inverse(t).process(&mut spec);
    spec.iter().map(|c| c.re).collect()
}

/// Per-bin amplitudes scaled so the time series has standard deviation `std`.
pub(crate) fn bin_gains(t: usize, std: f64, power: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut p: Vec<f64> = (0..=t / 2).map(|k| if k == 0 { 0.0 } else { power(k) }).collect();
    // E[x_n^2] = sum over all bins of E|X_k|^2; interior bins appear twice.
    let total: f64 = (1..=t / 2).map(|k| if 2 * k == t { p[k] } else { 2.0 * p[k] }).sum();
    let scale = if total > 0.0 { std * std / total } else { 0.0 };
    for v in &mut p {
        *v = (*v * scale).sqrt();
    }
    p
}

fn clean_segment(cfg: &SynthConfig, index: usize, rng: &mut ChaCha8Rng, planner: &mut FftPlanner<f64>) -> SegmentTensor {
    let t = cfg.samples;
    let df = cfg.fs / t as f64;
    let gains = bin_gains(t, cfg.amplitude_uv, |k| cfg.power_at(k as f64 * df));
    let mut samples = Vec::with_capacity(cfg.channels * t);
    for _ in 0..cfg.channels {
        samples.extend(shaped_noise(rng, &gains, t, planner).into_iter().map(|v| v as f32));
    }
    SegmentTensor::new(cfg.channels, t, cfg.fs as f32, samples)
        .expect("generator output is well formed")
        .with_meta(index as u32 % cfg.n_labels, cfg.subject_id, index as u32)
}

/// Generates `n` segments and the list of injected artifacts.
pub fn synth_annotated(cfg: &SynthConfig, n: usize, seed: u64) -> Result<(Vec<SegmentTensor>, Vec<ArtifactEvent>)> {
    cfg.validate()?;
    let mut planner = FftPlanner::new();
    let mut segments = Vec::with_capacity(n);
    let mut events = Vec::new();
    for i in 0..n {
        let mut rng = segment_rng(seed, i);
        let mut seg = clean_segment(cfg, i, &mut rng, &mut planner);
        for plan in &cfg.artifacts {
            if !(rng.random::<f64>() < plan.rate) {
                continue;
            }
            let chans: Vec<usize> = plan.channels.clone().unwrap_or_else(|| (0..cfg.channels).collect());
            let t = cfg.samples;
            let (start, duration) = match plan.kind {
                ArtifactKind::Saturation { rail_uv, duration_frac } => {
                    let duration = ((duration_frac * t as f64).round() as usize).min(t);
                    let start = if duration < t { rng.random_range(0..=t - duration) } else { 0 };
                    seg = inject_saturation(&seg, Some(&chans), start, duration, rail_uv)?;
                    (start, duration)
                }
                ArtifactKind::LineNoise { f0, amplitude_uv } => {
                    seg = inject_line_noise(&seg, Some(&chans), f0, amplitude_uv)?;
                    (0, t)
                }
                ArtifactKind::Muscle { low_hz, high_hz, gain_uv } => {
                    let s = rng.random::<u64>();
                    seg = inject_muscle(&seg, Some(&chans), (low_hz, high_hz), gain_uv, s)?;
                    (0, t)
                }
            };
            events.push(ArtifactEvent {
                segment: i,
                kind: plan.kind.name().to_string(),
                channels: chans,
                start,
                duration,
            });
        }
        segments.push(seg);
    }
    Ok((segments, events))
}

pub fn synth_dataset(cfg: &SynthConfig, n: usize, seed: u64) -> Result<Vec<SegmentTensor>> {
    synth_annotated(cfg, n, seed).map(|(s, _)| s)
}

/// Saturates exactly `round(fraction * n)` segments, chosen by `seed`, on
/// all channels over a random span of `duration_frac * T` samples. Returns
/// the new segments and one event per affected segment, by segment index.
pub fn saturate_fraction(
    segments: &[SegmentTensor],
    fraction: f64,
    rail_uv: f64,
    duration_frac: f64,
    seed: u64,
) -> Result<(Vec<SegmentTensor>, Vec<ArtifactEvent>)> {
    if !(0.0..=1.0).contains(&fraction) || !(0.0..=1.0).contains(&duration_frac) {
        return Err(Error::invalid("fraction and duration_frac must lie in [0, 1]"));
    }
    let n = segments.len();
    let count = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = (0..n).collect();
    chosen.shuffle(&mut rng);
    chosen.truncate(count);
    chosen.sort_unstable();
    let mut out = segments.to_vec();
    let mut events = Vec::with_capacity(count);
    for &i in &chosen {
        let t = out[i].len();
        let duration = ((duration_frac * t as f64).round() as usize).min(t);
        let start = if duration < t { rng.random_range(0..=t - duration) } else { 0 };
        out[i] = inject_saturation(&out[i], None, start, duration, rail_uv)?;
        events.push(ArtifactEvent {
            segment: i,
            kind: "saturation".into(),
            channels: (0..out[i].channels()).collect(),
            start,
            duration,
        });
    }
    Ok((out, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::default();
        let a = synth_dataset(&cfg, 3, 11).unwrap();
        let b = synth_dataset(&cfg, 3, 11).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(&cfg, 3, 12).unwrap();
        assert_ne!(a, c);
        // earlier segments do not depend on the dataset size
        let d = synth_dataset(&cfg, 5, 11).unwrap();
        assert_eq!(&d[..3], &a[..]);
    }

    #[test]
    fn amplitude_matches_target() {
        let cfg = SynthConfig { amplitude_uv: 7.0, ..SynthConfig::default() };
        let segs = synth_dataset(&cfg, 20, 3).unwrap();
        let n = segs.len() * cfg.channels * cfg.samples;
        let ms: f64 = segs.iter().flat_map(|s| s.samples()).map(|&v| (v as f64).powi(2)).sum::<f64>() / n as f64;
        assert!((ms.sqrt() - 7.0).abs() < 0.7, "rms {}", ms.sqrt());
    }

    #[test]
    fn saturates_exact_count() {
        let segs = synth_dataset(&SynthConfig::default(), 40, 2).unwrap();
        let (out, events) = saturate_fraction(&segs, 0.05, 100.0, 0.25, 9).unwrap();
        assert_eq!(events.len(), 2);
        for (i, (a, b)) in segs.iter().zip(&out).enumerate() {
            assert_eq!(a == b, !events.iter().any(|e| e.segment == i));
        }
        let e = &events[0];
        let hit = &out[e.segment].channel(0)[e.start..e.start + e.duration];
        assert!(hit.iter().all(|v| v.abs() == 100.0));
        assert_eq!(saturate_fraction(&segs, 0.05, 100.0, 0.25, 9).unwrap().1, events);
    }

    #[test]
    fn labels_cycle() {
        let segs = synth_dataset(&SynthConfig::default(), 6, 1).unwrap();
        let labels: Vec<u32> = segs.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![0, 1, 2, 3, 0, 1]);
        assert_eq!(segs[5].repetition, 5);
    }

    #[test]
    fn artifact_plan_is_recorded() {
        let cfg = SynthConfig {
            artifacts: vec![ArtifactPlan {
                kind: ArtifactKind::Saturation { rail_uv: 50.0, duration_frac: 0.25 },
                rate: 1.0,
                channels: Some(vec![1]),
            }],
            ..SynthConfig::default()
        };
        let (segs, events) = synth_annotated(&cfg, 2, 5).unwrap();
        let clean = synth_dataset(&SynthConfig::default(), 2, 5).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].duration, 64);
        // untouched channels are bitwise identical to the clean generator output
        assert_eq!(segs[0].channel(0), clean[0].channel(0));
        assert_ne!(segs[0].channel(1), clean[0].channel(1));
    }

    #[test]
    fn rejects_bad_rates() {
        let cfg = SynthConfig {
            artifacts: vec![ArtifactPlan {
                kind: ArtifactKind::LineNoise { f0: 50.0, amplitude_uv: 1.0 },
                rate: 1.5,
                channels: None,
            }],
            ..SynthConfig::default()
        };
        assert!(synth_dataset(&cfg, 1, 0).is_err());
    }
}
