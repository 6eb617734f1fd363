//! Artifact injectors. Each returns a modified copy; samples outside the
//! targeted channels/span are left bitwise unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use super::synth::{bin_gains, shaped_noise};
use super::SegmentTensor;
use crate::error::{Error, Result};

fn resolve_channels(seg: &SegmentTensor, channels: Option<&[usize]>) -> Result<Vec<usize>> {
    match channels {
        None => Ok((0..seg.channels()).collect()),
        Some(ch) => {
            if let Some(c) = ch.iter().find(|&&c| c >= seg.channels()) {
                return Err(Error::invalid(format!(
                    "channel {c} out of range for a {}-channel segment",
                    seg.channels()
                )));
            }
            Ok(ch.to_vec())
        }
    }
}

/// Drives `[start, start + duration)` into the amplifier rail.
///
/// The span receives a DC step of twice the rail level, in the direction of
/// the span's own mean, and is then clipped to `±rail_level`. The result is
/// flat at the rail except where the signal swings hard the other way.
pub fn inject_saturation(
    seg: &SegmentTensor,
    channels: Option<&[usize]>,
    start: usize,
    duration: usize,
    rail_level: f64,
) -> Result<SegmentTensor> {
    if !(rail_level > 0.0) {
        return Err(Error::invalid(format!("rail level must be positive, got {rail_level}")));
    }
    if start + duration > seg.len() {
        return Err(Error::invalid(format!(
            "span {start}+{duration} exceeds segment length {}",
            seg.len()
        )));
    }
    let chans = resolve_channels(seg, channels)?;
    let mut out = seg.clone();
    if duration == 0 {
        return Ok(out);
    }
    let rail = rail_level as f32;
    for c in chans {
        let span = &mut out.channel_mut(c)[start..start + duration];
        let mean = span.iter().map(|&v| v as f64).sum::<f64>() / duration as f64;
        let step = if mean >= 0.0 { 2.0 * rail } else { -2.0 * rail };
        for v in span {
            *v = (*v + step).clamp(-rail, rail);
        }
    }
    Ok(out)
}

/// Adds a mains-interference sinusoid `amplitude * sin(2 pi f0 t)`.
pub fn inject_line_noise(
    seg: &SegmentTensor,
    channels: Option<&[usize]>,
    f0: f64,
    amplitude: f64,
) -> Result<SegmentTensor> {
    let fs = seg.fs() as f64;
    if !(f0 > 0.0 && f0 < fs / 2.0) {
        return Err(Error::invalid(format!("line frequency {f0} must lie in (0, {})", fs / 2.0)));
    }
    let chans = resolve_channels(seg, channels)?;
    let mut out = seg.clone();
    if amplitude == 0.0 {
        return Ok(out);
    }
    let wave: Vec<f64> = (0..seg.len())
        .map(|n| amplitude * (2.0 * std::f64::consts::PI * f0 * n as f64 / fs).sin())
        .collect();
    for c in chans {
        for (v, w) in out.channel_mut(c).iter_mut().zip(&wave) {
            *v = (*v as f64 + w) as f32;
        }
    }
    Ok(out)
}

/// Adds band-limited Gaussian noise with RMS `gain` over `band` Hz,
/// mimicking EMG contamination.
pub fn inject_muscle(
    seg: &SegmentTensor,
    channels: Option<&[usize]>,
    band: (f64, f64),
    gain: f64,
    seed: u64,
) -> Result<SegmentTensor> {
    let fs = seg.fs() as f64;
    let (lo, hi) = band;
    if !(lo >= 0.0 && lo < hi && hi <= fs / 2.0) {
        return Err(Error::invalid(format!("muscle band ({lo}, {hi}) invalid for fs {fs}")));
    }
    if !(gain >= 0.0) {
        return Err(Error::invalid("muscle gain must be >= 0"));
    }
    let chans = resolve_channels(seg, channels)?;
    let mut out = seg.clone();
    if gain == 0.0 {
        return Ok(out);
    }
    let t = seg.len();
    let df = fs / t as f64;
    let gains = bin_gains(t, gain, |k| {
        let f = k as f64 * df;
        if f >= lo && f <= hi {
            1.0
        } else {
            0.0
        }
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::new();
    for c in chans {
        let noise = shaped_noise(&mut rng, &gains, t, &mut planner);
        for (v, w) in out.channel_mut(c).iter_mut().zip(noise) {
            *v = (*v as f64 + w) as f32;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(amp: f32, t: usize) -> SegmentTensor {
        let data = (0..2 * t)
            .map(|n| amp * (2.0 * std::f32::consts::PI * 3.0 * (n % t) as f32 / 128.0).sin())
            .collect();
        SegmentTensor::new(2, t, 128.0, data).unwrap()
    }

    #[test]
    fn saturation_clips_to_rail() {
        let s = sine(200.0, 256);
        let out = inject_saturation(&s, None, 40, 100, 100.0).unwrap();
        for c in 0..2 {
            let span = &out.channel(c)[40..140];
            let max = span.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            assert_eq!(max, 100.0);
            // flat run at the rail
            let flat = span.windows(2).filter(|w| w[0] == w[1] && w[0].abs() == 100.0).count();
            assert!(flat > 10);
            assert_eq!(&out.channel(c)[..40], &s.channel(c)[..40]);
            assert_eq!(&out.channel(c)[140..], &s.channel(c)[140..]);
        }
    }

    #[test]
    fn zero_effect_cases_are_identity() {
        let s = sine(20.0, 64);
        assert_eq!(inject_saturation(&s, None, 10, 0, 5.0).unwrap(), s);
        assert_eq!(inject_line_noise(&s, None, 50.0, 0.0).unwrap(), s);
        assert_eq!(inject_muscle(&s, None, (20.0, 60.0), 0.0, 1).unwrap(), s);
    }

    #[test]
    fn only_selected_channels_change() {
        let s = sine(20.0, 64);
        let out = inject_line_noise(&s, Some(&[1]), 50.0, 5.0).unwrap();
        assert_eq!(out.channel(0), s.channel(0));
        assert_ne!(out.channel(1), s.channel(1));
        let out = inject_muscle(&s, Some(&[0]), (20.0, 60.0), 3.0, 9).unwrap();
        assert_eq!(out.channel(1), s.channel(1));
        assert_ne!(out.channel(0), s.channel(0));
        assert!(inject_line_noise(&s, Some(&[2]), 50.0, 1.0).is_err());
    }
}
