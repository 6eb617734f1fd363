use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::Tensor4;

/// One multichannel recording window, channels x samples, in microvolts.
///
/// Samples are stored as `f32`, the precision of the on-disk container, so a
/// write/read cycle is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTensor {
    channels: usize,
    len: usize,
    fs: f32,
    samples: Vec<f32>,
    pub label: u32,
    pub subject_id: u32,
    pub repetition: u32,
}

impl SegmentTensor {
    pub fn new(channels: usize, len: usize, fs: f32, samples: Vec<f32>) -> Result<Self> {
        if channels == 0 || len == 0 {
            return Err(Error::invalid(format!(
                "segment needs at least one channel and one sample, got {channels}x{len}"
            )));
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if samples.len() != channels * len {
            return Err(Error::shape(
                "segment",
                format!("{channels}x{len} needs {} samples, got {}", channels * len, samples.len()),
            ));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("segment samples must be finite"));
        }
        Ok(Self {
            channels,
            len,
            fs,
            samples,
            label: 0,
            subject_id: 0,
            repetition: 0,
        })
    }

    pub fn with_meta(mut self, label: u32, subject_id: u32, repetition: u32) -> Self {
        self.label = label;
        self.subject_id = subject_id;
        self.repetition = repetition;
        self
    }

    /// Copies metadata from another segment.
    pub fn with_meta_of(self, other: &SegmentTensor) -> Self {
        self.with_meta(other.label, other.subject_id, other.repetition)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of time samples per channel.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn fs(&self) -> f32 {
        self.fs
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.samples[c * self.len..(c + 1) * self.len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        &mut self.samples[c * self.len..(c + 1) * self.len]
    }

    pub fn channel_f64(&self, c: usize) -> Vec<f64> {
        self.channel(c).iter().map(|&v| v as f64).collect()
    }

    /// As a (1, 1, C, T) tensor.
    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::from_vec(
            [1, 1, self.channels, self.len],
            self.samples.iter().map(|&v| v as f64).collect(),
        )
        .expect("segment dimensions are consistent")
    }

    /// Builds a segment from one batch item of an (N, 1, C, T) tensor.
    pub fn from_tensor(t: &Tensor4, item: usize, fs: f32) -> Result<Self> {
        let [n, d, c, len] = t.shape();
        if d != 1 || item >= n {
            return Err(Error::shape(
                "segment",
                format!("cannot take item {item} of tensor {:?}", t.shape()),
            ));
        }
        let samples = t.plane(item, 0).iter().map(|&v| v as f32).collect();
        SegmentTensor::new(c, len, fs, samples)
    }
}
