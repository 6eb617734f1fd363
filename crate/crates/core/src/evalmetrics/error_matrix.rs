use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::SegmentTensor;
use crate::error::{Error, Result};
use crate::models::{DecodeMode, EpsMode, Model};
use crate::softdtw::dtw;

/// Anything that maps a segment to its reconstruction.
pub trait Reconstructor: Sync {
    /// `index` is the segment's position in the scored list; sampled
    /// reconstructions derive their noise from it.
    fn reconstruct(&self, seg: &SegmentTensor, index: usize) -> Result<SegmentTensor>;
}

/// Returns the input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityReconstructor;

impl Reconstructor for IdentityReconstructor {
    fn reconstruct(&self, seg: &SegmentTensor, _: usize) -> Result<SegmentTensor> {
        Ok(seg.clone())
    }
}

/// A frozen model decoding with the given latent injections and noise.
#[derive(Debug, Clone, Copy)]
pub struct ModelReconstructor<'a> {
    pub model: &'a Model,
    pub mode: DecodeMode,
    pub eps: EpsMode,
}

impl<'a> ModelReconstructor<'a> {
    /// Full decoding with eps = 0.
    pub fn deterministic(model: &'a Model) -> Self {
        Self { model, mode: model.spec().full_decode_mode(), eps: EpsMode::Zero }
    }
}

impl Reconstructor for ModelReconstructor<'_> {
    fn reconstruct(&self, seg: &SegmentTensor, index: usize) -> Result<SegmentTensor> {
        let eps = match self.eps {
            EpsMode::Zero => EpsMode::Zero,
            EpsMode::Sampled(s) => EpsMode::Sampled(s.wrapping_add(index as u64)),
        };
        self.model.reconstruct_segment(seg, self.mode, eps)
    }
}

/// Repetitions x channels matrix of normalized DTW scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub values: Vec<f64>,
    pub repetition_ids: Vec<u32>,
    pub channel_names: Vec<String>,
    /// Run identifier, or "averaged".
    pub provenance: String,
}

impl ErrorMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape("error_matrix", format!("{rows}x{cols} needs {} values", rows * cols)));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("error matrix entries must be finite and >= 0"));
        }
        Ok(Self {
            rows,
            cols,
            values,
            repetition_ids: (0..rows as u32).collect(),
            channel_names: (0..cols).map(|c| format!("ch{c}")).collect(),
            provenance: provenance.into(),
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Header row of channel names, then one row per repetition.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("repetition");
        for name in &self.channel_names {
            s.push('\t');
            s.push_str(name);
        }
        s.push('\n');
        for r in 0..self.rows {
            s.push_str(&self.repetition_ids[r].to_string());
            for v in self.row(r) {
                s.push_str(&format!("\t{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Entry (r, c) is the normalized classic DTW between channel c of segment r
/// and of its reconstruction.
pub fn error_matrix(recon: &dyn Reconstructor, segments: &[SegmentTensor], provenance: &str) -> Result<ErrorMatrix> {
    let Some(first) = segments.first() else {
        return Err(Error::invalid("no segments to score"));
    };
    let cols = first.channels();
    if segments.iter().any(|s| s.channels() != cols || s.len() != first.len()) {
        return Err(Error::shape("error_matrix", "segments differ in shape"));
    }
    let rows: Vec<Vec<f64>> = segments
        .par_iter()
        .enumerate()
        .map(|(r, seg)| {
            let out = recon.reconstruct(seg, r)?;
            if out.channels() != cols || out.len() != seg.len() {
                return Err(Error::shape("error_matrix", "reconstruction changed the segment shape"));
            }
            (0..cols)
                .map(|c| dtw(&seg.channel_f64(c), &out.channel_f64(c)).map(|d| d.normalized_score))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut m = ErrorMatrix::new(segments.len(), cols, rows.concat(), provenance)?;
    m.repetition_ids = segments.iter().map(|s| s.repetition).collect();
    Ok(m)
}

/// Per-repetition mean over channels.
pub fn segment_scores(m: &ErrorMatrix) -> Vec<f64> {
    (0..m.rows).map(|r| m.row(r).iter().sum::<f64>() / m.cols as f64).collect()
}

/// Element-wise mean. The result does not depend on the order of `matrices`:
/// each element's values are summed in sorted order.
pub fn average_error(matrices: &[ErrorMatrix]) -> Result<ErrorMatrix> {
    let Some(first) = matrices.first() else {
        return Err(Error::invalid("no matrices to average"));
    };
    if matrices.iter().any(|m| m.rows != first.rows || m.cols != first.cols) {
        return Err(Error::shape("average_error", "matrices differ in shape"));
    }
    let n = matrices.len() as f64;
    let mut buf = Vec::with_capacity(matrices.len());
    let values = (0..first.values.len())
        .map(|i| {
            buf.clear();
            buf.extend(matrices.iter().map(|m| m.values[i]));
            buf.sort_by(f64::total_cmp);
            buf.iter().sum::<f64>() / n
        })
        .collect();
    let mut out = ErrorMatrix::new(first.rows, first.cols, values, "averaged")?;
    out.repetition_ids = first.repetition_ids.clone();
    out.channel_names = first.channel_names.clone();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StdConvention {
    /// Population std of the per-channel means (each averaged over
    /// repetitions).
    #[default]
    ChannelMeans,
    /// Population std over every entry.
    AllEntries,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

fn population_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Grand mean over all entries and the std under `convention`.
pub fn subject_summary(m: &ErrorMatrix, convention: StdConvention) -> Summary {
    let mean = m.values.iter().sum::<f64>() / m.values.len() as f64;
    let std = match convention {
        StdConvention::ChannelMeans => {
            let means: Vec<f64> =
                (0..m.cols).map(|c| (0..m.rows).map(|r| m.get(r, c)).sum::<f64>() / m.rows as f64).collect();
            population_std(&means)
        }
        StdConvention::AllEntries => population_std(&m.values),
    };
    Summary { mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(seed: u32) -> SegmentTensor {
        let data = (0..3 * 12).map(|i| ((i as u32 * 7 + seed) % 11) as f32 - 5.0).collect();
        SegmentTensor::new(3, 12, 128.0, data).unwrap()
    }

    struct Shift;
    impl Reconstructor for Shift {
        fn reconstruct(&self, s: &SegmentTensor, _: usize) -> Result<SegmentTensor> {
            let data = s.samples().iter().map(|v| v + 1.5).collect();
            SegmentTensor::new(s.channels(), s.len(), s.fs(), data)
        }
    }

    #[test]
    fn identity_gives_zero_matrix() {
        let segs: Vec<_> = (0..4).map(seg).collect();
        let m = error_matrix(&IdentityReconstructor, &segs, "t").unwrap();
        assert_eq!((m.rows, m.cols), (4, 3));
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert_eq!(subject_summary(&m, StdConvention::ChannelMeans), Summary { mean: 0.0, std: 0.0 });
    }

    #[test]
    fn single_entry_is_direct_dtw() {
        let s = SegmentTensor::new(1, 5, 10.0, vec![0.0, 1.0, 4.0, 2.0, 0.0]).unwrap();
        let m = error_matrix(&Shift, std::slice::from_ref(&s), "t").unwrap();
        let shifted: Vec<f64> = s.channel_f64(0).iter().map(|v| v + 1.5).collect();
        assert_eq!(m.values[0], dtw(&s.channel_f64(0), &shifted).unwrap().normalized_score);
    }

    #[test]
    fn summary_conventions() {
        let m = ErrorMatrix::new(2, 2, vec![0.0, 2.0, 0.0, 2.0], "t").unwrap();
        let s = subject_summary(&m, StdConvention::ChannelMeans);
        assert_eq!((s.mean, s.std), (1.0, 1.0));
        let k = ErrorMatrix::new(3, 2, vec![4.0; 6], "t").unwrap();
        assert_eq!(subject_summary(&k, StdConvention::AllEntries), Summary { mean: 4.0, std: 0.0 });
    }

    #[test]
    fn average_two() {
        let a = ErrorMatrix::new(1, 2, vec![1.0, 2.0], "a").unwrap();
        let b = ErrorMatrix::new(1, 2, vec![3.0, 6.0], "b").unwrap();
        assert_eq!(average_error(&[a.clone(), b]).unwrap().values, vec![2.0, 4.0]);
        assert_eq!(average_error(std::slice::from_ref(&a)).unwrap().values, a.values);
        assert!(ErrorMatrix::new(1, 1, vec![-1.0], "x").is_err());
    }
}
