//! Outlier repetitions from reconstruction errors, and the training-curve
//! transition point.
//!
//! Each repetition is a point in channel space (one row of the averaged
//! error matrix). Its distance to the k-th nearest other repetition is its
//! outlier score; the knee of the sorted scores is the threshold.

mod kneedle;

use serde::{Deserialize, Serialize};

pub use kneedle::{kneedle, CurveShape};

use crate::error::{Error, Result};
use crate::evalmetrics::ErrorMatrix;

/// Neighbour count used when the caller does not pick one.
pub const DEFAULT_K: usize = 15;
/// Kneedle sensitivity.
pub const SENSITIVITY: f64 = 1.0;

/// k scaled to the number of repetitions: `max(3, rows / 20)`.
pub fn scaled_k(rows: usize) -> usize {
    (rows / 20).max(3)
}

/// Euclidean distance from every row to its k-th nearest other row.
pub fn k_distances(m: &ErrorMatrix, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if m.rows <= k {
        return Err(Error::invalid(format!(
            "need more than k = {k} repetitions for k-nearest-neighbour distances, got {}",
            m.rows
        )));
    }
    let mut dist = Vec::with_capacity(m.rows - 1);
    Ok((0..m.rows)
        .map(|r| {
            dist.clear();
            let a = m.row(r);
            for s in (0..m.rows).filter(|&s| s != r) {
                let d2: f64 = a.iter().zip(m.row(s)).map(|(x, y)| (x - y) * (x - y)).sum();
                dist.push(d2.sqrt());
            }
            // ties are irrelevant to the k-th value itself
            dist.select_nth_unstable_by(k - 1, f64::total_cmp);
            dist[k - 1]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knee {
    /// Position in the ascending sorted curve.
    pub index: usize,
    pub threshold: f64,
}

/// Knee of an ascending curve of k-distances (convex, increasing).
pub fn knee_threshold(sorted: &[f64]) -> Result<Option<Knee>> {
    if sorted.len() < 3 {
        return Err(Error::invalid(format!("knee detection needs at least 3 points, got {}", sorted.len())));
    }
    if sorted.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("k-distances must be sorted ascending"));
    }
    let x: Vec<f64> = (0..sorted.len()).map(|i| i as f64).collect();
    Ok(kneedle(&x, sorted, CurveShape::ConvexIncreasing, SENSITIVITY).map(|index| Knee {
        index,
        threshold: sorted[index],
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub k: usize,
    /// Row order of the input matrix.
    pub k_distances: Vec<f64>,
    pub repetition_ids: Vec<u32>,
    pub threshold: Option<f64>,
    pub knee_index: Option<usize>,
    /// Row indices with k-distance above the threshold, by descending
    /// k-distance (ties by row index).
    pub flagged: Vec<usize>,
}

impl OutlierReport {
    pub fn flagged_ids(&self) -> Vec<u32> {
        self.flagged.iter().map(|&r| self.repetition_ids[r]).collect()
    }

    /// Rows above an arbitrary threshold, same ordering as `flagged`.
    pub fn flag_above(&self, threshold: f64) -> Vec<usize> {
        flag(&self.k_distances, threshold)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::canonical_json(self)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("row\trepetition\tk_distance\tflagged\n");
        for (r, d) in self.k_distances.iter().enumerate() {
            let f = u8::from(self.flagged.contains(&r));
            s.push_str(&format!("{r}\t{}\t{d}\t{f}\n", self.repetition_ids[r]));
        }
        s
    }
}

fn flag(kd: &[f64], threshold: f64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..kd.len()).filter(|&r| kd[r] > threshold).collect();
    v.sort_by(|&a, &b| kd[b].total_cmp(&kd[a]).then(a.cmp(&b)));
    v
}

/// k-distances, knee threshold, and the rows above it.
pub fn detect_outliers(m: &ErrorMatrix, k: usize) -> Result<OutlierReport> {
    let kd = k_distances(m, k)?;
    let mut sorted = kd.clone();
    sorted.sort_by(f64::total_cmp);
    let knee = knee_threshold(&sorted)?;
    let flagged = knee.map(|kn| flag(&kd, kn.threshold)).unwrap_or_default();
    Ok(OutlierReport {
        k,
        k_distances: kd,
        repetition_ids: m.repetition_ids.clone(),
        threshold: knee.map(|kn| kn.threshold),
        knee_index: knee.map(|kn| kn.index),
        flagged,
    })
}

/// Error and outlier curves over training checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub epochs: Vec<usize>,
    pub mean_error: Vec<f64>,
    pub std_error: Vec<f64>,
    pub outlier_counts: Vec<usize>,
    /// Knee of the mean-error curve, if any.
    pub transition_epoch: Option<usize>,
}

/// Epoch at the knee (convex, decreasing) of the mean error curve.
pub fn transition_point(epochs: &[usize], mean_error: &[f64]) -> Result<Option<usize>> {
    if epochs.len() != mean_error.len() {
        return Err(Error::shape("transition_point", "epochs and errors differ in length"));
    }
    if epochs.len() < 3 {
        return Err(Error::invalid("transition point needs at least 3 checkpoints"));
    }
    let x: Vec<f64> = epochs.iter().map(|&e| e as f64).collect();
    Ok(kneedle(&x, mean_error, CurveShape::ConvexDecreasing, SENSITIVITY).map(|i| epochs[i]))
}

pub fn transition_report(
    epochs: &[usize],
    mean_error: &[f64],
    std_error: &[f64],
    outlier_counts: &[usize],
) -> Result<TransitionReport> {
    if std_error.len() != epochs.len() || outlier_counts.len() != epochs.len() {
        return Err(Error::shape("transition_report", "curves differ in length"));
    }
    Ok(TransitionReport {
        epochs: epochs.to_vec(),
        mean_error: mean_error.to_vec(),
        std_error: std_error.to_vec(),
        outlier_counts: outlier_counts.to_vec(),
        transition_epoch: transition_point(epochs, mean_error)?,
    })
}
