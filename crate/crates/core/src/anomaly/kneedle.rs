//! Kneedle knee detection (Satopää et al.), offline, without smoothing.

use serde::{Deserialize, Serialize};

/// Orientation of the curve, fixed by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveShape {
    ConcaveIncreasing,
    ConvexIncreasing,
    ConvexDecreasing,
    ConcaveDecreasing,
}

/// Differences below this are treated as zero, so a numerically linear
/// curve has no knee.
const FLAT: f64 = 1e-12;

fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| (x - lo) / span).collect())
}

/// Index of the knee in the original arrays, or `None` when the curve has
/// no knee (e.g. it is linear or constant).
///
/// Both axes are scaled to [0, 1]; the curve is mirrored so that its knee
/// becomes the maximum of the difference curve `d = y - x`. A local maximum
/// of `d` is accepted once `d` later falls strictly below
/// `d_max - sensitivity * mean(diff(x))` before reaching a local minimum.
pub fn kneedle(x: &[f64], y: &[f64], shape: CurveShape, sensitivity: f64) -> Option<usize> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let xn = normalize(x)?;
    let yn = normalize(y)?;
    let yt: Vec<f64> = match shape {
        CurveShape::ConcaveIncreasing => yn,
        CurveShape::ConvexIncreasing => yn.iter().rev().map(|v| 1.0 - v).collect(),
        CurveShape::ConvexDecreasing => yn.iter().map(|v| 1.0 - v).collect(),
        CurveShape::ConcaveDecreasing => yn.iter().rev().copied().collect(),
    };
    let d: Vec<f64> = yt
        .iter()
        .zip(&xn)
        .map(|(y, x)| if (y - x).abs() < FLAT { 0.0 } else { y - x })
        .collect();
    let step = (xn[n - 1] - xn[0]).abs() / (n - 1) as f64;
    let neighbours = |i: usize| (d[i.saturating_sub(1)], d[(i + 1).min(n - 1)]);
    let is_max = |i: usize| {
        let (a, b) = neighbours(i);
        d[i] >= a && d[i] >= b
    };
    let is_min = |i: usize| {
        let (a, b) = neighbours(i);
        d[i] <= a && d[i] <= b
    };
    let first_max = (0..n).find(|&i| is_max(i))?;
    let mut threshold = f64::NEG_INFINITY;
    let mut candidate = None;
    for i in first_max..n - 1 {
        if is_max(i) {
            threshold = d[i] - sensitivity * step;
            candidate = Some(i);
        }
        if is_min(i) {
            threshold = 0.0;
        }
        if d[i + 1] < threshold - FLAT {
            let idx = candidate?;
            return Some(match shape {
                CurveShape::ConcaveIncreasing | CurveShape::ConvexDecreasing => idx,
                CurveShape::ConvexIncreasing | CurveShape::ConcaveDecreasing => n - 1 - idx,
            });
        }
    }
    None
}
