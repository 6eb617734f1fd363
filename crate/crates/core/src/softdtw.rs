//! Classic and soft dynamic time warping between 1-D series.
//!
//! Classic DTW uses the absolute difference as ground cost and reports the
//! optimal path, which gives the normalized score used for evaluation.
//! Soft-DTW replaces the hard minimum of the recursion with
//! `softmin_γ(v) = -γ log Σ exp(-v_k / γ)` and is differentiable; it serves
//! as the training loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::SegmentTensor;
use crate::error::{Error, Result};

/// Pointwise cost between two samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundCost {
    #[default]
    Squared,
    Absolute,
}

impl GroundCost {
    #[inline]
    pub fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            GroundCost::Squared => (a - b) * (a - b),
            GroundCost::Absolute => (a - b).abs(),
        }
    }

    /// d cost / d a.
    #[inline]
    pub fn deriv(self, a: f64, b: f64) -> f64 {
        match self {
            GroundCost::Squared => 2.0 * (a - b),
            GroundCost::Absolute => {
                if a > b {
                    1.0
                } else if a < b {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Outcome of classic DTW: optimal cumulative cost and the warping path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtwResult {
    pub raw_score: f64,
    /// Zero-based (i, j) pairs from (0, 0) to (n-1, m-1).
    pub path: Vec<(usize, usize)>,
    pub normalized_score: f64,
}

impl DtwResult {
    pub fn path_len(&self) -> usize {
        self.path.len()
    }
}

fn in_band(i: usize, j: usize, band: Option<usize>) -> bool {
    band.is_none_or(|w| i.abs_diff(j) <= w)
}

fn check_inputs(a: &[f64], b: &[f64], band: Option<usize>) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("dtw needs non-empty series"));
    }
    if let Some(w) = band {
        if a.len().abs_diff(b.len()) > w {
            return Err(Error::invalid(format!(
                "band {w} cannot connect series of lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
    }
    Ok(())
}

/// Classic DTW with |a(i) - b(j)| cost over the full matrix.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<DtwResult> {
    dtw_banded(a, b, None)
}

/// Classic DTW restricted to a Sakoe-Chiba band of half-width `band`.
pub fn dtw_banded(a: &[f64], b: &[f64], band: Option<usize>) -> Result<DtwResult> {
    check_inputs(a, b, band)?;
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            if !in_band(i, j, band) {
                continue;
            }
            let cost = (a[i] - b[j]).abs();
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                let down = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                diag.min(left).min(down)
            };
            acc[i * m + j] = cost + prev;
        }
    }
    let raw_score = acc[n * m - 1];
    // backtrack; ties prefer diagonal, then (i, j-1), then (i-1, j)
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let (ni, nj) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let left = acc[i * m + j - 1];
            let down = acc[(i - 1) * m + j];
            if diag <= left && diag <= down {
                (i - 1, j - 1)
            } else if left <= down {
                (i, j - 1)
            } else {
                (i - 1, j)
            }
        };
        i = ni;
        j = nj;
        path.push((i, j));
    }
    path.reverse();
    let k = path.len() as f64;
    Ok(DtwResult {
        raw_score,
        normalized_score: raw_score / k,
        path,
    })
}

/// `-γ log Σ exp(-v_k / γ)`, stable for infinite entries.
#[inline]
pub fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let m = a.min(b).min(c);
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    let s = (-(a - m) / gamma).exp() + (-(b - m) / gamma).exp() + (-(c - m) / gamma).exp();
    m - gamma * s.ln()
}

/// Options for the soft-DTW recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftDtwOptions {
    pub gamma: f64,
    pub cost: GroundCost,
    pub band: Option<usize>,
}

impl Default for SoftDtwOptions {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            cost: GroundCost::Squared,
            band: None,
        }
    }
}

/// Forward table R of size (n+2) x (m+2); R[n][m] is the soft-DTW value.
struct SoftTable {
    n: usize,
    m: usize,
    r: Vec<f64>,
    /// Softmin weights of each cell over its predecessors (diagonal, up,
    /// left), three per cell; empty when only the value is needed. These are
    /// exactly the factors of the backward recursion.
    p: Vec<[f64; 3]>,
}

impl SoftTable {
    #[inline]
    fn r(&self, i: usize, j: usize) -> f64 {
        self.r[i * (self.m + 2) + j]
    }
}

fn soft_forward(a: &[f64], b: &[f64], opts: &SoftDtwOptions, keep_weights: bool) -> Result<SoftTable> {
    if !(opts.gamma > 0.0) || !opts.gamma.is_finite() {
        return Err(Error::invalid(format!("soft-DTW needs gamma > 0, got {}", opts.gamma)));
    }
    check_inputs(a, b, opts.band)?;
    let (n, m) = (a.len(), b.len());
    let stride = m + 2;
    let inv_gamma = 1.0 / opts.gamma;
    let mut r = vec![f64::INFINITY; (n + 2) * stride];
    r[0] = 0.0;
    let mut p = if keep_weights { vec![[0.0; 3]; n * m] } else { Vec::new() };
    for i in 1..=n {
        let (lo, hi) = band_range(i - 1, m, opts.band);
        for j in lo + 1..=hi {
            let cost = opts.cost.eval(a[i - 1], b[j - 1]);
            let v = [r[(i - 1) * stride + j - 1], r[(i - 1) * stride + j], r[i * stride + j - 1]];
            let mn = v[0].min(v[1]).min(v[2]);
            if mn == f64::INFINITY {
                continue;
            }
            let w = [
                (-(v[0] - mn) * inv_gamma).exp(),
                (-(v[1] - mn) * inv_gamma).exp(),
                (-(v[2] - mn) * inv_gamma).exp(),
            ];
            let sum = w[0] + w[1] + w[2];
            r[i * stride + j] = cost + mn - opts.gamma * sum.ln();
            if keep_weights {
                let k = 1.0 / sum;
                p[(i - 1) * m + j - 1] = [w[0] * k, w[1] * k, w[2] * k];
            }
        }
    }
    Ok(SoftTable { n, m, r, p })
}

/// Columns `[lo, hi)` of row `i` inside the Sakoe-Chiba band.
#[inline]
fn band_range(i: usize, m: usize, band: Option<usize>) -> (usize, usize) {
    match band {
        None => (0, m),
        Some(w) => (i.saturating_sub(w), (i + w + 1).min(m)),
    }
}

/// Expected alignment matrix E (n x m): dR(n,m)/dD(i,j).
fn soft_alignment(t: &SoftTable) -> Vec<f64> {
    let (n, m) = (t.n, t.m);
    let mut e = vec![0.0; n * m];
    e[n * m - 1] = 1.0;
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            if i == n - 1 && j == m - 1 {
                continue;
            }
            let mut acc = 0.0;
            if i + 1 < n {
                acc += e[(i + 1) * m + j] * t.p[(i + 1) * m + j][1];
                if j + 1 < m {
                    acc += e[(i + 1) * m + j + 1] * t.p[(i + 1) * m + j + 1][0];
                }
            }
            if j + 1 < m {
                acc += e[i * m + j + 1] * t.p[i * m + j + 1][2];
            }
            e[i * m + j] = acc;
        }
    }
    e
}

/// Soft-DTW value with squared ground cost.
pub fn soft_dtw(a: &[f64], b: &[f64], gamma: f64) -> Result<f64> {
    soft_dtw_with(
        a,
        b,
        &SoftDtwOptions {
            gamma,
            ..Default::default()
        },
    )
}

pub fn soft_dtw_with(a: &[f64], b: &[f64], opts: &SoftDtwOptions) -> Result<f64> {
    let t = soft_forward(a, b, opts, false)?;
    Ok(t.r(t.n, t.m))
}

/// Gradient of soft-DTW (squared cost) with respect to `a`.
pub fn soft_dtw_grad(a: &[f64], b: &[f64], gamma: f64) -> Result<Vec<f64>> {
    Ok(soft_dtw_grads(
        a,
        b,
        &SoftDtwOptions {
            gamma,
            ..Default::default()
        },
    )?
    .1)
}

/// Value and gradients with respect to both series: `(value, d/da, d/db)`.
pub fn soft_dtw_grads(
    a: &[f64],
    b: &[f64],
    opts: &SoftDtwOptions,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let t = soft_forward(a, b, opts, true)?;
    let value = t.r(t.n, t.m);
    let e = soft_alignment(&t);
    let (n, m) = (t.n, t.m);
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let w = e[i * m + j];
            if w == 0.0 {
                continue;
            }
            let d = opts.cost.deriv(a[i], b[j]);
            ga[i] += w * d;
            gb[j] -= w * d;
        }
    }
    Ok((value, ga, gb))
}

pub(crate) fn soft_dtw_value_and_grad_b(
    a: &[f64],
    b: &[f64],
    gamma: f64,
    cost: GroundCost,
    band: Option<usize>,
) -> Result<(f64, Vec<f64>)> {
    let (v, _, gb) = soft_dtw_grads(a, b, &SoftDtwOptions { gamma, cost, band })?;
    Ok((v, gb))
}

/// Map `f` over `items` on the rayon pool, keeping input order.
pub(crate) fn parallel_rows<I, T, F>(items: &[I], f: F) -> Result<Vec<T>>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Σ over channels of soft-DTW between matching rows, unnormalized.
pub fn multichannel_loss(x: &SegmentTensor, x_hat: &SegmentTensor, opts: &SoftDtwOptions) -> Result<f64> {
    if x.channels() != x_hat.channels() || x.len() != x_hat.len() {
        return Err(Error::shape(
            "multichannel_loss",
            format!(
                "{}x{} vs {}x{}",
                x.channels(),
                x.len(),
                x_hat.channels(),
                x_hat.len()
            ),
        ));
    }
    let channels: Vec<usize> = (0..x.channels()).collect();
    let per = parallel_rows(&channels, |&c| {
        soft_dtw_with(&x.channel_f64(c), &x_hat.channel_f64(c), opts)
    })?;
    Ok(per.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum |.| cost over every monotone path, each path summed front to back.
    fn brute_force_dtw(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = acc + (a[i] - b[j]).abs();
            if i == a.len() - 1 && j == b.len() - 1 {
                *best = best.min(acc);
                return;
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                go(a, b, i + 1, j + 1, acc, best);
            }
            if i + 1 < a.len() {
                go(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.len() {
                go(a, b, i, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        go(a, b, 0, 0, 0.0, &mut best);
        best
    }

    fn random_series(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn identical_series_score_zero() {
        let r = dtw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.raw_score, 0.0);
        assert_eq!(r.path_len(), 3);
        assert_eq!(r.normalized_score, 0.0);
    }

    #[test]
    fn single_cell() {
        let r = dtw(&[2.0], &[5.0]).unwrap();
        assert_eq!((r.raw_score, r.path_len(), r.normalized_score), (3.0, 1, 3.0));
    }

    #[test]
    fn unequal_lengths_match_enumeration() {
        let (a, b) = ([1.0, 2.0, 3.0], [1.0, 3.0]);
        let r = dtw(&a, &b).unwrap();
        // paths: (0,0)(1,0)(2,1): 0+1+0 ; (0,0)(1,1)(2,1): 0+1+0 ; ...
        assert_eq!(r.raw_score, brute_force_dtw(&a, &b));
        assert_eq!(r.raw_score, 1.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(dtw(&[], &[1.0]).is_err());
    }

    #[test]
    fn path_is_monotone_and_score_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_series(&mut rng, 12);
            let b = random_series(&mut rng, 12);
            let r = dtw(&a, &b).unwrap();
            assert_eq!(r.path[0], (0, 0));
            assert_eq!(*r.path.last().unwrap(), (11, 11));
            for w in r.path.windows(2) {
                let step = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                assert!(matches!(step, (1, 0) | (0, 1) | (1, 1)));
            }
            let along: f64 = r.path.iter().map(|&(i, j)| (a[i] - b[j]).abs()).sum();
            assert!((along - r.raw_score).abs() < 1e-9);
            assert!((r.normalized_score * r.path_len() as f64 - r.raw_score).abs() < 1e-9);
        }
    }

    #[test]
    fn tie_breaking_prefers_diagonal() {
        let r = dtw(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.path, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn banded_equals_full_with_wide_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_series(&mut rng, 15);
        let b = random_series(&mut rng, 15);
        assert_eq!(dtw(&a, &b).unwrap().raw_score, dtw_banded(&a, &b, Some(15)).unwrap().raw_score);
        assert!(dtw_banded(&a, &b, Some(1)).unwrap().raw_score >= dtw(&a, &b).unwrap().raw_score);
        let o = SoftDtwOptions { band: Some(20), ..Default::default() };
        assert_eq!(soft_dtw_with(&a, &b, &o).unwrap(), soft_dtw(&a, &b, 1.0).unwrap());
    }

    #[test]
    fn soft_single_point_is_cost() {
        assert_eq!(soft_dtw(&[2.5], &[2.5], 0.7).unwrap(), 0.0);
        assert!(soft_dtw(&[1.0], &[1.0], 0.0).is_err());
        assert!(soft_dtw(&[1.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn soft_self_distance_negative() {
        let a = [0.3, -1.0, 2.0, 0.5];
        assert!(soft_dtw(&a, &a, 1.0).unwrap() < 0.0);
    }

    #[test]
    fn soft_approaches_hard_for_small_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let abs = SoftDtwOptions { gamma: 1e-3, cost: GroundCost::Absolute, band: None };
        for _ in 0..20 {
            let a = random_series(&mut rng, 6);
            let b = random_series(&mut rng, 6);
            let hard = dtw(&a, &b).unwrap().raw_score;
            let soft = soft_dtw_with(&a, &b, &abs).unwrap();
            assert!((soft - hard).abs() / hard.max(1.0) < 1e-2);
        }
    }

    #[test]
    fn gradient_wrt_a_equals_gradient_wrt_b_after_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_series(&mut rng, 9);
        let b = random_series(&mut rng, 9);
        let o = SoftDtwOptions::default();
        let (_, ga, _) = soft_dtw_grads(&a, &b, &o).unwrap();
        let (_, _, gb_swapped) = soft_dtw_grads(&b, &a, &o).unwrap();
        for (x, y) in ga.iter().zip(&gb_swapped) {
            assert!((x - y).abs() < 1e-10);
        }
        // translating both series leaves the value unchanged, so the
        // gradients with respect to a and b cancel in total
        let (_, ga, gb) = soft_dtw_grads(&a, &a, &o).unwrap();
        let total: f64 = ga.iter().sum::<f64>() + gb.iter().sum::<f64>();
        assert!(total.abs() < 1e-9);
    }

    #[test]
    fn large_gamma_gradient_is_uniform_path_average() {
        // occupancy of cell (i,j) under the uniform distribution over paths,
        // from forward/backward path counts
        let a = [0.5, -1.0, 2.0, 0.0, 1.5];
        let b = [1.0, 0.0, -0.5, 2.5, 0.3];
        let n = a.len();
        let mut fwd = vec![vec![0f64; n]; n];
        let mut bwd = vec![vec![0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                fwd[i][j] = if i == 0 && j == 0 {
                    1.0
                } else {
                    let mut s = 0.0;
                    if i > 0 { s += fwd[i - 1][j]; }
                    if j > 0 { s += fwd[i][j - 1]; }
                    if i > 0 && j > 0 { s += fwd[i - 1][j - 1]; }
                    s
                };
            }
        }
        for i in (0..n).rev() {
            for j in (0..n).rev() {
                bwd[i][j] = if i == n - 1 && j == n - 1 {
                    1.0
                } else {
                    let mut s = 0.0;
                    if i + 1 < n { s += bwd[i + 1][j]; }
                    if j + 1 < n { s += bwd[i][j + 1]; }
                    if i + 1 < n && j + 1 < n { s += bwd[i + 1][j + 1]; }
                    s
                };
            }
        }
        let total = fwd[n - 1][n - 1];
        let mut expected = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                expected[i] += fwd[i][j] * bwd[i][j] / total * 2.0 * (a[i] - b[j]);
            }
        }
        let g = soft_dtw_grad(&a, &b, 1e6).unwrap();
        for (x, y) in g.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
    }

    #[test]
    fn finite_difference_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_series(&mut rng, 20);
        let b = random_series(&mut rng, 20);
        let g = soft_dtw_grad(&a, &b, 1.0).unwrap();
        let h = 1e-5;
        for i in 0..a.len() {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[i] += h;
            am[i] -= h;
            let fd = (soft_dtw(&ap, &b, 1.0).unwrap() - soft_dtw(&am, &b, 1.0).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1.0), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn multichannel_is_sum_of_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, t) = (3, 10);
        let xs: Vec<f32> = (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ys: Vec<f32> = (0..c * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = SegmentTensor::new(c, t, 100.0, xs).unwrap();
        let y = SegmentTensor::new(c, t, 100.0, ys).unwrap();
        let o = SoftDtwOptions::default();
        let total = multichannel_loss(&x, &y, &o).unwrap();
        let by_hand: f64 = (0..c)
            .map(|ch| soft_dtw(&x.channel_f64(ch), &y.channel_f64(ch), 1.0).unwrap())
            .sum();
        assert_eq!(total, by_hand);
        let one = SegmentTensor::new(1, 1, 1.0, vec![0.5]).unwrap();
        assert_eq!(multichannel_loss(&one, &one, &o).unwrap(), 0.0);
        let other = SegmentTensor::new(2, 10, 100.0, vec![0.0; 20]).unwrap();
        assert!(multichannel_loss(&x, &other, &o).is_err());
    }

    proptest! {
        #[test]
        fn softmin_bounds(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0, g in 0.01f64..10.0) {
            let s = softmin3(a, b, c, g);
            let m = a.min(b).min(c);
            prop_assert!(s <= m + 1e-12);
            prop_assert!(s >= m - g * 3f64.ln() - 1e-9);
        }

        #[test]
        fn dtw_symmetric_and_zero_on_self(
            a in proptest::collection::vec(-10.0f64..10.0, 1..12),
            b in proptest::collection::vec(-10.0f64..10.0, 1..12),
        ) {
            prop_assert_eq!(dtw(&a, &a).unwrap().raw_score, 0.0);
            let ab = dtw(&a, &b).unwrap();
            let ba = dtw(&b, &a).unwrap();
            prop_assert!((ab.raw_score - ba.raw_score).abs() < 1e-9);
            prop_assert!(ab.raw_score >= 0.0);
            prop_assert!(ab.normalized_score <= ab.raw_score);
        }

        #[test]
        fn dtw_equals_enumeration(
            a in proptest::collection::vec(-5.0f64..5.0, 1..7),
            b in proptest::collection::vec(-5.0f64..5.0, 1..7),
        ) {
            prop_assert_eq!(dtw(&a, &b).unwrap().raw_score, brute_force_dtw(&a, &b));
        }
    }
}
