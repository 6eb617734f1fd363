//! Central finite-difference checks of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Graph, NodeId, NormMode, PadMode, Tensor4};
use crate::error::{Error, Result};
use crate::softdtw::{soft_dtw, soft_dtw_grad, GroundCost};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradient of a scalar function of one tensor, evaluated two ways.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Largest per-entry relative error, see [`relative_error`].
    pub max_rel_error: f64,
}

/// Per-entry relative error `|a - n| / max(|a|, |n|, floor)` where `floor` is
/// 1e-3 of the largest gradient magnitude (and at least 1e-12), so entries
/// that are tiny relative to the gradient are not judged on rounding noise.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    relative_error_floored(analytic, numeric, 1e-3 * scale)
}

/// Like [`relative_error`] with an explicit floor, for gradients that are
/// structurally zero (e.g. a shift cancelled by a later normalization) and
/// must be judged against the scale of a larger gradient.
pub fn relative_error_floored(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let floor = floor.max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compares the backward pass of `build` with central differences of its
/// forward value. `build` receives a fresh graph and the leaf holding `x`
/// and must return a scalar node; it must be deterministic.
pub fn check_gradient<F>(x: &Tensor4, step: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let eval = |t: &Tensor4| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.leaf(t.clone());
        let out = build(&mut g, leaf)?;
        Ok(g.scalar(out))
    };
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone());
    let out = build(&mut g, leaf)?;
    let grads = g.backward(out)?;
    let analytic = match grads.get(leaf) {
        Some(t) => t.data().to_vec(),
        None => vec![0.0; x.len()],
    };
    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * step));
    }
    if numeric.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("finite difference is not finite".into()));
    }
    let max_rel_error = relative_error(&analytic, &numeric);
    Ok(GradCheck { analytic, numeric, max_rel_error })
}

/// Worst relative error of one operation over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], scale: f64) -> Tensor4 {
    let n = shape.iter().product();
    let data = (0..n).map(|_| { let v: f64 = StandardNormal.sample(rng); scale * v }).collect::<Vec<f64>>();
    Tensor4::from_vec(shape, data).expect("shape matches data")
}

/// Random constant weights turn any tensor output into a scalar whose
/// gradient exercises every output entry.
fn project(g: &mut Graph, node: NodeId, rng_seed: u64) -> Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = random_tensor(&mut rng, g.value(node).shape(), 1.0);
    g.dot_const(node, w)
}

struct Suite {
    rng: ChaCha8Rng,
    out: Vec<OpCheck>,
}

impl Suite {
    fn record(&mut self, op: &'static str, err: f64) {
        match self.out.iter_mut().find(|c| c.op == op) {
            Some(c) => {
                c.trials += 1;
                c.max_rel_error = c.max_rel_error.max(err);
            }
            None => self.out.push(OpCheck { op, trials: 1, max_rel_error: err }),
        }
    }

    fn tensor(&mut self, shape: [usize; 4], scale: f64) -> Tensor4 {
        random_tensor(&mut self.rng, shape, scale)
    }

    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    fn seed(&mut self) -> u64 {
        self.rng.random()
    }

    /// Checks `f` with respect to each argument position in turn, holding the
    /// others constant.
    fn check_args<F>(&mut self, op: &'static str, args: &[Tensor4], f: F) -> Result<()>
    where
        F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
    {
        for k in 0..args.len() {
            let c = check_gradient(&args[k], FD_STEP, |g, leaf| {
                let ids: Vec<NodeId> = (0..args.len())
                    .map(|j| if j == k { leaf } else { g.constant(args[j].clone()) })
                    .collect();
                f(g, &ids)
            })?;
            self.record(op, c.max_rel_error);
        }
        Ok(())
    }
}

/// Finite-difference check of every graph operation and of
/// [`crate::softdtw::soft_dtw_grad`], `trials` random instances each
/// (time lengths at most 30).
pub fn op_suite(trials: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let mut s = Suite { rng: ChaCha8Rng::seed_from_u64(seed), out: Vec::new() };
    for _ in 0..trials {
        // convolutions, forward and transpose, both paddings, grouped
        let (n, groups) = (s.dim(1, 2), s.dim(1, 2));
        let (cin, cout) = (groups * s.dim(1, 2), groups * s.dim(1, 2));
        let (h, w) = (s.dim(1, 3), s.dim(5, 12));
        let (kh, kw) = (s.dim(1, h), s.dim(1, 4));
        for (name, transpose, pad) in [
            ("conv2d_same", false, PadMode::SameTime),
            ("conv2d_valid", false, PadMode::Valid),
            ("conv_transpose2d_same", true, PadMode::SameTime),
            ("conv_transpose2d_valid", true, PadMode::Valid),
        ] {
            let (x, wt) = if transpose {
                let hin = if pad == PadMode::Valid { h } else { h.max(1) };
                (s.tensor([n, cin, hin, w], 1.0), s.tensor([cin, cout / groups, kh, kw], 0.5))
            } else {
                (s.tensor([n, cin, h, w], 1.0), s.tensor([cout, cin / groups, kh, kw], 0.5))
            };
            let b = s.tensor([1, cout, 1, 1], 0.5);
            let ps = s.seed();
            s.check_args(name, &[x, wt, b], |g, a| {
                let y = if transpose {
                    g.transpose_conv2d(a[0], a[1], Some(a[2]), groups, pad)?
                } else {
                    g.conv2d(a[0], a[1], Some(a[2]), groups, pad)?
                };
                project(g, y, ps)
            })?;
        }

        // batch norm, batch statistics and running statistics
        let (n, d, h, w) = (s.dim(1, 3), s.dim(1, 3), s.dim(1, 3), s.dim(2, 10));
        let x = s.tensor([n, d, h, w], 2.0);
        let sc = s.tensor([1, d, 1, 1], 1.0);
        let sh = s.tensor([1, d, 1, 1], 1.0);
        let rm: Vec<f64> = s.tensor([1, d, 1, 1], 1.0).into_vec();
        let rv: Vec<f64> = s.tensor([1, d, 1, 1], 1.0).data().iter().map(|v| v.abs() + 0.5).collect();
        let ps = s.seed();
        s.check_args("batch_norm_train", &[x.clone(), sc.clone(), sh.clone()], |g, a| {
            let (y, _) = g.batch_norm(a[0], a[1], a[2], None, NormMode::Train)?;
            project(g, y, ps)
        })?;
        s.check_args("batch_norm_eval", &[x, sc, sh], |g, a| {
            let (y, _) = g.batch_norm(a[0], a[1], a[2], Some((&rm, &rv)), NormMode::Eval)?;
            project(g, y, ps)
        })?;

        // pointwise and resampling ops
        let shape = [s.dim(1, 2), s.dim(1, 3), s.dim(1, 2), 2 * s.dim(1, 6)];
        let x = s.tensor(shape, 1.5);
        let ps = s.seed();
        s.check_args("elu", &[x.clone()], |g, a| {
            let y = g.elu(a[0]);
            project(g, y, ps)
        })?;
        s.check_args("avg_pool", &[x.clone()], |g, a| {
            let y = g.avg_pool(a[0], 1, 2)?;
            project(g, y, ps)
        })?;
        s.check_args("upsample", &[x.clone()], |g, a| {
            let y = g.upsample(a[0], 1, 3)?;
            project(g, y, ps)
        })?;
        let ds = s.seed();
        s.check_args("dropout", &[x.clone()], |g, a| {
            let mut rng = ChaCha8Rng::seed_from_u64(ds);
            let y = g.dropout(a[0], 0.3, NormMode::Train, &mut rng)?;
            project(g, y, ps)
        })?;
        let y2 = s.tensor(shape, 1.0);
        s.check_args("add", &[x.clone(), y2], |g, a| {
            let y = g.add(a[0], a[1])?;
            project(g, y, ps)
        })?;
        let wide = s.tensor([shape[0], shape[1] + 2, shape[2], shape[3]], 1.0);
        let start = s.dim(0, 2);
        s.check_args("slice_depth", &[wide], |g, a| {
            let y = g.slice_depth(a[0], start, shape[1])?;
            project(g, y, ps)
        })?;
        s.check_args("sum_all", &[x.clone()], |g, a| {
            let y = g.elu(a[0]);
            Ok(g.sum_all(y))
        })?;

        // latent ops
        let mu = s.tensor(shape, 1.0);
        let lv = s.tensor(shape, 0.7);
        let eps = s.tensor(shape, 1.0);
        s.check_args("reparam", &[mu.clone(), lv.clone()], |g, a| {
            let y = g.reparam(a[0], a[1], eps.clone())?;
            project(g, y, ps)
        })?;
        s.check_args("kl_standard", &[mu.clone(), lv.clone()], |g, a| g.kl_standard(a[0], a[1]))?;
        let (mp, lp) = (s.tensor(shape, 1.0), s.tensor(shape, 0.7));
        s.check_args("kl_diag", &[mu, lv, mp, lp], |g, a| g.kl_diag(a[0], a[1], a[2], a[3]))?;
        let (k1, k2) = (s.tensor([1, 1, 1, 1], 1.0), s.tensor([1, 1, 1, 1], 1.0));
        let (w1, w2) = (s.tensor([1, 1, 1, 1], 1.0).data()[0], s.tensor([1, 1, 1, 1], 1.0).data()[0]);
        s.check_args("weighted_sum", &[k1, k2], |g, a| g.weighted_sum(&[(a[0], w1), (a[1], w2)]))?;

        // soft-DTW: the batched loss node and the standalone gradient
        let (n, c, t) = (s.dim(1, 2), s.dim(1, 3), s.dim(2, 30));
        let x = s.tensor([n, 1, c, t], 1.0);
        let target = s.tensor([n, 1, c, t], 1.0);
        let gamma = [0.1, 1.0][s.dim(0, 1)];
        s.check_args("soft_dtw_loss", &[x], |g, a| {
            g.soft_dtw_loss(a[0], &target, gamma, GroundCost::Squared, None)
        })?;
        let (ta, tb) = (s.dim(2, 30), s.dim(2, 30));
        let a = s.tensor([1, 1, 1, ta], 1.0).into_vec();
        let b = s.tensor([1, 1, 1, tb], 1.0).into_vec();
        let analytic = soft_dtw_grad(&a, &b, gamma)?;
        let mut probe = a.clone();
        let mut numeric = Vec::with_capacity(ta);
        for i in 0..ta {
            probe[i] = a[i] + FD_STEP;
            let up = soft_dtw(&probe, &b, gamma)?;
            probe[i] = a[i] - FD_STEP;
            let down = soft_dtw(&probe, &b, gamma)?;
            probe[i] = a[i];
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        s.record("soft_dtw_grad", relative_error(&analytic, &numeric));
    }
    Ok(s.out)
}
