use super::tensor::Tensor4;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-depth saved state for the batch-norm backward pass.
#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
    pub batch_stats: bool,
}

/// Normalizes each depth slice over (batch, height, width).
///
/// With `stats = None` the batch statistics are used; otherwise the given
/// (mean, variance) pair is. Returns the output, the cache, and the batch
/// mean / unbiased variance when batch statistics were used.
pub(crate) fn batch_norm_forward(
    x: &Tensor4,
    scale: &[f64],
    shift: &[f64],
    stats: Option<(&[f64], &[f64])>,
) -> (Tensor4, NormCache, Option<(Vec<f64>, Vec<f64>)>) {
    let [n, d, h, w] = x.shape();
    let m = (n * h * w) as f64;
    let mut xhat = Tensor4::zeros(x.shape());
    let mut out = Tensor4::zeros(x.shape());
    let mut inv_std = vec![0.0; d];
    let mut batch = None;
    let mut means = vec![0.0; d];
    let mut vars = vec![0.0; d];
    for c in 0..d {
        let (mean, var) = match stats {
            Some((rm, rv)) => (rm[c], rv[c]),
            None => {
                let mean = (0..n).map(|b| x.plane(b, c).iter().sum::<f64>()).sum::<f64>() / m;
                let var = (0..n)
                    .map(|b| x.plane(b, c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
                    .sum::<f64>()
                    / m;
                (mean, var)
            }
        };
        means[c] = mean;
        vars[c] = var;
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = is;
        for b in 0..n {
            let src = x.plane(b, c);
            let xh = xhat.plane_mut(b, c);
            for (o, s) in xh.iter_mut().zip(src) {
                *o = (s - mean) * is;
            }
            let xh = xhat.plane(b, c).to_vec();
            for (o, v) in out.plane_mut(b, c).iter_mut().zip(xh) {
                *o = scale[c] * v + shift[c];
            }
        }
    }
    if stats.is_none() {
        let unbiased = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        batch = Some((means, vars.iter().map(|v| v * unbiased).collect()));
    }
    (
        out,
        NormCache {
            xhat,
            inv_std,
            batch_stats: stats.is_none(),
        },
        batch,
    )
}

/// Returns (grad_input, grad_scale, grad_shift).
pub(crate) fn batch_norm_backward(
    cache: &NormCache,
    scale: &[f64],
    grad_out: &Tensor4,
) -> (Tensor4, Vec<f64>, Vec<f64>) {
    let [n, d, h, w] = grad_out.shape();
    let m = (n * h * w) as f64;
    let mut gin = Tensor4::zeros(grad_out.shape());
    let mut gscale = vec![0.0; d];
    let mut gshift = vec![0.0; d];
    for c in 0..d {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for b in 0..n {
            for (g, xh) in grad_out.plane(b, c).iter().zip(cache.xhat.plane(b, c)) {
                sum_g += g;
                sum_gx += g * xh;
            }
        }
        gshift[c] = sum_g;
        gscale[c] = sum_gx;
        let k = scale[c] * cache.inv_std[c];
        for b in 0..n {
            let go = grad_out.plane(b, c).to_vec();
            let xh = cache.xhat.plane(b, c).to_vec();
            let dst = gin.plane_mut(b, c);
            if cache.batch_stats {
                for i in 0..h * w {
                    dst[i] = k * (go[i] - sum_g / m - xh[i] * sum_gx / m);
                }
            } else {
                for i in 0..h * w {
                    dst[i] = k * go[i];
                }
            }
        }
    }
    (gin, gscale, gshift)
}
