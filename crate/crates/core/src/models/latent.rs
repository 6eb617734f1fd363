use serde::{Deserialize, Serialize};

use super::spec::PriorMode;
use crate::error::{Error, Result};
use crate::gradcore::Tensor4;

/// Posterior parameters and the drawn sample of one latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentLevel {
    pub mu: Tensor4,
    pub logvar: Tensor4,
    pub eps: Tensor4,
    pub z: Tensor4,
}

/// Latent spaces deepest first: `[z1]` for the single-latent model,
/// `[z1, z2, z3]` for the hierarchical one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBundle {
    pub levels: Vec<LatentLevel>,
}

/// Diagonal-normal prior parameters for one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorParams {
    pub mu: Tensor4,
    pub logvar: Tensor4,
}

/// Reparametrized draw `mu + exp(0.5 logvar) * eps`.
pub fn sample(mu: &Tensor4, logvar: &Tensor4, eps: &Tensor4) -> Result<Tensor4> {
    if mu.shape() != logvar.shape() || mu.shape() != eps.shape() {
        return Err(Error::shape("sample", "mu, logvar and eps must share a shape"));
    }
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((m, l), e)| m + (0.5 * l).exp() * e)
        .collect();
    Tensor4::from_vec(mu.shape(), data)
}

/// KL(N(mu, exp(logvar)) || N(0, I)), summed over elements.
pub fn kl_standard(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, l)| 0.5 * (l.exp() + m * m - 1.0 - l))
        .sum()
}

/// KL(q || p) between diagonal normals, summed over elements.
pub fn kl_diag(mu_q: &[f64], lv_q: &[f64], mu_p: &[f64], lv_p: &[f64]) -> f64 {
    (0..mu_q.len())
        .map(|i| {
            let dm = mu_q[i] - mu_p[i];
            0.5 * (lv_p[i] - lv_q[i] + (lv_q[i].exp() + dm * dm) / lv_p[i].exp() - 1.0)
        })
        .sum()
}

/// KL per level. In conditional mode `priors[l]` (when present) replaces the
/// standard normal for level `l`; the top level is always standard.
pub fn kl_hierarchical(posterior: &LatentBundle, priors: &[Option<PriorParams>], mode: PriorMode) -> Result<Vec<f64>> {
    if mode == PriorMode::Conditional && priors.len() != posterior.levels.len() {
        return Err(Error::invalid(format!(
            "{} posterior levels but {} priors",
            posterior.levels.len(),
            priors.len()
        )));
    }
    posterior
        .levels
        .iter()
        .enumerate()
        .map(|(l, q)| match (mode, priors.get(l).and_then(|p| p.as_ref())) {
            (PriorMode::Conditional, Some(p)) if l > 0 => {
                if p.mu.shape() != q.mu.shape() || p.logvar.shape() != q.mu.shape() {
                    return Err(Error::shape("kl_hierarchical", format!("prior shape at level {l}")));
                }
                Ok(kl_diag(q.mu.data(), q.logvar.data(), p.mu.data(), p.logvar.data()))
            }
            _ => Ok(kl_standard(q.mu.data(), q.logvar.data())),
        })
        .collect()
}
