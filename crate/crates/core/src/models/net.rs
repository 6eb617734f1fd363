use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::latent::{LatentBundle, LatentLevel, PriorParams};
use super::params::{layers, LayerKind, ParamRole, ParamStore};
use super::spec::{DecodeMode, ModelSpec, PriorMode};
use crate::dataio::SegmentTensor;
use crate::error::{Error, Result};
use crate::gradcore::{BatchStats, Graph, NodeId, NormMode, Tensor4, BN_MOMENTUM};

/// Source of the reparametrization noise at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsMode {
    /// eps = 0, i.e. z = mu. Deterministic.
    Zero,
    Sampled(u64),
}

/// Options for one forward pass on a graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassOptions {
    pub norm: NormMode,
    pub decode: DecodeMode,
    /// Draw eps ~ N(0, I); otherwise eps = 0.
    pub sample_latents: bool,
    /// KL weight.
    pub beta: f64,
    /// Optional Sakoe-Chiba band for the soft-DTW loss.
    pub band: Option<usize>,
    /// Register parameters as differentiable leaves.
    pub trainable: bool,
}

impl PassOptions {
    pub fn training(spec: &ModelSpec) -> Self {
        Self {
            norm: NormMode::Train,
            decode: spec.full_decode_mode(),
            sample_latents: true,
            beta: 1.0,
            band: None,
            trainable: true,
        }
    }

    pub fn evaluation(spec: &ModelSpec) -> Self {
        Self {
            norm: NormMode::Eval,
            decode: spec.full_decode_mode(),
            sample_latents: false,
            beta: 1.0,
            band: None,
            trainable: false,
        }
    }
}

impl ModelSpec {
    /// Decode mode that uses every latent space of the variant.
    pub fn full_decode_mode(&self) -> DecodeMode {
        if self.is_hierarchical() {
            DecodeMode::WithZ3
        } else {
            DecodeMode::FromZ1
        }
    }
}

/// Loss decomposition of one batch, each term averaged over the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Summed channel-wise soft-DTW, unnormalized.
    pub reconstruction: f64,
    pub kl_per_level: Vec<f64>,
    /// reconstruction + beta * sum(kl_per_level)
    pub total: f64,
}

/// Graph handles of one loss evaluation.
#[derive(Debug)]
pub struct LossGraph {
    pub graph: Graph,
    pub total: NodeId,
    pub reconstruction: NodeId,
    pub kl: Vec<NodeId>,
    pub output: NodeId,
    /// Node per parameter-store entry (running statistics included).
    pub param_nodes: Vec<NodeId>,
    /// Batch statistics by index of the batch norm's running-mean entry.
    pub batch_stats: Vec<(usize, BatchStats)>,
}

impl LossGraph {
    pub fn breakdown(&self, beta: f64) -> LossBreakdown {
        let kl: Vec<f64> = self.kl.iter().map(|&k| self.graph.scalar(k)).collect();
        let reconstruction = self.graph.scalar(self.reconstruction);
        LossBreakdown {
            reconstruction,
            total: reconstruction + beta * kl.iter().sum::<f64>(),
            kl_per_level: kl,
        }
    }
}

/// Block outputs of the encoder, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFeatures {
    pub temporal: Tensor4,
    pub spatial: Tensor4,
    pub separable: Tensor4,
}

struct Pass<'a, R: Rng + ?Sized> {
    spec: &'a ModelSpec,
    store: &'a ParamStore,
    kinds: HashMap<&'static str, LayerKind>,
    g: &'a mut Graph,
    ids: Vec<NodeId>,
    norm: NormMode,
    rng: &'a mut R,
    stats: Vec<(usize, BatchStats)>,
}

struct Encoded {
    temporal: NodeId,
    spatial: NodeId,
    separable: NodeId,
    /// (mu, logvar) deepest first.
    posteriors: Vec<(NodeId, NodeId)>,
}

impl<'a, R: Rng + ?Sized> Pass<'a, R> {
    fn new(spec: &'a ModelSpec, store: &'a ParamStore, g: &'a mut Graph, trainable: bool, norm: NormMode, rng: &'a mut R) -> Self {
        let ids = store
            .params()
            .iter()
            .map(|p| {
                if trainable && p.role.trainable() {
                    g.leaf(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        let kinds = layers(spec).into_iter().map(|l| (l.name, l.kind)).collect();
        Self { spec, store, kinds, g, ids, norm, rng, stats: Vec::new() }
    }

    fn param(&self, layer: &str, suffix: &str) -> Result<NodeId> {
        Ok(self.ids[self.store.position(&format!("{layer}.{suffix}"))?])
    }

    fn conv(&mut self, x: NodeId, layer: &'static str) -> Result<NodeId> {
        let Some(&LayerKind::Conv { groups, bias, transpose, pad, .. }) = self.kinds.get(layer) else {
            return Err(Error::invalid(format!("{layer} is not a convolution of this model")));
        };
        let w = self.param(layer, "weight")?;
        let b = if bias { Some(self.param(layer, "bias")?) } else { None };
        if transpose {
            self.g.transpose_conv2d(x, w, b, groups, pad)
        } else {
            self.g.conv2d(x, w, b, groups, pad)
        }
    }

    fn bn(&mut self, x: NodeId, layer: &str) -> Result<NodeId> {
        let scale = self.param(layer, "scale")?;
        let shift = self.param(layer, "shift")?;
        let rm_idx = self.store.position(&format!("{layer}.running_mean"))?;
        let rv_idx = self.store.position(&format!("{layer}.running_var"))?;
        let params = self.store.params();
        let running = (params[rm_idx].value.data(), params[rv_idx].value.data());
        let (out, stats) = self.g.batch_norm(x, scale, shift, Some(running), self.norm)?;
        if let Some(s) = stats {
            self.stats.push((rm_idx, s));
        }
        Ok(out)
    }

    fn pool(&mut self, x: NodeId, factor: Option<usize>) -> Result<NodeId> {
        match factor {
            Some(f) if f > 1 => self.g.avg_pool(x, 1, f),
            _ => Ok(x),
        }
    }

    fn upsample(&mut self, x: NodeId, factor: Option<usize>) -> Result<NodeId> {
        match factor {
            Some(f) if f > 1 => self.g.upsample(x, 1, f),
            _ => Ok(x),
        }
    }

    fn dropout(&mut self, x: NodeId) -> Result<NodeId> {
        self.g.dropout(x, self.spec.dropout, self.norm, &mut *self.rng)
    }

    fn split_posterior(&mut self, h: NodeId) -> Result<(NodeId, NodeId)> {
        let d = self.g.value(h).shape()[1] / 2;
        Ok((self.g.slice_depth(h, 0, d)?, self.g.slice_depth(h, d, d)?))
    }

    fn encode(&mut self, x: NodeId) -> Result<Encoded> {
        let te = self.conv(x, "enc.te.conv")?;
        let te = self.bn(te, "enc.te.bn")?;

        let sp = self.conv(te, "enc.sp.conv")?;
        let sp = self.bn(sp, "enc.sp.bn")?;
        let sp = self.g.elu(sp);
        let sp = self.pool(sp, self.spec.pool1)?;
        let sp = self.dropout(sp)?;

        let sc = self.conv(sp, "enc.sc.depthwise")?;
        let sc = self.conv(sc, "enc.sc.pointwise")?;
        let sc = self.bn(sc, "enc.sc.bn")?;
        let sc = self.g.elu(sc);
        let sc = self.pool(sc, self.spec.pool2)?;
        let sc = self.dropout(sc)?;

        let h1 = self.conv(sc, "enc.sample.z1")?;
        let mut posteriors = vec![self.split_posterior(h1)?];
        if self.spec.is_hierarchical() {
            let h2 = self.conv(sp, "enc.sample.z2")?;
            posteriors.push(self.split_posterior(h2)?);
            let h3 = self.conv(te, "enc.sample.z3")?;
            posteriors.push(self.split_posterior(h3)?);
        }
        Ok(Encoded { temporal: te, spatial: sp, separable: sc, posteriors })
    }

    fn prior(&mut self, feature: NodeId, layer: &'static str) -> Result<Option<(NodeId, NodeId)>> {
        if self.spec.is_hierarchical() && self.spec.prior_mode == PriorMode::Conditional {
            let h = self.conv(feature, layer)?;
            Ok(Some(self.split_posterior(h)?))
        } else {
            Ok(None)
        }
    }

    /// Returns the reconstruction and the conditional priors (deepest first;
    /// the top level never has one).
    fn decode(&mut self, z: &[NodeId], mode: DecodeMode) -> Result<(NodeId, Vec<Option<(NodeId, NodeId)>>)> {
        if !self.spec.is_hierarchical() && mode != DecodeMode::FromZ1 {
            return Err(Error::invalid("the single-latent model only decodes from z1"));
        }
        let mut priors = vec![None];

        let d = self.dropout(z[0])?;
        let d = self.upsample(d, self.spec.pool2)?;
        let d = self.g.elu(d);
        let d = self.bn(d, "dec.sc.bn")?;
        let d = self.conv(d, "dec.sc.pointwise")?;
        let mut d = self.conv(d, "dec.sc.depthwise")?;
        if self.spec.is_hierarchical() {
            priors.push(self.prior(d, "prior.z2")?);
            if mode.uses_z2() {
                d = self.g.add(d, z[1])?;
            }
        }

        let d = self.dropout(d)?;
        let d = self.upsample(d, self.spec.pool1)?;
        let d = self.g.elu(d);
        let d = self.bn(d, "dec.sp.bn")?;
        let mut d = self.conv(d, "dec.sp.conv")?;
        if self.spec.is_hierarchical() {
            priors.push(self.prior(d, "prior.z3")?);
            if mode.uses_z3() {
                d = self.g.add(d, z[2])?;
            }
        }

        let d = self.bn(d, "dec.te.bn")?;
        let out = self.conv(d, "dec.te.conv")?;
        Ok((out, priors))
    }

    fn draw(&mut self, shape: [usize; 4], sampled: bool) -> Tensor4 {
        let mut t = Tensor4::zeros(shape);
        if sampled {
            for v in t.data_mut() {
                *v = self.rng.sample(StandardNormal);
            }
        }
        t
    }
}

/// A model: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = ParamStore::init(&spec, seed)?;
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        spec.validate()?;
        let reference = ParamStore::zeros(&spec)?;
        if reference.len() != params.len()
            || reference
                .params()
                .iter()
                .zip(params.params())
                .any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(Error::invalid("parameter layout does not match the model spec"));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let [_, d, c, t] = x.shape();
        if d != 1 || c != self.spec.channels || t != self.spec.samples {
            return Err(Error::shape(
                "model input",
                format!(
                    "expected (N, 1, {}, {}), got {:?}",
                    self.spec.channels,
                    self.spec.samples,
                    x.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Builds the full loss graph for a batch `x` of shape (N, 1, C, T).
    /// `rng` drives dropout masks and latent noise, in that order per block.
    pub fn loss_graph<R: Rng + ?Sized>(&self, x: &Tensor4, opts: &PassOptions, rng: &mut R) -> Result<LossGraph> {
        self.check_input(x)?;
        let mut graph = Graph::new();
        let input = graph.constant(x.clone());
        let (output, posteriors, priors, param_nodes, stats) = {
            let mut p = Pass::new(&self.spec, &self.params, &mut graph, opts.trainable, opts.norm, rng);
            let enc = p.encode(input)?;
            let mut z = Vec::new();
            for &(mu, lv) in &enc.posteriors {
                let eps = p.draw(p.g.value(mu).shape(), opts.sample_latents);
                z.push(p.g.reparam(mu, lv, eps)?);
            }
            let (out, priors) = p.decode(&z, opts.decode)?;
            (out, enc.posteriors, priors, p.ids, p.stats)
        };
        let recon = graph.soft_dtw_loss(output, x, self.spec.gamma, self.spec.ground_cost, opts.band)?;
        let mut kl = Vec::new();
        for (l, &(mu, lv)) in posteriors.iter().enumerate() {
            let node = match priors.get(l).copied().flatten() {
                Some((pm, pl)) => graph.kl_diag(mu, lv, pm, pl)?,
                None => graph.kl_standard(mu, lv)?,
            };
            kl.push(node);
        }
        let mut terms = vec![(recon, 1.0)];
        terms.extend(kl.iter().map(|&k| (k, opts.beta)));
        let total = graph.weighted_sum(&terms)?;
        Ok(LossGraph { graph, total, reconstruction: recon, kl, output, param_nodes, batch_stats: stats })
    }

    /// Loss of a batch without gradients, in evaluation mode with eps = 0.
    pub fn evaluate_loss(&self, x: &Tensor4, beta: f64, band: Option<usize>) -> Result<LossBreakdown> {
        let mut opts = PassOptions::evaluation(&self.spec);
        opts.beta = beta;
        opts.band = band;
        let lg = self.loss_graph(x, &opts, &mut NoRng)?;
        Ok(lg.breakdown(beta))
    }

    /// Folds batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[(usize, BatchStats)]) {
        let params = self.params.params_mut();
        for (rm_idx, s) in stats {
            debug_assert_eq!(params[*rm_idx].role, ParamRole::RunningMean);
            for (r, b) in params[*rm_idx].value.data_mut().iter_mut().zip(&s.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
            for (r, b) in params[rm_idx + 1].value.data_mut().iter_mut().zip(&s.var_unbiased) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
    }

    /// Encoder pass in evaluation mode: block outputs and posteriors with
    /// samples drawn per `eps`.
    pub fn encode(&self, x: &Tensor4, eps: EpsMode) -> Result<(BlockFeatures, LatentBundle)> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let input = g.constant(x.clone());
        let mut rng = eps_rng(eps);
        let mut p = Pass::new(&self.spec, &self.params, &mut g, false, NormMode::Eval, &mut rng);
        let enc = p.encode(input)?;
        let mut levels = Vec::new();
        for &(mu, lv) in &enc.posteriors {
            let mu_t = p.g.value(mu).clone();
            let lv_t = p.g.value(lv).clone();
            let eps_t = p.draw(mu_t.shape(), eps != EpsMode::Zero);
            let z = super::latent::sample(&mu_t, &lv_t, &eps_t)?;
            levels.push(LatentLevel { mu: mu_t, logvar: lv_t, eps: eps_t, z });
        }
        let features = BlockFeatures {
            temporal: p.g.value(enc.temporal).clone(),
            spatial: p.g.value(enc.spatial).clone(),
            separable: p.g.value(enc.separable).clone(),
        };
        Ok((features, LatentBundle { levels }))
    }

    /// Decoder pass in evaluation mode from the bundle's samples. Also
    /// returns the conditional priors (empty entries in standard mode).
    pub fn decode_with_priors(&self, bundle: &LatentBundle, mode: DecodeMode) -> Result<(Tensor4, Vec<Option<PriorParams>>)> {
        let shapes = self.spec.latent_shapes();
        if bundle.levels.len() != shapes.len() {
            return Err(Error::invalid(format!(
                "model has {} latent levels, bundle has {}",
                shapes.len(),
                bundle.levels.len()
            )));
        }
        let n = bundle.levels[0].z.shape()[0];
        for (lvl, s) in bundle.levels.iter().zip(&shapes) {
            let [bn, d, h, w] = lvl.z.shape();
            if bn != n || [d, h, w] != *s {
                return Err(Error::shape("decode", format!("latent {:?}, expected depth/height/width {s:?}", lvl.z.shape())));
            }
        }
        let mut g = Graph::new();
        let z: Vec<NodeId> = bundle.levels.iter().map(|l| g.constant(l.z.clone())).collect();
        let mut rng = NoRng;
        let mut p = Pass::new(&self.spec, &self.params, &mut g, false, NormMode::Eval, &mut rng);
        let (out, priors) = p.decode(&z, mode)?;
        let priors = priors
            .into_iter()
            .map(|pr| {
                pr.map(|(m, l)| PriorParams {
                    mu: p.g.value(m).clone(),
                    logvar: p.g.value(l).clone(),
                })
            })
            .collect();
        Ok((p.g.value(out).clone(), priors))
    }

    pub fn decode(&self, bundle: &LatentBundle, mode: DecodeMode) -> Result<Tensor4> {
        self.decode_with_priors(bundle, mode).map(|(t, _)| t)
    }

    /// Encode then decode a batch (N, 1, C, T) in evaluation mode.
    pub fn reconstruct(&self, x: &Tensor4, mode: DecodeMode, eps: EpsMode) -> Result<Tensor4> {
        let (_, bundle) = self.encode(x, eps)?;
        self.decode(&bundle, mode)
    }

    pub fn reconstruct_segment(&self, seg: &SegmentTensor, mode: DecodeMode, eps: EpsMode) -> Result<SegmentTensor> {
        let out = self.reconstruct(&seg.to_tensor(), mode, eps)?;
        Ok(SegmentTensor::from_tensor(&out, 0, seg.fs())?.with_meta_of(seg))
    }
}

fn eps_rng(eps: EpsMode) -> ChaCha8Rng {
    match eps {
        EpsMode::Zero => ChaCha8Rng::seed_from_u64(0),
        EpsMode::Sampled(s) => ChaCha8Rng::seed_from_u64(s),
    }
}

/// RNG for passes that must not draw (evaluation mode, eps = 0).
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("evaluation passes draw no random numbers")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("evaluation passes draw no random numbers")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("evaluation passes draw no random numbers")
    }
}

/// Stacks segments into an (N, 1, C, T) batch.
pub fn batch_tensor(segments: &[&SegmentTensor]) -> Result<Tensor4> {
    let items: Vec<Tensor4> = segments.iter().map(|s| s.to_tensor()).collect();
    Tensor4::stack(&items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Variant;

    fn toy(variant: Variant) -> ModelSpec {
        ModelSpec {
            channels: 2,
            samples: 16,
            temporal_kernel: 4,
            separable_kernel: 3,
            temporal_depth: 2,
            spatial_depth: 4,
            pool1: if variant == Variant::V3 { Some(2) } else { None },
            pool2: Some(4),
            ..ModelSpec::desk(variant)
        }
    }

    fn input(n: usize, spec: &ModelSpec, seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * spec.channels * spec.samples).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor4::from_vec([n, 1, spec.channels, spec.samples], data).unwrap()
    }

    #[test]
    fn shapes_round_trip() {
        for v in [Variant::V3, Variant::Hv] {
            let spec = toy(v);
            let m = Model::new(spec.clone(), 3).unwrap();
            let x = input(3, &spec, 1);
            let (f, b) = m.encode(&x, EpsMode::Zero).unwrap();
            assert_eq!(f.temporal.shape(), [3, 2, 2, 16]);
            assert_eq!(b.levels.len(), spec.levels());
            assert_eq!(m.reconstruct(&x, spec.full_decode_mode(), EpsMode::Zero).unwrap().shape(), x.shape());
        }
    }

    #[test]
    fn zero_network() {
        let spec = toy(Variant::Hv);
        let m = Model::from_parts(spec.clone(), ParamStore::zeros(&spec).unwrap()).unwrap();
        let x = input(2, &spec, 1);
        let (_, b) = m.encode(&x, EpsMode::Zero).unwrap();
        for l in &b.levels {
            assert!(l.mu.data().iter().chain(l.logvar.data()).all(|&v| v == 0.0));
        }
        let out = m.reconstruct(&x, DecodeMode::WithZ3, EpsMode::Zero).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn v3_rejects_hierarchical_modes() {
        let spec = toy(Variant::V3);
        let m = Model::new(spec.clone(), 0).unwrap();
        assert!(m.reconstruct(&input(1, &spec, 0), DecodeMode::WithZ2, EpsMode::Zero).is_err());
    }

    #[test]
    fn zero_z3_equals_with_z2() {
        let spec = toy(Variant::Hv);
        let m = Model::new(spec.clone(), 8).unwrap();
        let (_, mut b) = m.encode(&input(2, &spec, 4), EpsMode::Sampled(3)).unwrap();
        b.levels[2].z = Tensor4::zeros(b.levels[2].z.shape());
        let a = m.decode(&b, DecodeMode::WithZ2).unwrap();
        let c = m.decode(&b, DecodeMode::WithZ3).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let spec = toy(Variant::Hv);
        let m = Model::new(spec.clone(), 8).unwrap();
        let x = input(2, &spec, 4);
        let a = m.evaluate_loss(&x, 1.0, None).unwrap();
        let b = m.evaluate_loss(&x, 1.0, None).unwrap();
        assert_eq!(a, b);
        assert!(a.kl_per_level.iter().all(|&k| k >= 0.0));
    }
}
