use rand::Rng;

use super::conv::{self, PadMode, Padding};
use super::norm::{self, NormCache};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::softdtw::{self, GroundCost};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether batch norm and dropout behave as during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Batch statistics observed by a training-mode batch norm, used by the
/// caller to update running averages.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        groups: usize,
        pad: Padding,
        transpose: bool,
    },
    BatchNorm {
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
        cache: NormCache,
    },
    Elu(NodeId),
    AvgPool {
        input: NodeId,
        kh: usize,
        kw: usize,
    },
    Upsample {
        input: NodeId,
        fh: usize,
        fw: usize,
    },
    Dropout {
        input: NodeId,
        mask: Vec<f64>,
    },
    Add(NodeId, NodeId),
    SliceDepth {
        input: NodeId,
        start: usize,
    },
    Reparam {
        mu: NodeId,
        logvar: NodeId,
        eps: Tensor4,
    },
    KlStandard {
        mu: NodeId,
        logvar: NodeId,
    },
    KlDiag {
        mu_q: NodeId,
        lv_q: NodeId,
        mu_p: NodeId,
        lv_p: NodeId,
    },
    SoftDtw {
        input: NodeId,
        grad: Tensor4,
    },
    WeightedSum(Vec<(NodeId, f64)>),
    SumAll(NodeId),
    DotConst {
        input: NodeId,
        weights: Tensor4,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor4,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. Single-threaded; build one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient of one scalar output with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor4>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor4> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor4> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor4, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Differentiable input (parameter or probe).
    pub fn leaf(&mut self, value: Tensor4) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor4) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor4 {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        groups: usize,
        pad: PadMode,
    ) -> Result<NodeId> {
        let kw = self.value(weight).shape()[3];
        let padding = Padding::for_kernel(pad, kw);
        let out = conv::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            groups,
            padding,
        )?;
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                groups,
                pad: padding,
                transpose: false,
            },
            rg,
        ))
    }

    pub fn transpose_conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        groups: usize,
        pad: PadMode,
    ) -> Result<NodeId> {
        let kw = self.value(weight).shape()[3];
        let padding = Padding::for_kernel(pad, kw);
        let out = conv::conv_transpose2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            groups,
            padding,
        )?;
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                groups,
                pad: padding,
                transpose: true,
            },
            rg,
        ))
    }

    /// Batch norm with per-depth affine `scale`/`shift` nodes of length depth.
    ///
    /// `running` is (mean, variance) and is required in eval mode.
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
        running: Option<(&[f64], &[f64])>,
        mode: NormMode,
    ) -> Result<(NodeId, Option<BatchStats>)> {
        let depth = self.value(input).shape()[1];
        if self.value(scale).len() != depth || self.value(shift).len() != depth {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "input depth {depth}, scale {} shift {}",
                    self.value(scale).len(),
                    self.value(shift).len()
                ),
            ));
        }
        let stats = match mode {
            NormMode::Train => None,
            NormMode::Eval => Some(running.ok_or_else(|| {
                Error::invalid("batch_norm in eval mode needs running statistics")
            })?),
        };
        if let Some((m, v)) = stats {
            if m.len() != depth || v.len() != depth {
                return Err(Error::shape("batch_norm", "running statistics length"));
            }
        }
        let (out, cache, batch) = norm::batch_norm_forward(
            self.value(input),
            self.value(scale).data(),
            self.value(shift).data(),
            stats,
        );
        let rg = self.rg(input) || self.rg(scale) || self.rg(shift);
        let id = self.push(
            out,
            Op::BatchNorm {
                input,
                scale,
                shift,
                cache,
            },
            rg,
        );
        Ok((
            id,
            batch.map(|(mean, var_unbiased)| BatchStats { mean, var_unbiased }),
        ))
    }

    pub fn elu(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(super::elu);
        let rg = self.rg(input);
        self.push(out, Op::Elu(input), rg)
    }

    /// Non-overlapping average pooling with window (kh, kw).
    pub fn avg_pool(&mut self, input: NodeId, kh: usize, kw: usize) -> Result<NodeId> {
        let x = self.value(input);
        let [n, d, h, w] = x.shape();
        if kh == 0 || kw == 0 || h % kh != 0 || w % kw != 0 {
            return Err(Error::shape(
                "avg_pool",
                format!("window ({kh},{kw}) does not divide ({h},{w})"),
            ));
        }
        let (ho, wo) = (h / kh, w / kw);
        let mut out = Tensor4::zeros([n, d, ho, wo]);
        let norm = 1.0 / (kh * kw) as f64;
        for b in 0..n {
            for c in 0..d {
                let src = x.plane(b, c);
                let dst = out.plane_mut(b, c);
                for i in 0..h {
                    for j in 0..w {
                        dst[(i / kh) * wo + j / kw] += src[i * w + j] * norm;
                    }
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(out, Op::AvgPool { input, kh, kw }, rg))
    }

    /// Nearest-neighbour upsampling by integer factors.
    pub fn upsample(&mut self, input: NodeId, fh: usize, fw: usize) -> Result<NodeId> {
        if fh == 0 || fw == 0 {
            return Err(Error::invalid("upsample factor must be positive"));
        }
        let x = self.value(input);
        let [n, d, h, w] = x.shape();
        let (ho, wo) = (h * fh, w * fw);
        let mut out = Tensor4::zeros([n, d, ho, wo]);
        for b in 0..n {
            for c in 0..d {
                let src = x.plane(b, c);
                let dst = out.plane_mut(b, c);
                for i in 0..ho {
                    for j in 0..wo {
                        dst[i * wo + j] = src[(i / fh) * w + j / fw];
                    }
                }
            }
        }
        let rg = self.rg(input);
        Ok(self.push(out, Op::Upsample { input, fh, fw }, rg))
    }

    /// Inverted dropout. Eval mode (or p = 0) is the identity and draws nothing.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: NodeId,
        p: f64,
        mode: NormMode,
        rng: &mut R,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout p must be in [0,1), got {p}")));
        }
        if mode == NormMode::Eval || p == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - p);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = Tensor4::from_vec(
            x.shape(),
            x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        )?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::Dropout { input, mask }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn slice_depth(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let d = self.value(input).shape()[1];
        if start + len > d || len == 0 {
            return Err(Error::shape(
                "slice_depth",
                format!("[{start}, {}) of depth {d}", start + len),
            ));
        }
        let out = self.value(input).slice_depth(start, len);
        let rg = self.rg(input);
        Ok(self.push(out, Op::SliceDepth { input, start }, rg))
    }

    /// `mu + exp(0.5 * logvar) * eps` with recorded noise `eps`.
    pub fn reparam(&mut self, mu: NodeId, logvar: NodeId, eps: Tensor4) -> Result<NodeId> {
        let (m, lv) = (self.value(mu), self.value(logvar));
        if m.shape() != lv.shape() || m.shape() != eps.shape() {
            return Err(Error::shape(
                "reparam",
                format!("mu {:?} logvar {:?} eps {:?}", m.shape(), lv.shape(), eps.shape()),
            ));
        }
        let data = m
            .data()
            .iter()
            .zip(lv.data())
            .zip(eps.data())
            .map(|((m, l), e)| m + (0.5 * l).exp() * e)
            .collect();
        let out = Tensor4::from_vec(m.shape(), data)?;
        let rg = self.rg(mu) || self.rg(logvar);
        Ok(self.push(out, Op::Reparam { mu, logvar, eps }, rg))
    }

    /// KL(q || N(0, I)) summed over latent elements, averaged over the batch.
    pub fn kl_standard(&mut self, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
        let (m, lv) = (self.value(mu), self.value(logvar));
        if m.shape() != lv.shape() {
            return Err(Error::shape("kl_standard", "mu/logvar shapes differ"));
        }
        let n = m.shape()[0].max(1) as f64;
        let total: f64 = m
            .data()
            .iter()
            .zip(lv.data())
            .map(|(m, l)| 0.5 * (l.exp() + m * m - 1.0 - l))
            .sum();
        let rg = self.rg(mu) || self.rg(logvar);
        Ok(self.push(Tensor4::scalar(total / n), Op::KlStandard { mu, logvar }, rg))
    }

    /// KL between two diagonal normals given by (mean, log-variance) pairs,
    /// summed over elements and averaged over the batch.
    pub fn kl_diag(
        &mut self,
        mu_q: NodeId,
        lv_q: NodeId,
        mu_p: NodeId,
        lv_p: NodeId,
    ) -> Result<NodeId> {
        let shape = self.value(mu_q).shape();
        for id in [lv_q, mu_p, lv_p] {
            if self.value(id).shape() != shape {
                return Err(Error::shape("kl_diag", "posterior/prior shapes differ"));
            }
        }
        let n = shape[0].max(1) as f64;
        let (mq, lq, mp, lp) = (
            self.value(mu_q).data(),
            self.value(lv_q).data(),
            self.value(mu_p).data(),
            self.value(lv_p).data(),
        );
        let mut total = 0.0;
        for i in 0..mq.len() {
            let dm = mq[i] - mp[i];
            total += 0.5 * (lp[i] - lq[i] + (lq[i].exp() + dm * dm) / lp[i].exp() - 1.0);
        }
        let rg = [mu_q, lv_q, mu_p, lv_p].iter().any(|&id| self.rg(id));
        Ok(self.push(
            Tensor4::scalar(total / n),
            Op::KlDiag {
                mu_q,
                lv_q,
                mu_p,
                lv_p,
            },
            rg,
        ))
    }

    /// Sum over channels of soft-DTW between each target row and the matching
    /// row of `input`, averaged over the batch. Both are (N, 1, C, T).
    pub fn soft_dtw_loss(
        &mut self,
        input: NodeId,
        target: &Tensor4,
        gamma: f64,
        cost: GroundCost,
        band: Option<usize>,
    ) -> Result<NodeId> {
        let x = self.value(input);
        if x.shape() != target.shape() || x.shape()[1] != 1 {
            return Err(Error::shape(
                "soft_dtw_loss",
                format!("input {:?} target {:?}", x.shape(), target.shape()),
            ));
        }
        let [n, _, c, t] = x.shape();
        let rows: Vec<(usize, usize)> = (0..n).flat_map(|b| (0..c).map(move |ch| (b, ch))).collect();
        let scale = 1.0 / n as f64;
        if !self.rg(input) {
            // nothing upstream needs a gradient: value only
            let opts = softdtw::SoftDtwOptions { gamma, cost, band };
            let values = softdtw::parallel_rows(&rows, |&(b, ch)| {
                let a = &target.plane(b, 0)[ch * t..(ch + 1) * t];
                let r = &x.plane(b, 0)[ch * t..(ch + 1) * t];
                softdtw::soft_dtw_with(a, r, &opts)
            })?;
            let total: f64 = values.iter().sum();
            return Ok(self.push(
                Tensor4::scalar(total * scale),
                Op::SoftDtw { input, grad: Tensor4::zeros(x.shape()) },
                false,
            ));
        }
        let results = softdtw::parallel_rows(&rows, |&(b, ch)| {
            let a = &target.plane(b, 0)[ch * t..(ch + 1) * t];
            let r = &x.plane(b, 0)[ch * t..(ch + 1) * t];
            softdtw::soft_dtw_value_and_grad_b(a, r, gamma, cost, band)
        })?;
        let mut grad = Tensor4::zeros(x.shape());
        let mut total = 0.0;
        for (&(b, ch), (v, g)) in rows.iter().zip(results) {
            total += v;
            let dst = &mut grad.plane_mut(b, 0)[ch * t..(ch + 1) * t];
            for (d, s) in dst.iter_mut().zip(g) {
                *d = s * scale;
            }
        }
        let rg = self.rg(input);
        Ok(self.push(
            Tensor4::scalar(total * scale),
            Op::SoftDtw { input, grad },
            rg,
        ))
    }

    /// Σ weight · scalar over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut total = 0.0;
        for &(id, w) in terms {
            let v = self.value(id);
            if v.len() != 1 {
                return Err(Error::shape("weighted_sum", "terms must be scalars"));
            }
            total += w * v.data()[0];
        }
        let rg = terms.iter().any(|&(id, _)| self.rg(id));
        Ok(self.push(Tensor4::scalar(total), Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Sum of all entries of a node, as a scalar.
    pub fn sum_all(&mut self, input: NodeId) -> NodeId {
        let total = self.value(input).sum();
        let rg = self.rg(input);
        self.push(Tensor4::scalar(total), Op::SumAll(input), rg)
    }

    /// Σ weights · input, with constant weights of the input's shape.
    pub fn dot_const(&mut self, input: NodeId, weights: Tensor4) -> Result<NodeId> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(Error::shape("dot_const", format!("{:?} vs {:?}", x.shape(), weights.shape())));
        }
        let total = x.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let rg = self.rg(input);
        Ok(self.push(Tensor4::scalar(total), Op::DotConst { input, weights }, rg))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::shape("backward", "output must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor4>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor4::scalar(1.0));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor4>], id: NodeId, g: Tensor4) {
        if !self.rg(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor4, grads: &mut [Option<Tensor4>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                input,
                weight,
                bias,
                groups,
                pad,
                transpose,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let want = self.rg(*input);
                let (gin, gw, gb) = if *transpose {
                    conv::conv_transpose2d_backward(x, w, *groups, *pad, g, want)?
                } else {
                    conv::conv2d_backward(x, w, *groups, *pad, g, want)?
                };
                if let Some(gin) = gin {
                    self.accumulate(grads, *input, gin);
                }
                self.accumulate(grads, *weight, gw);
                if let Some(b) = bias {
                    let shape = self.value(*b).shape();
                    self.accumulate(grads, *b, gb.reshape(shape)?);
                }
            }
            Op::BatchNorm {
                input,
                scale,
                shift,
                cache,
            } => {
                let sc = self.value(*scale);
                let (gin, gs, gsh) = norm::batch_norm_backward(cache, sc.data(), g);
                self.accumulate(grads, *input, gin);
                self.accumulate(grads, *scale, Tensor4::from_vec(sc.shape(), gs)?);
                self.accumulate(grads, *shift, Tensor4::from_vec(sc.shape(), gsh)?);
            }
            Op::Elu(input) => {
                let x = self.value(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { g * x.exp() })
                    .collect();
                self.accumulate(grads, *input, Tensor4::from_vec(x.shape(), data)?);
            }
            Op::AvgPool { input, kh, kw } => {
                let shape = self.value(*input).shape();
                let [n, d, h, w] = shape;
                let wo = w / kw;
                let norm = 1.0 / (kh * kw) as f64;
                let mut gin = Tensor4::zeros(shape);
                for b in 0..n {
                    for c in 0..d {
                        let src = g.plane(b, c).to_vec();
                        let dst = gin.plane_mut(b, c);
                        for i in 0..h {
                            for j in 0..w {
                                dst[i * w + j] = src[(i / kh) * wo + j / kw] * norm;
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, gin);
            }
            Op::Upsample { input, fh, fw } => {
                let shape = self.value(*input).shape();
                let [n, d, h, w] = shape;
                let wo = w * fw;
                let mut gin = Tensor4::zeros(shape);
                for b in 0..n {
                    for c in 0..d {
                        let src = g.plane(b, c).to_vec();
                        let dst = gin.plane_mut(b, c);
                        for i in 0..h * fh {
                            for j in 0..wo {
                                dst[(i / fh) * w + j / fw] += src[i * wo + j];
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, gin);
            }
            Op::Dropout { input, mask } => {
                let data = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *input, Tensor4::from_vec(g.shape(), data)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::SliceDepth { input, start } => {
                let shape = self.value(*input).shape();
                let mut gin = Tensor4::zeros(shape);
                let len = g.shape()[1];
                for b in 0..shape[0] {
                    for k in 0..len {
                        gin.plane_mut(b, start + k).copy_from_slice(g.plane(b, k));
                    }
                }
                self.accumulate(grads, *input, gin);
            }
            Op::Reparam { mu, logvar, eps } => {
                self.accumulate(grads, *mu, g.clone());
                let lv = self.value(*logvar);
                let data = lv
                    .data()
                    .iter()
                    .zip(eps.data())
                    .zip(g.data())
                    .map(|((l, e), g)| g * e * 0.5 * (0.5 * l).exp())
                    .collect();
                self.accumulate(grads, *logvar, Tensor4::from_vec(lv.shape(), data)?);
            }
            Op::KlStandard { mu, logvar } => {
                let s = g.data()[0];
                let m = self.value(*mu);
                let n = m.shape()[0].max(1) as f64;
                let k = s / n;
                self.accumulate(grads, *mu, m.map(|v| v * k));
                let lv = self.value(*logvar);
                self.accumulate(grads, *logvar, lv.map(|l| 0.5 * (l.exp() - 1.0) * k));
            }
            Op::KlDiag {
                mu_q,
                lv_q,
                mu_p,
                lv_p,
            } => {
                let s = g.data()[0];
                let shape = self.value(*mu_q).shape();
                let k = s / shape[0].max(1) as f64;
                let (mq, lq, mp, lp) = (
                    self.value(*mu_q).data(),
                    self.value(*lv_q).data(),
                    self.value(*mu_p).data(),
                    self.value(*lv_p).data(),
                );
                let len = mq.len();
                let (mut gmq, mut glq, mut gmp, mut glp) =
                    (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
                for i in 0..len {
                    let ip = (-lp[i]).exp();
                    let dm = mq[i] - mp[i];
                    gmq[i] = k * dm * ip;
                    gmp[i] = -k * dm * ip;
                    glq[i] = k * 0.5 * ((lq[i] - lp[i]).exp() - 1.0);
                    glp[i] = k * 0.5 * (1.0 - (lq[i].exp() + dm * dm) * ip);
                }
                self.accumulate(grads, *mu_q, Tensor4::from_vec(shape, gmq)?);
                self.accumulate(grads, *lv_q, Tensor4::from_vec(shape, glq)?);
                self.accumulate(grads, *mu_p, Tensor4::from_vec(shape, gmp)?);
                self.accumulate(grads, *lv_p, Tensor4::from_vec(shape, glp)?);
            }
            Op::SoftDtw { input, grad } => {
                let mut gin = grad.clone();
                gin.scale_assign(g.data()[0]);
                self.accumulate(grads, *input, gin);
            }
            Op::WeightedSum(terms) => {
                let s = g.data()[0];
                for &(id, w) in terms {
                    self.accumulate(grads, id, Tensor4::scalar(s * w));
                }
            }
            Op::SumAll(input) => {
                let shape = self.value(*input).shape();
                self.accumulate(grads, *input, Tensor4::filled(shape, g.data()[0]));
            }
            Op::DotConst { input, weights } => {
                let mut gin = weights.clone();
                gin.scale_assign(g.data()[0]);
                self.accumulate(grads, *input, gin);
            }
        }
        Ok(())
    }
}
