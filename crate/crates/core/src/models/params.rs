//! Layer catalogue, parameter ledger and the parameter store.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{ModelSpec, PriorMode};
use crate::error::{Error, Result};
use crate::gradcore::{PadMode, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Encoder,
    Decoder,
    /// Prior predictors of the conditional hierarchical mode.
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LayerKind {
    Conv {
        cin: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        groups: usize,
        bias: bool,
        transpose: bool,
        pad: PadMode,
    },
    Norm {
        depth: usize,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub name: &'static str,
    pub section: Section,
    pub kind: LayerKind,
}

impl LayerKind {
    fn conv(cin: usize, cout: usize, (kh, kw): (usize, usize), groups: usize, pad: PadMode) -> Self {
        LayerKind::Conv { cin, cout, kh, kw, groups, bias: false, transpose: false, pad }
    }

    fn tconv(cin: usize, cout: usize, (kh, kw): (usize, usize), groups: usize, pad: PadMode) -> Self {
        LayerKind::Conv { cin, cout, kh, kw, groups, bias: false, transpose: true, pad }
    }

    /// (1,1) convolution with bias that doubles depth: mean and log-variance.
    fn sampler(depth: usize) -> Self {
        LayerKind::Conv {
            cin: depth,
            cout: 2 * depth,
            kh: 1,
            kw: 1,
            groups: 1,
            bias: true,
            transpose: false,
            pad: PadMode::Valid,
        }
    }
}

/// Every layer with parameters, in ledger order.
pub(crate) fn layers(spec: &ModelSpec) -> Vec<Layer> {
    use PadMode::{SameTime, Valid};
    let (f1, f2, c) = (spec.temporal_depth, spec.spatial_depth, spec.channels);
    let (kt, ks) = (spec.temporal_kernel, spec.separable_kernel);
    let enc = Section::Encoder;
    let dec = Section::Decoder;
    let l = |name, section, kind| Layer { name, section, kind };
    let mut v = vec![
        l("enc.te.conv", enc, LayerKind::conv(1, f1, (1, kt), 1, SameTime)),
        l("enc.te.bn", enc, LayerKind::Norm { depth: f1 }),
        l("enc.sp.conv", enc, LayerKind::conv(f1, f2, (c, 1), f1, Valid)),
        l("enc.sp.bn", enc, LayerKind::Norm { depth: f2 }),
        l("enc.sc.depthwise", enc, LayerKind::conv(f2, f2, (1, ks), f2, SameTime)),
        l("enc.sc.pointwise", enc, LayerKind::conv(f2, f2, (1, 1), 1, Valid)),
        l("enc.sc.bn", enc, LayerKind::Norm { depth: f2 }),
        l("enc.sample.z1", enc, LayerKind::sampler(f2)),
    ];
    if spec.is_hierarchical() {
        v.push(l("enc.sample.z2", enc, LayerKind::sampler(f2)));
        v.push(l("enc.sample.z3", enc, LayerKind::sampler(f1)));
    }
    v.extend([
        l("dec.sc.bn", dec, LayerKind::Norm { depth: f2 }),
        l("dec.sc.pointwise", dec, LayerKind::tconv(f2, f2, (1, 1), 1, Valid)),
        l("dec.sc.depthwise", dec, LayerKind::tconv(f2, f2, (1, ks), f2, SameTime)),
        l("dec.sp.bn", dec, LayerKind::Norm { depth: f2 }),
        l("dec.sp.conv", dec, LayerKind::tconv(f2, f1, (c, 1), f1, Valid)),
        l("dec.te.bn", dec, LayerKind::Norm { depth: f1 }),
        l("dec.te.conv", dec, LayerKind::tconv(f1, 1, (1, kt), 1, SameTime)),
    ]);
    if spec.is_hierarchical() && spec.prior_mode == PriorMode::Conditional {
        v.push(l("prior.z2", Section::Prior, LayerKind::sampler(f2)));
        v.push(l("prior.z3", Section::Prior, LayerKind::sampler(f1)));
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    fn suffix(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::NormScale => "scale",
            ParamRole::NormShift => "shift",
            ParamRole::RunningMean => "running_mean",
            ParamRole::RunningVar => "running_var",
        }
    }
}

/// Shapes of the tensors a layer owns, trainable first.
fn layer_tensors(kind: &LayerKind) -> Vec<(ParamRole, [usize; 4])> {
    match *kind {
        LayerKind::Conv { cin, cout, kh, kw, groups, bias, transpose, .. } => {
            let w = if transpose {
                [cin, cout / groups, kh, kw]
            } else {
                [cout, cin / groups, kh, kw]
            };
            let mut v = vec![(ParamRole::Weight, w)];
            if bias {
                v.push((ParamRole::Bias, [1, cout, 1, 1]));
            }
            v
        }
        LayerKind::Norm { depth } => vec![
            (ParamRole::NormScale, [1, depth, 1, 1]),
            (ParamRole::NormShift, [1, depth, 1, 1]),
            (ParamRole::RunningMean, [1, depth, 1, 1]),
            (ParamRole::RunningVar, [1, depth, 1, 1]),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub name: String,
    pub section: Section,
    pub shape: [usize; 4],
    pub count: usize,
}

/// Per-tensor count of trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLedger {
    pub entries: Vec<LedgerEntry>,
    pub encoder: usize,
    pub decoder: usize,
    pub prior: usize,
    pub total: usize,
}

impl ParamLedger {
    /// Sum of the entries whose name starts with `prefix`.
    pub fn subtotal(&self, prefix: &str) -> usize {
        self.entries.iter().filter(|e| e.name.starts_with(prefix)).map(|e| e.count).sum()
    }

    /// Tab-separated table, one row per tensor, closing with section totals.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("tensor\tsection\tshape\tcount\n");
        for e in &self.entries {
            let sec = match e.section {
                Section::Encoder => "encoder",
                Section::Decoder => "decoder",
                Section::Prior => "prior",
            };
            let [a, b, c, d] = e.shape;
            s.push_str(&format!("{}\t{sec}\t{a}x{b}x{c}x{d}\t{}\n", e.name, e.count));
        }
        s.push_str(&format!("encoder_total\t\t\t{}\n", self.encoder));
        s.push_str(&format!("decoder_total\t\t\t{}\n", self.decoder));
        s.push_str(&format!("prior_total\t\t\t{}\n", self.prior));
        s.push_str(&format!("total\t\t\t{}\n", self.total));
        s
    }
}

/// Trainable-parameter ledger of a spec. Independent of seeds and data.
pub fn param_count(spec: &ModelSpec) -> Result<ParamLedger> {
    spec.validate_structure()?;
    let mut entries = Vec::new();
    for layer in layers(spec) {
        for (role, shape) in layer_tensors(&layer.kind) {
            if role.trainable() {
                entries.push(LedgerEntry {
                    name: format!("{}.{}", layer.name, role.suffix()),
                    section: layer.section,
                    shape,
                    count: shape.iter().product(),
                });
            }
        }
    }
    let sum = |sec| entries.iter().filter(|e: &&LedgerEntry| e.section == sec).map(|e| e.count).sum();
    let (encoder, decoder, prior) = (sum(Section::Encoder), sum(Section::Decoder), sum(Section::Prior));
    Ok(ParamLedger { entries, encoder, decoder, prior, total: encoder + decoder + prior })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor4,
}

/// All model tensors (trainable and running statistics) in ledger order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    /// Uniform(±1/sqrt(fan_in)) weights and biases; unit scale, zero shift,
    /// zero running mean and unit running variance for batch norms.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate_structure()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for layer in layers(spec) {
            let fan_in = match layer.kind {
                LayerKind::Conv { cin, cout, kh, kw, groups, transpose, .. } => {
                    let per_group = if transpose { cout / groups } else { cin / groups };
                    (per_group * kh * kw) as f64
                }
                LayerKind::Norm { .. } => 1.0,
            };
            let bound = 1.0 / fan_in.sqrt();
            for (role, shape) in layer_tensors(&layer.kind) {
                let mut t = Tensor4::zeros(shape);
                match role {
                    ParamRole::Weight | ParamRole::Bias => {
                        for v in t.data_mut() {
                            *v = rng.random_range(-bound..bound);
                        }
                    }
                    ParamRole::NormScale | ParamRole::RunningVar => t = Tensor4::filled(shape, 1.0),
                    ParamRole::NormShift | ParamRole::RunningMean => {}
                }
                params.push(Param {
                    name: format!("{}.{}", layer.name, role.suffix()),
                    role,
                    value: t,
                });
            }
        }
        Ok(Self::from_params(params))
    }

    /// Same layout as `init`, every tensor zero.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let mut s = Self::init(spec, 0)?;
        for p in &mut s.params {
            p.value = Tensor4::zeros(p.value.shape());
        }
        Ok(s)
    }

    pub(crate) fn from_params(params: Vec<Param>) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Self { params, index }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn position(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("no parameter named {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor4> {
        Ok(&self.params[self.position(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor4> {
        let i = self.position(name)?;
        Ok(&mut self.params[i].value)
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.role.trainable()).map(|p| p.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Variant;

    #[test]
    fn store_matches_ledger() {
        for v in [Variant::V3, Variant::Hv] {
            let spec = ModelSpec::defaults(v);
            let store = ParamStore::init(&spec, 1).unwrap();
            assert_eq!(store.trainable_count(), param_count(&spec).unwrap().total);
        }
    }

    #[test]
    fn toy_ledger_by_hand() {
        // C=2, T=16, depths 1 -> 2 -> 4, kernels 4 and 3.
        // encoder: te 2*4 + bn 4, sp 4*2 + bn 8, sc 4*3 + 4*4 + bn 8, z1 8*4 + 8 = 104
        // decoder: the mirror without the sampler = 64
        // hv: z2 sampler 40, z3 sampler 4*2 + 4 = 12; conditional priors repeat both
        let toy = |v: Variant| {
            let mut s = match v {
                Variant::V3 => ModelSpec::v3(2, 16),
                Variant::Hv => ModelSpec::hv(2, 16),
            };
            s.temporal_depth = 2;
            s.spatial_depth = 4;
            s.temporal_kernel = 4;
            s.separable_kernel = 3;
            s.pool1 = (v == Variant::V3).then_some(2);
            s.pool2 = Some(2);
            s
        };
        let v3 = param_count(&toy(Variant::V3)).unwrap();
        assert_eq!((v3.encoder, v3.decoder, v3.prior, v3.total), (104, 64, 0, 168));
        let hv = param_count(&toy(Variant::Hv)).unwrap();
        assert_eq!((hv.encoder, hv.decoder, hv.total), (156, 64, 220));
        let mut cond = toy(Variant::Hv);
        cond.prior_mode = PriorMode::Conditional;
        assert_eq!(param_count(&cond).unwrap().total, 272);
        for seed in 0..3 {
            assert_eq!(ParamStore::init(&toy(Variant::Hv), seed).unwrap().trainable_count(), 220);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = ModelSpec::desk(Variant::Hv);
        let a = ParamStore::init(&spec, 4).unwrap();
        assert_eq!(a, ParamStore::init(&spec, 4).unwrap());
        assert_ne!(a, ParamStore::init(&spec, 5).unwrap());
        // temporal conv has fan-in 64
        assert!(a.get("enc.te.conv.weight").unwrap().data().iter().all(|v| v.abs() < 0.125));
    }
}
