use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SegmentTensor;
use crate::error::{Error, Result};

/// Indices into the original segment list; each list is ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SegmentTensor>,
    pub validation: Vec<SegmentTensor>,
    pub test: Vec<SegmentTensor>,
    pub split_seed: u64,
    pub indices: SplitIndices,
}

impl DatasetSplit {
    /// Every segment in the training set; used for overfitting experiments.
    pub fn train_only(segments: Vec<SegmentTensor>) -> Self {
        let n = segments.len();
        Self {
            train: segments,
            validation: Vec::new(),
            test: Vec::new(),
            split_seed: 0,
            indices: SplitIndices { train: (0..n).collect(), validation: Vec::new(), test: Vec::new() },
        }
    }
}

/// Stratified split by label.
///
/// For each label with `n` members: the training pool takes
/// `floor(n * train_frac)` of them, validation takes
/// `floor(pool * val_frac_of_train)` out of the pool, the rest of the pool is
/// training and everything outside the pool is test. Membership is drawn
/// from a seeded shuffle; sizes depend only on the label counts.
pub fn split_indices(labels: &[u32], train_frac: f64, val_frac_of_train: f64, seed: u64) -> Result<SplitIndices> {
    if !(train_frac > 0.0 && train_frac < 1.0) || !(0.0..1.0).contains(&val_frac_of_train) {
        return Err(Error::invalid(format!(
            "fractions must satisfy 0 < train < 1 and 0 <= val < 1, got {train_frac}, {val_frac_of_train}"
        )));
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (label, mut idx) in groups {
        let n = idx.len();
        let pool = (n as f64 * train_frac).floor() as usize;
        if pool == 0 || pool == n {
            return Err(Error::invalid(format!(
                "label {label} has {n} segments, too few to stratify with train fraction {train_frac}"
            )));
        }
        let val = (pool as f64 * val_frac_of_train).floor() as usize;
        idx.shuffle(&mut rng);
        out.validation.extend_from_slice(&idx[..val]);
        out.train.extend_from_slice(&idx[val..pool]);
        out.test.extend_from_slice(&idx[pool..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn split(segments: &[SegmentTensor], train_frac: f64, val_frac_of_train: f64, seed: u64) -> Result<DatasetSplit> {
    let labels: Vec<u32> = segments.iter().map(|s| s.label).collect();
    let indices = split_indices(&labels, train_frac, val_frac_of_train, seed)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| segments[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(&indices.train),
        validation: pick(&indices.validation),
        test: pick(&indices.test),
        split_seed: seed,
        indices,
    })
}
