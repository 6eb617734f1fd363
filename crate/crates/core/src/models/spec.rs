use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::softdtw::GroundCost;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Single latent space after the encoder.
    V3,
    /// Three latent spaces, one per encoder block, summed into the decoder.
    Hv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// N(0, I) for every level.
    #[default]
    Standard,
    /// Levels below the top get a diagonal normal prior predicted from the
    /// decoder feature map at the injection point.
    Conditional,
}

/// Which latent injections the decoder uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    FromZ1,
    WithZ2,
    WithZ3,
}

impl DecodeMode {
    pub fn uses_z2(self) -> bool {
        matches!(self, DecodeMode::WithZ2 | DecodeMode::WithZ3)
    }

    pub fn uses_z3(self) -> bool {
        self == DecodeMode::WithZ3
    }
}

/// Architecture description for either model variant.
///
/// Tensors are laid out (batch, depth, electrodes, time). The spatial
/// kernel always spans every electrode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub channels: usize,
    pub samples: usize,
    pub temporal_kernel: usize,
    pub separable_kernel: usize,
    /// Depth after the temporal block.
    pub temporal_depth: usize,
    /// Depth after the spatial block; a multiple of `temporal_depth`.
    pub spatial_depth: usize,
    /// Time pooling after the spatial block.
    pub pool1: Option<usize>,
    /// Time pooling after the separable block.
    pub pool2: Option<usize>,
    pub dropout: f64,
    pub prior_mode: PriorMode,
    /// Soft-DTW smoothing for the training loss.
    pub gamma: f64,
    pub ground_cost: GroundCost,
}

impl ModelSpec {
    fn base(variant: Variant, channels: usize, samples: usize) -> Self {
        let (pool1, pool2) = match variant {
            Variant::V3 => (Some(4), Some(8)),
            Variant::Hv => (None, Some(10)),
        };
        Self {
            variant,
            channels,
            samples,
            temporal_kernel: 128,
            separable_kernel: 32,
            temporal_depth: 8,
            spatial_depth: 16,
            pool1,
            pool2,
            dropout: 0.5,
            prior_mode: PriorMode::Standard,
            gamma: 1.0,
            ground_cost: GroundCost::Squared,
        }
    }

    /// Full-size single-latent model.
    pub fn v3(channels: usize, samples: usize) -> Self {
        Self::base(Variant::V3, channels, samples)
    }

    /// Full-size hierarchical model.
    pub fn hv(channels: usize, samples: usize) -> Self {
        Self::base(Variant::Hv, channels, samples)
    }

    pub fn defaults(variant: Variant) -> Self {
        Self::base(variant, 22, 1000)
    }

    /// Laptop-scale preset: 8 electrodes x 256 samples (2 s at 128 Hz),
    /// kernels halved with the sampling rate. The hierarchical model pools
    /// by 8 because 256 is not divisible by 10.
    pub fn desk(variant: Variant) -> Self {
        let mut s = Self::base(variant, 8, 256);
        s.temporal_kernel = 64;
        s.separable_kernel = 16;
        if variant == Variant::Hv {
            s.pool2 = Some(8);
        }
        s
    }

    pub fn is_hierarchical(&self) -> bool {
        self.variant == Variant::Hv
    }

    pub fn levels(&self) -> usize {
        if self.is_hierarchical() {
            3
        } else {
            1
        }
    }

    /// Time length after the spatial block's pooling.
    pub fn time_after_pool1(&self) -> usize {
        self.samples / self.pool1.unwrap_or(1)
    }

    /// Time length of the deepest latent space.
    pub fn latent_time(&self) -> usize {
        self.time_after_pool1() / self.pool2.unwrap_or(1)
    }

    /// Shape (depth, height, width) of each latent level, deepest first.
    pub fn latent_shapes(&self) -> Vec<[usize; 3]> {
        let mut v = vec![[self.spatial_depth, 1, self.latent_time()]];
        if self.is_hierarchical() {
            v.push([self.spatial_depth, 1, self.time_after_pool1()]);
            v.push([self.temporal_depth, self.channels, self.samples]);
        }
        v
    }

    /// Structural checks independent of the time length.
    pub fn validate_structure(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("samples", self.samples),
            ("temporal_kernel", self.temporal_kernel),
            ("separable_kernel", self.separable_kernel),
            ("temporal_depth", self.temporal_depth),
            ("spatial_depth", self.spatial_depth),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.spatial_depth % self.temporal_depth != 0 {
            return Err(Error::invalid(format!(
                "spatial depth {} must be a multiple of temporal depth {}",
                self.spatial_depth, self.temporal_depth
            )));
        }
        if matches!(self.pool1, Some(0)) || matches!(self.pool2, Some(0)) {
            return Err(Error::invalid("pool factors must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.variant == Variant::V3 && self.prior_mode == PriorMode::Conditional {
            return Err(Error::invalid("conditional priors need the hierarchical variant"));
        }
        Ok(())
    }

    /// Full validation, including that every pooling divides the time axis.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        let p1 = self.pool1.unwrap_or(1);
        let p2 = self.pool2.unwrap_or(1);
        if self.samples % p1 != 0 || (self.samples / p1) % p2 != 0 {
            return Err(Error::invalid(format!(
                "time length {} is not divisible by the pooling factors {p1} and {p2}",
                self.samples
            )));
        }
        Ok(())
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::defaults(Variant::Hv)
    }
}
