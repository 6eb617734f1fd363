//! The single-latent and hierarchical variational autoencoders.
//!
//! Encoder: temporal convolution, spatial (electrode-collapsing) depthwise
//! convolution, separable convolution, each followed by batch norm; the
//! latter two also by ELU, pooling and dropout. A (1,1) sampling convolution
//! doubles the depth of a block output into means and log-variances. The
//! decoder mirrors the encoder with transposed convolutions; in the
//! hierarchical model the samples of the shallower latent spaces are added
//! to the decoder feature maps of matching shape.

mod checkpoint;
mod latent;
mod net;
mod params;
mod spec;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use latent::{kl_diag, kl_hierarchical, kl_standard, sample, LatentBundle, LatentLevel, PriorParams};
pub use net::{batch_tensor, BlockFeatures, EpsMode, LossBreakdown, LossGraph, Model, PassOptions};
pub use params::{param_count, LedgerEntry, Param, ParamLedger, ParamRole, ParamStore, Section};
pub use spec::{DecodeMode, ModelSpec, PriorMode, Variant};
