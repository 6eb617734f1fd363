//! Segment storage, splitting and the synthetic surrogate generator.

mod artifacts;
mod container;
mod segment;
mod split;
mod synth;

pub use artifacts::{inject_line_noise, inject_muscle, inject_saturation};
pub use container::{
    decode_segments, encode_segments, read_segments, sidecar_path, write_segments, write_sidecar, SEGMENT_MAGIC,
    SEGMENT_VERSION,
};
pub use segment::SegmentTensor;
pub use split::{split, split_indices, DatasetSplit, SplitIndices};
pub use synth::{saturate_fraction, synth_annotated, synth_dataset, ArtifactEvent, ArtifactKind, ArtifactPlan, SynthConfig};
