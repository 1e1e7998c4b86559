//! WAV ingestion, segmentation, framing, splitting and synthetic data.

mod dataset;
mod frames;
mod synth;
mod wav;

pub use dataset::{
    frame_all, load_dataset, read_manifest, split_dataset, split_indices, write_dataset, ManifestEntry, MANIFEST,
};
pub use frames::{frame_segment, hamming, segment_audio, FrameSequence};
pub use synth::{segment_seed, synth_dataset, ClassSpec, LabeledSegment, SynthSpec, Tonal, PEAK};
pub use wav::{read_wav, write_wav, SampleBuffer};
