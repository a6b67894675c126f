//! Corpus loading, feature extraction, normalization and saliency labels.

pub mod asr;
pub mod audio;
pub mod corpus;
pub mod labels;
pub mod layout;
pub mod normalize;
pub mod pose;
pub mod synth;

pub use asr::{AsrProvider, ExternalAsr, FileAsr, NullAsr};
pub use audio::{extract_mel, read_wav, write_wav, MelConfig, Waveform};
pub use corpus::{
    load_corpus, segment_clips, CorpusManifest, Dataset, DatasetOptions, GestureSample,
    ManifestEntry, SpeechFeatureSet, Split,
};
pub use labels::{compute_resting_pose, derive_sequence_label, SequenceSaliencyLabel, SpeakerSaliency};
pub use layout::SkeletonLayout;
pub use normalize::PoseNormalizer;
pub use pose::PoseSequence;
pub use synth::{make_synthetic_corpus, SynthConfig};
