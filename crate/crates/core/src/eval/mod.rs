//! Metrics: L2, Fréchet gesture distance, beat consistency and pose-sync distance.

pub mod beats;
pub mod fgd;
pub mod metrics;
pub mod report;
pub mod syncnet;

pub use beats::{beat_consistency, extract_audio_beats, extract_motion_beats, OnsetConfig};
pub use fgd::{fgd, frechet_distance, FeatureExtractorConfig, PoseFeatureExtractor};
pub use metrics::{auroc, l2_metric, pearson};
pub use report::{evaluate, EvalOptions, MetricReport};
pub use syncnet::{pair_separation, psd, PoseSyncNet, SyncEmbedder, SyncNetConfig};
