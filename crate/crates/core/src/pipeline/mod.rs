//! Staged pipeline driven by one JSON config: scene generation, encoder and
//! tree training, prediction, evaluation, fusion and tracking.
//!
//! Every stage reads its inputs from and writes its outputs to
//! `<output_dir>/<run_id>/{scenes,models,masks,reports,tracks}`, then
//! refreshes `run_manifest.json` with the config hash and a SHA-256 of every
//! artifact.

mod config;
mod labels;
mod manifest;
mod stages;

pub use config::{
    apply_override, ContextConfig, DataConfig, EncoderConfig, EvaluationConfig, FusionConfig, PipelineConfig,
    ReferenceEntry, SamplingConfig, TrackingConfig,
};
pub use labels::{auto_labels, dilate, erode, AutoLabelConfig};
pub use manifest::{write_manifest, RunManifest};
pub use stages::{
    cmd_evaluate, cmd_fuse, cmd_gen, cmd_predict, cmd_track, cmd_train_encoder, cmd_train_tree, RunLayout,
};

/// Stream offsets combined with the global seed through
/// [`crate::rng::derive_seed`]; each stochastic component owns one.
pub mod seeds {
    pub const SCENES: u64 = 1;
    pub const LABELS: u64 = 2;
    pub const TRAIN_SUBSET: u64 = 3;
    pub const ENCODER: u64 = 4;
    pub const TREE: u64 = 5;
    pub const RETRIEVAL: u64 = 6;
}
