//! Weakly supervised training: labels from subtitle-like text, class
//! weights, augmentation and the mini-batch SGD loop.

pub mod augment;
pub mod data;
pub mod text;
mod train;

pub use augment::{augment, AugmentConfig};
pub use data::{
    load_annotated_clips, load_training_clips, read_manifest, ClipRecord, ManifestEntry,
    TruthInterval,
};
pub use text::{default_stopwords, extract_labels, stem, Vocabulary};
pub use train::{
    compute_class_weights, eval_input, evaluate_scores, predict, track_input, train, LogRow,
    TrainConfig, TrainLog,
};
