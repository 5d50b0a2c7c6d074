//! On-disk formats.

mod checkpoint;
mod embeddings;
mod features;
mod report;
mod views;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use embeddings::{load_embeddings, save_embeddings, EmbeddingTable};
pub use features::{
    decode_features, encode_features, labels_path, load_features, save_features,
    PatchFeatureRecord, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use report::{save_report, EvalMode, GzslMetrics, MetricReport};
pub use views::{load_views, save_views, ClassEntry, Split, ViewCorpus};
