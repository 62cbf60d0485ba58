//! Panoramic quality mapping: per-pixel TP/FP/TN/FN assessment of a
//! segmentation mask, with the label algebra, metrics, network, losses and
//! training pipeline needed to learn it.

pub mod ams;
pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod edges;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod quality;
pub mod sources;
pub mod synth;
pub mod tensors;
pub mod train;

pub use checkpoint::Checkpoint;
pub use edges::{
    edge_buffer, eib_at_k, eib_from_quality_map, extract_edges, EdgeSource, EibResult,
};
pub use error::{Error, Result};
pub use metrics::{
    assessment_report, mask_miou, pearson_correlation, AssessmentReport, BinaryConfusion,
    ClassScores,
};
pub use model::{ModelConfig, ModelOutput, PqmModel};
pub use quality::{
    class_distribution, derive_quality_map, reconstruct_masks, BinaryMask, ClassDistribution,
    EdgeMap, PqmClass, QualityMap,
};
pub use train::{assess, evaluate, train_loop, Trainer, TrainerConfig};
