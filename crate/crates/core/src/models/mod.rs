//! Assembled networks for images, proteins and knowledge graphs, and the
//! metrics used to evaluate them.

pub mod image;
pub mod kg;
pub mod metrics;
pub mod protein;

pub use image::{patchify, ImageModel, ImageModelConfig, ImageOutput};
pub use kg::{KgModel, KgModelConfig};
pub use metrics::{filtered_rank, fmax, random_mrr, ranking_metrics, RankingMetrics};
pub use protein::{one_hot_residues, ProteinEncoder, ProteinEncoderConfig, ProteinOutput};
