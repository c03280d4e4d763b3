//! Generalized category discovery on precomputed embeddings.
//!
//! The crate partitions a dataset into expert sub-datasets with k-means,
//! learns a shared adapter under coarse and fine contrastive objectives,
//! assigns classes with semi-supervised k-means and scores the result with
//! Hungarian-matched accuracy. The numeric core is generic over `f32` and
//! `f64`; the aliases below name the usual instantiations.

pub mod clustering;
pub mod contrastive;
pub mod embedding_store;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod partition;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod synthetic;

pub use clustering::{kmeans, semi_supervised_kmeans, ClusterModel, KMeansParams};
pub use contrastive::{train, TrainConfig, TrainTrace, TrainableModel, ViewMode};
pub use embedding_store::{build_subset_masks, load_features, save_features, DatasetView, FeatureMatrix, SubsetMasks};
pub use error::{Result, XconError};
pub use estimation::{estimate_num_classes, EstimationParams, KSearchResult};
pub use evaluation::{clustering_accuracy, hungarian, EvalReport};
pub use partition::{partition_dataset, PartitionResult};
pub use scalar::Scalar;

pub type Features = FeatureMatrix<f32>;
pub type Features64 = FeatureMatrix<f64>;
pub type Model = TrainableModel<f32>;
pub type Model64 = TrainableModel<f64>;
