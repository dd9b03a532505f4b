//! A convolutional network that predicts Wasserstein barycenters of grid
//! measures, trained on oracle barycenters.
//!
//! Each input runs through the same contractive path; the activations at
//! every depth are combined with the barycentric weights and fed to a single
//! expansive path that ends in a softmax. Because the fusion is a weighted
//! sum, a network trained on pairs accepts any number of inputs.

pub mod checkpoint;
pub mod error;
pub mod layers;
pub mod model;
pub mod scalar;
pub mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use error::{Error, Result};
pub use model::{backward, forward, predict, FeatureStack, ModelConfig, ModelWeights};
pub use scalar::Scalar;
pub use train::{evaluate, evaluate_predictions, load_samples, sgdr_lr, train, EvalReport, EvalRow, LogEntry, Sample, TrainConfig, TrainLog};
