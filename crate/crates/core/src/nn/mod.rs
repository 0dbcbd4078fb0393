//! From-scratch classifiers: a dense network for ESA directions and a
//! two-step recurrent network for iron directions, trained with
//! class-weighted cross-entropy, L1 penalty, dropout and Adam.

pub mod config;
pub mod model;
pub mod network;
pub mod params;

pub use config::{DenseNetConfig, NetConfig, RecurrentNetConfig};
pub use model::{train, version_id, ClassProbabilities, ClassWeights, Mode, ModelMetadata, ModelParameters, TrainOutcome};
pub use params::{adam_update, AdamHyper, AdamState, ParamSet};
