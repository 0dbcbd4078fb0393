//! Anemia-control decision support for maintenance hemodialysis.
//!
//! Learns physicians' ESA and iron dosage directions (UP/STAY/DOWN) from
//! per-occasion blood panels. The crate covers the whole pipeline: data
//! model and CSV ingestion, rectification of delayed decisions, feature
//! construction, the two classifiers, two-step thresholded classification,
//! validation harnesses, and a synthetic cohort generator.

pub mod classifier;
pub mod domain;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod rectifier;
pub mod synth;

pub use domain::{BloodPanel, Cohort, Direction, LabelHistogram, Medication, OccasionRecord, PatientTimeline};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureVector, NormalizationStats, TrainingExample};
pub use nn::{ClassProbabilities, ClassWeights, ModelParameters, NetConfig};
pub use pipeline::{Recommendation, Recommender, Thresholds};
