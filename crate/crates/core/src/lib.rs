//! Weakly supervised transformer phenotyping.
//!
//! A small set of gold-labeled patients and a large pool of noisy silver-labeled
//! patients train a transformer encoder over aggregated concept counts. Silver
//! labels are replaced by model probabilities after every training round. The
//! pooled patient embeddings feed PCA, k-means subphenotyping and survival
//! analysis.
//!
//! Module map:
//!
//! - [`numerics`]: tensors, tape-based reverse-mode autodiff, gradient checks
//! - [`datamodel`]: patient records, cohort I/O, splitting, silver initialization,
//!   synthetic cohorts with planted ground truth
//! - [`embeddings`]: pre-trained concept vectors and anchor-similarity selection
//! - [`preprocess`]: aggregation, truncation, oversampling, model inputs
//! - [`model`]: the encoder, parameters and checkpoints
//! - [`train`]: loss, Adam, calibration, the refinement loop, count baseline
//! - [`analysis`]: AUC/PPV, cross-validation, PCA, k-means, survival

pub mod analysis;
pub mod datamodel;
pub mod embeddings;
mod error;
pub mod model;
pub mod numerics;
pub mod preprocess;
pub mod train;

pub use datamodel::{
    Cohort, ConceptId, CohortSplit, Label, LabelSource, PatientRecord, SyntheticSpec,
    TimeWindow,
};
pub use analysis::SurvivalRecord;
pub use embeddings::EmbeddingTable;
pub use error::{Error, ErrorKind, Result};
pub use model::{Checkpoint, ModelConfig, ModelParams};
pub use numerics::{Rng, Tape, Tensor};
pub use preprocess::ModelInput;
pub use train::{TrainConfig, TrainOutcome};
