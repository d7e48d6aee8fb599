//! Multi-label classification toolkit: F-beta metrics, threshold tuning,
//! stratified splitting, voting and stacking ensembles, a small dense network
//! trainer, classical learners and ImageNet-style image preprocessing.

pub mod classical;
pub mod cv;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod imageprep;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod split;
pub mod threshold;

pub use data::{FeatureMatrix, LabelMatrix, LabelVocabulary, ProbMatrix, RngSeed};
pub use error::{Error, Result};
