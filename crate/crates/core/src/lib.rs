//! Telephone-chain creativity evaluation for image generation models.
//!
//! A seed image is pushed through repeated generate/caption/detect steps;
//! the detected artifact sets are scored for how long the seed survives and
//! how cohesive and diverse the additions are.

pub mod artifact;
pub mod chain;
pub mod demo;
pub mod experiment;
pub mod metrics;
pub mod protocol;
pub mod report;
pub mod sim;
pub mod stats;

pub use artifact::{ArtifactSet, EmbeddingTable, Label};
pub use chain::{ChainConfig, ChainRecord, ChainType};
pub use experiment::{run_experiment, ExperimentConfig, RunManifest};
pub use metrics::{score_chain, score_steps, ChainScores};
pub use stats::{paired_t_test, PairedSamples, TTestResult};
