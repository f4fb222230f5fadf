#![allow(dead_code)]

pub mod oracle;
pub mod quad;
pub mod random_chain;

use std::path::Path;

use telechain::chain::ChainType;
use telechain::demo::{demo_config, sim_model};
use telechain::experiment::{ExperimentConfig, ModelEntry};
use telechain::sim::SimBehavior;

/// A demo experiment under `dir` with the given models, ready to run.
pub fn sim_experiment(
    dir: &Path,
    seeds: usize,
    models: Vec<ModelEntry>,
    chain_types: &[ChainType],
    strengths: &[f64],
) -> ExperimentConfig {
    let mut config = demo_config(dir, seeds).expect("demo files");
    config.models = models;
    config.chain_types = chain_types.to_vec();
    config.strengths = strengths.to_vec();
    config.comparisons.clear();
    config.resolve_paths(dir);
    config.validate().expect("valid config");
    config
}

/// Keeps its input and adds some related artifacts, with enough randomness
/// that scores differ between seeds.
pub fn cohesive_behavior() -> SimBehavior {
    SimBehavior {
        novel_rate: 0.5,
        novelty_cluster_bias: 0.75,
        ..SimBehavior::cohesive()
    }
}

pub fn three_regimes() -> Vec<ModelEntry> {
    vec![
        sim_model("copy", SimBehavior::copy()),
        sim_model("drift", SimBehavior::drift()),
        sim_model("cohesive", cohesive_behavior()),
    ]
}
