//! Self-contained simulated experiment: seed images, embedding table and a
//! config, all under one directory.

use std::path::{Path, PathBuf};

use crate::chain::{ChainType, DEFAULT_CHAIN_LENGTH};
use crate::experiment::{AdapterSpec, ExperimentConfig, ModelEntry, SeedEntry, SimAdapterSpec, Subjects};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::report::{ComparisonSpec, Measure};
use crate::sim::{write_seed_image, SimBehavior, SimError, SimVocabulary};

pub const CONFIG_FILE: &str = "config.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

/// Seed subjects cycle through the first three vocabulary clusters.
pub fn seed_subjects(vocab: &SimVocabulary, count: usize) -> Vec<String> {
    let pool: Vec<&str> = vocab.clusters().iter().take(3).flatten().map(|l| l.as_str()).collect();
    (0..count).map(|i| pool[i % pool.len()].to_owned()).collect()
}

pub fn sim_model(id: &str, behavior: SimBehavior) -> ModelEntry {
    ModelEntry {
        id: id.to_owned(),
        adapter: AdapterSpec::Sim(SimAdapterSpec {
            behavior,
            ..SimAdapterSpec::default()
        }),
    }
}

/// Writes `count` seed images plus the sim embedding table into `dir` and
/// returns a config running copy, drift and cohesive sim models. Paths in
/// the config are relative to `dir`.
pub fn demo_config(dir: &Path, count: usize) -> Result<ExperimentConfig, SimError> {
    let vocab = SimVocabulary::food();
    let seeds_dir = dir.join("seeds");
    std::fs::create_dir_all(&seeds_dir)?;
    let mut seeds = Vec::with_capacity(count);
    for (i, subject) in seed_subjects(&vocab, count).into_iter().enumerate() {
        let id = format!("seed{i:03}");
        write_seed_image(&seeds_dir.join(format!("{id}.sim.json")), &[&subject])?;
        seeds.push(SeedEntry {
            image: PathBuf::from("seeds").join(format!("{id}.sim.json")),
            id,
            subject: Subjects::One(subject),
        });
    }
    vocab.embedding_table().save(&dir.join(EMBEDDINGS_FILE))?;

    Ok(ExperimentConfig {
        seeds,
        models: vec![
            sim_model("copy", SimBehavior::copy()),
            sim_model("drift", SimBehavior::drift()),
            sim_model(
                "cohesive",
                SimBehavior {
                    novel_rate: 0.5,
                    novelty_cluster_bias: 0.75,
                    ..SimBehavior::cohesive()
                },
            ),
        ],
        captioner: Some(AdapterSpec::Sim(SimAdapterSpec::default())),
        detectors: vec![sim_model("detector", SimBehavior::copy())],
        chain_types: ChainType::ALL.to_vec(),
        strengths: vec![0.3, 0.6, 0.9],
        l: DEFAULT_CHAIN_LENGTH,
        t: DEFAULT_THRESHOLD,
        embedding_table_path: PathBuf::from(EMBEDDINGS_FILE),
        output_dir: PathBuf::from("run"),
        workers: 4,
        experiment_seed: 1,
        request_timeout_secs: 30.0,
        comparisons: vec![ComparisonSpec {
            measure: Measure::Cr,
            a: "model=cohesive,type=img_only,strength=0.6".parse().expect("valid selector"),
            b: "model=copy,type=img_only,strength=0.6".parse().expect("valid selector"),
        }],
    })
}

/// [`demo_config`] written to `dir/config.json`; returns the config path.
pub fn write_demo(dir: &Path, count: usize) -> Result<PathBuf, SimError> {
    let config = demo_config(dir, count)?;
    let path = dir.join(CONFIG_FILE);
    let mut body = serde_json::to_string_pretty(&config).expect("config serializes");
    body.push('\n');
    std::fs::write(&path, body)?;
    Ok(path)
}
