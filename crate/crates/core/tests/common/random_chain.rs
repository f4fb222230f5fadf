//! Random chains over random block-structured embeddings.

use std::collections::{BTreeSet, HashMap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use telechain::artifact::{ArtifactSet, EmbeddingTable};
use telechain::chain::{ChainConfig, ChainRecord, ChainStep, ChainType};

use super::oracle::RawTable;

pub const MAX_STEPS: usize = 6;
pub const MAX_LABELS: usize = 6;
const DIM: usize = 8;
const CLUSTERS: usize = 3;
const TOKENS: usize = 12;

pub struct Case {
    pub raw: RawTable,
    pub table: EmbeddingTable,
    pub seed: BTreeSet<String>,
    pub steps: Vec<BTreeSet<String>>,
    pub l: usize,
    pub t: f64,
}

impl Case {
    pub fn record(&self) -> ChainRecord {
        let set = |labels: &BTreeSet<String>| ArtifactSet::from_raw(labels).expect("valid labels");
        ChainRecord {
            chain_id: "random".into(),
            seed_id: "seed".into(),
            seed_image: "seed.sim.json".into(),
            seed_artifacts: set(&self.seed),
            seed_caption: None,
            config: ChainConfig {
                max_steps: self.l as u32,
                threshold: self.t,
                ..ChainConfig::new("random", ChainType::ImgOnly, 0.5)
            },
            steps: self
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| ChainStep {
                    index: i as u32 + 1,
                    image: format!("step_{}.sim.json", i + 1),
                    caption: None,
                    artifacts: Some(set(s)),
                    raw_detections: Vec::new(),
                })
                .collect(),
            truncated: self.steps.len() < self.l,
            failure: None,
        }
    }
}

fn unit_noise(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let spread: f64 = rng.random_range(0.15..0.7);
    let centers: Vec<Vec<f64>> = (0..CLUSTERS).map(|_| unit_noise(rng)).collect();
    let mut vectors = HashMap::new();
    for i in 0..TOKENS {
        let c = &centers[i % CLUSTERS];
        let noise = unit_noise(rng);
        let v: Vec<f64> = c.iter().zip(&noise).map(|(c, n)| c + spread * n).collect();
        vectors.insert(format!("w{i}"), v);
    }

    let mut pool: Vec<String> = (0..TOKENS).map(|i| format!("w{i}")).collect();
    for _ in 0..8 {
        let a = rng.random_range(0..TOKENS);
        let b = rng.random_range(0..TOKENS);
        if a != b {
            let (a, b) = (format!("w{a}"), format!("w{b}"));
            pool.push(if a < b { format!("{a} {b}") } else { format!("{b} {a}") });
        }
    }
    pool.push("unseen".into());
    pool.sort();
    pool.dedup();

    let pick = |rng: &mut ChaCha8Rng, n: usize| -> BTreeSet<String> {
        (0..n).map(|_| pool.choose(rng).expect("pool").clone()).collect()
    };
    let seed_len = rng.random_range(1..=2);
    let seed = pick(rng, seed_len);
    let step_count = rng.random_range(1..=MAX_STEPS);
    let steps = (0..step_count)
        .map(|_| {
            let n = if rng.random_bool(0.05) { 0 } else { rng.random_range(1..=MAX_LABELS) };
            pick(rng, n)
        })
        .collect();

    let table = EmbeddingTable::from_entries(DIM, vectors.iter().map(|(k, v)| (k.as_str(), v.clone()))).expect("table");
    Case {
        raw: RawTable { vectors },
        table,
        seed,
        steps,
        l: MAX_STEPS,
        t: rng.random_range(0.4..0.9),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
