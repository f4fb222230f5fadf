//! Requirements satisfaction (RS), cohesion (B_R), diversity (D_R) and the
//! combined creativity ranking (CR) of a chain.
//!
//! Everything is evaluated on textual artifact sets. The satisfied prefix `K`
//! is the longest run of steps, counted from step 1, in which every seed label
//! has a match with θ ≥ t. Cohesion and diversity are read off the K-th
//! artifact set, where the "new" artifacts are those that are not the
//! best-match stand-ins of a seed label.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{best_match, ArtifactError, ArtifactSet, EmbeddingTable, Label};
use crate::chain::ChainRecord;

pub const DEFAULT_THRESHOLD: f64 = 0.65;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("seed artifact set is empty")]
    EmptySeed,
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("chain length must be at least 1 and cover the {recorded} recorded steps (got {length})")]
    InvalidLength { length: usize, recorded: usize },
    #[error("step {0} has no detected artifact set")]
    MissingArtifacts(usize),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Best match of one seed label inside a step's artifact set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMatch {
    pub seed: Label,
    pub matched: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SatisfiedPrefix {
    pub k: usize,
    pub threshold: f64,
    /// Matches for steps `1..=k`, one entry per seed label (seed order).
    pub per_step_matches: Vec<Vec<SeedMatch>>,
}

impl SatisfiedPrefix {
    /// Matches recorded at step K, empty when K = 0.
    pub fn final_matches(&self) -> &[SeedMatch] {
        self.per_step_matches.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Labels of A_K that stand in for seed labels.
    pub fn matched_seed(&self) -> ArtifactSet {
        self.final_matches().iter().map(|m| m.matched.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainScores {
    pub rs: f64,
    pub cohesion: f64,
    pub diversity: f64,
    pub creativity: f64,
    pub k: usize,
    pub matches: Vec<SeedMatch>,
}

impl ChainScores {
    fn zero() -> Self {
        ChainScores {
            rs: 0.0,
            cohesion: 0.0,
            diversity: 0.0,
            creativity: 0.0,
            k: 0,
            matches: Vec::new(),
        }
    }
}

fn check_threshold(t: f64) -> Result<(), MetricsError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(MetricsError::InvalidThreshold(t))
    }
}

pub fn satisfied_prefix(
    steps: &[ArtifactSet],
    seed: &ArtifactSet,
    t: f64,
    table: &EmbeddingTable,
) -> Result<SatisfiedPrefix, MetricsError> {
    if seed.is_empty() {
        return Err(MetricsError::EmptySeed);
    }
    check_threshold(t)?;

    let mut per_step_matches = Vec::new();
    'steps: for set in steps {
        if set.is_empty() {
            break;
        }
        let mut matches = Vec::with_capacity(seed.len());
        for seed_label in seed {
            let (matched, score) = best_match(set, seed_label, table)?;
            if score < t {
                break 'steps;
            }
            matches.push(SeedMatch {
                seed: seed_label.clone(),
                matched,
                score,
            });
        }
        per_step_matches.push(matches);
    }
    Ok(SatisfiedPrefix {
        k: per_step_matches.len(),
        threshold: t,
        per_step_matches,
    })
}

/// (K / l) × mean best-match score at step K.
pub fn requirement_satisfaction(prefix: &SatisfiedPrefix, l: usize) -> f64 {
    let matches = prefix.final_matches();
    if prefix.k == 0 || l == 0 || matches.is_empty() {
        return 0.0;
    }
    let mean = matches.iter().map(|m| m.score).sum::<f64>() / matches.len() as f64;
    (prefix.k as f64 / l as f64) * mean
}

/// Mean of each new artifact's best θ to the matched seed labels, plus the
/// largest θ among the new artifacts themselves, over `|new| + 1`.
///
/// `matched_seed` is expected to be a subset of `a_k`.
pub fn cohesion_factor(a_k: &ArtifactSet, matched_seed: &ArtifactSet, table: &EmbeddingTable) -> f64 {
    let new = a_k.difference(matched_seed);
    if a_k.len() < 2 || new.is_empty() {
        return 0.0;
    }
    let new: Vec<(&Label, _)> = new.iter().map(|l| (l, table.embed(l))).collect();
    let seeds: Vec<_> = matched_seed.iter().map(|l| table.embed(l)).collect();

    let theta = |u, v| crate::artifact::cosine_similarity(u, v).unwrap_or(0.0);

    let bond_sum: f64 = new
        .iter()
        .map(|(_, n)| seeds.iter().map(|s| theta(n, s)).fold(0.0, f64::max))
        .sum();

    let mut max_new_pair = 0.0f64;
    for (i, (_, a)) in new.iter().enumerate() {
        for (_, b) in &new[i + 1..] {
            max_new_pair = max_new_pair.max(theta(a, b));
        }
    }

    (bond_sum + max_new_pair) / (new.len() as f64 + 1.0)
}

/// Fraction of `a_k` that is not a matched seed stand-in; 0 when nothing matched.
pub fn diversity_factor(a_k: &ArtifactSet, matched_seed: &ArtifactSet) -> f64 {
    if matched_seed.is_empty() || a_k.is_empty() {
        return 0.0;
    }
    a_k.difference(matched_seed).len() as f64 / a_k.len() as f64
}

pub fn creativity_ranking(rs: f64, cohesion: f64, diversity: f64) -> f64 {
    rs * ((cohesion + diversity) / 2.0)
}

/// Scores a chain given its per-step artifact sets and maximal length `l`
/// (which may exceed the number of recorded steps for truncated chains).
pub fn score_steps(
    steps: &[ArtifactSet],
    seed: &ArtifactSet,
    l: usize,
    t: f64,
    table: &EmbeddingTable,
) -> Result<ChainScores, MetricsError> {
    if l == 0 || steps.len() > l {
        return Err(MetricsError::InvalidLength {
            length: l,
            recorded: steps.len(),
        });
    }
    let prefix = satisfied_prefix(steps, seed, t, table)?;
    if prefix.k == 0 {
        return Ok(ChainScores::zero());
    }
    let rs = requirement_satisfaction(&prefix, l);
    let a_k = &steps[prefix.k - 1];
    let matched = prefix.matched_seed();
    let cohesion = cohesion_factor(a_k, &matched, table);
    let diversity = diversity_factor(a_k, &matched);
    Ok(ChainScores {
        rs,
        cohesion,
        diversity,
        creativity: creativity_ranking(rs, cohesion, diversity),
        k: prefix.k,
        matches: prefix.final_matches().to_vec(),
    })
}

/// Scores a stored chain against its configured maximal length.
pub fn score_chain(
    chain: &ChainRecord,
    t: f64,
    table: &EmbeddingTable,
) -> Result<ChainScores, MetricsError> {
    let steps = chain
        .steps
        .iter()
        .map(|s| s.artifacts.clone().ok_or(MetricsError::MissingArtifacts(s.index as usize)))
        .collect::<Result<Vec<_>, _>>()?;
    score_steps(
        &steps,
        &chain.seed_artifacts,
        chain.config.max_steps as usize,
        t,
        table,
    )
}
