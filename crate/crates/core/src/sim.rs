//! Deterministic stand-in for generator, captioner and detectors.
//!
//! A sim "image" is a small JSON file listing its ground-truth artifacts.
//! Generation retains or drops incoming artifacts and samples new ones from a
//! clustered vocabulary whose embeddings have known similarity bounds, so
//! every score regime can be produced on purpose and checked exactly.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::artifact::{normalize_label, ArtifactSet, EmbeddingTable, Label};
use crate::protocol::{DetectedLabel, Handler, Handshake, Op, Reply, Request};

pub const SIM_IMAGE_EXTENSION: &str = "sim.json";
const CAPTION_PREFIX: &str = "an image";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid sim behavior: {0}")]
    InvalidBehavior(String),
    #[error("invalid sim vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("unreadable sim image {path}: {reason}")]
    UnreadableImage { path: String, reason: String },
    #[error("sim workspace: {0}")]
    Io(#[from] std::io::Error),
}

/// Labels grouped into clusters with block-structured unit embeddings:
/// θ = `intra` inside a cluster, `inter` across clusters, 1 on the diagonal.
#[derive(Debug, Clone)]
pub struct SimVocabulary {
    clusters: Vec<Vec<Label>>,
    intra: f64,
    inter: f64,
    cluster_of: HashMap<Label, usize>,
}

pub const DEFAULT_INTRA_SIM: f64 = 0.8;
pub const DEFAULT_INTER_SIM: f64 = 0.1;

impl SimVocabulary {
    pub fn new<S: AsRef<str>>(clusters: &[Vec<S>], intra: f64, inter: f64) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&inter) || !(0.0..=1.0).contains(&intra) || inter > intra {
            return Err(SimError::InvalidVocabulary(format!(
                "need 0 <= inter ({inter}) <= intra ({intra}) <= 1"
            )));
        }
        let mut cluster_of = HashMap::new();
        let mut tokens = BTreeSet::new();
        let mut out = Vec::with_capacity(clusters.len());
        for (ci, cluster) in clusters.iter().enumerate() {
            let mut labels = Vec::with_capacity(cluster.len());
            for raw in cluster {
                let label = normalize_label(raw.as_ref())
                    .map_err(|e| SimError::InvalidVocabulary(e.to_string()))?;
                for token in label.tokens() {
                    if !tokens.insert(token.to_owned()) {
                        return Err(SimError::InvalidVocabulary(format!(
                            "token {token:?} appears in more than one label"
                        )));
                    }
                }
                cluster_of.insert(label.clone(), ci);
                labels.push(label);
            }
            labels.sort();
            out.push(labels);
        }
        Ok(SimVocabulary {
            clusters: out,
            intra,
            inter,
            cluster_of,
        })
    }

    /// Food-centric default: desserts, savory dishes, tableware, animals,
    /// vehicles and furniture.
    pub fn food() -> Self {
        Self::food_with(DEFAULT_INTRA_SIM, DEFAULT_INTER_SIM).expect("default vocabulary is valid")
    }

    pub fn food_with(intra: f64, inter: f64) -> Result<Self, SimError> {
        let clusters: Vec<Vec<&str>> = vec![
            vec!["apple pie", "cake", "donut", "syrup", "cookie", "muffin", "whipped cream"],
            vec!["pizza", "cheese", "tomato", "basil", "olive", "pepperoni", "mushroom"],
            vec!["cup", "plate", "fork", "dining table", "knife", "spoon", "bowl"],
            vec!["horse", "dog", "cat", "bird", "sheep", "cow"],
            vec!["car", "truck", "bicycle", "boat", "airplane", "train"],
            vec!["chair", "couch", "bed", "lamp", "clock", "vase"],
        ];
        Self::new(&clusters, intra, inter)
    }

    pub fn clusters(&self) -> &[Vec<Label>] {
        &self.clusters
    }

    pub fn intra_cluster_sim(&self) -> f64 {
        self.intra
    }

    pub fn inter_cluster_sim(&self) -> f64 {
        self.inter
    }

    pub fn cluster_of(&self, label: &Label) -> Option<usize> {
        self.cluster_of.get(label).copied()
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.clusters.iter().flatten()
    }

    /// Each label gets `√inter·g + √(intra−inter)·c_k + √(1−intra)·u_i` over
    /// orthonormal axes (global, per-cluster, per-label); every token of a
    /// label carries the label's vector.
    pub fn embedding_table(&self) -> EmbeddingTable {
        let n_labels: usize = self.clusters.iter().map(Vec::len).sum();
        let dim = 1 + self.clusters.len() + n_labels;
        let g = self.inter.sqrt();
        let c = (self.intra - self.inter).sqrt();
        let u = (1.0 - self.intra).sqrt();
        let mut table = EmbeddingTable::new(dim);
        let mut label_idx = 0;
        for (ci, cluster) in self.clusters.iter().enumerate() {
            for label in cluster {
                let mut v = vec![0.0; dim];
                v[0] = g;
                v[1 + ci] = c;
                v[1 + self.clusters.len() + label_idx] = u;
                for token in label.tokens() {
                    table.insert(token, v.clone()).expect("dimension matches");
                }
                label_idx += 1;
            }
        }
        table
    }
}

impl Default for SimVocabulary {
    fn default() -> Self {
        Self::food()
    }
}

fn default_one() -> f64 {
    1.0
}

/// How a simulated generator treats its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBehavior {
    /// Per-step probability that each incoming artifact survives.
    #[serde(default = "default_one")]
    pub retain_prob: f64,
    /// Expected number of new artifacts per step.
    #[serde(default)]
    pub novel_rate: f64,
    /// Probability that a new artifact comes from a cluster of the input.
    #[serde(default = "default_one")]
    pub novelty_cluster_bias: f64,
    /// When set, retention becomes `1 − coupling · strength`.
    #[serde(default)]
    pub strength_coupling: Option<f64>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for SimBehavior {
    fn default() -> Self {
        SimBehavior::copy()
    }
}

impl SimBehavior {
    pub fn copy() -> Self {
        SimBehavior {
            retain_prob: 1.0,
            novel_rate: 0.0,
            novelty_cluster_bias: 1.0,
            strength_coupling: None,
            rng_seed: 0,
        }
    }

    /// Drops every input artifact and hallucinates unrelated ones.
    pub fn drift() -> Self {
        SimBehavior {
            retain_prob: 0.0,
            novel_rate: 2.0,
            novelty_cluster_bias: 0.0,
            ..SimBehavior::copy()
        }
    }

    /// Keeps the input and adds related artifacts.
    pub fn cohesive() -> Self {
        SimBehavior {
            retain_prob: 1.0,
            novel_rate: 2.0,
            novelty_cluster_bias: 1.0,
            ..SimBehavior::copy()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let prob = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(SimError::InvalidBehavior(format!("{name} = {x} outside [0, 1]")))
            }
        };
        prob("retain_prob", self.retain_prob)?;
        prob("novelty_cluster_bias", self.novelty_cluster_bias)?;
        if !(self.novel_rate >= 0.0 && self.novel_rate.is_finite()) {
            return Err(SimError::InvalidBehavior(format!(
                "novel_rate = {} must be a finite non-negative number",
                self.novel_rate
            )));
        }
        if let Some(c) = self.strength_coupling {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(SimError::InvalidBehavior(format!("strength_coupling = {c} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Retention for a request. Text-only requests carry no strength, so the
    /// nominal strength is recovered from the step count (steps / 50).
    pub fn effective_retain(&self, strength: Option<f64>, steps: Option<u32>) -> f64 {
        match self.strength_coupling {
            Some(c) => {
                let s = strength.or(steps.map(|n| f64::from(n) / 50.0)).unwrap_or(0.0);
                (1.0 - c * s).clamp(0.0, 1.0)
            }
            None => self.retain_prob,
        }
    }
}

/// On-disk payload of a sim image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimImage {
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub lineage: Vec<String>,
}

impl SimImage {
    pub fn read(path: &Path) -> Result<Self, SimError> {
        let unreadable = |reason: String| SimError::UnreadableImage {
            path: path.display().to_string(),
            reason,
        };
        let bytes = std::fs::read(path).map_err(|e| unreadable(e.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| unreadable(e.to_string()))
    }

    /// Normalized artifact set; blank entries are dropped.
    pub fn artifact_set(&self) -> ArtifactSet {
        self.artifacts
            .iter()
            .filter_map(|a| normalize_label(a).ok())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("sim image serializes")
    }
}

/// Writes a seed image holding `artifacts`.
pub fn write_seed_image<S: AsRef<str>>(path: &Path, artifacts: &[S]) -> Result<(), SimError> {
    let image = SimImage {
        artifacts: artifacts.iter().map(|a| a.as_ref().to_owned()).collect(),
        lineage: Vec::new(),
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, image.to_json())?;
    Ok(())
}

/// `"an image of a, b"` in sorted order, or `"an image"` when empty.
pub fn sim_caption(artifacts: &ArtifactSet) -> String {
    if artifacts.is_empty() {
        return CAPTION_PREFIX.to_owned();
    }
    let list: Vec<&str> = artifacts.iter().map(Label::as_str).collect();
    format!("{CAPTION_PREFIX} of {}", list.join(", "))
}

/// Inverse of [`sim_caption`]; free text without the prefix is read as a
/// comma-separated label list.
pub fn parse_caption(caption: &str) -> ArtifactSet {
    let text = caption.trim();
    let lower = text.to_lowercase();
    let body = if let Some(rest) = lower.strip_prefix("an image of") {
        rest.to_owned()
    } else if lower == CAPTION_PREFIX {
        String::new()
    } else {
        lower
    };
    body.split(',').filter_map(|s| normalize_label(s).ok()).collect()
}

fn digest_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn label_bytes(set: &ArtifactSet) -> Vec<u8> {
    set.iter().map(Label::as_str).collect::<Vec<_>>().join("\n").into_bytes()
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Simulated generator + captioner + detector behind the adapter protocol.
#[derive(Debug, Clone)]
pub struct SimBackend {
    vocabulary: SimVocabulary,
    behavior: SimBehavior,
    label_noise: f64,
    workspace: PathBuf,
}

impl SimBackend {
    pub fn new(vocabulary: SimVocabulary, behavior: SimBehavior, workspace: impl Into<PathBuf>) -> Result<Self, SimError> {
        behavior.validate()?;
        let workspace = workspace.into();
        std::fs::create_dir_all(&workspace)?;
        Ok(SimBackend {
            vocabulary,
            behavior,
            label_noise: 0.0,
            workspace,
        })
    }

    /// Probability that a detector reports a different label of the same cluster.
    pub fn with_label_noise(mut self, rate: f64) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(SimError::InvalidBehavior(format!("label_noise = {rate} outside [0, 1]")));
        }
        self.label_noise = rate;
        Ok(self)
    }

    pub fn vocabulary(&self) -> &SimVocabulary {
        &self.vocabulary
    }

    pub fn behavior(&self) -> &SimBehavior {
        &self.behavior
    }

    /// Ground-truth artifacts of the next image, a pure function of the inputs.
    pub fn evolve(&self, inputs: &ArtifactSet, strength: Option<f64>, steps: Option<u32>, rng_seed: u64) -> ArtifactSet {
        let b = &self.behavior;
        let strength_bits = strength.map(f64::to_bits).unwrap_or(u64::MAX).to_le_bytes();
        let steps_bytes = steps.map(u64::from).unwrap_or(u64::MAX).to_le_bytes();
        let mut rng = digest_rng(&[
            b"generate",
            &b.rng_seed.to_le_bytes(),
            &rng_seed.to_le_bytes(),
            &strength_bits,
            &steps_bytes,
            &label_bytes(inputs),
        ]);

        let retain = b.effective_retain(strength, steps);
        let mut out: ArtifactSet = inputs.iter().filter(|_| rng.random_bool(retain)).cloned().collect();

        let whole = b.novel_rate.floor() as usize;
        let frac = b.novel_rate - b.novel_rate.floor();
        let count = whole + usize::from(frac > 0.0 && rng.random_bool(frac));

        let anchors: BTreeSet<usize> = inputs.iter().filter_map(|l| self.vocabulary.cluster_of(l)).collect();
        for _ in 0..count {
            let in_cluster = rng.random_bool(b.novelty_cluster_bias);
            let pool: Vec<&Label> = self
                .vocabulary
                .clusters
                .iter()
                .enumerate()
                .filter(|(ci, _)| anchors.contains(ci) == in_cluster)
                .flat_map(|(_, labels)| labels)
                .filter(|l| !out.contains(l) && !inputs.contains(l))
                .collect();
            if pool.is_empty() {
                continue;
            }
            let pick = pool[rng.random_range(0..pool.len())].clone();
            out.insert(pick);
        }
        out
    }

    /// Labels a detector reports for `truth`, with optional in-cluster swaps.
    pub fn detect_labels(&self, truth: &ArtifactSet, rng_seed: u64) -> Vec<DetectedLabel> {
        let mut detected = BTreeSet::new();
        for label in truth {
            let mut rng = digest_rng(&[b"detect", &rng_seed.to_le_bytes(), label.as_str().as_bytes()]);
            let mut reported = label.clone();
            if self.label_noise > 0.0 && rng.random_bool(self.label_noise) {
                if let Some(ci) = self.vocabulary.cluster_of(label) {
                    let others: Vec<&Label> = self.vocabulary.clusters[ci].iter().filter(|l| *l != label).collect();
                    if !others.is_empty() {
                        reported = others[rng.random_range(0..others.len())].clone();
                    }
                }
            }
            detected.insert(reported);
        }
        detected
            .into_iter()
            .map(|l| DetectedLabel {
                label: l.as_str().to_owned(),
                confidence: 1.0,
            })
            .collect()
    }

    fn write_image(&self, image: &SimImage) -> Result<PathBuf, SimError> {
        let body = image.to_json();
        let name = hex::encode(&Sha256::digest(body.as_bytes())[..10]);
        let path = self.workspace.join(format!("{name}.{SIM_IMAGE_EXTENSION}"));
        if !path.exists() {
            let tmp = self.workspace.join(format!(
                ".{name}.{}.{}.tmp",
                std::process::id(),
                TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
            ));
            let mut file = std::fs::File::create(&tmp)?;
            file.write_all(body.as_bytes())?;
            drop(file);
            std::fs::rename(&tmp, &path)?;
        }
        Ok(path)
    }

    fn read_input(request: &Request) -> Result<(PathBuf, SimImage), String> {
        let path = request
            .image_path
            .as_deref()
            .ok_or_else(|| format!("{} requires image_path", request.op))?;
        let path = PathBuf::from(path);
        let image = SimImage::read(&path).map_err(|e| e.to_string())?;
        Ok((path, image))
    }

    fn generate(&self, request: &Request) -> Result<Reply, String> {
        let (inputs, lineage) = match request.op {
            Op::Img2img => {
                let strength = request.strength.ok_or("img2img requires strength")?;
                if !(strength > 0.0 && strength <= 1.0) {
                    return Err(format!("strength {strength} outside (0, 1]"));
                }
                let (path, image) = Self::read_input(request)?;
                let mut inputs = image.artifact_set();
                if let Some(prompt) = &request.prompt {
                    inputs = inputs.union(&parse_caption(prompt));
                }
                let mut lineage = image.lineage.clone();
                let stem = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                lineage.push(stem.trim_end_matches(&format!(".{SIM_IMAGE_EXTENSION}")).to_owned());
                (inputs, lineage)
            }
            Op::Text2img => {
                let prompt = request
                    .prompt
                    .as_deref()
                    .filter(|p| !p.trim().is_empty())
                    .ok_or("text2img requires a prompt")?;
                (parse_caption(prompt), Vec::new())
            }
            _ => unreachable!("generate called for {}", request.op),
        };
        let artifacts = self.evolve(&inputs, request.strength, request.steps, request.rng_seed);
        let image = SimImage {
            artifacts: artifacts.iter().map(|l| l.as_str().to_owned()).collect(),
            lineage,
        };
        let path = self.write_image(&image).map_err(|e| e.to_string())?;
        Ok(Reply::Image(path.display().to_string()))
    }
}

impl Handler for SimBackend {
    fn handshake(&self) -> Handshake {
        Handshake {
            capabilities: Op::ALL.to_vec(),
            single_flight: false,
        }
    }

    fn handle(&self, request: &Request) -> Result<Reply, String> {
        match request.op {
            Op::Img2img | Op::Text2img => self.generate(request),
            Op::Caption => {
                let (_, image) = Self::read_input(request)?;
                Ok(Reply::Caption(sim_caption(&image.artifact_set())))
            }
            Op::Detect => {
                let (_, image) = Self::read_input(request)?;
                Ok(Reply::Labels(self.detect_labels(&image.artifact_set(), request.rng_seed)))
            }
        }
    }
}
