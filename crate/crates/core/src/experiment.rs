//! Experiment configuration and the cross-product runner that writes a run
//! directory:
//!
//! ```text
//! <run>/manifest.json
//! <run>/chains/<chain_id>/steps.json
//! <run>/chains/<chain_id>/step_<n>.<ext>
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::artifact::{ArtifactSet, EmbeddingTable};
use crate::chain::{
    derive_seed, run_chain, Backends, ChainConfig, ChainError, ChainFailure, ChainType, SeedInput, DEFAULT_CHAIN_LENGTH,
};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::protocol::{AdapterClient, HttpTransport, InProcessTransport, Op, ProtocolError, StdioTransport};
use crate::report::ComparisonSpec;
use crate::sim::{SimBackend, SimBehavior, SimVocabulary, DEFAULT_INTER_SIM, DEFAULT_INTRA_SIM};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHAINS_DIR: &str = "chains";
pub const ENV_OUTPUT_DIR: &str = "TELECHAIN_OUTPUT_DIR";
pub const ENV_WORKERS: &str = "TELECHAIN_WORKERS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error at {path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("experiment has no seeds")]
    EmptySeedSet,
    #[error("adapter {name}: {source}")]
    Adapter {
        name: String,
        #[source]
        source: ProtocolError,
    },
    #[error("run directory {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn default_l() -> u32 {
    DEFAULT_CHAIN_LENGTH
}
fn default_t() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_workers() -> usize {
    1
}
fn default_timeout() -> f64 {
    crate::protocol::DEFAULT_TIMEOUT.as_secs_f64()
}
fn default_intra() -> f64 {
    DEFAULT_INTRA_SIM
}
fn default_inter() -> f64 {
    DEFAULT_INTER_SIM
}

/// One label or a list of labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Subjects {
    One(String),
    Many(Vec<String>),
}

impl Subjects {
    pub fn labels(&self) -> Vec<&str> {
        match self {
            Subjects::One(s) => vec![s.as_str()],
            Subjects::Many(v) => v.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedEntry {
    pub id: String,
    pub image: PathBuf,
    /// Ground-truth seed artifacts.
    pub subject: Subjects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimAdapterSpec {
    #[serde(flatten)]
    pub behavior: SimBehavior,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default = "default_intra")]
    pub intra_cluster_sim: f64,
    #[serde(default = "default_inter")]
    pub inter_cluster_sim: f64,
}

impl Default for SimAdapterSpec {
    fn default() -> Self {
        SimAdapterSpec {
            behavior: SimBehavior::copy(),
            label_noise: 0.0,
            intra_cluster_sim: DEFAULT_INTRA_SIM,
            inter_cluster_sim: DEFAULT_INTER_SIM,
        }
    }
}

/// How to reach an adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterSpec {
    /// Built-in simulator, run in-process through the protocol codec.
    Sim(SimAdapterSpec),
    /// Subprocess speaking the protocol on stdin/stdout.
    Stdio { command: Vec<String> },
    /// HTTP endpoint accepting POSTed request bodies.
    Http { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    pub adapter: AdapterSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<SeedEntry>,
    pub models: Vec<ModelEntry>,
    /// Required when any chain type uses captions.
    #[serde(default)]
    pub captioner: Option<AdapterSpec>,
    /// One or two detectors; artifacts are their union.
    pub detectors: Vec<ModelEntry>,
    pub chain_types: Vec<ChainType>,
    pub strengths: Vec<f64>,
    #[serde(default = "default_l")]
    pub l: u32,
    #[serde(default = "default_t")]
    pub t: f64,
    pub embedding_table_path: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub experiment_seed: u64,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    #[serde(default)]
    pub comparisons: Vec<ComparisonSpec>,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the JSON path of the first offending field.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(if path.is_empty() { ".".to_owned() } else { path }, e.into_inner().to_string())
        })
    }

    /// Reads, resolves relative paths against the config's directory and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for seed in &mut self.seeds {
            fix(&mut seed.image);
        }
        fix(&mut self.embedding_table_path);
        fix(&mut self.output_dir);
    }

    /// `TELECHAIN_OUTPUT_DIR` and `TELECHAIN_WORKERS` may override the file.
    pub fn apply_env_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(dir) = lookup(ENV_OUTPUT_DIR) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Some(w) = lookup(ENV_WORKERS) {
            self.workers = w
                .parse()
                .map_err(|_| invalid(format!("${ENV_WORKERS}"), format!("not a positive integer: {w:?}")))?;
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, seed) in self.seeds.iter().enumerate() {
            if seed.id.trim().is_empty() {
                return Err(invalid(format!("seeds[{i}].id"), "empty id"));
            }
            if !ids.insert(seed.id.as_str()) {
                return Err(invalid(format!("seeds[{i}].id"), format!("duplicate seed id {:?}", seed.id)));
            }
            if !seed.image.is_file() {
                return Err(invalid(format!("seeds[{i}].image"), format!("file not found: {}", seed.image.display())));
            }
            let labels = seed.subject.labels();
            if labels.is_empty() || ArtifactSet::from_raw(&labels).is_err() {
                return Err(invalid(format!("seeds[{i}].subject"), "subject labels must be non-empty"));
            }
        }
        if self.models.is_empty() {
            return Err(invalid("models", "at least one model is required"));
        }
        let mut model_ids = BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            if m.id.trim().is_empty() || !model_ids.insert(m.id.as_str()) {
                return Err(invalid(format!("models[{i}].id"), format!("empty or duplicate model id {:?}", m.id)));
            }
            validate_adapter(&m.adapter, &format!("models[{i}].adapter"))?;
        }
        if self.detectors.is_empty() || self.detectors.len() > 2 {
            return Err(invalid("detectors", "configure one or two detectors"));
        }
        for (i, d) in self.detectors.iter().enumerate() {
            validate_adapter(&d.adapter, &format!("detectors[{i}].adapter"))?;
        }
        if self.chain_types.is_empty() {
            return Err(invalid("chain_types", "at least one chain type is required"));
        }
        match &self.captioner {
            Some(c) => validate_adapter(c, "captioner")?,
            None if self.chain_types.iter().any(|t| t.uses_caption()) => {
                return Err(invalid("captioner", "cap_only and img_cap chains need a captioner"));
            }
            None => {}
        }
        if self.strengths.is_empty() {
            return Err(invalid("strengths", "at least one strength is required"));
        }
        for (i, s) in self.strengths.iter().enumerate() {
            if !(*s > 0.0 && *s <= 1.0) {
                return Err(invalid(format!("strengths[{i}]"), format!("{s} outside (0, 1]")));
            }
        }
        if self.l == 0 {
            return Err(invalid("l", "chain length must be at least 1"));
        }
        if !(self.t > 0.0 && self.t <= 1.0) {
            return Err(invalid("t", format!("threshold {} outside (0, 1]", self.t)));
        }
        if !self.embedding_table_path.is_file() {
            return Err(invalid(
                "embedding_table_path",
                format!("file not found: {}", self.embedding_table_path.display()),
            ));
        }
        if self.workers == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
        if !(self.request_timeout_secs > 0.0 && self.request_timeout_secs.is_finite()) {
            return Err(invalid("request_timeout_secs", "must be positive"));
        }
        Ok(())
    }

    /// Every chain in cross-product order: seed × model × chain type × strength.
    pub fn coordinates(&self) -> Vec<ChainCoordinates> {
        let mut out = Vec::new();
        for seed in &self.seeds {
            for model in &self.models {
                for &chain_type in &self.chain_types {
                    for &strength in &self.strengths {
                        let rng_seed = derive_seed(&[
                            &self.experiment_seed.to_string(),
                            &seed.id,
                            &model.id,
                            chain_type.as_str(),
                            &strength.to_string(),
                        ]);
                        out.push(ChainCoordinates {
                            chain_id: chain_id(&seed.id, &model.id, chain_type, strength),
                            seed_id: seed.id.clone(),
                            model: model.id.clone(),
                            chain_type,
                            strength,
                            rng_seed,
                        });
                    }
                }
            }
        }
        out
    }
}

fn validate_adapter(spec: &AdapterSpec, path: &str) -> Result<(), ConfigError> {
    match spec {
        AdapterSpec::Sim(sim) => {
            sim.behavior.validate().map_err(|e| invalid(path, e.to_string()))?;
            if !(0.0..=1.0).contains(&sim.label_noise) {
                return Err(invalid(format!("{path}.label_noise"), "outside [0, 1]"));
            }
            SimVocabulary::food_with(sim.intra_cluster_sim, sim.inter_cluster_sim)
                .map(|_| ())
                .map_err(|e| invalid(path, e.to_string()))
        }
        AdapterSpec::Stdio { command } if command.is_empty() => Err(invalid(format!("{path}.command"), "empty command")),
        AdapterSpec::Http { url } if url.trim().is_empty() => Err(invalid(format!("{path}.url"), "empty url")),
        _ => Ok(()),
    }
}

fn sanitize(part: &str) -> String {
    part.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') { c } else { '_' })
        .collect()
}

pub fn chain_id(seed_id: &str, model: &str, chain_type: ChainType, strength: f64) -> String {
    format!("{}__{}__{}__s{}", sanitize(seed_id), sanitize(model), chain_type, strength)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainCoordinates {
    pub chain_id: String,
    pub seed_id: String,
    pub model: String,
    pub chain_type: ChainType,
    pub strength: f64,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStatus {
    Complete,
    /// Backend failure after at least one step.
    Truncated,
    /// Backend failure before any step was recorded.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub coordinates: ChainCoordinates,
    pub status: ChainStatus,
    pub steps_recorded: u32,
    /// Relative to the run directory.
    pub record: String,
    pub failure: Option<ChainFailure>,
    pub files: Vec<FileHash>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: ExperimentConfig,
    pub chains: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn failed_chains(&self) -> usize {
        self.chains.iter().filter(|c| c.status != ChainStatus::Complete).count()
    }

    pub fn load(run_dir: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(run_dir.join(MANIFEST_FILE))?;
        serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, run_dir: &Path) -> std::io::Result<()> {
        let mut body = serde_json::to_string_pretty(self).expect("manifest serializes");
        body.push('\n');
        std::fs::write(run_dir.join(MANIFEST_FILE), body)
    }
}

fn connect(spec: &AdapterSpec, name: &str, workspace: &Path, timeout: Duration) -> Result<Arc<AdapterClient>, ExperimentError> {
    let adapter_err = |source| ExperimentError::Adapter {
        name: name.to_owned(),
        source,
    };
    let transport: Box<dyn crate::protocol::Transport> = match spec {
        AdapterSpec::Sim(sim) => {
            let vocab = SimVocabulary::food_with(sim.intra_cluster_sim, sim.inter_cluster_sim)
                .map_err(|e| adapter_err(ProtocolError::Spawn(e.to_string())))?;
            let backend = SimBackend::new(vocab, sim.behavior.clone(), workspace.join(sanitize(name)))
                .and_then(|b| b.with_label_noise(sim.label_noise))
                .map_err(|e| adapter_err(ProtocolError::Spawn(e.to_string())))?;
            Box::new(InProcessTransport::new(Arc::new(backend)))
        }
        AdapterSpec::Stdio { command } => Box::new(StdioTransport::spawn(command).map_err(adapter_err)?),
        AdapterSpec::Http { url } => Box::new(HttpTransport::new(url.clone())),
    };
    AdapterClient::connect(transport, timeout).map(Arc::new).map_err(adapter_err)
}

fn require(client: &AdapterClient, op: Op, name: &str) -> Result<(), ExperimentError> {
    if client.handshake().supports(op) {
        Ok(())
    } else {
        Err(ExperimentError::Adapter {
            name: name.to_owned(),
            source: ProtocolError::Unsupported(op),
        })
    }
}

fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Runs every chain of the cross product and writes the manifest.
///
/// Chains run on `workers` threads; results are collected in coordinate
/// order, so the manifest does not depend on scheduling. Backend failures
/// are recorded per chain and never abort the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest, ExperimentError> {
    if config.seeds.is_empty() {
        return Err(ExperimentError::EmptySeedSet);
    }
    config.validate()?;
    // Load once up front so a bad table fails before any generation.
    EmbeddingTable::load(&config.embedding_table_path)
        .map_err(|e| invalid("embedding_table_path", e.to_string()))?;

    let out = &config.output_dir;
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| ExperimentError::Io { path, source }
    };
    std::fs::create_dir_all(out.join(CHAINS_DIR)).map_err(io(out))?;
    let workspace = out.join("work");
    let timeout = config.timeout();

    let mut generators = std::collections::BTreeMap::new();
    for model in &config.models {
        let client = connect(&model.adapter, &model.id, &workspace, timeout)?;
        for t in &config.chain_types {
            require(&client, t.generation_op(), &model.id)?;
        }
        generators.insert(model.id.clone(), client);
    }
    let captioner = match &config.captioner {
        Some(spec) => {
            let c = connect(spec, "captioner", &workspace, timeout)?;
            require(&c, Op::Caption, "captioner")?;
            Some(c)
        }
        None => None,
    };
    let mut detectors = Vec::new();
    for d in &config.detectors {
        let c = connect(&d.adapter, &d.id, &workspace, timeout)?;
        require(&c, Op::Detect, &d.id)?;
        detectors.push((d.id.clone(), c));
    }

    let seeds: std::collections::BTreeMap<&str, SeedInput> = config
        .seeds
        .iter()
        .map(|s| {
            let artifacts = ArtifactSet::from_raw(s.subject.labels()).expect("validated");
            (
                s.id.as_str(),
                SeedInput {
                    id: s.id.clone(),
                    image: s.image.clone(),
                    artifacts,
                },
            )
        })
        .collect();

    let run_one = |coords: &ChainCoordinates| -> Result<ManifestEntry, ExperimentError> {
        let backends = Backends {
            generator: Arc::clone(&generators[&coords.model]),
            captioner: captioner.clone(),
            detectors: detectors.clone(),
        };
        let chain_config = ChainConfig {
            max_steps: config.l,
            threshold: config.t,
            rng_seed: coords.rng_seed,
            ..ChainConfig::new(coords.model.clone(), coords.chain_type, coords.strength)
        };
        let rel_dir = format!("{CHAINS_DIR}/{}", coords.chain_id);
        let chain_dir = out.join(&rel_dir);
        let record = run_chain(&coords.chain_id, &seeds[coords.seed_id.as_str()], &chain_config, &backends, &chain_dir)?;

        let mut files = Vec::with_capacity(record.steps.len() + 1);
        for name in std::iter::once(crate::chain::STEPS_FILE).chain(record.steps.iter().map(|s| s.image.as_str())) {
            let path = chain_dir.join(name);
            files.push(FileHash {
                name: name.to_owned(),
                sha256: sha256_file(&path).map_err(io(&path))?,
            });
        }
        let status = match (&record.failure, record.steps.len()) {
            (None, _) => ChainStatus::Complete,
            (Some(_), 0) => ChainStatus::Failed,
            (Some(_), _) => ChainStatus::Truncated,
        };
        Ok(ManifestEntry {
            coordinates: coords.clone(),
            status,
            steps_recorded: record.steps.len() as u32,
            record: format!("{rel_dir}/{}", crate::chain::STEPS_FILE),
            failure: record.failure,
            files,
        })
    };

    let coords = config.coordinates();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let chains = pool.install(|| coords.par_iter().map(run_one).collect::<Result<Vec<_>, _>>())?;

    let manifest = RunManifest {
        experiment: config.clone(),
        chains,
    };
    manifest.save(out).map_err(io(out))?;
    Ok(manifest)
}
