//! Telephone chains: generate → caption → detect, repeated `l` times from a
//! seed image, with every step persisted for later scoring.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::artifact::{normalize_label, ArtifactSet};
use crate::protocol::{AdapterClient, Op, ProtocolError, Request};

pub const DEFAULT_CHAIN_LENGTH: u32 = 10;
pub const STEPS_FILE: &str = "steps.json";

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("{0} chains need the previous caption")]
    MissingCaption(ChainType),
    #[error("{0} chains need the previous image")]
    MissingImage(ChainType),
    #[error("captioner returned an empty caption")]
    EmptyCaption,
    #[error("{0} chains need a captioner")]
    NoCaptioner(ChainType),
    #[error("no detector configured")]
    NoDetector,
    #[error("{op} failed: {source}")]
    Backend {
        op: &'static str,
        #[source]
        source: ProtocolError,
    },
    #[error("chain storage {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("chain record {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ChainError + '_ {
    move |source| ChainError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Which inputs feed each generation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainType {
    /// Previous image only.
    ImgOnly,
    /// Caption of the previous image only.
    CapOnly,
    /// Previous image and its caption.
    ImgCap,
}

impl ChainType {
    pub const ALL: [ChainType; 3] = [ChainType::ImgOnly, ChainType::CapOnly, ChainType::ImgCap];

    pub fn as_str(self) -> &'static str {
        match self {
            ChainType::ImgOnly => "img_only",
            ChainType::CapOnly => "cap_only",
            ChainType::ImgCap => "img_cap",
        }
    }

    pub fn uses_image(self) -> bool {
        matches!(self, ChainType::ImgOnly | ChainType::ImgCap)
    }

    pub fn uses_caption(self) -> bool {
        matches!(self, ChainType::CapOnly | ChainType::ImgCap)
    }

    pub fn generation_op(self) -> Op {
        if self.uses_image() {
            Op::Img2img
        } else {
            Op::Text2img
        }
    }
}

impl fmt::Display for ChainType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChainType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChainType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown chain type {s:?} (expected img_only, cap_only or img_cap)"))
    }
}

/// Text-only step count matching a nominal strength: 0.3 → 15, 0.6 → 30, 0.9 → 45.
pub fn nominal_inference_steps(strength: f64) -> u32 {
    ((strength * 50.0).round() as u32).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub model_id: String,
    pub chain_type: ChainType,
    /// img2img strength; nominal only for cap_only chains.
    pub strength: f64,
    pub max_steps: u32,
    /// Step count sent with text2img requests.
    pub inference_steps: u32,
    pub threshold: f64,
    pub rng_seed: u64,
}

impl ChainConfig {
    pub fn new(model_id: impl Into<String>, chain_type: ChainType, strength: f64) -> Self {
        ChainConfig {
            model_id: model_id.into(),
            chain_type,
            strength,
            max_steps: DEFAULT_CHAIN_LENGTH,
            inference_steps: nominal_inference_steps(strength),
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            rng_seed: 0,
        }
    }
}

/// Inputs of one generation call, before ids and seeds are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub op: Op,
    pub image: Option<String>,
    pub text: Option<String>,
}

pub fn build_input(
    chain_type: ChainType,
    prev_image: Option<&str>,
    prev_caption: Option<&str>,
) -> Result<GenerationRequest, ChainError> {
    let image = if chain_type.uses_image() {
        Some(prev_image.ok_or(ChainError::MissingImage(chain_type))?.to_owned())
    } else {
        None
    };
    let text = if chain_type.uses_caption() {
        Some(prev_caption.ok_or(ChainError::MissingCaption(chain_type))?.to_owned())
    } else {
        None
    };
    Ok(GenerationRequest {
        op: chain_type.generation_op(),
        image,
        text,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub label: String,
    pub detector: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub index: u32,
    /// File name inside the chain directory.
    pub image: String,
    pub caption: Option<String>,
    pub artifacts: Option<ArtifactSet>,
    pub raw_detections: Vec<RawDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFailure {
    /// Step being built when the failure happened; 0 means the seed.
    pub step: u32,
    pub op: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub chain_id: String,
    pub seed_id: String,
    pub seed_image: String,
    pub seed_artifacts: ArtifactSet,
    pub seed_caption: Option<String>,
    pub config: ChainConfig,
    pub steps: Vec<ChainStep>,
    pub truncated: bool,
    pub failure: Option<ChainFailure>,
}

impl ChainRecord {
    pub fn save(&self, chain_dir: &Path) -> Result<PathBuf, ChainError> {
        std::fs::create_dir_all(chain_dir).map_err(io_err(chain_dir))?;
        let path = chain_dir.join(STEPS_FILE);
        let mut body = serde_json::to_string_pretty(self).expect("chain record serializes");
        body.push('\n');
        std::fs::write(&path, body).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, ChainError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&bytes).map_err(|source| ChainError::Json {
            path: path.to_owned(),
            source,
        })
    }
}

/// Adapter handles one chain talks to.
#[derive(Debug, Clone)]
pub struct Backends {
    pub generator: Arc<AdapterClient>,
    pub captioner: Option<Arc<AdapterClient>>,
    /// `(detector id, client)`; artifacts are the union over all of them.
    pub detectors: Vec<(String, Arc<AdapterClient>)>,
}

#[derive(Debug, Clone)]
pub struct SeedInput {
    pub id: String,
    pub image: PathBuf,
    pub artifacts: ArtifactSet,
}

/// Stable 64-bit seed from a list of parts (SHA-256 prefix).
pub fn derive_seed(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
}

fn step_seed(chain_seed: u64, step: u32, op: &str) -> u64 {
    derive_seed(&[&chain_seed.to_string(), &step.to_string(), op])
}

/// Queries every detector and unions the normalized labels.
pub fn extract_artifacts(
    image: &str,
    detectors: &[(String, Arc<AdapterClient>)],
    rng_seed: u64,
) -> Result<(ArtifactSet, Vec<RawDetection>), ChainError> {
    if detectors.is_empty() {
        return Err(ChainError::NoDetector);
    }
    let mut set = ArtifactSet::new();
    let mut raw = Vec::new();
    for (i, (id, client)) in detectors.iter().enumerate() {
        let seed = derive_seed(&[&rng_seed.to_string(), &i.to_string()]);
        let labels = client
            .detect(image, seed)
            .map_err(|source| ChainError::Backend { op: "detect", source })?;
        for l in labels {
            if let Ok(label) = normalize_label(&l.label) {
                set.insert(label);
            }
            raw.push(RawDetection {
                label: l.label,
                detector: id.clone(),
                confidence: l.confidence,
            });
        }
    }
    Ok((set, raw))
}

pub fn caption_image(image: &str, captioner: &AdapterClient, rng_seed: u64) -> Result<String, ChainError> {
    let caption = captioner
        .caption(image, rng_seed)
        .map_err(|source| ChainError::Backend { op: "caption", source })?;
    if caption.trim().is_empty() {
        return Err(ChainError::EmptyCaption);
    }
    Ok(caption)
}

fn image_extension(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let sim_suffix = format!(".{}", crate::sim::SIM_IMAGE_EXTENSION);
    if name.ends_with(&sim_suffix) {
        crate::sim::SIM_IMAGE_EXTENSION.to_owned()
    } else {
        path.extension()
            .map(|e| e.to_string_lossy().into_owned())
            .unwrap_or_else(|| "img".to_owned())
    }
}

fn op_name(err: &ChainError) -> &'static str {
    match err {
        ChainError::Backend { op, .. } => op,
        ChainError::EmptyCaption | ChainError::NoCaptioner(_) | ChainError::MissingCaption(_) => "caption",
        ChainError::NoDetector => "detect",
        ChainError::MissingImage(_) => "generate",
        ChainError::Io { .. } | ChainError::Json { .. } => "store",
    }
}

/// Runs all `max_steps` steps (requirement breaks do not stop generation)
/// and persists the record to `chain_dir/steps.json`.
///
/// A backend failure ends the chain early: the completed steps are kept and
/// the record is marked truncated. Only storage errors are returned as `Err`.
pub fn run_chain(
    chain_id: &str,
    seed: &SeedInput,
    config: &ChainConfig,
    backends: &Backends,
    chain_dir: &Path,
) -> Result<ChainRecord, ChainError> {
    std::fs::create_dir_all(chain_dir).map_err(io_err(chain_dir))?;
    let chain_dir = chain_dir.canonicalize().map_err(io_err(chain_dir))?;

    let mut record = ChainRecord {
        chain_id: chain_id.to_owned(),
        seed_id: seed.id.clone(),
        seed_image: seed.image.display().to_string(),
        seed_artifacts: seed.artifacts.clone(),
        seed_caption: None,
        config: config.clone(),
        steps: Vec::new(),
        truncated: false,
        failure: None,
    };

    let outcome = drive_steps(&mut record, seed, config, backends, &chain_dir);
    if let Err((step, err)) = outcome {
        if matches!(err, ChainError::Io { .. } | ChainError::Json { .. }) {
            return Err(err);
        }
        record.truncated = true;
        record.failure = Some(ChainFailure {
            step,
            op: op_name(&err).to_owned(),
            message: err.to_string(),
        });
    }
    record.save(&chain_dir)?;
    Ok(record)
}

fn drive_steps(
    record: &mut ChainRecord,
    seed: &SeedInput,
    config: &ChainConfig,
    backends: &Backends,
    chain_dir: &Path,
) -> Result<(), (u32, ChainError)> {
    let chain_type = config.chain_type;
    let captioner = if chain_type.uses_caption() {
        Some(
            backends
                .captioner
                .as_deref()
                .ok_or((0, ChainError::NoCaptioner(chain_type)))?,
        )
    } else {
        None
    };

    let seed_image = std::path::absolute(&seed.image).map_err(|e| (0, io_err(&seed.image)(e)))?;
    let mut prev_image = seed_image.display().to_string();
    let mut prev_caption = match captioner {
        Some(c) => Some(caption_image(&prev_image, c, step_seed(config.rng_seed, 0, "caption")).map_err(|e| (0, e))?),
        None => None,
    };
    record.seed_caption = prev_caption.clone();

    for n in 1..=config.max_steps {
        let at = |e| (n, e);
        let input = build_input(chain_type, Some(&prev_image), prev_caption.as_deref()).map_err(at)?;
        let mut request = Request::new(input.op, step_seed(config.rng_seed, n, "generate"));
        request.image_path = input.image;
        request.prompt = input.text;
        match input.op {
            Op::Img2img => request.strength = Some(config.strength),
            _ => request.steps = Some(config.inference_steps),
        }
        let produced = backends
            .generator
            .generate(request)
            .map_err(|source| at(ChainError::Backend { op: "generate", source }))?;

        let produced = PathBuf::from(produced);
        let file_name = format!("step_{n}.{}", image_extension(&produced));
        let stored = chain_dir.join(&file_name);
        std::fs::copy(&produced, &stored).map_err(|e| {
            at(ChainError::Backend {
                op: "generate",
                source: ProtocolError::Transport(format!("cannot read generated image {}: {e}", produced.display())),
            })
        })?;
        let stored_str = stored.display().to_string();

        let caption = match captioner {
            Some(c) => Some(caption_image(&stored_str, c, step_seed(config.rng_seed, n, "caption")).map_err(at)?),
            None => None,
        };
        let (artifacts, raw_detections) =
            extract_artifacts(&stored_str, &backends.detectors, step_seed(config.rng_seed, n, "detect")).map_err(at)?;

        record.steps.push(ChainStep {
            index: n,
            image: file_name,
            caption: caption.clone(),
            artifacts: Some(artifacts),
            raw_detections,
        });
        prev_image = stored_str;
        prev_caption = caption;
    }
    Ok(())
}
