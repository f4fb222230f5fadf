mod common;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use telechain::artifact::ArtifactSet;
use telechain::chain::{run_chain, Backends, ChainConfig, ChainRecord, ChainType, SeedInput, STEPS_FILE};
use telechain::experiment::{run_experiment, ChainStatus};
use telechain::metrics::score_chain;
use telechain::protocol::{AdapterClient, DetectedLabel, Handler, Handshake, InProcessTransport, Op, Reply, Request};
use telechain::report::{cmd_score, SCORES_FILE};
use telechain::sim::{write_seed_image, SimBackend, SimBehavior, SimVocabulary};

use common::{sim_experiment, three_regimes};

const TIMEOUT: Duration = Duration::from_secs(10);

fn client(handler: Arc<dyn Handler>) -> Arc<AdapterClient> {
    Arc::new(AdapterClient::connect(Box::new(InProcessTransport::new(handler)), TIMEOUT).unwrap())
}

fn sim(dir: &Path, name: &str, behavior: SimBehavior) -> Arc<SimBackend> {
    Arc::new(SimBackend::new(SimVocabulary::food(), behavior, dir.join(name)).unwrap())
}

/// Records every request and fails generation from the `fail_at`-th call on.
struct Scripted {
    inner: Arc<SimBackend>,
    fail_at: Option<usize>,
    generations: AtomicUsize,
    seen: Mutex<Vec<Request>>,
}

impl Scripted {
    fn new(inner: Arc<SimBackend>, fail_at: Option<usize>) -> Arc<Self> {
        Arc::new(Scripted {
            inner,
            fail_at,
            generations: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        })
    }
}

impl Handler for Scripted {
    fn handshake(&self) -> Handshake {
        self.inner.handshake()
    }

    fn handle(&self, request: &Request) -> Result<Reply, String> {
        self.seen.lock().unwrap().push(request.clone());
        if matches!(request.op, Op::Img2img | Op::Text2img) {
            let n = self.generations.fetch_add(1, Ordering::SeqCst) + 1;
            if self.fail_at.is_some_and(|f| n >= f) {
                return Err("out of GPU memory".into());
            }
        }
        self.inner.handle(request)
    }
}

struct FixedDetector(&'static str);

impl Handler for FixedDetector {
    fn handshake(&self) -> Handshake {
        Handshake {
            capabilities: vec![Op::Detect],
            single_flight: true,
        }
    }

    fn handle(&self, _: &Request) -> Result<Reply, String> {
        Ok(Reply::Labels(vec![DetectedLabel {
            label: self.0.to_owned(),
            confidence: 0.5,
        }]))
    }
}

fn seed(dir: &Path) -> SeedInput {
    let image = dir.join("seed.sim.json");
    write_seed_image(&image, &["apple pie"]).unwrap();
    SeedInput {
        id: "s".into(),
        image,
        artifacts: ArtifactSet::from_raw(["apple pie"]).unwrap(),
    }
}

#[test]
fn truncated_chain_keeps_completed_steps_and_scores_against_full_length() {
    let dir = tempfile::tempdir().unwrap();
    let generator = Scripted::new(sim(dir.path(), "gen", SimBehavior::copy()), Some(3));
    let backends = Backends {
        generator: client(generator.clone()),
        captioner: None,
        detectors: vec![("det".into(), client(sim(dir.path(), "det", SimBehavior::copy())))],
    };
    let config = ChainConfig::new("m", ChainType::ImgOnly, 0.6);
    let chain_dir = dir.path().join("chain");
    let record = run_chain("c", &seed(dir.path()), &config, &backends, &chain_dir).unwrap();

    assert!(record.truncated);
    assert_eq!(record.steps.len(), 2);
    let failure = record.failure.as_ref().unwrap();
    assert_eq!((failure.step, failure.op.as_str()), (3, "generate"));
    assert!(failure.message.contains("out of GPU memory"));
    assert!(chain_dir.join("step_2.sim.json").is_file());
    assert!(!chain_dir.join("step_3.sim.json").exists());

    // Two unbroken copy steps out of ten: K = 2, RS = 2/10 · 1.
    let table = SimVocabulary::food().embedding_table();
    let scores = score_chain(&record, 0.65, &table).unwrap();
    assert_eq!(scores.k, 2);
    assert_eq!(scores.rs, 0.2);
    assert_eq!((scores.cohesion, scores.diversity, scores.creativity), (0.0, 0.0, 0.0));

    assert_eq!(ChainRecord::load(&chain_dir.join(STEPS_FILE)).unwrap(), record);
}

#[test]
fn chain_runs_all_steps_after_a_break() {
    let dir = tempfile::tempdir().unwrap();
    let backends = Backends {
        generator: client(sim(dir.path(), "gen", SimBehavior::drift())),
        captioner: None,
        detectors: vec![("det".into(), client(sim(dir.path(), "det", SimBehavior::copy())))],
    };
    let config = ChainConfig::new("m", ChainType::ImgOnly, 0.6);
    let record = run_chain("c", &seed(dir.path()), &config, &backends, &dir.path().join("chain")).unwrap();
    assert_eq!(record.steps.len(), 10);
    assert!(!record.truncated && record.failure.is_none());
    let first = record.steps[0].artifacts.as_ref().unwrap();
    assert!(!first.contains(&telechain::Label::new("apple pie").unwrap()));
}

#[test]
fn requests_follow_chain_type() {
    let dir = tempfile::tempdir().unwrap();
    for (chain_type, strength, steps) in [
        (ChainType::CapOnly, 0.3, Some(15)),
        (ChainType::CapOnly, 0.6, Some(30)),
        (ChainType::CapOnly, 0.9, Some(45)),
        (ChainType::ImgOnly, 0.6, None),
        (ChainType::ImgCap, 0.9, None),
    ] {
        let generator = Scripted::new(sim(dir.path(), "gen", SimBehavior::copy()), None);
        let captioner = Scripted::new(sim(dir.path(), "cap", SimBehavior::copy()), None);
        let backends = Backends {
            generator: client(generator.clone()),
            captioner: Some(client(captioner.clone())),
            detectors: vec![("det".into(), client(sim(dir.path(), "det", SimBehavior::copy())))],
        };
        let mut config = ChainConfig::new("m", chain_type, strength);
        config.rng_seed = 99;
        let chain_dir = dir.path().join(format!("{chain_type}-{strength}"));
        let record = run_chain("c", &seed(dir.path()), &config, &backends, &chain_dir).unwrap();
        assert_eq!(record.steps.len(), 10);

        let seen = generator.seen.lock().unwrap();
        assert_eq!(seen.len(), 10);
        let mut seeds = std::collections::BTreeSet::new();
        for r in seen.iter() {
            assert_eq!(r.op, chain_type.generation_op());
            assert_eq!(r.steps, steps);
            if chain_type.uses_image() {
                assert_eq!(r.strength, Some(strength));
                assert!(r.image_path.is_some());
            } else {
                assert_eq!(r.strength, None);
                assert!(r.image_path.is_none());
            }
            assert_eq!(r.prompt.is_some(), chain_type.uses_caption());
            seeds.insert(r.rng_seed);
        }
        assert_eq!(seeds.len(), 10, "every step gets its own seed");

        let captions = captioner.seen.lock().unwrap();
        if chain_type.uses_caption() {
            // Seed caption plus one per step.
            assert_eq!(captions.len(), 11);
            assert_eq!(record.seed_caption.as_deref(), Some("an image of apple pie"));
            assert!(record.steps.iter().all(|s| s.caption.is_some()));
        } else {
            assert!(captions.is_empty());
            assert!(record.steps.iter().all(|s| s.caption.is_none()));
        }
    }
}

#[test]
fn detector_outputs_are_unioned() {
    let dir = tempfile::tempdir().unwrap();
    let backends = Backends {
        generator: client(sim(dir.path(), "gen", SimBehavior::copy())),
        captioner: None,
        detectors: vec![
            ("first".into(), client(Arc::new(FixedDetector("  Apple   PIE")))),
            ("second".into(), client(Arc::new(FixedDetector("fork")))),
        ],
    };
    let mut config = ChainConfig::new("m", ChainType::ImgOnly, 0.3);
    config.max_steps = 2;
    let record = run_chain("c", &seed(dir.path()), &config, &backends, &dir.path().join("chain")).unwrap();
    for step in &record.steps {
        assert_eq!(step.artifacts.as_ref().unwrap(), &ArtifactSet::from_raw(["apple pie", "fork"]).unwrap());
        let detectors: Vec<_> = step.raw_detections.iter().map(|d| d.detector.as_str()).collect();
        assert_eq!(detectors, ["first", "second"]);
        assert_eq!(step.raw_detections[0].label, "  Apple   PIE");
    }
}

#[test]
fn same_seed_same_run_regardless_of_workers() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = sim_experiment(dir.path(), 6, three_regimes(), &ChainType::ALL, &[0.3, 0.9]);

    config.workers = 1;
    config.output_dir = dir.path().join("serial");
    let serial = run_experiment(&config).unwrap();
    config.workers = 8;
    config.output_dir = dir.path().join("parallel");
    let parallel = run_experiment(&config).unwrap();
    config.output_dir = dir.path().join("again");
    let again = run_experiment(&config).unwrap();

    assert_eq!(serial.chains.len(), 6 * 3 * 3 * 2);
    assert!(serial.chains.iter().all(|c| c.status == ChainStatus::Complete));
    assert_eq!(serial.chains, parallel.chains);
    assert_eq!(parallel.chains, again.chains);

    let scores: Vec<Vec<u8>> = ["serial", "parallel", "again"]
        .iter()
        .map(|d| {
            let run = dir.path().join(d);
            cmd_score(&run).unwrap();
            std::fs::read(run.join(SCORES_FILE)).unwrap()
        })
        .collect();
    assert_eq!(scores[0], scores[1]);
    assert_eq!(scores[1], scores[2]);
}

#[test]
fn different_experiment_seed_changes_stochastic_chains() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = sim_experiment(dir.path(), 6, three_regimes(), &[ChainType::ImgOnly], &[0.6]);
    config.output_dir = dir.path().join("a");
    let a = run_experiment(&config).unwrap();
    config.experiment_seed += 1;
    config.output_dir = dir.path().join("b");
    let b = run_experiment(&config).unwrap();
    let hashes = |m: &telechain::RunManifest, model: &str| -> Vec<_> {
        m.chains
            .iter()
            .filter(|c| c.coordinates.model == model)
            .map(|c| c.files.clone())
            .collect()
    };
    assert_ne!(hashes(&a, "cohesive"), hashes(&b, "cohesive"));
}

#[test]
fn manifest_records_layout() {
    let dir = tempfile::tempdir().unwrap();
    let config = sim_experiment(dir.path(), 2, three_regimes(), &[ChainType::ImgCap], &[0.3, 0.6, 0.9]);
    let manifest = run_experiment(&config).unwrap();
    assert_eq!(manifest.chains.len(), 2 * 3 * 3);
    for entry in &manifest.chains {
        let record_path = config.output_dir.join(&entry.record);
        assert!(record_path.is_file());
        assert_eq!(entry.steps_recorded, 10);
        assert_eq!(entry.files.len(), 11);
        let record = ChainRecord::load(&record_path).unwrap();
        assert_eq!(record.config.rng_seed, entry.coordinates.rng_seed);
        for step in &record.steps {
            assert!(record_path.parent().unwrap().join(&step.image).is_file());
        }
    }
    let reloaded = telechain::RunManifest::load(&config.output_dir).unwrap();
    assert_eq!(reloaded, manifest);
}
