use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use telechain::experiment::{run_experiment, ChainStatus, ExperimentConfig, ExperimentError};
use telechain::protocol::golden::run_golden_suite;
use telechain::protocol::{serve_http, serve_stdio, HttpTransport, StdioTransport, Transport};
use telechain::report::{self, ComparisonSpec, ComparisonStatus, Measure, ReportError, Selector};
use telechain::sim::{SimBackend, SimBehavior, SimVocabulary, DEFAULT_INTER_SIM, DEFAULT_INTRA_SIM};

const EXIT_USAGE: u8 = 1;
const EXIT_BACKEND: u8 = 2;
const EXIT_SCORING: u8 = 3;

#[derive(Parser)]
#[command(name = "telechain", version, about = "Telephone-chain creativity evaluation for image generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every chain of an experiment config.
    Run { config: PathBuf },
    /// Score the chains of a run directory into scores.csv.
    Score { run_dir: PathBuf },
    /// Paired t-test between two configurations of a scored run.
    Compare {
        run_dir: PathBuf,
        #[arg(long, default_value = "CR")]
        measure: Measure,
        /// e.g. model=sd,type=img_cap,strength=0.9
        #[arg(long)]
        a: Selector,
        #[arg(long)]
        b: Selector,
        /// Print the record as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write report.md, means.csv and comparisons.csv.
    Report { run_dir: PathBuf },
    /// Serve the simulated backend over the adapter protocol.
    SimAdapter(SimAdapterArgs),
    /// Run the golden protocol suite against an adapter.
    Conformance(ConformanceArgs),
    /// Write a simulated demo experiment (seeds, embeddings, config).
    Demo {
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TransportKind {
    Stdio,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Copy,
    Drift,
    Cohesive,
}

#[derive(Args)]
struct SimAdapterArgs {
    #[arg(long, value_enum, default_value = "stdio")]
    transport: TransportKind,
    /// Address for the HTTP transport.
    #[arg(long, default_value = "127.0.0.1:0")]
    bind: String,
    /// Directory for generated sim images.
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long, value_enum, default_value = "copy")]
    preset: Preset,
    #[arg(long)]
    retain_prob: Option<f64>,
    #[arg(long)]
    novel_rate: Option<f64>,
    #[arg(long)]
    novelty_cluster_bias: Option<f64>,
    #[arg(long)]
    strength_coupling: Option<f64>,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long, default_value_t = DEFAULT_INTRA_SIM)]
    intra: f64,
    #[arg(long, default_value_t = DEFAULT_INTER_SIM)]
    inter: f64,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Target {
    /// Adapter command line, split on whitespace.
    #[arg(long)]
    stdio: Option<String>,
    #[arg(long)]
    http: Option<String>,
}

#[derive(Args)]
struct ConformanceArgs {
    #[command(flatten)]
    target: Target,
    /// Where the fixture image is written; a temp directory by default.
    #[arg(long)]
    fixture_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn report_exit(e: ReportError) -> ExitCode {
    let code = match e {
        ReportError::MissingManifest(_) | ReportError::MissingScores(_) | ReportError::Parse(_) => EXIT_USAGE,
        _ => EXIT_SCORING,
    };
    fail(code, e)
}

fn cmd_run(path: &Path) -> ExitCode {
    let mut config = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    if let Err(e) = config.apply_env_overrides(|k| std::env::var(k).ok()) {
        return fail(EXIT_USAGE, e);
    }
    let manifest = match run_experiment(&config) {
        Ok(m) => m,
        Err(e @ ExperimentError::Adapter { .. }) => return fail(EXIT_BACKEND, e),
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let failed = manifest.failed_chains();
    println!(
        "{} chains written to {} ({} failed)",
        manifest.chains.len(),
        config.output_dir.display(),
        failed
    );
    if failed == 0 {
        return ExitCode::SUCCESS;
    }
    for entry in manifest.chains.iter().filter(|c| c.status != ChainStatus::Complete) {
        if let Some(f) = &entry.failure {
            eprintln!("{}: {} failed at step {}: {}", entry.coordinates.chain_id, f.op, f.step, f.message);
        }
    }
    ExitCode::from(EXIT_BACKEND)
}

fn cmd_compare(run_dir: &Path, spec: ComparisonSpec, json: bool) -> ExitCode {
    let c = match report::cmd_compare(run_dir, &spec) {
        Ok(c) => c,
        Err(e) => return report_exit(e),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&c).expect("record serializes"));
        return ExitCode::SUCCESS;
    }
    println!("measure  {}\na        {} (mean {})\nb        {} (mean {})\nn        {}", c.measure, c.a, c.mean_a, c.b, c.mean_b, c.n);
    match (c.status, c.t, c.df, c.p) {
        (ComparisonStatus::Compared, Some(t), Some(df), Some(p)) => {
            println!("t        {t}\ndf       {df}\np        {p:e} ({})", report::render_p(p));
            println!("significant at p < {}: {}", report::SIGNIFICANCE_LEVEL, if c.significant { "yes" } else { "no" });
        }
        _ => println!("status   identical populations (zero variance of differences)"),
    }
    ExitCode::SUCCESS
}

fn cmd_sim_adapter(args: SimAdapterArgs) -> ExitCode {
    let mut behavior = match args.preset {
        Preset::Copy => SimBehavior::copy(),
        Preset::Drift => SimBehavior::drift(),
        Preset::Cohesive => SimBehavior::cohesive(),
    };
    behavior.retain_prob = args.retain_prob.unwrap_or(behavior.retain_prob);
    behavior.novel_rate = args.novel_rate.unwrap_or(behavior.novel_rate);
    behavior.novelty_cluster_bias = args.novelty_cluster_bias.unwrap_or(behavior.novelty_cluster_bias);
    behavior.strength_coupling = args.strength_coupling.or(behavior.strength_coupling);
    behavior.rng_seed = args.rng_seed;
    let backend = SimVocabulary::food_with(args.intra, args.inter)
        .and_then(|v| SimBackend::new(v, behavior, &args.workspace))
        .and_then(|b| b.with_label_noise(args.label_noise));
    let backend = match backend {
        Ok(b) => b,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    match args.transport {
        TransportKind::Stdio => {
            let stdin = std::io::stdin();
            match serve_stdio(&backend, BufReader::new(stdin.lock()), std::io::stdout().lock()) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(EXIT_BACKEND, e),
            }
        }
        TransportKind::Http => match serve_http(Arc::new(backend), &args.bind) {
            Ok(server) => {
                println!("{}", server.url());
                let _ = std::io::stdout().flush();
                server.join();
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_USAGE, e),
        },
    }
}

fn cmd_conformance(args: ConformanceArgs) -> ExitCode {
    let transport: Box<dyn Transport> = match (args.target.stdio, args.target.http) {
        (Some(cmd), _) => {
            let parts: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            match StdioTransport::spawn(&parts) {
                Ok(t) => Box::new(t),
                Err(e) => return fail(EXIT_BACKEND, e),
            }
        }
        (None, Some(url)) => Box::new(HttpTransport::new(url)),
        (None, None) => return fail(EXIT_USAGE, "pass --stdio or --http"),
    };
    let temp;
    let fixture_dir = match args.fixture_dir {
        Some(d) => d,
        None => {
            temp = std::env::temp_dir().join(format!("telechain-conformance-{}", std::process::id()));
            temp.clone()
        }
    };
    let outcomes = run_golden_suite(transport.as_ref(), &fixture_dir, Duration::from_secs_f64(args.timeout_secs));
    let mut failed = 0;
    for o in &outcomes {
        if o.passed {
            println!("PASS  {}", o.name);
        } else {
            failed += 1;
            println!("FAIL  {}: {}", o.name, o.detail);
        }
    }
    println!("{} of {} cases passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_BACKEND)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Score { run_dir } => match report::cmd_score(&run_dir) {
            Ok(rows) => {
                println!("scored {} chains into {}", rows.len(), run_dir.join(report::SCORES_FILE).display());
                ExitCode::SUCCESS
            }
            Err(e) => report_exit(e),
        },
        Command::Compare {
            run_dir,
            measure,
            a,
            b,
            json,
        } => cmd_compare(&run_dir, ComparisonSpec { measure, a, b }, json),
        Command::Report { run_dir } => match report::cmd_report(&run_dir) {
            Ok(out) => {
                println!(
                    "{} mean rows, {} comparisons written to {}",
                    out.means.len(),
                    out.comparisons.len(),
                    run_dir.join(report::REPORT_FILE).display()
                );
                ExitCode::SUCCESS
            }
            Err(e) => report_exit(e),
        },
        Command::SimAdapter(args) => cmd_sim_adapter(args),
        Command::Conformance(args) => cmd_conformance(args),
        Command::Demo { dir, seeds } => match telechain::demo::write_demo(&dir, seeds) {
            Ok(path) => {
                println!("wrote {}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_USAGE, e),
        },
    }
}
