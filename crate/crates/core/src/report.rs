//! Scoring of stored runs, paired comparisons and table rendering.
//!
//! `scores.csv` and `comparisons.csv` carry full precision; rounding happens
//! only in `report.md`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{ArtifactError, EmbeddingTable};
use crate::chain::{ChainError, ChainRecord, ChainType};
use crate::experiment::{ChainStatus, RunManifest, MANIFEST_FILE};
use crate::metrics::{score_chain, MetricsError};
use crate::stats::{aggregate, paired_t_test, PairedSamples, StatsError, TTestResult};

pub const SCORES_FILE: &str = "scores.csv";
pub const REPORT_FILE: &str = "report.md";
pub const MEANS_FILE: &str = "means.csv";
pub const COMPARISONS_FILE: &str = "comparisons.csv";
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
/// p-values below this render as "0+eps".
pub const P_DISPLAY_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no {MANIFEST_FILE} in {0}")]
    MissingManifest(PathBuf),
    #[error("no {SCORES_FILE} in {0}; run `score` first")]
    MissingScores(PathBuf),
    #[error("embedding table: {0}")]
    Table(#[source] ArtifactError),
    #[error("chain {chain_id}: {source}")]
    Scoring {
        chain_id: String,
        #[source]
        source: MetricsError,
    },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("inconsistent run: {0}")]
    Inconsistent(String),
    #[error("selector `{0}` matches no scored chains")]
    EmptySelection(Selector),
    #[error("selector `{selector}` matches {count} configurations; narrow it to one")]
    AmbiguousSelection { selector: Selector, count: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid selector or measure: {0}")]
    Parse(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_owned(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "RS")]
    Rs,
    #[serde(rename = "B_R", alias = "BR")]
    Br,
    #[serde(rename = "D_R", alias = "DR")]
    Dr,
    #[serde(rename = "CR")]
    Cr,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Rs, Measure::Br, Measure::Dr, Measure::Cr];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Rs => "RS",
            Measure::Br => "B_R",
            Measure::Dr => "D_R",
            Measure::Cr => "CR",
        }
    }

    pub fn of(self, row: &ScoreRow) -> f64 {
        match self {
            Measure::Rs => row.rs,
            Measure::Br => row.br,
            Measure::Dr => row.dr,
            Measure::Cr => row.cr,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Measure {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RS" => Ok(Measure::Rs),
            "B_R" | "BR" => Ok(Measure::Br),
            "D_R" | "DR" => Ok(Measure::Dr),
            "CR" => Ok(Measure::Cr),
            _ => Err(ReportError::Parse(format!("unknown measure {s:?}; expected RS, B_R, D_R or CR"))),
        }
    }
}

/// Picks chains by model, chain type and strength; unset fields match anything.
///
/// Text form: `model=X,type=img_cap,strength=0.9`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Selector {
    pub model: Option<String>,
    pub chain_type: Option<ChainType>,
    pub strength: Option<f64>,
}

impl Selector {
    pub fn matches(&self, row: &ScoreRow) -> bool {
        self.model.as_ref().is_none_or(|m| *m == row.model)
            && self.chain_type.is_none_or(|t| t == row.chain_type)
            && self.strength.is_none_or(|s| (s - row.strength).abs() < 1e-9)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(m) = &self.model {
            parts.push(format!("model={m}"));
        }
        if let Some(t) = self.chain_type {
            parts.push(format!("type={t}"));
        }
        if let Some(s) = self.strength {
            parts.push(format!("strength={s}"));
        }
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Selector {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut sel = Selector::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| ReportError::Parse(format!("expected key=value, got {part:?}")))?;
            let value = value.trim();
            match key.trim() {
                "model" => sel.model = Some(value.to_owned()),
                "type" | "chain_type" => {
                    sel.chain_type = Some(value.parse().map_err(|_| ReportError::Parse(format!("unknown chain type {value:?}")))?)
                }
                "strength" => {
                    sel.strength = Some(value.parse().map_err(|_| ReportError::Parse(format!("bad strength {value:?}")))?)
                }
                other => return Err(ReportError::Parse(format!("unknown selector key {other:?}"))),
            }
        }
        Ok(sel)
    }
}

impl TryFrom<String> for Selector {
    type Error = ReportError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Selector> for String {
    fn from(s: Selector) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub measure: Measure,
    pub a: Selector,
    pub b: Selector,
}

/// One line of `scores.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub chain_id: String,
    pub model: String,
    pub chain_type: ChainType,
    pub strength: f64,
    pub seed_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "RS")]
    pub rs: f64,
    #[serde(rename = "BR")]
    pub br: f64,
    #[serde(rename = "DR")]
    pub dr: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
    pub truncated: bool,
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest, ReportError> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(ReportError::MissingManifest(run_dir.to_owned()));
    }
    RunManifest::load(run_dir).map_err(io_err(&path))
}

/// Scores every chain in the manifest except those that failed before step 1.
pub fn score_run(run_dir: &Path) -> Result<Vec<ScoreRow>, ReportError> {
    let manifest = load_manifest(run_dir)?;
    let table = EmbeddingTable::load(&manifest.experiment.embedding_table_path).map_err(ReportError::Table)?;
    let mut rows = Vec::with_capacity(manifest.chains.len());
    for entry in &manifest.chains {
        if entry.status == ChainStatus::Failed {
            continue;
        }
        let record = ChainRecord::load(&run_dir.join(&entry.record))?;
        let coords = &entry.coordinates;
        if record.chain_id != coords.chain_id || record.steps.len() != entry.steps_recorded as usize {
            return Err(ReportError::Inconsistent(format!(
                "record {} does not match its manifest entry",
                entry.record
            )));
        }
        let scores = score_chain(&record, record.config.threshold, &table).map_err(|source| ReportError::Scoring {
            chain_id: coords.chain_id.clone(),
            source,
        })?;
        rows.push(ScoreRow {
            chain_id: coords.chain_id.clone(),
            model: coords.model.clone(),
            chain_type: coords.chain_type,
            strength: coords.strength,
            seed_id: coords.seed_id.clone(),
            k: scores.k,
            rs: scores.rs,
            br: scores.cohesion,
            dr: scores.diversity,
            cr: scores.creativity,
            truncated: record.truncated,
        });
    }
    Ok(rows)
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    if rows.is_empty() {
        w.write_record(["chain_id", "model", "chain_type", "strength", "seed_id", "K", "RS", "BR", "DR", "CR", "truncated"])
            .map_err(csv_err(path))?;
    }
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_scores(run_dir: &Path) -> Result<Vec<ScoreRow>, ReportError> {
    let path = run_dir.join(SCORES_FILE);
    if !path.is_file() {
        return Err(ReportError::MissingScores(run_dir.to_owned()));
    }
    let mut r = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(csv_err(&path))
}

/// Scores the run and writes `scores.csv`; returns the rows.
pub fn cmd_score(run_dir: &Path) -> Result<Vec<ScoreRow>, ReportError> {
    let rows = score_run(run_dir)?;
    write_scores(&run_dir.join(SCORES_FILE), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonStatus {
    Compared,
    /// Every paired difference is the same; no t statistic exists.
    Identical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub measure: Measure,
    pub a: Selector,
    pub b: Selector,
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: Option<f64>,
    pub df: Option<u32>,
    pub p: Option<f64>,
    pub significant: bool,
    pub status: ComparisonStatus,
}

fn select(rows: &[ScoreRow], sel: &Selector, measure: Measure) -> Result<BTreeMap<String, f64>, ReportError> {
    let picked: Vec<&ScoreRow> = rows.iter().filter(|r| sel.matches(r)).collect();
    if picked.is_empty() {
        return Err(ReportError::EmptySelection(sel.clone()));
    }
    let mut configs: Vec<GroupKey> = picked.iter().map(|r| GroupKey::of(r)).collect();
    configs.sort();
    configs.dedup();
    if configs.len() > 1 {
        return Err(ReportError::AmbiguousSelection {
            selector: sel.clone(),
            count: configs.len(),
        });
    }
    Ok(picked.into_iter().map(|r| (r.seed_id.clone(), measure.of(r))).collect())
}

/// Paired t-test of `spec.measure` between two configurations, paired by seed.
pub fn compare(rows: &[ScoreRow], spec: &ComparisonSpec) -> Result<ComparisonRecord, ReportError> {
    let a = select(rows, &spec.a, spec.measure)?;
    let b = select(rows, &spec.b, spec.measure)?;
    let samples = PairedSamples::from_groups(&a, &b)?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let base = ComparisonRecord {
        measure: spec.measure,
        a: spec.a.clone(),
        b: spec.b.clone(),
        n: samples.len(),
        mean_a: mean(samples.a()),
        mean_b: mean(samples.b()),
        t: None,
        df: None,
        p: None,
        significant: false,
        status: ComparisonStatus::Identical,
    };
    match paired_t_test(&samples) {
        Ok(TTestResult {
            t_stat,
            df,
            p_two_sided,
            mean_a,
            mean_b,
        }) => Ok(ComparisonRecord {
            mean_a,
            mean_b,
            t: Some(t_stat),
            df: Some(df),
            p: Some(p_two_sided),
            significant: p_two_sided < SIGNIFICANCE_LEVEL,
            status: ComparisonStatus::Compared,
            ..base
        }),
        Err(StatsError::ZeroVariance) => Ok(base),
        Err(e) => Err(e.into()),
    }
}

/// Reads `scores.csv` and runs one comparison.
pub fn cmd_compare(run_dir: &Path, spec: &ComparisonSpec) -> Result<ComparisonRecord, ReportError> {
    compare(&read_scores(run_dir)?, spec)
}

pub fn render_p(p: f64) -> String {
    if p < P_DISPLAY_FLOOR {
        "0+eps".to_owned()
    } else {
        format!("{p:.4}")
    }
}

/// Strength first so tables group naturally by strength.
#[derive(Debug, Clone, PartialEq)]
struct GroupKey {
    strength: f64,
    model: String,
    chain_type: ChainType,
}

impl GroupKey {
    fn of(row: &ScoreRow) -> Self {
        GroupKey {
            strength: row.strength,
            model: row.model.clone(),
            chain_type: row.chain_type,
        }
    }
}

impl Eq for GroupKey {}

impl Ord for GroupKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.strength
            .total_cmp(&other.strength)
            .then_with(|| self.model.cmp(&other.model))
            .then_with(|| self.chain_type.as_str().cmp(other.chain_type.as_str()))
    }
}

impl PartialOrd for GroupKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Mean of every measure for one (model, chain type, strength) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub model: String,
    pub chain_type: ChainType,
    pub strength: f64,
    pub chains: usize,
    #[serde(rename = "RS")]
    pub rs: f64,
    #[serde(rename = "BR")]
    pub br: f64,
    #[serde(rename = "DR")]
    pub dr: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
}

pub fn mean_table(rows: &[ScoreRow]) -> Result<Vec<MeanRow>, ReportError> {
    let mut by_measure: BTreeMap<Measure, BTreeMap<GroupKey, BTreeMap<String, f64>>> = BTreeMap::new();
    for row in rows {
        for m in Measure::ALL {
            by_measure
                .entry(m)
                .or_default()
                .entry(GroupKey::of(row))
                .or_default()
                .insert(row.chain_id.clone(), m.of(row));
        }
    }
    let mut summaries = BTreeMap::new();
    for (m, groups) in &by_measure {
        summaries.insert(*m, aggregate(groups)?);
    }
    let Some(rs) = summaries.get(&Measure::Rs) else {
        return Ok(Vec::new());
    };
    Ok(rs
        .iter()
        .enumerate()
        .map(|(i, g)| MeanRow {
            model: g.key.model.clone(),
            chain_type: g.key.chain_type,
            strength: g.key.strength,
            chains: g.count,
            rs: g.mean,
            br: summaries[&Measure::Br][i].mean,
            dr: summaries[&Measure::Dr][i].mean,
            cr: summaries[&Measure::Cr][i].mean,
        })
        .collect())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Serialize)]
struct ComparisonCsvRow {
    measure: Measure,
    a: String,
    b: String,
    n: usize,
    mean_a: f64,
    mean_b: f64,
    t: Option<f64>,
    df: Option<u32>,
    p: Option<f64>,
    significant: bool,
    status: ComparisonStatus,
}

pub fn render_markdown(means: &[MeanRow], comparisons: &[ComparisonRecord]) -> String {
    let mut out = String::from("# Creativity report\n");
    let mut current: Option<f64> = None;
    for row in means {
        if current != Some(row.strength) {
            current = Some(row.strength);
            let _ = write!(
                out,
                "\n## Strength {}\n\n| model | chain type | chains | RS | B_R | D_R | CR |\n|---|---|---:|---:|---:|---:|---:|\n",
                row.strength
            );
        }
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:.2} | {:.2} | {:.2} | {:.2} |",
            row.model, row.chain_type, row.chains, row.rs, row.br, row.dr, row.cr
        );
    }
    if !comparisons.is_empty() {
        out.push_str("\n## Paired t-tests\n\n| measure | group 1 | group 2 | n | mean 1 | mean 2 | p-value | p < 0.05 |\n|---|---|---|---:|---:|---:|---:|---|\n");
        for c in comparisons {
            let p = match (c.status, c.p) {
                (ComparisonStatus::Compared, Some(p)) => render_p(p),
                _ => "identical populations".to_owned(),
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.2} | {:.2} | {} | {} |",
                c.measure,
                c.a,
                c.b,
                c.n,
                c.mean_a,
                c.mean_b,
                p,
                if c.significant { "yes" } else { "no" }
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub means: Vec<MeanRow>,
    pub comparisons: Vec<ComparisonRecord>,
}

/// Writes `report.md`, `means.csv` and `comparisons.csv` from `scores.csv`
/// plus the comparisons listed in the run's config. Regenerating is
/// byte-identical.
pub fn cmd_report(run_dir: &Path) -> Result<ReportOutput, ReportError> {
    let rows = read_scores(run_dir)?;
    let specs = match load_manifest(run_dir) {
        Ok(m) => m.experiment.comparisons,
        Err(ReportError::MissingManifest(_)) => Vec::new(),
        Err(e) => return Err(e),
    };
    let means = mean_table(&rows)?;
    let comparisons = specs.iter().map(|s| compare(&rows, s)).collect::<Result<Vec<_>, _>>()?;

    write_csv(&run_dir.join(MEANS_FILE), &means)?;
    let csv_rows: Vec<ComparisonCsvRow> = comparisons
        .iter()
        .map(|c| ComparisonCsvRow {
            measure: c.measure,
            a: c.a.to_string(),
            b: c.b.to_string(),
            n: c.n,
            mean_a: c.mean_a,
            mean_b: c.mean_b,
            t: c.t,
            df: c.df,
            p: c.p,
            significant: c.significant,
            status: c.status,
        })
        .collect();
    let comparisons_path = run_dir.join(COMPARISONS_FILE);
    if csv_rows.is_empty() {
        std::fs::write(&comparisons_path, "measure,a,b,n,mean_a,mean_b,t,df,p,significant,status\n")
            .map_err(io_err(&comparisons_path))?;
    } else {
        write_csv(&comparisons_path, &csv_rows)?;
    }
    let report_path = run_dir.join(REPORT_FILE);
    std::fs::write(&report_path, render_markdown(&means, &comparisons)).map_err(io_err(&report_path))?;
    Ok(ReportOutput { means, comparisons })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: &str, model: &str, strength: f64, cr: f64) -> ScoreRow {
        ScoreRow {
            chain_id: format!("{seed}__{model}__img_only__s{strength}"),
            model: model.into(),
            chain_type: ChainType::ImgOnly,
            strength,
            seed_id: seed.into(),
            k: 10,
            rs: 1.0,
            br: cr,
            dr: cr,
            cr,
            truncated: false,
        }
    }

    #[test]
    fn selector_round_trip() {
        let s: Selector = "model=sd, type=img_cap,strength=0.9".parse().unwrap();
        assert_eq!(s.model.as_deref(), Some("sd"));
        assert_eq!(s.chain_type, Some(ChainType::ImgCap));
        assert_eq!(s.strength, Some(0.9));
        assert_eq!(s.to_string(), "model=sd,type=img_cap,strength=0.9");
        assert_eq!(s.to_string().parse::<Selector>().unwrap(), s);
        assert!("colour=red".parse::<Selector>().is_err());
        assert!("type=sideways".parse::<Selector>().is_err());
        assert!("strength".parse::<Selector>().is_err());
    }

    #[test]
    fn measure_names() {
        for m in Measure::ALL {
            assert_eq!(m.as_str().parse::<Measure>().unwrap(), m);
        }
        assert_eq!("br".parse::<Measure>().unwrap(), Measure::Br);
        assert!("FID".parse::<Measure>().is_err());
        let spec: ComparisonSpec = serde_json::from_str(r#"{"measure":"CR","a":"model=x","b":"model=y"}"#).unwrap();
        assert_eq!(spec.measure, Measure::Cr);
    }

    #[test]
    fn p_rendering() {
        assert_eq!(render_p(3e-5), "0+eps");
        assert_eq!(render_p(0.0), "0+eps");
        assert_eq!(render_p(1e-4), "0.0001");
        assert_eq!(render_p(0.49502), "0.4950");
    }

    #[test]
    fn self_comparison_is_identical() {
        let rows: Vec<_> = (0..5).map(|i| row(&format!("s{i}"), "m", 0.3, i as f64 / 10.0)).collect();
        let sel: Selector = "model=m".parse().unwrap();
        let c = compare(
            &rows,
            &ComparisonSpec {
                measure: Measure::Cr,
                a: sel.clone(),
                b: sel,
            },
        )
        .unwrap();
        assert_eq!(c.status, ComparisonStatus::Identical);
        assert!(c.p.is_none() && !c.significant);
        assert!(render_markdown(&[], &[c]).contains("identical populations"));
    }

    #[test]
    fn comparison_pairs_by_seed_and_checks_sets() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0, 3.0, 1.0, 4.0];
        let mut rows = Vec::new();
        // b rows inserted in reverse so pairing cannot rely on order.
        for i in 0..4 {
            rows.push(row(&format!("s{i}"), "a", 0.3, a[i]));
            rows.push(row(&format!("s{}", 3 - i), "b", 0.3, b[3 - i]));
        }
        let spec = ComparisonSpec {
            measure: Measure::Cr,
            a: "model=a".parse().unwrap(),
            b: "model=b".parse().unwrap(),
        };
        let c = compare(&rows, &spec).unwrap();
        assert_eq!((c.n, c.df), (4, Some(3)));
        assert!((c.t.unwrap() - 0.7745966692414834).abs() < 1e-12);
        assert!(!c.significant);

        rows.retain(|r| !(r.model == "b" && r.seed_id == "s0"));
        rows.push(row("other", "b", 0.3, 0.0));
        assert!(matches!(compare(&rows, &spec), Err(ReportError::Stats(StatsError::PairingMismatch(_)))));
    }

    #[test]
    fn ambiguous_and_empty_selectors() {
        let rows = vec![row("s0", "m", 0.3, 0.1), row("s0", "m", 0.6, 0.2)];
        let spec = |a: &str| ComparisonSpec {
            measure: Measure::Cr,
            a: a.parse().unwrap(),
            b: "strength=0.3".parse().unwrap(),
        };
        assert!(matches!(compare(&rows, &spec("model=m")), Err(ReportError::AmbiguousSelection { count: 2, .. })));
        assert!(matches!(compare(&rows, &spec("model=z")), Err(ReportError::EmptySelection(_))));
    }

    #[test]
    fn means_grouped_by_strength_and_rounded_only_in_markdown() {
        let rows = vec![
            row("s0", "m", 0.6, 0.123456),
            row("s1", "m", 0.6, 0.2),
            row("s0", "m", 0.3, 0.5),
        ];
        let means = mean_table(&rows).unwrap();
        assert_eq!(means.len(), 2);
        assert_eq!(means[0].strength, 0.3);
        assert_eq!(means[1].chains, 2);
        assert_eq!(means[1].cr, (0.123456 + 0.2) / 2.0);
        let md = render_markdown(&means, &[]);
        assert!(md.find("## Strength 0.3").unwrap() < md.find("## Strength 0.6").unwrap());
        assert!(md.contains("| m | img_only | 2 | 1.00 | 0.16 | 0.16 | 0.16 |"));
        assert!(!md.contains("t-tests"));
    }

    #[test]
    fn scores_csv_header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![row("s0", "m", 0.3, 0.1 + 0.2)];
        write_scores(&dir.path().join(SCORES_FILE), &rows).unwrap();
        let text = std::fs::read_to_string(dir.path().join(SCORES_FILE)).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "chain_id,model,chain_type,strength,seed_id,K,RS,BR,DR,CR,truncated"
        );
        assert!(text.contains("0.30000000000000004"));
        assert_eq!(read_scores(dir.path()).unwrap(), rows);

        write_scores(&dir.path().join(SCORES_FILE), &[]).unwrap();
        let text = std::fs::read_to_string(dir.path().join(SCORES_FILE)).unwrap();
        assert_eq!(text, "chain_id,model,chain_type,strength,seed_id,K,RS,BR,DR,CR,truncated\n");
    }

    #[test]
    fn missing_inputs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(score_run(dir.path()), Err(ReportError::MissingManifest(_))));
        assert!(matches!(cmd_report(dir.path()), Err(ReportError::MissingScores(_))));
    }
}
