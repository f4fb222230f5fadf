//! Textual artifacts, word-vector embeddings and the clamped cosine similarity
//! every measure is built on.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("label is empty after normalization")]
    EmptyLabel,
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("embedding table line {line}: {message}")]
    TableFormat { line: usize, message: String },
    #[error("embedding table I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// A normalized artifact label: lowercase, trimmed, single-spaced.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Label(String);

impl Label {
    pub fn new(raw: &str) -> Result<Self, ArtifactError> {
        normalize_label(raw)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Space-separated tokens of the label.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.split(' ')
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        normalize_label(&raw).map_err(serde::de::Error::custom)
    }
}

/// Lowercases, trims and collapses internal whitespace runs. Punctuation is kept.
pub fn normalize_label(raw: &str) -> Result<Label, ArtifactError> {
    let joined = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if joined.is_empty() {
        return Err(ArtifactError::EmptyLabel);
    }
    Ok(Label(joined.to_lowercase()))
}

/// Deduplicated set of labels, iterated in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArtifactSet(BTreeSet<Label>);

impl ArtifactSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Normalizes every raw label; fails on the first whitespace-only entry.
    pub fn from_raw<I, S>(labels: I) -> Result<Self, ArtifactError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        labels
            .into_iter()
            .map(|s| normalize_label(s.as_ref()))
            .collect()
    }

    /// Returns `true` if the label was not already present.
    pub fn insert(&mut self, label: Label) -> bool {
        self.0.insert(label)
    }

    pub fn contains(&self, label: &Label) -> bool {
        self.0.contains(label)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Label> {
        self.0.iter()
    }

    pub fn difference(&self, other: &ArtifactSet) -> ArtifactSet {
        ArtifactSet(self.0.difference(&other.0).cloned().collect())
    }

    pub fn union(&self, other: &ArtifactSet) -> ArtifactSet {
        ArtifactSet(self.0.union(&other.0).cloned().collect())
    }

    pub fn is_subset(&self, other: &ArtifactSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<Label> for ArtifactSet {
    fn from_iter<T: IntoIterator<Item = Label>>(iter: T) -> Self {
        ArtifactSet(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a ArtifactSet {
    type Item = &'a Label;
    type IntoIter = std::collections::btree_set::Iter<'a, Label>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Either the zero vector or a unit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn zero(dimension: usize) -> Self {
        EmbeddingVector(vec![0.0; dimension])
    }

    /// Scales `raw` to unit length. A vector with zero (or non-finite) norm
    /// becomes the zero vector.
    pub fn normalized(raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return EmbeddingVector(vec![0.0; raw.len()]);
        }
        EmbeddingVector(raw.into_iter().map(|x| x / norm).collect())
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

/// Clamped cosine similarity in `[0, 1]`. Zero vectors score 0.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, ArtifactError> {
    if u.dimension() != v.dimension() {
        return Err(ArtifactError::DimensionMismatch {
            expected: u.dimension(),
            actual: v.dimension(),
        });
    }
    if u.is_zero() || v.is_zero() {
        return Ok(0.0);
    }
    // Identical unit vectors are exactly parallel; the summed dot product can
    // land one ulp below 1.
    if u == v {
        return Ok(1.0);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok(dot.clamp(0.0, 1.0))
}

/// Token → unit vector lookup, read-only once built.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dimension: usize,
    entries: HashMap<String, EmbeddingVector>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        EmbeddingTable {
            dimension,
            entries: HashMap::new(),
        }
    }

    /// Builds a table from raw (not necessarily unit) vectors.
    pub fn from_entries<I, S>(dimension: usize, entries: I) -> Result<Self, ArtifactError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut table = EmbeddingTable::new(dimension);
        for (token, raw) in entries {
            table.insert(token.as_ref(), raw)?;
        }
        Ok(table)
    }

    /// Inserts or replaces a token. The token is normalized like a label and
    /// must be a single word.
    pub fn insert(&mut self, token: &str, raw: Vec<f64>) -> Result<(), ArtifactError> {
        if raw.len() != self.dimension {
            return Err(ArtifactError::DimensionMismatch {
                expected: self.dimension,
                actual: raw.len(),
            });
        }
        let token = normalize_label(token)?;
        self.entries
            .insert(token.0, EmbeddingVector::normalized(raw));
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&EmbeddingVector> {
        self.entries.get(token)
    }

    /// Mean of the in-vocabulary token vectors, renormalized; zero if every
    /// token is out of vocabulary.
    pub fn embed(&self, label: &Label) -> EmbeddingVector {
        let mut sum = vec![0.0; self.dimension];
        let mut hits = 0usize;
        for token in label.tokens() {
            if let Some(v) = self.entries.get(token) {
                for (acc, x) in sum.iter_mut().zip(v.components()) {
                    *acc += x;
                }
                hits += 1;
            }
        }
        if hits == 0 {
            return EmbeddingVector::zero(self.dimension);
        }
        // A single hit is already unit length.
        if hits == 1 {
            return label
                .tokens()
                .find_map(|t| self.entries.get(t))
                .cloned()
                .unwrap_or_else(|| EmbeddingVector::zero(self.dimension));
        }
        let n = hits as f64;
        EmbeddingVector::normalized(sum.into_iter().map(|x| x / n).collect())
    }

    /// θ between two labels.
    pub fn similarity(&self, a: &Label, b: &Label) -> f64 {
        // Both embeddings come from this table, so dimensions always agree.
        cosine_similarity(&self.embed(a), &self.embed(b)).unwrap_or(0.0)
    }

    /// Reads the text format: a `<count> <dimension>` header, then one
    /// `<token> <f1> ... <fd>` line per entry.
    pub fn read<R: Read>(reader: R) -> Result<Self, ArtifactError> {
        let mut lines = BufReader::new(reader).lines().enumerate();
        let (count, dimension) = loop {
            let Some((idx, line)) = lines.next() else {
                return Err(ArtifactError::TableFormat {
                    line: 1,
                    message: "missing header".into(),
                });
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed = match fields.as_slice() {
                [c, d] => c.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
                _ => None,
            };
            match parsed {
                Some((c, d)) if d > 0 => break (c, d),
                _ => {
                    return Err(ArtifactError::TableFormat {
                        line: idx + 1,
                        message: "header must be \"<count> <dimension>\" with dimension > 0".into(),
                    })
                }
            }
        };

        let mut table = EmbeddingTable::new(dimension);
        let mut seen = 0usize;
        for (idx, line) in lines {
            let line = line?;
            let lineno = idx + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else {
                continue;
            };
            let values = fields
                .map(|f| f.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ArtifactError::TableFormat {
                    line: lineno,
                    message: format!("bad float: {e}"),
                })?;
            if values.len() != dimension {
                return Err(ArtifactError::TableFormat {
                    line: lineno,
                    message: format!("expected {dimension} components, found {}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ArtifactError::TableFormat {
                    line: lineno,
                    message: "non-finite component".into(),
                });
            }
            let key = token.to_lowercase();
            if table.entries.contains_key(&key) {
                return Err(ArtifactError::TableFormat {
                    line: lineno,
                    message: format!("duplicate token {key:?}"),
                });
            }
            table.insert(&key, values)?;
            seen += 1;
        }
        if seen != count {
            return Err(ArtifactError::TableFormat {
                line: 1,
                message: format!("header declares {count} entries, body has {seen}"),
            });
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, ArtifactError> {
        Self::read(File::open(path)?)
    }

    /// Writes the text format with tokens sorted, so output is reproducible.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.entries.len(), self.dimension)?;
        let mut tokens: Vec<&String> = self.entries.keys().collect();
        tokens.sort();
        for token in tokens {
            write!(out, "{token}")?;
            for x in self.entries[token].components() {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::io::BufWriter::new(File::create(path)?);
        self.write(&mut file)?;
        file.flush()
    }
}

/// Scores closer than this count as tied; rounding alone separates
/// mathematically equal θ values by a few ulps.
pub const SCORE_TIE_TOLERANCE: f64 = 1e-12;

/// Candidate with the highest θ to `target`; ties go to the lexicographically
/// smallest label.
pub fn best_match(
    candidates: &ArtifactSet,
    target: &Label,
    table: &EmbeddingTable,
) -> Result<(Label, f64), ArtifactError> {
    let target_vec = table.embed(target);
    let mut best: Option<(&Label, f64)> = None;
    for candidate in candidates {
        let score = cosine_similarity(&table.embed(candidate), &target_vec)?;
        match best {
            Some((_, s)) if score <= s + SCORE_TIE_TOLERANCE => {}
            _ => best = Some((candidate, score)),
        }
    }
    best.map(|(l, s)| (l.clone(), s))
        .ok_or(ArtifactError::EmptyCandidateSet)
}
