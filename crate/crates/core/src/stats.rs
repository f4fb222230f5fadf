//! Paired t-tests and per-configuration score aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 paired samples, got {0}")]
    TooFewSamples(usize),
    #[error("pairing mismatch: {0}")]
    PairingMismatch(String),
    #[error("all paired differences are equal; the t statistic is undefined")]
    ZeroVariance,
    #[error("group {0} is empty")]
    EmptyGroup(String),
}

/// Two aligned samples keyed by a pairing identifier (the seed image id).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples {
    keys: Vec<String>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PairedSamples {
    pub fn new(keys: Vec<String>, a: Vec<f64>, b: Vec<f64>) -> Result<Self, StatsError> {
        if a.len() != b.len() || keys.len() != a.len() {
            return Err(StatsError::PairingMismatch(format!(
                "lengths differ: {} keys, {} a, {} b",
                keys.len(),
                a.len(),
                b.len()
            )));
        }
        let mut sorted: Vec<&String> = keys.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(StatsError::PairingMismatch(format!("duplicate key {:?}", w[0])));
        }
        if keys.len() < 2 {
            return Err(StatsError::TooFewSamples(keys.len()));
        }
        Ok(PairedSamples { keys, a, b })
    }

    /// Pairs two keyed groups; both must cover exactly the same keys.
    pub fn from_groups(
        a: &BTreeMap<String, f64>,
        b: &BTreeMap<String, f64>,
    ) -> Result<Self, StatsError> {
        if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
            let only_a = a.keys().filter(|k| !b.contains_key(*k)).count();
            let only_b = b.keys().filter(|k| !a.contains_key(*k)).count();
            return Err(StatsError::PairingMismatch(format!(
                "groups cover different seeds ({only_a} only in a, {only_b} only in b)"
            )));
        }
        PairedSamples::new(
            a.keys().cloned().collect(),
            a.values().copied().collect(),
            b.values().copied().collect(),
        )
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_stat: f64,
    pub df: u32,
    pub p_two_sided: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n − 1) variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Same statistic and two-sided p-value as SciPy's `ttest_rel`.
pub fn paired_t_test(samples: &PairedSamples) -> Result<TTestResult, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples(n));
    }
    let diffs: Vec<f64> = samples.a.iter().zip(&samples.b).map(|(a, b)| a - b).collect();
    let var = variance(&diffs);
    if diffs.iter().all(|d| *d == diffs[0]) || var == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t_stat = mean(&diffs) / (var / n as f64).sqrt();
    let df = (n - 1) as u32;
    Ok(TTestResult {
        t_stat,
        df,
        p_two_sided: student_t_two_sided_p(t_stat, df),
        mean_a: mean(&samples.a),
        mean_b: mean(&samples.b),
    })
}

/// P(|T| ≥ |t|) for Student's t with `df` degrees of freedom, via
/// `I_x(df/2, 1/2)` with `x = df / (df + t²)`.
pub fn student_t_two_sided_p(t: f64, df: u32) -> f64 {
    if t.is_nan() || df == 0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let nu = f64::from(df);
    let x = nu / (nu + t * t);
    regularized_incomplete_beta(x, nu / 2.0, 0.5).clamp(0.0, 1.0)
}

const CF_TOLERANCE: f64 = 1e-12;
const CF_MAX_ITERATIONS: usize = 300;

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// I_x(a, b), the regularized incomplete beta function.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The continued fraction converges fast on this side of the mode.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITERATIONS {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_TOLERANCE {
            break;
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary<K> {
    pub key: K,
    pub mean: f64,
    pub count: usize,
    /// Sample standard deviation; 0 for a single observation.
    pub std_dev: f64,
}

/// Per-group mean, count and standard deviation of one measure. Groups map
/// pairing keys to values, so any two of them can be fed to
/// [`PairedSamples::from_groups`].
pub fn aggregate<K>(groups: &BTreeMap<K, BTreeMap<String, f64>>) -> Result<Vec<GroupSummary<K>>, StatsError>
where
    K: Ord + Clone + std::fmt::Debug,
{
    groups
        .iter()
        .map(|(key, values)| {
            if values.is_empty() {
                return Err(StatsError::EmptyGroup(format!("{key:?}")));
            }
            let xs: Vec<f64> = values.values().copied().collect();
            Ok(GroupSummary {
                key: key.clone(),
                mean: mean(&xs),
                count: xs.len(),
                std_dev: if xs.len() > 1 { variance(&xs).sqrt() } else { 0.0 },
            })
        })
        .collect()
}
