//! Brute-force reference scorer working on plain strings and raw vectors.

use std::collections::{BTreeSet, HashMap};

pub struct RawTable {
    pub vectors: HashMap<String, Vec<f64>>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl RawTable {
    fn embed(&self, label: &str) -> Option<Vec<f64>> {
        let hits: Vec<Vec<f64>> = label
            .split_whitespace()
            .filter_map(|tok| self.vectors.get(tok))
            .map(|v| {
                let n = norm(v);
                v.iter().map(|x| x / n).collect()
            })
            .collect();
        if hits.is_empty() {
            return None;
        }
        let dim = hits[0].len();
        Some((0..dim).map(|i| hits.iter().map(|h| h[i]).sum::<f64>() / hits.len() as f64).collect())
    }

    pub fn theta(&self, a: &str, b: &str) -> f64 {
        match (self.embed(a), self.embed(b)) {
            (Some(u), Some(v)) => {
                let (nu, nv) = (norm(&u), norm(&v));
                if nu == 0.0 || nv == 0.0 {
                    return 0.0;
                }
                let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
                (dot / (nu * nv)).clamp(0.0, 1.0)
            }
            _ => 0.0,
        }
    }

    /// Highest θ; scores within 1e-12 tie and go to the alphabetically first label.
    fn best(&self, set: &BTreeSet<String>, seed: &str) -> (String, f64) {
        let mut best: Option<(String, f64)> = None;
        for cand in set {
            let s = self.theta(seed, cand);
            let better = match &best {
                None => true,
                Some((name, b)) => s > *b + 1e-12 || ((s - *b).abs() <= 1e-12 && cand < name),
            };
            if better {
                best = Some((cand.clone(), s));
            }
        }
        best.expect("non-empty set")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScores {
    pub k: usize,
    pub rs: f64,
    pub br: f64,
    pub dr: f64,
    pub cr: f64,
}

/// Tries every prefix length and keeps the longest one whose steps all hold
/// a match of at least `t` for every seed label.
pub fn score(steps: &[BTreeSet<String>], seed: &BTreeSet<String>, l: usize, t: f64, table: &RawTable) -> OracleScores {
    let prefix_ok = |k: usize| {
        steps[..k]
            .iter()
            .all(|step| !step.is_empty() && seed.iter().all(|s| table.best(step, s).1 >= t))
    };
    let k = (0..=steps.len()).filter(|&k| prefix_ok(k)).max().unwrap_or(0);
    if k == 0 {
        return OracleScores {
            k: 0,
            rs: 0.0,
            br: 0.0,
            dr: 0.0,
            cr: 0.0,
        };
    }
    let a_k = &steps[k - 1];
    let matches: Vec<(String, f64)> = seed.iter().map(|s| table.best(a_k, s)).collect();
    let rs = (k as f64 / l as f64) * (matches.iter().map(|m| m.1).sum::<f64>() / matches.len() as f64);

    let matched: BTreeSet<String> = matches.into_iter().map(|m| m.0).collect();
    let new: Vec<&String> = a_k.iter().filter(|x| !matched.contains(*x)).collect();

    let br = if a_k.len() < 2 || new.is_empty() {
        0.0
    } else {
        let bonds: f64 = new
            .iter()
            .map(|n| matched.iter().map(|m| table.theta(n, m)).fold(0.0, f64::max))
            .sum();
        let mut pair_max = 0.0f64;
        for i in 0..new.len() {
            for j in 0..new.len() {
                if i != j {
                    pair_max = pair_max.max(table.theta(new[i], new[j]));
                }
            }
        }
        (bonds + pair_max) / (new.len() as f64 + 1.0)
    };
    let dr = new.len() as f64 / a_k.len() as f64;
    OracleScores {
        k,
        rs,
        br,
        dr,
        cr: rs * (br + dr) / 2.0,
    }
}
