//! Attribute similarity measures, all in `[0, 1]` and symmetric.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AttributeValue;

pub const NUMERIC_EPSILON: f64 = 1e-9;

/// Winkler prefix scale.
pub const JARO_WINKLER_SCALE: f64 = 0.1;
const JARO_WINKLER_MAX_PREFIX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Exact,
    LevenshteinNorm,
    JaroWinkler,
    JaccardTokens,
    NumericCloseness,
}

pub fn similarity(kind: SimilarityKind, a: &AttributeValue, b: &AttributeValue) -> Result<f64> {
    use AttributeValue::*;
    let mismatch = || {
        Error::InvalidArgument(format!(
            "{kind:?} cannot compare {} with {}",
            a.type_name(),
            b.type_name()
        ))
    };
    match kind {
        SimilarityKind::Exact => match (a, b) {
            (Text(_), Text(_)) | (Number(_), Number(_)) | (TokenSet(_), TokenSet(_)) => {
                Ok(if a == b { 1.0 } else { 0.0 })
            }
            _ => Err(mismatch()),
        },
        SimilarityKind::LevenshteinNorm => match (a, b) {
            (Text(x), Text(y)) => Ok(levenshtein_norm(x, y)),
            _ => Err(mismatch()),
        },
        SimilarityKind::JaroWinkler => match (a, b) {
            (Text(x), Text(y)) => Ok(jaro_winkler(x, y)),
            _ => Err(mismatch()),
        },
        SimilarityKind::JaccardTokens => match (a, b) {
            (TokenSet(x), TokenSet(y)) => Ok(jaccard(x, y)),
            _ => Err(mismatch()),
        },
        SimilarityKind::NumericCloseness => match (a, b) {
            (Number(x), Number(y)) => Ok(numeric_closeness(*x, *y)),
            _ => Err(mismatch()),
        },
    }
}

/// Edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - distance / max(len)`; two empty strings are identical.
pub fn levenshtein_norm(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

pub fn jaro(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let window = (a.len().max(b.len()) / 2).saturating_sub(1);
    let mut a_hit = vec![false; a.len()];
    let mut b_hit = vec![false; b.len()];
    let mut matches = 0usize;
    for (i, ca) in a.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(b.len());
        for j in lo..hi {
            if !b_hit[j] && b[j] == *ca {
                a_hit[i] = true;
                b_hit[j] = true;
                matches += 1;
                break;
            }
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let mut half_transpositions = 0usize;
    let mut k = 0;
    for (i, ca) in a.iter().enumerate() {
        if !a_hit[i] {
            continue;
        }
        while !b_hit[k] {
            k += 1;
        }
        if *ca != b[k] {
            half_transpositions += 1;
        }
        k += 1;
    }
    let m = matches as f64;
    let t = (half_transpositions / 2) as f64;
    (m / a.len() as f64 + m / b.len() as f64 + (m - t) / m) / 3.0
}

/// Jaro similarity boosted by the common prefix (up to four characters).
pub fn jaro_winkler(a: &str, b: &str) -> f64 {
    let j = jaro(a, b);
    let prefix = a
        .chars()
        .zip(b.chars())
        .take(JARO_WINKLER_MAX_PREFIX)
        .take_while(|(x, y)| x == y)
        .count();
    let score = j + prefix as f64 * JARO_WINKLER_SCALE * (1.0 - j);
    score.clamp(0.0, 1.0)
}

/// `|a ∩ b| / |a ∪ b|`; two empty sets are identical.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn numeric_closeness(a: f64, b: f64) -> f64 {
    if a == b {
        return 1.0;
    }
    let scale = a.abs().max(b.abs()).max(NUMERIC_EPSILON);
    (1.0 - (a - b).abs() / scale).clamp(0.0, 1.0)
}
