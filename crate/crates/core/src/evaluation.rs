//! Quality metrics against ground truth.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::clustering::components_over_ids;
use crate::error::{Error, Result};
use crate::model::{ordered_pair, ClusterPartition, ComparisonSpace, EntityProfile, GroundTruth, MatchEdge, MatchLabel};

pub type PairSet = BTreeSet<(String, String)>;

/// What to do with a predicted pair naming a reference the truth does not
/// know. Only cluster-form truth has a closed universe; pair-form truth
/// treats every reference as known.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownRefPolicy {
    #[default]
    Ignore,
    Fp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub unknown_pairs: u64,
    pub unknown_policy: UnknownRefPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockingMetrics {
    pub reduction_ratio: f64,
    pub pair_completeness: f64,
    pub candidate_pairs: u64,
    pub truth_pairs: u64,
    pub retained_truth_pairs: u64,
}

/// Expands truth to its set of matching pairs.
pub fn truth_pairs(truth: &GroundTruth) -> PairSet {
    match truth {
        GroundTruth::Pairs(p) => p.clone(),
        GroundTruth::Clusters(labels) => {
            let mut by_label: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for (id, label) in labels {
                by_label.entry(label).or_default().push(id);
            }
            let mut out = PairSet::new();
            for members in by_label.values() {
                for (i, a) in members.iter().enumerate() {
                    for b in &members[i + 1..] {
                        out.insert(ordered_pair(a, b));
                    }
                }
            }
            out
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 of predicted pairs. Pairs are normalized to
/// `(min, max)` first.
pub fn pairwise_metrics(predicted: &PairSet, truth: &GroundTruth, policy: UnknownRefPolicy) -> PairwiseMetrics {
    let expected = truth_pairs(truth);
    let known = |id: &str| match truth {
        GroundTruth::Pairs(_) => true,
        GroundTruth::Clusters(labels) => labels.contains_key(id),
    };
    let predicted: PairSet = predicted.iter().map(|(a, b)| ordered_pair(a, b)).collect();
    let (mut tp, mut fp, mut unknown) = (0u64, 0u64, 0u64);
    for (a, b) in &predicted {
        if !known(a) || !known(b) {
            unknown += 1;
            if policy == UnknownRefPolicy::Fp {
                fp += 1;
            }
        } else if expected.contains(&(a.clone(), b.clone())) {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    let fn_ = expected.len() as u64 - tp;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PairwiseMetrics {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        unknown_pairs: unknown,
        unknown_policy: policy,
    }
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand Index from the contingency table of the two partitions.
///
/// When the chance-corrected denominator vanishes (both partitions all
/// singletons, or both a single cluster) the result is 1.0 for equal
/// partitions and 0.0 otherwise.
pub fn adjusted_rand_index(a: &ClusterPartition, b: &ClusterPartition) -> Result<f64> {
    if a.universe != b.universe {
        let only_a = a.universe.difference(&b.universe).count();
        let only_b = b.universe.difference(&a.universe).count();
        return Err(Error::InvalidInput(format!(
            "partitions cover different references ({only_a} only in the first, {only_b} only in the second)"
        )));
    }
    let n = a.universe.len() as u64;
    let assign_b = b.assignment();
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    for (i, cluster) in a.clusters.iter().enumerate() {
        for id in cluster {
            *table.entry((i, assign_b[id.as_str()])).or_default() += 1;
        }
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = a.clusters.iter().map(|c| choose2(c.len() as u64)).sum();
    let sum_b: f64 = b.clusters.iter().map(|c| choose2(c.len() as u64)).sum();
    let total = choose2(n);
    let expected = if total == 0.0 { 0.0 } else { sum_a * sum_b / total };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(if a == b { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Reduction ratio and pair completeness of a comparison space over `n`
/// references. Cluster-form truth is expanded to pairs.
pub fn blocking_metrics(space: &ComparisonSpace, truth: &GroundTruth, n: u64) -> BlockingMetrics {
    let candidates: PairSet = space
        .groups
        .iter()
        .flat_map(|g| {
            let m = g.members();
            (0..m.len()).flat_map(move |i| (i + 1..m.len()).map(move |j| ordered_pair(&m[i], &m[j])))
        })
        .collect();
    let expected = truth_pairs(truth);
    let retained = expected.iter().filter(|p| candidates.contains(*p)).count() as u64;
    let total = choose2(n);
    let reduction_ratio = if total == 0.0 {
        0.0
    } else {
        1.0 - candidates.len() as f64 / total
    };
    BlockingMetrics {
        reduction_ratio,
        pair_completeness: ratio(retained, expected.len() as u64),
        candidate_pairs: candidates.len() as u64,
        truth_pairs: expected.len() as u64,
        retained_truth_pairs: retained,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    pair: (String, String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelLine {
    #[serde(rename = "ref")]
    ref_id: String,
    label: String,
}

/// Reads a ground-truth JSONL file: all `{"pair": [a, b]}` lines or all
/// `{"ref": id, "label": s}` lines. Errors carry the 1-based line number.
pub fn read_ground_truth<R: BufRead>(input: R) -> Result<GroundTruth> {
    let mut pairs = PairSet::new();
    let mut labels = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let load = |message: String| Error::Load { line: lineno, message };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| load(e.to_string()))?;
        if value.get("pair").is_some() {
            if !labels.is_empty() {
                return Err(load("pair line in a label-form truth file".into()));
            }
            let PairLine { pair: (a, b) } = serde_json::from_value(value).map_err(|e| load(e.to_string()))?;
            if a == b {
                return Err(load(format!("self pair ({a}, {a})")));
            }
            pairs.insert(ordered_pair(&a, &b));
        } else if value.get("ref").is_some() {
            if !pairs.is_empty() {
                return Err(load("label line in a pair-form truth file".into()));
            }
            let l: LabelLine = serde_json::from_value(value).map_err(|e| load(e.to_string()))?;
            if labels.insert(l.ref_id.clone(), l.label).is_some() {
                return Err(load(format!("reference `{}` labeled twice", l.ref_id)));
            }
        } else {
            return Err(load("expected a `pair` or a `ref`/`label` line".into()));
        }
    }
    Ok(if labels.is_empty() {
        GroundTruth::Pairs(pairs)
    } else {
        GroundTruth::Clusters(labels)
    })
}

/// Pairs asserted by a set of profiles: each pair profile, and every
/// within-cluster pair of partition or merged profiles.
pub fn profile_pairs(profiles: &[EntityProfile]) -> PairSet {
    let mut out = PairSet::new();
    for p in profiles {
        let m = &p.member_ids;
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                out.insert(ordered_pair(&m[i], &m[j]));
            }
        }
    }
    out
}

/// Partition implied by profiles. Overlapping pair profiles are joined
/// transitively.
pub fn profile_partition(profiles: &[EntityProfile]) -> Result<ClusterPartition> {
    let ids: BTreeSet<&str> = profiles.iter().flat_map(|p| p.member_ids.iter().map(String::as_str)).collect();
    let edges: Vec<MatchEdge> = profile_pairs(profiles)
        .into_iter()
        .map(|(a, b)| MatchEdge {
            a,
            b,
            score: 1.0,
            label: MatchLabel::Match,
            field_scores: BTreeMap::new(),
        })
        .collect();
    components_over_ids(ids, &edges)
}

/// Partition implied by truth over `universe`; references the truth does
/// not mention become singletons.
pub fn truth_partition(truth: &GroundTruth, universe: &BTreeSet<String>) -> Result<ClusterPartition> {
    match truth {
        GroundTruth::Clusters(labels) => {
            let mut by_label: BTreeMap<&str, Vec<String>> = BTreeMap::new();
            let mut clusters = Vec::new();
            for id in universe {
                match labels.get(id) {
                    Some(l) => by_label.entry(l).or_default().push(id.clone()),
                    None => clusters.push(vec![id.clone()]),
                }
            }
            clusters.extend(by_label.into_values());
            ClusterPartition::new(clusters)
        }
        GroundTruth::Pairs(pairs) => {
            let edges: Vec<MatchEdge> = pairs
                .iter()
                .filter(|(a, b)| universe.contains(a) && universe.contains(b))
                .map(|(a, b)| MatchEdge {
                    a: a.clone(),
                    b: b.clone(),
                    score: 1.0,
                    label: MatchLabel::Match,
                    field_scores: BTreeMap::new(),
                })
                .collect();
            components_over_ids(universe.iter().map(String::as_str), &edges)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFamily {
    Pairwise,
    Clustering,
    Blocking,
}

impl MetricFamily {
    /// Which pipeline output the family is meant to judge.
    pub fn applies_to(self) -> &'static str {
        match self {
            MetricFamily::Pairwise => "matcher output (pair profiles); cluster output is expanded to within-cluster pairs",
            MetricFamily::Clustering => "clusterer output (partition or merged profiles)",
            MetricFamily::Blocking => "comparison space before matching",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metrics {
    Pairwise(PairwiseMetrics),
    Clustering { ari: f64, references: u64 },
    Blocking(BlockingMetrics),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metric_family: MetricFamily,
    pub applies_to: String,
    pub metrics: Metrics,
}

impl EvaluationReport {
    pub fn new(family: MetricFamily, metrics: Metrics) -> Self {
        EvaluationReport {
            metric_family: family,
            applies_to: family.applies_to().to_owned(),
            metrics,
        }
    }
}
