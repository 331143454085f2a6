//! Pair scoring strategies.
//!
//! Both matchers share one config shape. `rule_weighted` reads `weight`
//! from each rule and thresholds in `[0, 1]`; `fellegi_sunter` reads `m`,
//! `u` and `agreement_threshold` and compares the summed log2 weight against
//! thresholds in weight units.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::model::{ComparisonSpace, EntityReference, MatchEdge, MatchLabel};
use crate::similarity::{similarity, SimilarityKind};
use crate::space::{CompactSpace, RefTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    RuleWeighted,
    FellegiSunter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRule {
    pub attribute: String,
    pub similarity: SimilarityKind,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default = "default_agreement")]
    pub agreement_threshold: f64,
}

fn default_weight() -> f64 {
    1.0
}

fn default_agreement() -> f64 {
    1.0
}

impl FieldRule {
    pub fn weighted(attribute: &str, similarity: SimilarityKind, weight: f64) -> Self {
        FieldRule {
            attribute: attribute.to_owned(),
            similarity,
            weight,
            m: None,
            u: None,
            agreement_threshold: default_agreement(),
        }
    }

    pub fn probabilistic(attribute: &str, similarity: SimilarityKind, m: f64, u: f64, agreement_threshold: f64) -> Self {
        FieldRule {
            attribute: attribute.to_owned(),
            similarity,
            weight: default_weight(),
            m: Some(m),
            u: Some(u),
            agreement_threshold,
        }
    }

    /// `(agreement, disagreement)` log2 weights.
    pub fn log_weights(&self) -> Result<(f64, f64)> {
        let (m, u) = match (self.m, self.u) {
            (Some(m), Some(u)) => (m, u),
            _ => {
                return Err(Error::config(
                    format!("matcher.rules.{}", self.attribute),
                    "fellegi_sunter rules need m and u",
                ))
            }
        };
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(m) || !open_unit(u) {
            return Err(Error::config(
                format!("matcher.rules.{}", self.attribute),
                format!("m and u must lie in (0, 1), got m={m}, u={u}"),
            ));
        }
        Ok(((m / u).log2(), ((1.0 - m) / (1.0 - u)).log2()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatcherConfig {
    pub kind: MatcherKind,
    pub rules: Vec<FieldRule>,
    pub tau_match: f64,
    pub tau_possible: f64,
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() {
            return Err(Error::config("matcher.rules", "at least one rule is required"));
        }
        if !self.tau_match.is_finite() || !self.tau_possible.is_finite() {
            return Err(Error::config("matcher.tau_match", "thresholds must be finite"));
        }
        if self.tau_possible > self.tau_match {
            return Err(Error::config(
                "matcher.tau_possible",
                format!(
                    "tau_possible ({}) must not exceed tau_match ({})",
                    self.tau_possible, self.tau_match
                ),
            ));
        }
        for (i, rule) in self.rules.iter().enumerate() {
            let path = format!("matcher.rules[{i}]");
            if rule.attribute.is_empty() {
                return Err(Error::config(format!("{path}.attribute"), "must not be empty"));
            }
            match self.kind {
                MatcherKind::RuleWeighted => {
                    if !(rule.weight > 0.0 && rule.weight.is_finite()) {
                        return Err(Error::config(format!("{path}.weight"), "weight must be positive"));
                    }
                }
                MatcherKind::FellegiSunter => {
                    rule.log_weights()
                        .map_err(|_| Error::config(format!("{path}.m"), "m and u must be given and lie in (0, 1)"))?;
                    if !(0.0..=1.0).contains(&rule.agreement_threshold) {
                        return Err(Error::config(
                            format!("{path}.agreement_threshold"),
                            "must lie in [0, 1]",
                        ));
                    }
                    if rule.m <= rule.u {
                        warn!(attribute = %rule.attribute, "rule has m <= u and is not informative");
                    }
                }
            }
        }
        // tau_match above 1 is allowed: it disables match labels entirely
        if self.kind == MatcherKind::RuleWeighted && self.tau_possible < 0.0 {
            return Err(Error::config("matcher.tau_possible", "must be at least 0"));
        }
        Ok(())
    }

    pub fn label(&self, value: f64) -> MatchLabel {
        if value >= self.tau_match {
            MatchLabel::Match
        } else if value >= self.tau_possible {
            MatchLabel::Possible
        } else {
            MatchLabel::NonMatch
        }
    }
}

fn edge_ids<'a>(x: &'a EntityReference, y: &'a EntityReference) -> Result<(&'a str, &'a str)> {
    match x.ref_id.cmp(&y.ref_id) {
        std::cmp::Ordering::Less => Ok((&x.ref_id, &y.ref_id)),
        std::cmp::Ordering::Greater => Ok((&y.ref_id, &x.ref_id)),
        std::cmp::Ordering::Equal => Err(Error::InvalidInput(format!(
            "cannot score `{}` against itself",
            x.ref_id
        ))),
    }
}

/// Weighted mean of field similarities over rules present on both sides.
pub fn score_rule_weighted(cfg: &MatcherConfig, x: &EntityReference, y: &EntityReference) -> Result<MatchEdge> {
    let (a, b) = edge_ids(x, y)?;
    let mut field_scores = BTreeMap::new();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for rule in &cfg.rules {
        let (Some(va), Some(vb)) = (x.attr(&rule.attribute), y.attr(&rule.attribute)) else {
            continue;
        };
        let sim = similarity(rule.similarity, va, vb)?;
        numerator += rule.weight * sim;
        denominator += rule.weight;
        field_scores.insert(rule.attribute.clone(), sim);
    }
    let (score, label) = if denominator > 0.0 {
        let score = (numerator / denominator).clamp(0.0, 1.0);
        (score, cfg.label(score))
    } else {
        (0.0, MatchLabel::NonMatch)
    };
    Ok(MatchEdge {
        a: a.to_owned(),
        b: b.to_owned(),
        score,
        label,
        field_scores,
    })
}

/// Total log2 weight `W` of a comparison, plus the per-field similarities.
pub fn fellegi_sunter_weight(
    cfg: &MatcherConfig,
    x: &EntityReference,
    y: &EntityReference,
) -> Result<(f64, BTreeMap<String, f64>)> {
    let mut total = 0.0;
    let mut field_scores = BTreeMap::new();
    for rule in &cfg.rules {
        let (agree, disagree) = rule.log_weights()?;
        let (Some(va), Some(vb)) = (x.attr(&rule.attribute), y.attr(&rule.attribute)) else {
            continue;
        };
        let sim = similarity(rule.similarity, va, vb)?;
        total += if sim >= rule.agreement_threshold { agree } else { disagree };
        field_scores.insert(rule.attribute.clone(), sim);
    }
    Ok((total, field_scores))
}

/// `(W_min, W_max)`: totals with every configured field disagreeing / agreeing.
pub fn fellegi_sunter_bounds(cfg: &MatcherConfig) -> Result<(f64, f64)> {
    let mut low = 0.0;
    let mut high = 0.0;
    for rule in &cfg.rules {
        let (agree, disagree) = rule.log_weights()?;
        low += disagree;
        high += agree;
    }
    Ok((low, high))
}

pub fn score_fellegi_sunter(cfg: &MatcherConfig, x: &EntityReference, y: &EntityReference) -> Result<MatchEdge> {
    let (a, b) = edge_ids(x, y)?;
    let (weight, field_scores) = fellegi_sunter_weight(cfg, x, y)?;
    let (low, high) = fellegi_sunter_bounds(cfg)?;
    let score = if high > low {
        ((weight - low) / (high - low)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(MatchEdge {
        a: a.to_owned(),
        b: b.to_owned(),
        score,
        label: cfg.label(weight),
        field_scores,
    })
}

pub fn score_pair(cfg: &MatcherConfig, x: &EntityReference, y: &EntityReference) -> Result<MatchEdge> {
    match cfg.kind {
        MatcherKind::RuleWeighted => score_rule_weighted(cfg, x, y),
        MatcherKind::FellegiSunter => score_fellegi_sunter(cfg, x, y),
    }
}

/// Scores every group of `space` and returns one edge per pair, in the
/// space's canonical order. Non-match edges are kept.
pub fn match_space(space: &ComparisonSpace, cfg: &MatcherConfig, refs: &[EntityReference]) -> Result<Vec<MatchEdge>> {
    let by_id: HashMap<&str, &EntityReference> = refs.iter().map(|r| (r.ref_id.as_str(), r)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown ref_id `{id}` in comparison space")))
    };
    let pairs: Vec<(&EntityReference, &EntityReference)> = space
        .groups
        .iter()
        .map(|g| match g.as_pair() {
            Some((a, b)) => Ok((lookup(a)?, lookup(b)?)),
            None => Err(Error::UnsupportedGroup(g.members().to_vec())),
        })
        .collect::<Result<_>>()?;
    pairs.par_iter().map(|(x, y)| score_pair(cfg, x, y)).collect()
}

const SCORE_CHUNK: usize = 1 << 15;

/// Scores a compact space in parallel chunks, handing each edge to `sink`
/// in canonical order. Only one chunk of edges is alive at a time.
pub fn match_compact<F>(space: &CompactSpace, table: &RefTable, cfg: &MatcherConfig, mut sink: F) -> Result<()>
where
    F: FnMut(MatchEdge),
{
    for chunk in space.pairs.chunks(SCORE_CHUNK) {
        let edges: Vec<MatchEdge> = chunk
            .par_iter()
            .map(|&(i, j)| score_pair(cfg, table.at(i), table.at(j)))
            .collect::<Result<_>>()?;
        edges.into_iter().for_each(&mut sink);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttributeValue, Provenance};

    fn reference(id: &str, attrs: &[(&str, &str)]) -> EntityReference {
        EntityReference {
            ref_id: id.into(),
            source_id: "s".into(),
            attributes: attrs.iter().map(|(k, v)| (k.to_string(), AttributeValue::text(*v))).collect(),
            provenance: vec![Provenance("s".into(), 0)],
        }
    }

    fn weighted(rules: Vec<FieldRule>, tau_match: f64) -> MatcherConfig {
        MatcherConfig {
            kind: MatcherKind::RuleWeighted,
            rules,
            tau_match,
            tau_possible: 0.5,
        }
    }

    #[test]
    fn all_equal_scores_one() {
        let cfg = weighted(
            vec![
                FieldRule::weighted("name", SimilarityKind::JaroWinkler, 3.0),
                FieldRule::weighted("city", SimilarityKind::Exact, 0.5),
            ],
            0.9,
        );
        let x = reference("x", &[("name", "john"), ("city", "nyc")]);
        let y = reference("y", &[("name", "john"), ("city", "nyc")]);
        let e = score_rule_weighted(&cfg, &x, &y).unwrap();
        assert_eq!(e.score, 1.0);
        assert_eq!(e.label, MatchLabel::Match);
    }

    #[test]
    fn weighted_mean_of_two() {
        // levenshtein_norm("abcde","abcxy") = 0.6; exact mismatch = 0
        let cfg = weighted(
            vec![
                FieldRule::weighted("p", SimilarityKind::LevenshteinNorm, 1.0),
                FieldRule::weighted("q", SimilarityKind::LevenshteinNorm, 1.0),
            ],
            0.9,
        );
        let x = reference("x", &[("p", "abcde"), ("q", "abcde")]);
        let y = reference("y", &[("p", "abcdx"), ("q", "abxyz")]);
        let e = score_rule_weighted(&cfg, &x, &y).unwrap();
        assert!((e.field_scores["p"] - 0.8).abs() < 1e-12);
        assert!((e.field_scores["q"] - 0.4).abs() < 1e-12);
        assert!((e.score - 0.6).abs() < 1e-12);
        assert_eq!(e.label, MatchLabel::Possible);
    }

    #[test]
    fn missing_rule_drops_out() {
        let cfg = weighted(
            vec![
                FieldRule::weighted("p", SimilarityKind::LevenshteinNorm, 1.0),
                FieldRule::weighted("q", SimilarityKind::Exact, 5.0),
            ],
            0.95,
        );
        let x = reference("x", &[("p", "abcdefghij")]);
        let y = reference("y", &[("p", "abcdefghix"), ("q", "z")]);
        let e = score_rule_weighted(&cfg, &x, &y).unwrap();
        assert!((e.score - 0.9).abs() < 1e-12);
        assert_eq!(e.field_scores.len(), 1);
    }

    #[test]
    fn no_applicable_rule_is_non_match() {
        let mut cfg = weighted(vec![FieldRule::weighted("p", SimilarityKind::Exact, 1.0)], 0.0);
        cfg.tau_possible = 0.0;
        let e = score_rule_weighted(&cfg, &reference("x", &[]), &reference("y", &[])).unwrap();
        assert_eq!(e.score, 0.0);
        assert_eq!(e.label, MatchLabel::NonMatch);
    }

    #[test]
    fn fs_weights() {
        let rule = FieldRule::probabilistic("name", SimilarityKind::Exact, 0.9, 0.1, 1.0);
        let (agree, disagree) = rule.log_weights().unwrap();
        assert!((agree - 9f64.log2()).abs() < 1e-12);
        assert!((agree - 3.169_925_001_442_312).abs() < 1e-12);
        assert!((disagree + 3.169_925_001_442_312).abs() < 1e-12);
        let flat = FieldRule::probabilistic("x", SimilarityKind::Exact, 0.5, 0.5, 1.0);
        assert_eq!(flat.log_weights().unwrap(), (0.0, 0.0));
    }

    #[test]
    fn fs_scoring() {
        let cfg = MatcherConfig {
            kind: MatcherKind::FellegiSunter,
            rules: vec![FieldRule::probabilistic("name", SimilarityKind::Exact, 0.9, 0.1, 1.0)],
            tau_match: 3.0,
            tau_possible: 0.0,
        };
        let x = reference("x", &[("name", "john")]);
        let agree = score_fellegi_sunter(&cfg, &x, &reference("y", &[("name", "john")])).unwrap();
        assert_eq!(agree.label, MatchLabel::Match);
        assert_eq!(agree.score, 1.0);
        let disagree = score_fellegi_sunter(&cfg, &x, &reference("y", &[("name", "jon")])).unwrap();
        assert_eq!(disagree.label, MatchLabel::NonMatch);
        assert_eq!(disagree.score, 0.0);
        let missing = score_fellegi_sunter(&cfg, &x, &reference("y", &[])).unwrap();
        assert_eq!(missing.label, MatchLabel::Possible);
        assert!((missing.score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fs_rejects_bad_m_u() {
        let cfg = MatcherConfig {
            kind: MatcherKind::FellegiSunter,
            rules: vec![FieldRule::probabilistic("name", SimilarityKind::Exact, 1.0, 0.1, 1.0)],
            tau_match: 1.0,
            tau_possible: 0.0,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
        let x = reference("x", &[("name", "a")]);
        assert!(score_fellegi_sunter(&cfg, &x, &reference("y", &[("name", "a")])).is_err());
    }

    #[test]
    fn threshold_order_validated() {
        let mut cfg = weighted(vec![FieldRule::weighted("p", SimilarityKind::Exact, 1.0)], 0.4);
        cfg.tau_possible = 0.6;
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "matcher.tau_possible"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_tau_never_matches() {
        let cfg = weighted(vec![FieldRule::weighted("p", SimilarityKind::Exact, 1.0)], 1.01);
        cfg.validate().unwrap();
        let e = score_rule_weighted(&cfg, &reference("x", &[("p", "a")]), &reference("y", &[("p", "a")])).unwrap();
        assert_eq!(e.score, 1.0);
        assert_ne!(e.label, MatchLabel::Match);
    }

    #[test]
    fn big_groups_rejected() {
        let refs = vec![reference("a", &[]), reference("b", &[]), reference("c", &[])];
        let space = ComparisonSpace::from_groups(
            vec![crate::model::CandidateGroup::new(vec!["a".into(), "b".into(), "c".into()]).unwrap()],
            3,
        );
        let cfg = weighted(vec![FieldRule::weighted("p", SimilarityKind::Exact, 1.0)], 0.9);
        assert!(matches!(match_space(&space, &cfg, &refs), Err(Error::UnsupportedGroup(_))));
        let empty = ComparisonSpace::from_groups(vec![], 3);
        assert!(match_space(&empty, &cfg, &refs).unwrap().is_empty());
    }
}
