//! Shared domain types passed between pipeline stages.
//!
//! Every type here serializes to one canonical JSON object: struct fields in
//! declaration order, map keys ascending. Two equal values always produce the
//! same bytes, which is what the determinism checks downstream rely on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between source id and ordinal in a reference id.
pub const REF_ID_SEPARATOR: char = ':';

/// Builds the stable id `"<source_id>:<record_ordinal>"`.
///
/// The separator is forbidden inside `source_id` so the mapping stays
/// injective.
pub fn make_reference_id(source_id: &str, record_ordinal: u64) -> Result<String> {
    validate_source_id(source_id)?;
    Ok(format!("{source_id}{REF_ID_SEPARATOR}{record_ordinal}"))
}

pub(crate) fn validate_source_id(source_id: &str) -> Result<()> {
    if source_id.is_empty() {
        return Err(Error::InvalidArgument("source_id must not be empty".into()));
    }
    if source_id.contains(REF_ID_SEPARATOR) {
        return Err(Error::InvalidArgument(format!(
            "source_id `{source_id}` must not contain `{REF_ID_SEPARATOR}`"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Csv,
    Jsonl,
    ReferencePassthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDescriptor {
    pub source_id: String,
    pub kind: SourceKind,
    pub location: String,
    /// Column names for headerless CSV input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_names: Option<Vec<String>>,
}

/// A raw chunk of source data before any extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformationRecord {
    pub source_id: String,
    pub record_ordinal: u64,
    pub payload: BTreeMap<String, String>,
    pub ingest_seq: u64,
}

/// Attribute values carried by entity references.
///
/// Numbers are always finite and token sets are non-empty and lowercase;
/// the constructors and the deserializer both enforce this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "RawAttributeValue")]
pub enum AttributeValue {
    Text(String),
    Number(f64),
    TokenSet(BTreeSet<String>),
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RawAttributeValue {
    Text(String),
    Number(f64),
    TokenSet(BTreeSet<String>),
}

impl TryFrom<RawAttributeValue> for AttributeValue {
    type Error = String;

    fn try_from(raw: RawAttributeValue) -> Result<Self, Self::Error> {
        match raw {
            RawAttributeValue::Text(s) => Ok(AttributeValue::Text(s)),
            RawAttributeValue::Number(n) => {
                AttributeValue::number(n).ok_or_else(|| format!("non-finite number {n}"))
            }
            RawAttributeValue::TokenSet(set) => {
                if set.is_empty() {
                    return Err("token_set must not be empty".into());
                }
                if set.iter().any(|t| t.is_empty() || t.to_lowercase() != *t) {
                    return Err("token_set entries must be non-empty lowercase strings".into());
                }
                Ok(AttributeValue::TokenSet(set))
            }
        }
    }
}

impl AttributeValue {
    pub fn text(s: impl Into<String>) -> Self {
        AttributeValue::Text(s.into())
    }

    pub fn number(n: f64) -> Option<Self> {
        n.is_finite().then_some(AttributeValue::Number(n))
    }

    /// Lowercases and drops empty tokens; `None` when nothing survives.
    pub fn tokens<I, S>(tokens: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        (!set.is_empty()).then_some(AttributeValue::TokenSet(set))
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttributeValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttributeValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_tokens(&self) -> Option<&BTreeSet<String>> {
        match self {
            AttributeValue::TokenSet(t) => Some(t),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            AttributeValue::Text(_) => "text",
            AttributeValue::Number(_) => "number",
            AttributeValue::TokenSet(_) => "token_set",
        }
    }

    /// Canonical JSON form, used for ordering and tie-breaks.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("attribute values always serialize")
    }

    /// Plain string view: the text itself, the canonical number, or the
    /// space-joined sorted tokens.
    pub fn display_string(&self) -> String {
        match self {
            AttributeValue::Text(s) => s.clone(),
            AttributeValue::Number(n) => serde_json::to_string(n).expect("finite"),
            AttributeValue::TokenSet(t) => t.iter().cloned().collect::<Vec<_>>().join(" "),
        }
    }
}

/// `(source_id, record_ordinal)` locating one input record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance(pub String, pub u64);

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.0, REF_ID_SEPARATOR, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityReference {
    pub ref_id: String,
    pub source_id: String,
    pub attributes: BTreeMap<String, AttributeValue>,
    pub provenance: Vec<Provenance>,
}

impl EntityReference {
    pub fn validate(&self) -> Result<()> {
        if self.ref_id.is_empty() {
            return Err(Error::InvalidInput("empty ref_id".into()));
        }
        if self.provenance.is_empty() {
            return Err(Error::InvalidInput(format!(
                "reference `{}` has empty provenance",
                self.ref_id
            )));
        }
        if self.attributes.keys().any(String::is_empty) {
            return Err(Error::InvalidInput(format!(
                "reference `{}` has an empty attribute name",
                self.ref_id
            )));
        }
        Ok(())
    }

    pub fn attr(&self, name: &str) -> Option<&AttributeValue> {
        self.attributes.get(name)
    }
}

/// Candidate group of two or more distinct reference ids, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawGroup")]
pub struct CandidateGroup {
    member_ids: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    member_ids: Vec<String>,
}

impl TryFrom<RawGroup> for CandidateGroup {
    type Error = String;

    fn try_from(raw: RawGroup) -> Result<Self, Self::Error> {
        let group = CandidateGroup::new(raw.member_ids.clone()).map_err(|e| e.to_string())?;
        if group.member_ids != raw.member_ids {
            return Err("member_ids must be sorted ascending".into());
        }
        Ok(group)
    }
}

impl CandidateGroup {
    pub fn new(mut member_ids: Vec<String>) -> Result<Self> {
        member_ids.sort();
        let before = member_ids.len();
        member_ids.dedup();
        if member_ids.len() != before {
            return Err(Error::InvalidInput("candidate group has duplicate members".into()));
        }
        if member_ids.len() < 2 {
            return Err(Error::InvalidInput(
                "candidate group needs at least two members".into(),
            ));
        }
        Ok(CandidateGroup { member_ids })
    }

    /// Unordered pair; `None` for a self-pair.
    pub fn pair(a: &str, b: &str) -> Option<Self> {
        match a.cmp(b) {
            std::cmp::Ordering::Less => Some(CandidateGroup {
                member_ids: vec![a.to_owned(), b.to_owned()],
            }),
            std::cmp::Ordering::Greater => Some(CandidateGroup {
                member_ids: vec![b.to_owned(), a.to_owned()],
            }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn members(&self) -> &[String] {
        &self.member_ids
    }

    pub fn as_pair(&self) -> Option<(&str, &str)> {
        match self.member_ids.as_slice() {
            [a, b] => Some((a, b)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceStats {
    pub total_references: usize,
    pub group_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpace {
    pub groups: Vec<CandidateGroup>,
    pub stats: SpaceStats,
}

impl ComparisonSpace {
    /// Sorts and deduplicates `groups` into canonical order.
    pub fn from_groups(mut groups: Vec<CandidateGroup>, total_references: usize) -> Self {
        groups.sort_unstable();
        groups.dedup();
        let group_count = groups.len();
        ComparisonSpace {
            groups,
            stats: SpaceStats {
                total_references,
                group_count,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.groups.iter().filter_map(CandidateGroup::as_pair)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchLabel {
    Match,
    Possible,
    NonMatch,
}

/// Scored relationship between two references, `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchEdge {
    pub a: String,
    pub b: String,
    pub score: f64,
    pub label: MatchLabel,
    pub field_scores: BTreeMap<String, f64>,
}

impl MatchEdge {
    pub fn is_match(&self) -> bool {
        self.label == MatchLabel::Match
    }

    pub fn validate(&self) -> Result<()> {
        if self.a >= self.b {
            return Err(Error::InvalidInput(format!(
                "edge endpoints must satisfy a < b, got ({}, {})",
                self.a, self.b
            )));
        }
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.score) || !self.field_scores.values().all(|&s| in_unit(s)) {
            return Err(Error::InvalidInput(format!(
                "edge ({}, {}) has a score outside [0, 1]",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

/// One cluster line of a persisted partition.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub members: Vec<String>,
}

/// Disjoint, covering, non-empty clusters over `universe`.
///
/// Clusters are kept canonical: members sorted, clusters ordered by their
/// smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterPartition {
    pub clusters: Vec<Vec<String>>,
    pub universe: BTreeSet<String>,
}

impl ClusterPartition {
    pub fn new(clusters: Vec<Vec<String>>) -> Result<Self> {
        let mut clusters: Vec<Vec<String>> = clusters
            .into_iter()
            .map(|mut c| {
                c.sort();
                c
            })
            .collect();
        clusters.sort();
        let mut universe = BTreeSet::new();
        for cluster in &clusters {
            if cluster.is_empty() {
                return Err(Error::InvalidInput("partition contains an empty cluster".into()));
            }
            for id in cluster {
                if !universe.insert(id.clone()) {
                    return Err(Error::InvalidInput(format!(
                        "`{id}` appears in more than one cluster"
                    )));
                }
            }
        }
        Ok(ClusterPartition { clusters, universe })
    }

    pub fn singletons<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let universe: BTreeSet<String> = ids.into_iter().map(Into::into).collect();
        ClusterPartition {
            clusters: universe.iter().map(|id| vec![id.clone()]).collect(),
            universe,
        }
    }

    /// Checks disjointness, coverage, non-emptiness and canonical order.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = ClusterPartition::new(self.clusters.clone())?;
        if rebuilt.universe != self.universe {
            return Err(Error::InvalidInput(
                "union of clusters differs from the universe".into(),
            ));
        }
        if rebuilt.clusters != self.clusters {
            return Err(Error::InvalidInput("partition is not in canonical order".into()));
        }
        Ok(())
    }

    /// Map ref_id -> index of its cluster.
    pub fn assignment(&self) -> BTreeMap<&str, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.iter().map(move |id| (id.as_str(), i)))
            .collect()
    }

    pub fn cluster_lines(&self) -> Vec<Cluster> {
        self.clusters
            .iter()
            .map(|members| Cluster {
                members: members.clone(),
            })
            .collect()
    }

    pub fn from_cluster_lines(lines: Vec<Cluster>) -> Result<Self> {
        ClusterPartition::new(lines.into_iter().map(|c| c.members).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Pair,
    Partition,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityProfile {
    pub profile_id: String,
    pub representation: Representation,
    pub member_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_attributes: Option<BTreeMap<String, AttributeValue>>,
    pub provenance: Vec<Provenance>,
}

impl EntityProfile {
    pub fn validate(&self) -> Result<()> {
        if self.member_ids.is_empty() {
            return Err(Error::InvalidInput(format!(
                "profile `{}` has no members",
                self.profile_id
            )));
        }
        if self.representation == Representation::Pair && self.member_ids.len() != 2 {
            return Err(Error::InvalidInput(format!(
                "pair profile `{}` must have exactly two members",
                self.profile_id
            )));
        }
        if (self.representation == Representation::Merged) != self.merged_attributes.is_some() {
            return Err(Error::InvalidInput(format!(
                "profile `{}`: merged_attributes present iff representation is merged",
                self.profile_id
            )));
        }
        Ok(())
    }
}

/// Reference truth: either matching pairs or a cluster label per reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroundTruth {
    Pairs(BTreeSet<(String, String)>),
    Clusters(BTreeMap<String, String>),
}

/// Orders an unordered pair as `(min, max)`.
pub fn ordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_id_format() {
        assert_eq!(make_reference_id("cust", 0).unwrap(), "cust:0");
        assert_eq!(make_reference_id("cust", 41).unwrap(), "cust:41");
    }

    #[test]
    fn reference_id_rejects_bad_source() {
        assert!(matches!(
            make_reference_id("a:b", 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(make_reference_id("", 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn reference_id_is_injective_on_grid() {
        let sources = ["a", "b", "ab", "a1", "1", "x_y", "cust"];
        let mut seen = BTreeSet::new();
        for s in sources {
            for ord in 0..200u64 {
                assert!(seen.insert(make_reference_id(s, ord).unwrap()), "{s} {ord}");
            }
        }
    }

    #[test]
    fn attribute_value_shapes() {
        assert_eq!(
            serde_json::to_string(&AttributeValue::text("jo")).unwrap(),
            r#"{"text":"jo"}"#
        );
        let t = AttributeValue::tokens(["B", "a", ""]).unwrap();
        assert_eq!(serde_json::to_string(&t).unwrap(), r#"{"token_set":["a","b"]}"#);
        assert!(AttributeValue::number(f64::NAN).is_none());
        assert!(AttributeValue::tokens(["", ""]).is_none());
        assert!(serde_json::from_str::<AttributeValue>(r#"{"token_set":[]}"#).is_err());
        assert!(serde_json::from_str::<AttributeValue>(r#"{"token_set":["A"]}"#).is_err());
    }

    #[test]
    fn candidate_group_rules() {
        assert!(CandidateGroup::pair("a", "a").is_none());
        let g = CandidateGroup::pair("b", "a").unwrap();
        assert_eq!(g.members(), ["a", "b"]);
        assert!(CandidateGroup::new(vec!["a".into()]).is_err());
        assert!(CandidateGroup::new(vec!["a".into(), "a".into()]).is_err());
        assert!(serde_json::from_str::<CandidateGroup>(r#"{"member_ids":["b","a"]}"#).is_err());
    }

    #[test]
    fn partition_rejects_overlap() {
        assert!(ClusterPartition::new(vec![vec!["a".into()], vec!["a".into()]]).is_err());
        assert!(ClusterPartition::new(vec![vec![]]).is_err());
        let p = ClusterPartition::new(vec![vec!["d".into()], vec!["c".into(), "a".into()]]).unwrap();
        assert_eq!(p.clusters, vec![vec!["a", "c"], vec!["d"]]);
        p.validate().unwrap();
    }

    #[test]
    fn canonical_reference_bytes() {
        let mut attributes = BTreeMap::new();
        attributes.insert("name".to_string(), AttributeValue::text("john"));
        attributes.insert("age".to_string(), AttributeValue::number(42.0).unwrap());
        let r = EntityReference {
            ref_id: "cust:0".into(),
            source_id: "cust".into(),
            attributes,
            provenance: vec![Provenance("cust".into(), 0)],
        };
        let line = serde_json::to_string(&r).unwrap();
        assert_eq!(
            line,
            r#"{"ref_id":"cust:0","source_id":"cust","attributes":{"age":{"number":42.0},"name":{"text":"john"}},"provenance":[["cust",0]]}"#
        );
        let back: EntityReference = serde_json::from_str(&line).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), line);
    }
}
