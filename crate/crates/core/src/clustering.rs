//! Turning match edges into a partition of references.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterPartition, EntityReference, MatchEdge};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClustererKind {
    ConnectedComponents,
    UniqueMapping,
}

/// Union-find with path compression and union by size.
#[derive(Debug, Clone, Default)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn push(&mut self) -> usize {
        let i = self.parent.len();
        self.parent.push(i);
        self.size.push(1);
        i
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            let grandparent = self.parent[self.parent[x]];
            self.parent[x] = grandparent;
            x = grandparent;
        }
        x
    }

    /// Root lookup without compression, for shared readers.
    pub fn find_readonly(&self, mut x: usize) -> usize {
        while self.parent[x] != x {
            x = self.parent[x];
        }
        x
    }

    /// Returns true when two distinct sets were joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Union-find keyed by ref_id; the state kept between incremental merges.
#[derive(Debug, Clone, Default)]
pub struct ClusterState {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    sets: UnionFind,
}

impl ClusterState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_refs<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut state = Self::new();
        for id in ids {
            state.add(id.into());
        }
        state
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Adds a singleton; no-op if the id is already known.
    pub fn add(&mut self, id: String) {
        if !self.index.contains_key(&id) {
            let i = self.sets.push();
            self.index.insert(id.clone(), i);
            self.ids.push(id);
        }
    }

    fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("edge names unknown reference `{id}`")))
    }

    /// Unions the endpoints of every match-labeled edge. Other labels are
    /// ignored. Fails without modifying state if any edge names an unknown
    /// reference.
    pub fn merge_edges<'a, I>(&mut self, edges: I) -> Result<usize>
    where
        I: IntoIterator<Item = &'a MatchEdge>,
    {
        let mut pending = Vec::new();
        for e in edges {
            let (a, b) = (self.position(&e.a)?, self.position(&e.b)?);
            if e.is_match() {
                pending.push((a, b));
            }
        }
        Ok(pending.into_iter().filter(|&(a, b)| self.sets.union(a, b)).count())
    }

    /// Canonical partition: members sorted, clusters by smallest member.
    pub fn partition(&self) -> ClusterPartition {
        let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (i, id) in self.ids.iter().enumerate() {
            groups.entry(self.sets.find_readonly(i)).or_default().push(id.clone());
        }
        ClusterPartition::new(groups.into_values().collect()).expect("union-find sets are disjoint")
    }

    /// Sorted members of the cluster containing `id`.
    pub fn cluster_of(&self, id: &str) -> Option<Vec<String>> {
        let root = self.sets.find_readonly(*self.index.get(id)?);
        let mut members: Vec<String> = self
            .ids
            .iter()
            .enumerate()
            .filter(|(i, _)| self.sets.find_readonly(*i) == root)
            .map(|(_, id)| id.clone())
            .collect();
        members.sort();
        Some(members)
    }
}

/// Connected components over match-labeled edges; every reference ends up
/// in exactly one cluster.
pub fn connected_components(refs: &[EntityReference], edges: &[MatchEdge]) -> Result<ClusterPartition> {
    components_over_ids(refs.iter().map(|r| r.ref_id.as_str()), edges)
}

pub fn components_over_ids<'a, I>(ids: I, edges: &[MatchEdge]) -> Result<ClusterPartition>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut state = ClusterState::with_refs(ids);
    state.merge_edges(edges)?;
    Ok(state.partition())
}

/// Applies new edges to an existing state and returns the updated partition.
pub fn incremental_merge(state: &mut ClusterState, new_edges: &[MatchEdge]) -> Result<ClusterPartition> {
    state.merge_edges(new_edges)?;
    Ok(state.partition())
}

/// Greedy one-to-one linkage between two sources: strongest edges first,
/// ties by `(a, b)`, each reference linked at most once.
pub fn unique_mapping(refs: &[EntityReference], edges: &[MatchEdge]) -> Result<ClusterPartition> {
    let sources: HashMap<&str, &str> = refs.iter().map(|r| (r.ref_id.as_str(), r.source_id.as_str())).collect();
    let source_of = |id: &str| {
        sources
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("edge names unknown reference `{id}`")))
    };
    let mut candidates: Vec<&MatchEdge> = Vec::new();
    for e in edges {
        let (sa, sb) = (source_of(&e.a)?, source_of(&e.b)?);
        if sa == sb {
            return Err(Error::config(
                "clusterer",
                format!("unique_mapping needs cross-source edges, ({}, {}) are both from `{sa}`", e.a, e.b),
            ));
        }
        if e.is_match() {
            candidates.push(e);
        }
    }
    candidates.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then_with(|| x.a.cmp(&y.a))
            .then_with(|| x.b.cmp(&y.b))
    });
    let mut taken: HashMap<&str, ()> = HashMap::new();
    let mut clusters: Vec<Vec<String>> = Vec::new();
    for e in candidates {
        if taken.contains_key(e.a.as_str()) || taken.contains_key(e.b.as_str()) {
            continue;
        }
        taken.insert(&e.a, ());
        taken.insert(&e.b, ());
        clusters.push(vec![e.a.clone(), e.b.clone()]);
    }
    for r in refs {
        if !taken.contains_key(r.ref_id.as_str()) {
            clusters.push(vec![r.ref_id.clone()]);
        }
    }
    ClusterPartition::new(clusters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MatchLabel, Provenance};

    fn r(id: &str, source: &str) -> EntityReference {
        EntityReference {
            ref_id: id.into(),
            source_id: source.into(),
            attributes: Default::default(),
            provenance: vec![Provenance(source.into(), 0)],
        }
    }

    fn edge(a: &str, b: &str, score: f64, label: MatchLabel) -> MatchEdge {
        MatchEdge {
            a: a.into(),
            b: b.into(),
            score,
            label,
            field_scores: Default::default(),
        }
    }

    fn m(a: &str, b: &str) -> MatchEdge {
        edge(a, b, 1.0, MatchLabel::Match)
    }

    fn clusters(p: &ClusterPartition) -> Vec<Vec<&str>> {
        p.clusters.iter().map(|c| c.iter().map(String::as_str).collect()).collect()
    }

    #[test]
    fn transitive_components() {
        let refs: Vec<_> = ["a", "b", "c", "d"].iter().map(|id| r(id, "s")).collect();
        let p = connected_components(&refs, &[m("a", "b"), m("b", "c")]).unwrap();
        assert_eq!(clusters(&p), vec![vec!["a", "b", "c"], vec!["d"]]);
        p.validate().unwrap();
    }

    #[test]
    fn no_match_edges_all_singletons() {
        let refs: Vec<_> = ["a", "b", "c"].iter().map(|id| r(id, "s")).collect();
        let p = connected_components(&refs, &[edge("a", "b", 0.5, MatchLabel::Possible)]).unwrap();
        assert_eq!(p.clusters.len(), 3);
    }

    #[test]
    fn unknown_ref_is_invalid_input() {
        let refs = vec![r("a", "s")];
        assert!(matches!(connected_components(&refs, &[m("a", "z")]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn incremental_unions() {
        let mut state = ClusterState::with_refs(["a", "b"]);
        let p = incremental_merge(&mut state, &[m("a", "b")]).unwrap();
        assert_eq!(clusters(&p), vec![vec!["a", "b"]]);

        let mut state = ClusterState::with_refs(["a", "b", "c", "d"]);
        incremental_merge(&mut state, &[m("a", "b"), m("c", "d")]).unwrap();
        let p = incremental_merge(&mut state, &[m("b", "c")]).unwrap();
        assert_eq!(clusters(&p), vec![vec!["a", "b", "c", "d"]]);
        // re-presenting an edge changes nothing
        assert_eq!(incremental_merge(&mut state, &[m("a", "d")]).unwrap(), p);
        assert_eq!(state.cluster_of("c").unwrap(), vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn failed_merge_leaves_state_untouched() {
        let mut state = ClusterState::with_refs(["a", "b"]);
        assert!(state.merge_edges(&[m("a", "b"), m("a", "zz")]).is_err());
        assert_eq!(state.partition().clusters.len(), 2);
    }

    #[test]
    fn unique_mapping_greedy() {
        let refs = vec![r("a", "l"), r("x", "r"), r("y", "r")];
        let p = unique_mapping(
            &refs,
            &[edge("a", "x", 0.9, MatchLabel::Match), edge("a", "y", 0.8, MatchLabel::Match)],
        )
        .unwrap();
        assert_eq!(clusters(&p), vec![vec!["a", "x"], vec!["y"]]);
    }

    #[test]
    fn unique_mapping_tie_break() {
        let refs = vec![r("a", "l"), r("b", "l"), r("x", "r")];
        let p = unique_mapping(
            &refs,
            &[edge("b", "x", 0.9, MatchLabel::Match), edge("a", "x", 0.9, MatchLabel::Match)],
        )
        .unwrap();
        assert_eq!(clusters(&p), vec![vec!["a", "x"], vec!["b"]]);
    }

    #[test]
    fn unique_mapping_empty_and_same_source() {
        let refs = vec![r("a", "l"), r("b", "l")];
        assert_eq!(unique_mapping(&refs, &[]).unwrap().clusters.len(), 2);
        assert!(matches!(
            unique_mapping(&refs, &[m("a", "b")]),
            Err(Error::Config { .. })
        ));
    }
}
