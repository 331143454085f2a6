//! Entity profile assembly and the profile -> reference feedback path.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttributeValue, ClusterPartition, EntityProfile, EntityReference, MatchEdge, Provenance, Representation};

/// Source id given to references rebuilt from merged profiles.
pub const PROFILE_SOURCE_ID: &str = "profiles";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyKind {
    Pair,
    Partition,
    Merged,
}

type Lookup<'a> = HashMap<&'a str, &'a EntityReference>;

fn lookup(refs: &[EntityReference]) -> Lookup<'_> {
    refs.iter().map(|r| (r.ref_id.as_str(), r)).collect()
}

fn union_provenance<'a, I>(members: I, by_id: &Lookup<'_>) -> Result<Vec<Provenance>>
where
    I: IntoIterator<Item = &'a String>,
{
    let mut prov = BTreeSet::new();
    for id in members {
        let r = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("profile member `{id}` is not a known reference")))?;
        prov.extend(r.provenance.iter().cloned());
    }
    Ok(prov.into_iter().collect())
}

/// One pair profile per match-labeled edge.
pub fn assemble_pairs(edges: &[MatchEdge], refs: &[EntityReference]) -> Result<Vec<EntityProfile>> {
    let by_id = lookup(refs);
    let mut profiles = edges
        .iter()
        .filter(|e| e.is_match())
        .map(|e| {
            let member_ids = vec![e.a.clone(), e.b.clone()];
            Ok(EntityProfile {
                profile_id: format!("p:{}+{}", e.a, e.b),
                representation: Representation::Pair,
                provenance: union_provenance(&member_ids, &by_id)?,
                member_ids,
                merged_attributes: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    profiles.sort_by(|x, y| x.profile_id.cmp(&y.profile_id));
    Ok(profiles)
}

fn cluster_profile(members: &[String], by_id: &Lookup<'_>, representation: Representation) -> Result<EntityProfile> {
    Ok(EntityProfile {
        profile_id: format!("p:{}", members[0]),
        representation,
        member_ids: members.to_vec(),
        merged_attributes: None,
        provenance: union_provenance(members, by_id)?,
    })
}

/// One profile per cluster, singletons included.
pub fn assemble_partitions(p: &ClusterPartition, refs: &[EntityReference]) -> Result<Vec<EntityProfile>> {
    let by_id = lookup(refs);
    p.clusters
        .iter()
        .map(|c| cluster_profile(c, &by_id, Representation::Partition))
        .collect()
}

/// Majority value per attribute; ties go to the smallest canonical JSON.
pub fn merge_attributes<'a, I>(members: I) -> BTreeMap<String, AttributeValue>
where
    I: IntoIterator<Item = &'a EntityReference>,
{
    // attribute -> canonical value -> (votes, value)
    let mut votes: BTreeMap<&str, BTreeMap<String, (usize, &AttributeValue)>> = BTreeMap::new();
    for r in members {
        for (name, value) in &r.attributes {
            let slot = votes.entry(name).or_default().entry(value.canonical()).or_insert((0, value));
            slot.0 += 1;
        }
    }
    votes
        .into_iter()
        .map(|(name, tally)| {
            // BTreeMap iterates canonical forms ascending, so the first
            // maximum is the tie-break winner
            let mut best: Option<(usize, &AttributeValue)> = None;
            for (count, value) in tally.into_values() {
                if best.is_none_or(|(c, _)| count > c) {
                    best = Some((count, value));
                }
            }
            (name.to_owned(), best.expect("tally is never empty").1.clone())
        })
        .collect()
}

/// Partition profiles that also carry a merged attribute map.
pub fn assemble_merged(p: &ClusterPartition, refs: &[EntityReference]) -> Result<Vec<EntityProfile>> {
    let by_id = lookup(refs);
    p.clusters
        .iter()
        .map(|c| {
            let mut profile = cluster_profile(c, &by_id, Representation::Merged)?;
            let members = c.iter().map(|id| by_id[id.as_str()]);
            profile.merged_attributes = Some(merge_attributes(members));
            Ok(profile)
        })
        .collect()
}

/// Turns merged profiles back into references so they can be fed to a
/// later run.
pub fn profiles_to_references(profiles: &[EntityProfile]) -> Result<Vec<EntityReference>> {
    profiles
        .iter()
        .map(|p| match (&p.representation, &p.merged_attributes) {
            (Representation::Merged, Some(attrs)) => Ok(EntityReference {
                ref_id: p.profile_id.clone(),
                source_id: PROFILE_SOURCE_ID.to_owned(),
                attributes: attrs.clone(),
                provenance: p.provenance.clone(),
            }),
            _ => Err(Error::UnsupportedRepresentation(p.profile_id.clone())),
        })
        .collect()
}

pub fn assemble(
    kind: AssemblyKind,
    partition: Option<&ClusterPartition>,
    edges: &[MatchEdge],
    refs: &[EntityReference],
) -> Result<Vec<EntityProfile>> {
    match (kind, partition) {
        (AssemblyKind::Pair, _) => assemble_pairs(edges, refs),
        (AssemblyKind::Partition, Some(p)) => assemble_partitions(p, refs),
        (AssemblyKind::Merged, Some(p)) => assemble_merged(p, refs),
        (_, None) => Err(Error::config("assembly", "partition and merged assembly need a clusterer")),
    }
}
