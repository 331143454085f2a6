//! Candidate generation: arrange references, generate candidate pairs, then
//! filter them.
//!
//! Internally pairs are `(u32, u32)` indices into a [`RefTable`] sorted by
//! ref_id, so ordering the index pairs gives exactly the canonical
//! lexicographic order of the materialized [`ComparisonSpace`].

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttributeValue, CandidateGroup, ComparisonSpace, EntityReference};

/// References sorted by ref_id with an id -> position index.
#[derive(Debug, Clone, Default)]
pub struct RefTable {
    refs: Vec<EntityReference>,
    index: HashMap<String, u32>,
}

impl RefTable {
    pub fn new(mut refs: Vec<EntityReference>) -> Result<Self> {
        refs.sort_by(|a, b| a.ref_id.cmp(&b.ref_id));
        if let Some(w) = refs.windows(2).find(|w| w[0].ref_id == w[1].ref_id) {
            return Err(Error::InvalidInput(format!("duplicate ref_id `{}`", w[0].ref_id)));
        }
        if refs.len() > u32::MAX as usize {
            return Err(Error::InvalidInput("too many references".into()));
        }
        let index = refs
            .iter()
            .enumerate()
            .map(|(i, r)| (r.ref_id.clone(), i as u32))
            .collect();
        Ok(RefTable { refs, index })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn refs(&self) -> &[EntityReference] {
        &self.refs
    }

    pub fn at(&self, i: u32) -> &EntityReference {
        &self.refs[i as usize]
    }

    pub fn position(&self, ref_id: &str) -> Option<u32> {
        self.index.get(ref_id).copied()
    }

    pub fn get(&self, ref_id: &str) -> Option<&EntityReference> {
        self.position(ref_id).map(|i| self.at(i))
    }

    pub fn into_refs(self) -> Vec<EntityReference> {
        self.refs
    }
}

/// Index-pair form of a pair-only comparison space.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompactSpace {
    /// Sorted, deduplicated, `i < j`.
    pub pairs: Vec<(u32, u32)>,
    pub total_references: usize,
}

impl CompactSpace {
    fn from_unsorted(mut pairs: Vec<(u32, u32)>, total_references: usize) -> Self {
        pairs.par_sort_unstable();
        pairs.dedup();
        CompactSpace {
            pairs,
            total_references,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn materialize(&self, table: &RefTable) -> ComparisonSpace {
        let groups = self
            .pairs
            .iter()
            .map(|&(i, j)| {
                CandidateGroup::pair(&table.at(i).ref_id, &table.at(j).ref_id)
                    .expect("compact pairs never hold self-pairs")
            })
            .collect();
        // already canonical, from_groups only recounts
        ComparisonSpace::from_groups(groups, self.total_references)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyTransform {
    Exact,
    /// First `k` characters of a text value.
    PrefixK(usize),
    SoundexLike,
}

/// How to arrange references into candidate pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceStrategy {
    Full,
    BlockKey {
        key_attribute: String,
        #[serde(default = "default_transform")]
        key_transform: KeyTransform,
    },
    SortedNeighborhood {
        key_attribute: String,
        window: usize,
    },
}

fn default_transform() -> KeyTransform {
    KeyTransform::Exact
}

impl SpaceStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            SpaceStrategy::Full => Ok(()),
            SpaceStrategy::BlockKey { key_attribute, key_transform } => {
                if key_attribute.is_empty() {
                    return Err(Error::config("comparison.key_attribute", "must not be empty"));
                }
                if let KeyTransform::PrefixK(0) = key_transform {
                    return Err(Error::config("comparison.key_transform", "prefix length must be at least 1"));
                }
                Ok(())
            }
            SpaceStrategy::SortedNeighborhood { key_attribute, window } => {
                if key_attribute.is_empty() {
                    return Err(Error::config("comparison.key_attribute", "must not be empty"));
                }
                if *window < 2 {
                    return Err(Error::config("comparison.window", "window must be at least 2"));
                }
                Ok(())
            }
        }
    }
}

/// American Soundex: first letter plus three digits.
///
/// Non-ASCII letters are ignored; `None` if the input has no ASCII letter.
pub fn soundex(s: &str) -> Option<String> {
    fn digit(c: char) -> Option<char> {
        // None for h/w, which do not separate equal codes
        Some(match c {
            'B' | 'F' | 'P' | 'V' => '1',
            'C' | 'G' | 'J' | 'K' | 'Q' | 'S' | 'X' | 'Z' => '2',
            'D' | 'T' => '3',
            'L' => '4',
            'M' | 'N' => '5',
            'R' => '6',
            'H' | 'W' => return None,
            _ => '0',
        })
    }
    let mut letters = s
        .chars()
        .filter(char::is_ascii_alphabetic)
        .map(|c| c.to_ascii_uppercase());
    let first = letters.next()?;
    let mut code = String::with_capacity(4);
    code.push(first);
    let mut last = digit(first);
    for c in letters {
        if code.len() == 4 {
            break;
        }
        match digit(c) {
            None => {}
            Some('0') => last = Some('0'),
            Some(d) => {
                if last != Some(d) {
                    code.push(d);
                }
                last = Some(d);
            }
        }
    }
    while code.len() < 4 {
        code.push('0');
    }
    Some(code)
}

/// Computes a reference's blocking key. `Ok(None)` when there is no key.
pub fn block_key(value: &AttributeValue, transform: KeyTransform) -> Result<Option<String>> {
    match transform {
        KeyTransform::Exact => Ok(Some(value.display_string())),
        KeyTransform::PrefixK(k) => match value {
            AttributeValue::Text(s) => Ok(Some(s.chars().take(k).collect())),
            other => Err(Error::config(
                "comparison.key_attribute",
                format!("prefix blocking needs a text attribute, found {}", other.type_name()),
            )),
        },
        KeyTransform::SoundexLike => match value {
            AttributeValue::Text(s) => Ok(soundex(s)),
            other => Err(Error::config(
                "comparison.key_attribute",
                format!("soundex blocking needs a text attribute, found {}", other.type_name()),
            )),
        },
    }
}

/// Blocking output: key -> member ref_ids (sorted), plus how many references
/// had no key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blocks {
    pub blocks: BTreeMap<String, Vec<String>>,
    pub missing_key: usize,
    pub total_references: usize,
}

fn compact_blocks(
    table: &RefTable,
    key_attribute: &str,
    transform: KeyTransform,
) -> Result<(BTreeMap<String, Vec<u32>>, usize)> {
    let mut blocks: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    let mut missing = 0;
    for (i, r) in table.refs().iter().enumerate() {
        let key = match r.attr(key_attribute) {
            Some(v) => block_key(v, transform)?,
            None => None,
        };
        match key {
            Some(k) => blocks.entry(k).or_default().push(i as u32),
            None => missing += 1,
        }
    }
    Ok((blocks, missing))
}

pub fn block_by_key(
    refs: &[EntityReference],
    key_attribute: &str,
    transform: KeyTransform,
) -> Result<Blocks> {
    let table = RefTable::new(refs.to_vec())?;
    let (blocks, missing_key) = compact_blocks(&table, key_attribute, transform)?;
    Ok(Blocks {
        blocks: blocks
            .into_iter()
            .map(|(k, members)| (k, members.into_iter().map(|i| table.at(i).ref_id.clone()).collect()))
            .collect(),
        missing_key,
        total_references: table.len(),
    })
}

fn within_block_pairs(members: &[u32]) -> impl Iterator<Item = (u32, u32)> + '_ {
    members
        .iter()
        .enumerate()
        .flat_map(move |(p, &i)| members[p + 1..].iter().map(move |&j| (i.min(j), i.max(j))))
}

/// All within-block pairs, deduplicated across blocks.
pub fn pairs_from_blocks(blocks: &Blocks) -> ComparisonSpace {
    let groups: Vec<CandidateGroup> = blocks
        .blocks
        .par_iter()
        .flat_map_iter(|(_, members)| {
            members.iter().enumerate().flat_map(move |(p, a)| {
                members[p + 1..].iter().filter_map(move |b| CandidateGroup::pair(a, b))
            })
        })
        .collect();
    ComparisonSpace::from_groups(groups, blocks.total_references)
}

fn compact_full(n: usize) -> CompactSpace {
    let n32 = n as u32;
    let pairs = (0..n32)
        .flat_map(|i| (i + 1..n32).map(move |j| (i, j)))
        .collect();
    CompactSpace {
        pairs,
        total_references: n,
    }
}

fn compact_sorted_neighborhood(table: &RefTable, key_attribute: &str, window: usize) -> Result<CompactSpace> {
    if window < 2 {
        return Err(Error::config("comparison.window", "window must be at least 2"));
    }
    let mut keyed: Vec<(Option<&str>, u32)> = Vec::with_capacity(table.len());
    for (i, r) in table.refs().iter().enumerate() {
        let key = match r.attr(key_attribute) {
            None => None,
            Some(AttributeValue::Text(s)) => Some(s.as_str()),
            Some(other) => {
                return Err(Error::config(
                    "comparison.key_attribute",
                    format!("sorted neighborhood needs a text key, found {}", other.type_name()),
                ))
            }
        };
        keyed.push((key, i as u32));
    }
    // absent keys last, ties by ref_id (= table index)
    keyed.sort_by(|(ka, ia), (kb, ib)| {
        ka.is_none()
            .cmp(&kb.is_none())
            .then_with(|| ka.cmp(kb))
            .then_with(|| ia.cmp(ib))
    });
    let mut pairs = Vec::new();
    for p in 0..keyed.len() {
        let end = (p + window).min(keyed.len());
        for q in p + 1..end {
            let (i, j) = (keyed[p].1, keyed[q].1);
            pairs.push((i.min(j), i.max(j)));
        }
    }
    Ok(CompactSpace::from_unsorted(pairs, table.len()))
}

/// Generates the compact candidate space for `strategy`. The second value
/// counts references excluded for lacking a blocking key.
pub fn generate(strategy: &SpaceStrategy, table: &RefTable) -> Result<(CompactSpace, usize)> {
    match strategy {
        SpaceStrategy::Full => Ok((compact_full(table.len()), 0)),
        SpaceStrategy::BlockKey { key_attribute, key_transform } => {
            let (blocks, missing) = compact_blocks(table, key_attribute, *key_transform)?;
            let pairs: Vec<(u32, u32)> = blocks
                .par_iter()
                .flat_map_iter(|(_, members)| within_block_pairs(members))
                .collect();
            Ok((CompactSpace::from_unsorted(pairs, table.len()), missing))
        }
        SpaceStrategy::SortedNeighborhood { key_attribute, window } => {
            Ok((compact_sorted_neighborhood(table, key_attribute, *window)?, 0))
        }
    }
}

/// Every unordered pair, canonically sorted.
pub fn full_space(refs: &[EntityReference]) -> Result<ComparisonSpace> {
    let table = RefTable::new(refs.to_vec())?;
    Ok(compact_full(table.len()).materialize(&table))
}

/// Sort by key and pair each reference with its next `window - 1` neighbours.
pub fn sorted_neighborhood(
    refs: &[EntityReference],
    key_attribute: &str,
    window: usize,
) -> Result<ComparisonSpace> {
    let table = RefTable::new(refs.to_vec())?;
    Ok(compact_sorted_neighborhood(&table, key_attribute, window)?.materialize(&table))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenFilter {
    pub attribute: String,
    pub min_shared: usize,
}

impl TokenFilter {
    pub fn validate(&self) -> Result<()> {
        if self.attribute.is_empty() {
            return Err(Error::config("filter.attribute", "must not be empty"));
        }
        if self.min_shared < 1 {
            return Err(Error::config("filter.min_shared", "must be at least 1"));
        }
        Ok(())
    }
}

fn intersection_size(a: &BTreeSet<String>, b: &BTreeSet<String>) -> usize {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().filter(|t| large.contains(*t)).count()
}

fn tokens_of<'a>(r: &'a EntityReference, attribute: &str) -> Result<Option<&'a BTreeSet<String>>> {
    match r.attr(attribute) {
        None => Ok(None),
        Some(AttributeValue::TokenSet(t)) => Ok(Some(t)),
        Some(other) => Err(Error::config(
            "filter.attribute",
            format!(
                "`{attribute}` on `{}` is {}, expected token_set",
                r.ref_id,
                other.type_name()
            ),
        )),
    }
}

// Missing attribute on either side keeps the pair.
fn keep_pair(x: &EntityReference, y: &EntityReference, filter: &TokenFilter) -> Result<bool> {
    match (tokens_of(x, &filter.attribute)?, tokens_of(y, &filter.attribute)?) {
        (Some(a), Some(b)) => Ok(intersection_size(a, b) >= filter.min_shared),
        _ => Ok(true),
    }
}

/// Result of a filtering pass. `kept + removed` equals the input size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Filtered<S> {
    pub space: S,
    pub removed: usize,
}

pub fn filter_compact(space: CompactSpace, table: &RefTable, filter: &TokenFilter) -> Result<Filtered<CompactSpace>> {
    filter.validate()?;
    let before = space.pairs.len();
    let flags: Vec<bool> = space
        .pairs
        .par_iter()
        .map(|&(i, j)| keep_pair(table.at(i), table.at(j), filter))
        .collect::<Result<_>>()?;
    let pairs: Vec<(u32, u32)> = space
        .pairs
        .into_iter()
        .zip(flags)
        .filter_map(|(p, keep)| keep.then_some(p))
        .collect();
    let removed = before - pairs.len();
    Ok(Filtered {
        space: CompactSpace {
            pairs,
            total_references: space.total_references,
        },
        removed,
    })
}

/// Drops pairs whose token sets share fewer than `min_shared` tokens. Groups
/// larger than two, and pairs with the attribute missing, are kept.
pub fn filter_shared_tokens(
    space: &ComparisonSpace,
    refs: &[EntityReference],
    attribute: &str,
    min_shared: usize,
) -> Result<Filtered<ComparisonSpace>> {
    let filter = TokenFilter {
        attribute: attribute.to_owned(),
        min_shared,
    };
    filter.validate()?;
    let by_id: HashMap<&str, &EntityReference> = refs.iter().map(|r| (r.ref_id.as_str(), r)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown ref_id `{id}` in comparison space")))
    };
    let mut kept = Vec::with_capacity(space.groups.len());
    for group in &space.groups {
        let keep = match group.as_pair() {
            Some((a, b)) => keep_pair(lookup(a)?, lookup(b)?, &filter)?,
            None => true,
        };
        if keep {
            kept.push(group.clone());
        }
    }
    let removed = space.groups.len() - kept.len();
    Ok(Filtered {
        space: ComparisonSpace::from_groups(kept, space.stats.total_references),
        removed,
    })
}
