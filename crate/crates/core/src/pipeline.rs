//! Batch and incremental orchestration.
//!
//! Batch runs extraction, candidate generation, filtering, matching,
//! clustering and assembly in order. Incremental mode keeps the references,
//! a blocking index and the union-find state between records; ingesting a
//! dataset one record at a time ends in the same partition a batch run
//! produces.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{components_over_ids, unique_mapping, ClusterState, ClustererKind};
use crate::config::{Mode, RuntimeConfig};
use crate::error::{Error, Result};
use crate::extraction::{build_references, extract_record, flat_payload, SourceStats};
use crate::matching::{match_compact, score_pair, MatcherConfig};
use crate::model::{
    ClusterPartition, EntityProfile, EntityReference, InformationRecord, MatchEdge, MatchLabel, SourceKind,
};
use crate::profile::{assemble, assemble_merged, assemble_pairs, assemble_partitions, AssemblyKind};
use crate::space::{block_key, filter_compact, generate, RefTable, SpaceStrategy, TokenFilter};
use crate::store::ReferenceStore;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeCounts {
    #[serde(rename = "match")]
    pub matched: u64,
    pub possible: u64,
    pub non_match: u64,
}

impl EdgeCounts {
    pub fn record(&mut self, label: MatchLabel) {
        match label {
            MatchLabel::Match => self.matched += 1,
            MatchLabel::Possible => self.possible += 1,
            MatchLabel::NonMatch => self.non_match += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.matched + self.possible + self.non_match
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records_read: u64,
    pub records_skipped: u64,
    pub records_dropped_empty: u64,
    pub references_built: u64,
    pub number_parse_failures: u64,
    pub extractor_collisions: u64,
    pub missing_block_keys: u64,
    pub groups_generated: u64,
    pub groups_filtered: u64,
    pub pairs_scored: u64,
    pub edges: EdgeCounts,
    pub clusters: Option<u64>,
    pub profiles: u64,
    pub store_version: Option<u64>,
    /// Wall-clock milliseconds per stage.
    pub stage_millis: BTreeMap<String, f64>,
}

impl RunReport {
    fn absorb_source(&mut self, s: &SourceStats) {
        self.records_read += s.records_read;
        self.records_skipped += s.records_skipped;
        self.records_dropped_empty += s.records_dropped_empty;
        self.references_built += s.references_built;
        self.number_parse_failures += s.number_parse_failures;
        self.extractor_collisions += s.collisions;
    }

    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self).map_err(|e| e.in_stage(stage));
        self.stage_millis
            .insert(stage.to_owned(), start.elapsed().as_secs_f64() * 1e3);
        out
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub profiles: Vec<EntityProfile>,
    pub report: RunReport,
    /// `None` when the run has no clusterer.
    pub partition: Option<ClusterPartition>,
    /// Match and possible edges. Non-match edges are only counted (and
    /// persisted when a store is configured).
    pub edges: Vec<MatchEdge>,
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Reads every configured source (in parallel, one task per source) and
/// returns the references in source order.
pub fn extract_sources(cfg: &RuntimeConfig) -> Result<(Vec<EntityReference>, Vec<SourceStats>)> {
    let per_source: Vec<(Vec<EntityReference>, SourceStats)> = cfg
        .sources
        .par_iter()
        .map(|desc| {
            let default_plan = Default::default();
            let plan = cfg.plan_for(&desc.source_id).unwrap_or(&default_plan);
            build_references(desc, plan, cfg.on_record_error)
        })
        .collect::<Result<_>>()?;
    let mut refs = Vec::new();
    let mut stats = Vec::new();
    for (r, s) in per_source {
        refs.extend(r);
        stats.push(s);
    }
    Ok((refs, stats))
}

/// Runs the whole configured batch pipeline.
pub fn run_batch(cfg: &RuntimeConfig) -> Result<BatchOutput> {
    if cfg.mode != Mode::Batch {
        return Err(Error::config("mode", "run_batch needs mode = batch"));
    }
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| {
        let start = Instant::now();
        let (refs, stats) = extract_sources(cfg).map_err(|e| e.in_stage("extraction"))?;
        let mut report = RunReport::default();
        for s in &stats {
            report.absorb_source(s);
        }
        report
            .stage_millis
            .insert("extraction".into(), start.elapsed().as_secs_f64() * 1e3);
        resolve_with(cfg, refs, report)
    })
}

/// Runs everything after extraction over references built elsewhere.
pub fn resolve_references(cfg: &RuntimeConfig, refs: Vec<EntityReference>) -> Result<BatchOutput> {
    let pool = thread_pool(cfg.threads)?;
    let report = RunReport {
        references_built: refs.len() as u64,
        ..RunReport::default()
    };
    pool.install(|| resolve_with(cfg, refs, report))
}

fn resolve_with(cfg: &RuntimeConfig, refs: Vec<EntityReference>, mut report: RunReport) -> Result<BatchOutput> {
    let mut store = match &cfg.store {
        Some(backend) => Some(ReferenceStore::open(backend).map_err(|e| e.in_stage("store"))?),
        None => None,
    };
    let table = RefTable::new(refs).map_err(|e| e.in_stage("extraction"))?;
    if let Some(store) = store.as_mut() {
        let v = report.time("store_references", |_| store.put(table.refs()))?;
        report.store_version = Some(v.version);
    }

    let space = report.time("comparison_space", |rep| {
        let (space, missing) = generate(&cfg.comparison, &table)?;
        rep.missing_block_keys = missing as u64;
        rep.groups_generated = space.len() as u64;
        match &cfg.filter {
            Some(f) => {
                let out = filter_compact(space, &table, f)?;
                rep.groups_filtered = out.removed as u64;
                Ok(out.space)
            }
            None => Ok(space),
        }
    })?;
    if let Some(store) = store.as_mut() {
        let v = report.time("store_comparison_space", |_| store.put(&space.materialize(&table).groups))?;
        report.store_version = Some(v.version);
    }

    let mut edges = Vec::new();
    if let Some(matcher) = &cfg.matcher {
        let keep_all = store.is_some();
        let mut all_edges = Vec::new();
        report.time("matching", |rep| {
            match_compact(&space, &table, matcher, |edge| {
                rep.edges.record(edge.label);
                if keep_all {
                    all_edges.push(edge.clone());
                }
                if edge.label != MatchLabel::NonMatch {
                    edges.push(edge);
                }
            })?;
            rep.pairs_scored = rep.edges.total();
            Ok(())
        })?;
        if let Some(store) = store.as_mut() {
            let v = report.time("store_edges", |_| store.put(&all_edges))?;
            report.store_version = Some(v.version);
        }
    }

    let partition = match cfg.clusterer {
        Some(kind) => {
            let p = report.time("clustering", |_| match kind {
                ClustererKind::ConnectedComponents => {
                    components_over_ids(table.refs().iter().map(|r| r.ref_id.as_str()), &edges)
                }
                ClustererKind::UniqueMapping => unique_mapping(table.refs(), &edges),
            })?;
            report.clusters = Some(p.clusters.len() as u64);
            if let Some(store) = store.as_mut() {
                let v = report.time("store_partition", |_| store.put(&p.cluster_lines()))?;
                report.store_version = Some(v.version);
            }
            Some(p)
        }
        None => None,
    };

    let profiles = report.time("assembly", |_| assemble(cfg.assembly, partition.as_ref(), &edges, table.refs()))?;
    report.profiles = profiles.len() as u64;
    if let Some(store) = store.as_mut() {
        let v = report.time("store_profiles", |_| store.put(&profiles))?;
        report.store_version = Some(v.version);
    }
    Ok(BatchOutput {
        profiles,
        report,
        partition,
        edges,
    })
}

/// Record accepted by the incremental service: an information record
/// without an ingest sequence number. The ordinal is assigned when absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordInput {
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_ordinal: Option<u64>,
    pub payload: BTreeMap<String, String>,
}

impl RecordInput {
    /// Parses a request body, allowing scalar payload values of any JSON type.
    pub fn from_json(body: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(body).map_err(|e| Error::InvalidInput(format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidInput("expected a JSON object".into()))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "source_id" | "record_ordinal" | "payload") {
                return Err(Error::InvalidInput(format!("unknown field `{key}`")));
            }
        }
        let source_id = obj
            .get("source_id")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::InvalidInput("`source_id` must be a string".into()))?
            .to_owned();
        let record_ordinal = match obj.get("record_ordinal") {
            None | Some(serde_json::Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .ok_or_else(|| Error::InvalidInput("`record_ordinal` must be a non-negative integer".into()))?,
            ),
        };
        let payload = obj
            .get("payload")
            .and_then(|v| v.as_object())
            .ok_or_else(|| Error::InvalidInput("`payload` must be an object".into()))?;
        let payload = flat_payload(payload).map_err(Error::InvalidInput)?;
        Ok(RecordInput {
            source_id,
            record_ordinal,
            payload,
        })
    }
}

impl From<&InformationRecord> for RecordInput {
    fn from(r: &InformationRecord) -> Self {
        RecordInput {
            source_id: r.source_id.clone(),
            record_ordinal: Some(r.record_ordinal),
            payload: r.payload.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSelector {
    ByRefId(String),
    ByAttributeEquals { name: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub ref_id: String,
    /// False when the same record had already been ingested.
    pub created: bool,
    pub profiles: Vec<EntityProfile>,
    pub store_version: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IncrementalReport {
    pub records_ingested: u64,
    pub records_rejected: u64,
    pub references: u64,
    pub candidates_generated: u64,
    pub candidates_filtered: u64,
    pub edges: EdgeCounts,
    pub clusters: u64,
    pub store_version: u64,
}

/// Long-lived resolution state: one writer ingests, readers query.
#[derive(Debug)]
pub struct IncrementalResolver {
    cfg: RuntimeConfig,
    matcher: MatcherConfig,
    store: ReferenceStore,
    refs: HashMap<String, EntityReference>,
    // block key -> ref ids; with the full strategy every ref sits under ""
    blocks: HashMap<String, Vec<String>>,
    clusters: ClusterState,
    match_edges: Vec<MatchEdge>,
    next_ordinal: HashMap<String, u64>,
    next_seq: u64,
    report: IncrementalReport,
}

const FULL_SPACE_KEY: &str = "";

impl IncrementalResolver {
    /// Opens the configured store and rebuilds state from it. Reference
    /// passthrough sources are loaded on first start.
    pub fn new(cfg: RuntimeConfig) -> Result<Self> {
        if cfg.mode != Mode::Incremental {
            return Err(Error::config("mode", "the incremental resolver needs mode = incremental"));
        }
        cfg.validate()?;
        let matcher = cfg.matcher.clone().expect("validated: incremental mode has a matcher");
        let backend = cfg.store.clone().unwrap_or(crate::store::StoreBackend::Memory);
        let store = ReferenceStore::open(&backend)?;
        let mut me = IncrementalResolver {
            cfg,
            matcher,
            store,
            refs: HashMap::new(),
            blocks: HashMap::new(),
            clusters: ClusterState::new(),
            match_edges: Vec::new(),
            next_ordinal: HashMap::new(),
            next_seq: 0,
            report: IncrementalReport::default(),
        };
        me.replay_store()?;
        if me.store.latest_version() == 0 {
            me.load_passthrough_sources()?;
        }
        Ok(me)
    }

    fn replay_store(&mut self) -> Result<()> {
        let refs: Vec<EntityReference> = self.store.get(None)?;
        let edges: Vec<MatchEdge> = self.store.get(None)?;
        for r in refs {
            self.index_reference(r)?;
        }
        for e in &edges {
            self.report.edges.record(e.label);
        }
        self.clusters.merge_edges(&edges)?;
        self.match_edges = edges.into_iter().filter(MatchEdge::is_match).collect();
        self.match_edges.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
        self.report.references = self.refs.len() as u64;
        self.report.clusters = self.clusters.partition().clusters.len() as u64;
        self.report.store_version = self.store.latest_version();
        self.next_seq = self.refs.len() as u64;
        Ok(())
    }

    fn load_passthrough_sources(&mut self) -> Result<()> {
        let sources: Vec<_> = self
            .cfg
            .sources
            .iter()
            .filter(|s| s.kind == SourceKind::ReferencePassthrough && !s.location.is_empty())
            .cloned()
            .collect();
        for desc in sources {
            for r in crate::extraction::passthrough_load(&desc)? {
                self.ingest_reference(r)?;
            }
        }
        Ok(())
    }

    fn blocking_key(&self, r: &EntityReference) -> Result<Option<String>> {
        match &self.cfg.comparison {
            SpaceStrategy::Full => Ok(Some(FULL_SPACE_KEY.to_owned())),
            SpaceStrategy::BlockKey { key_attribute, key_transform } => match r.attr(key_attribute) {
                Some(v) => block_key(v, *key_transform),
                None => Ok(None),
            },
            SpaceStrategy::SortedNeighborhood { .. } => {
                Err(Error::config("comparison.strategy", "sorted_neighborhood is not incremental"))
            }
        }
    }

    fn index_reference(&mut self, r: EntityReference) -> Result<()> {
        if let Some(key) = self.blocking_key(&r)? {
            self.blocks.entry(key).or_default().push(r.ref_id.clone());
        }
        if let Some(ord) = r
            .ref_id
            .rsplit_once(crate::model::REF_ID_SEPARATOR)
            .and_then(|(_, o)| o.parse::<u64>().ok())
        {
            let next = self.next_ordinal.entry(r.source_id.clone()).or_insert(0);
            *next = (*next).max(ord + 1);
        }
        self.clusters.add(r.ref_id.clone());
        self.refs.insert(r.ref_id.clone(), r);
        Ok(())
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ReferenceStore {
        &self.store
    }

    pub fn report(&self) -> IncrementalReport {
        self.report.clone()
    }

    pub fn partition(&self) -> ClusterPartition {
        self.clusters.partition()
    }

    /// Extracts, matches and clusters one record. State is unchanged when
    /// this returns an error.
    pub fn ingest(&mut self, input: RecordInput) -> Result<IngestOutcome> {
        let result = self.try_ingest(input);
        if result.is_err() {
            self.report.records_rejected += 1;
        }
        result
    }

    fn try_ingest(&mut self, input: RecordInput) -> Result<IngestOutcome> {
        let desc = self
            .cfg
            .source(&input.source_id)
            .ok_or_else(|| Error::InvalidInput(format!("undeclared source `{}`", input.source_id)))?;
        if desc.kind == SourceKind::ReferencePassthrough {
            return Err(Error::InvalidInput(format!(
                "source `{}` carries references, not records",
                input.source_id
            )));
        }
        let ordinal = input
            .record_ordinal
            .unwrap_or_else(|| self.next_ordinal.get(&input.source_id).copied().unwrap_or(0));
        let record = InformationRecord {
            source_id: input.source_id,
            record_ordinal: ordinal,
            payload: input.payload,
            ingest_seq: self.next_seq,
        };
        let plan = self
            .cfg
            .plan_for(&record.source_id)
            .ok_or_else(|| Error::config("extraction", format!("no plan for `{}`", record.source_id)))?;
        let (reference, _) = extract_record(&record, plan)?;
        let reference = reference.ok_or_else(|| {
            Error::InvalidInput(format!(
                "record {}:{} produced no attributes",
                record.source_id, record.record_ordinal
            ))
        })?;
        let outcome = self.ingest_reference(reference)?;
        self.report.records_ingested += u64::from(outcome.created);
        Ok(outcome)
    }

    /// Adds an already-built reference (used for passthrough data).
    pub fn ingest_reference(&mut self, reference: EntityReference) -> Result<IngestOutcome> {
        reference.validate()?;
        if let Some(existing) = self.refs.get(&reference.ref_id) {
            if *existing != reference {
                return Err(Error::Conflict(format!(
                    "ref_id `{}` already holds different content",
                    reference.ref_id
                )));
            }
            return Ok(IngestOutcome {
                profiles: self.profiles_containing(&reference.ref_id)?,
                ref_id: reference.ref_id,
                created: false,
                store_version: self.store.latest_version(),
            });
        }

        // candidates: stored refs sharing the blocking key
        let key = self.blocking_key(&reference)?;
        let candidates: Vec<&EntityReference> = key
            .as_ref()
            .and_then(|k| self.blocks.get(k))
            .map(|ids| ids.iter().map(|id| &self.refs[id]).collect())
            .unwrap_or_default();
        let generated = candidates.len() as u64;
        let candidates = match &self.cfg.filter {
            Some(f) => filter_candidates(&reference, candidates, f)?,
            None => candidates,
        };
        let filtered = generated - candidates.len() as u64;
        let mut edges = candidates
            .iter()
            .map(|c| score_pair(&self.matcher, &reference, c))
            .collect::<Result<Vec<_>>>()?;
        edges.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));

        let mut clusters = self.clusters.clone();
        clusters.add(reference.ref_id.clone());
        clusters.merge_edges(&edges)?;
        let partition = clusters.partition();

        self.store.put(std::slice::from_ref(&reference))?;
        self.store.put(&edges)?;
        let version = self.store.put(&partition.cluster_lines())?;

        // everything durable; publish in memory
        self.clusters = clusters;
        let ref_id = reference.ref_id.clone();
        self.index_reference(reference)?;
        self.next_seq += 1;
        for e in &edges {
            self.report.edges.record(e.label);
        }
        self.match_edges.extend(edges.into_iter().filter(MatchEdge::is_match));
        self.match_edges.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
        self.report.references = self.refs.len() as u64;
        self.report.candidates_generated += generated;
        self.report.candidates_filtered += filtered;
        self.report.clusters = partition.clusters.len() as u64;
        self.report.store_version = version.version;

        Ok(IngestOutcome {
            profiles: self.profiles_containing(&ref_id)?,
            ref_id,
            created: true,
            store_version: version.version,
        })
    }

    fn profiles_containing(&self, ref_id: &str) -> Result<Vec<EntityProfile>> {
        let members = self
            .clusters
            .cluster_of(ref_id)
            .ok_or_else(|| Error::NotFound(format!("reference `{ref_id}`")))?;
        self.assemble_clusters(vec![members], Some(ref_id))
    }

    fn assemble_clusters(&self, clusters: Vec<Vec<String>>, focus: Option<&str>) -> Result<Vec<EntityProfile>> {
        let ids: BTreeSet<&String> = clusters.iter().flatten().collect();
        let refs: Vec<EntityReference> = ids.iter().map(|id| self.refs[id.as_str()].clone()).collect();
        match self.cfg.assembly {
            AssemblyKind::Pair => {
                let edges: Vec<MatchEdge> = self
                    .match_edges
                    .iter()
                    .filter(|e| match focus {
                        Some(f) => e.a == f || e.b == f,
                        None => ids.contains(&e.a) || ids.contains(&e.b),
                    })
                    .cloned()
                    .collect();
                let needed: BTreeSet<&String> = edges.iter().flat_map(|e| [&e.a, &e.b]).collect();
                let refs: Vec<EntityReference> = needed.iter().map(|id| self.refs[id.as_str()].clone()).collect();
                assemble_pairs(&edges, &refs)
            }
            AssemblyKind::Partition => assemble_partitions(&ClusterPartition::new(clusters)?, &refs),
            AssemblyKind::Merged => assemble_merged(&ClusterPartition::new(clusters)?, &refs),
        }
    }

    /// Profiles of the current partition whose members match `selector`.
    ///
    /// Attribute matching ignores case and surrounding whitespace, since
    /// cleaning rules may have case-folded the stored values.
    pub fn query(&self, selector: &ProfileSelector) -> Result<Vec<EntityProfile>> {
        let hits: Vec<&str> = match selector {
            ProfileSelector::ByRefId(id) => {
                if !self.refs.contains_key(id) {
                    return Err(Error::NotFound(format!("reference `{id}`")));
                }
                vec![id.as_str()]
            }
            ProfileSelector::ByAttributeEquals { name, value } => {
                let want = value.trim().to_lowercase();
                let mut hits: Vec<&str> = self
                    .refs
                    .values()
                    .filter(|r| {
                        r.attr(name).is_some_and(|v| {
                            v.display_string().to_lowercase() == want
                                || v.as_tokens().is_some_and(|t| t.contains(&want))
                        })
                    })
                    .map(|r| r.ref_id.as_str())
                    .collect();
                hits.sort_unstable();
                hits
            }
        };
        let partition = self.clusters.partition();
        let assignment = partition.assignment();
        let chosen: BTreeSet<usize> = hits.iter().map(|id| assignment[id]).collect();
        let clusters: Vec<Vec<String>> = chosen.into_iter().map(|i| partition.clusters[i].clone()).collect();
        if clusters.is_empty() {
            return Ok(Vec::new());
        }
        if self.cfg.assembly == AssemblyKind::Pair {
            let mut out = Vec::new();
            for id in hits {
                out.extend(self.assemble_clusters(vec![self.clusters.cluster_of(id).unwrap_or_default()], Some(id))?);
            }
            out.sort_by(|a, b| a.profile_id.cmp(&b.profile_id));
            out.dedup_by(|a, b| a.profile_id == b.profile_id);
            return Ok(out);
        }
        self.assemble_clusters(clusters, None)
    }
}

fn filter_candidates<'a>(
    reference: &EntityReference,
    candidates: Vec<&'a EntityReference>,
    filter: &TokenFilter,
) -> Result<Vec<&'a EntityReference>> {
    let mine = match reference.attr(&filter.attribute) {
        None => return Ok(candidates),
        Some(v) => v.as_tokens().ok_or_else(|| {
            Error::config(
                "filter.attribute",
                format!("`{}` is {}, expected token_set", filter.attribute, v.type_name()),
            )
        })?,
    };
    let mut kept = Vec::with_capacity(candidates.len());
    for c in candidates {
        let keep = match c.attr(&filter.attribute) {
            None => true,
            Some(v) => {
                let theirs = v.as_tokens().ok_or_else(|| {
                    Error::config(
                        "filter.attribute",
                        format!("`{}` is {}, expected token_set", filter.attribute, v.type_name()),
                    )
                })?;
                mine.intersection(theirs).count() >= filter.min_shared
            }
        };
        if keep {
            kept.push(c);
        }
    }
    Ok(kept)
}
