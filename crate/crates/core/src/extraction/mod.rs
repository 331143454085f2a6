//! Turns raw source data into entity references.
//!
//! Records flow through `open_source` -> `clean_record` -> the extractor
//! chain. Reference passthrough sources skip all of that and load canonical
//! reference JSONL directly.

mod cleaning;
mod extractor;
mod source;

use serde::{Deserialize, Serialize};

pub use cleaning::{clean_record, CleaningRules};
pub use extractor::{
    apply_chain, apply_extractor, validate_chain, ExtractStats, Extracted, Extractor, ExtractorKind,
};
pub use source::{
    collect_records, load_references, open_source, parse_jsonl_record, passthrough_load,
    read_source, resolve_location, RecordErrorPolicy,
};
pub(crate) use source::flat_payload;

use crate::error::Result;
use crate::model::{make_reference_id, EntityReference, InformationRecord, Provenance, SourceDescriptor, SourceKind};

/// Cleaning rules plus extractor chain for one source.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionPlan {
    #[serde(default)]
    pub cleaning: CleaningRules,
    #[serde(default)]
    pub extractors: Vec<Extractor>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub records_read: u64,
    pub records_skipped: u64,
    pub records_dropped_empty: u64,
    pub references_built: u64,
    pub number_parse_failures: u64,
    pub collisions: u64,
}

impl SourceStats {
    pub fn absorb(&mut self, o: &SourceStats) {
        self.records_read += o.records_read;
        self.records_skipped += o.records_skipped;
        self.records_dropped_empty += o.records_dropped_empty;
        self.references_built += o.references_built;
        self.number_parse_failures += o.number_parse_failures;
        self.collisions += o.collisions;
    }
}

/// Cleans a record and runs the chain. `Ok(None)` when the chain produced
/// no attributes.
pub fn extract_record(
    record: &InformationRecord,
    plan: &ExtractionPlan,
) -> Result<(Option<EntityReference>, ExtractStats)> {
    let cleaned = clean_record(record, &plan.cleaning);
    let extracted = apply_chain(&plan.extractors, std::slice::from_ref(&cleaned))?;
    if extracted.attributes.is_empty() {
        return Ok((None, extracted.stats));
    }
    let reference = EntityReference {
        ref_id: make_reference_id(&record.source_id, record.record_ordinal)?,
        source_id: record.source_id.clone(),
        attributes: extracted.attributes,
        provenance: vec![Provenance(record.source_id.clone(), record.record_ordinal)],
    };
    Ok((Some(reference), extracted.stats))
}

/// Builds references from already-read records, in input order.
pub fn references_from_records(
    records: &[InformationRecord],
    plan: &ExtractionPlan,
) -> Result<(Vec<EntityReference>, SourceStats)> {
    let mut stats = SourceStats {
        records_read: records.len() as u64,
        ..SourceStats::default()
    };
    let mut refs = Vec::with_capacity(records.len());
    for record in records {
        let (reference, s) = extract_record(record, plan)?;
        stats.number_parse_failures += s.number_parse_failures;
        stats.collisions += s.collisions;
        match reference {
            Some(r) => refs.push(r),
            None => stats.records_dropped_empty += 1,
        }
    }
    stats.references_built = refs.len() as u64;
    Ok((refs, stats))
}

/// Reads one source and emits one reference per surviving record.
pub fn build_references(
    desc: &SourceDescriptor,
    plan: &ExtractionPlan,
    policy: RecordErrorPolicy,
) -> Result<(Vec<EntityReference>, SourceStats)> {
    if desc.kind == SourceKind::ReferencePassthrough {
        let refs = passthrough_load(desc)?;
        let n = refs.len() as u64;
        return Ok((
            refs,
            SourceStats {
                records_read: n,
                references_built: n,
                ..SourceStats::default()
            },
        ));
    }
    let (records, skipped) = collect_records(desc, policy)?;
    let (refs, mut stats) = references_from_records(&records, plan)?;
    stats.records_skipped = skipped;
    Ok((refs, stats))
}
