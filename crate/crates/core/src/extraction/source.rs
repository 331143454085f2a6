use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EntityProfile, EntityReference, InformationRecord, SourceDescriptor, SourceKind};
use crate::profile::profiles_to_references;

/// What to do when a single record cannot be parsed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordErrorPolicy {
    #[default]
    Skip,
    Abort,
}

fn open_file(desc: &SourceDescriptor) -> Result<File> {
    let path = PathBuf::from(&desc.location);
    File::open(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::SourceNotFound {
            source_id: desc.source_id.clone(),
            path,
        },
        _ => Error::Io(e),
    })
}

/// Opens a CSV or JSONL source and yields one result per record, in file
/// order. A malformed record yields an `Error::Record` and reading continues.
pub fn open_source(
    desc: &SourceDescriptor,
) -> Result<Box<dyn Iterator<Item = Result<InformationRecord>>>> {
    let file = open_file(desc)?;
    read_source(desc, file)
}

/// Same as [`open_source`] over an arbitrary reader.
pub fn read_source<R: Read + 'static>(
    desc: &SourceDescriptor,
    input: R,
) -> Result<Box<dyn Iterator<Item = Result<InformationRecord>>>> {
    match desc.kind {
        SourceKind::Csv => csv_records(desc, input),
        SourceKind::Jsonl => Ok(Box::new(jsonl_records(desc, input))),
        SourceKind::ReferencePassthrough => Err(Error::InvalidArgument(format!(
            "source `{}` holds references, not raw records",
            desc.source_id
        ))),
    }
}

fn csv_records<R: Read + 'static>(
    desc: &SourceDescriptor,
    input: R,
) -> Result<Box<dyn Iterator<Item = Result<InformationRecord>>>> {
    let source_id = desc.source_id.clone();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(desc.field_names.is_none())
        .flexible(true)
        .from_reader(input);
    let header: Vec<String> = match &desc.field_names {
        Some(names) => names.clone(),
        None => reader
            .headers()
            .map_err(|e| Error::Record {
                source_id: source_id.clone(),
                ordinal: 0,
                message: format!("unreadable header: {e}"),
            })?
            .iter()
            .map(str::to_owned)
            .collect(),
    };
    if header.iter().any(String::is_empty) && !header.is_empty() {
        return Err(Error::Record {
            source_id,
            ordinal: 0,
            message: "header contains an empty column name".into(),
        });
    }
    let iter = reader.into_records().enumerate().map(move |(ordinal, row)| {
        let ordinal = ordinal as u64;
        let row = row.map_err(|e| Error::Record {
            source_id: source_id.clone(),
            ordinal,
            message: e.to_string(),
        })?;
        if row.len() != header.len() {
            return Err(Error::Record {
                source_id: source_id.clone(),
                ordinal,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        let payload = header
            .iter()
            .zip(row.iter())
            .map(|(k, v)| (k.clone(), v.to_owned()))
            .collect();
        Ok(InformationRecord {
            source_id: source_id.clone(),
            record_ordinal: ordinal,
            payload,
            ingest_seq: ordinal,
        })
    });
    Ok(Box::new(iter))
}

fn jsonl_records<R: Read + 'static>(
    desc: &SourceDescriptor,
    input: R,
) -> impl Iterator<Item = Result<InformationRecord>> {
    let source_id = desc.source_id.clone();
    BufReader::new(input)
        .lines()
        .enumerate()
        .filter_map(move |(ordinal, line)| {
            let ordinal = ordinal as u64;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::Io(e))),
            };
            if line.trim().is_empty() {
                return None;
            }
            Some(parse_jsonl_record(&source_id, ordinal, &line))
        })
}

/// Parses one flat JSON object into a record payload. Scalars become their
/// textual form and `null` drops the field.
pub fn parse_jsonl_record(source_id: &str, ordinal: u64, line: &str) -> Result<InformationRecord> {
    let record_err = |message: String| Error::Record {
        source_id: source_id.to_owned(),
        ordinal,
        message,
    };
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| record_err(format!("invalid JSON: {e}")))?;
    let object = value
        .as_object()
        .ok_or_else(|| record_err("expected a JSON object".into()))?;
    let payload = flat_payload(object).map_err(record_err)?;
    Ok(InformationRecord {
        source_id: source_id.to_owned(),
        record_ordinal: ordinal,
        payload,
        ingest_seq: ordinal,
    })
}

pub(crate) fn flat_payload(
    object: &serde_json::Map<String, serde_json::Value>,
) -> std::result::Result<BTreeMap<String, String>, String> {
    use serde_json::Value;
    let mut payload = BTreeMap::new();
    for (k, v) in object {
        if k.is_empty() {
            return Err("empty field name".into());
        }
        let text = match v {
            Value::Null => continue,
            Value::String(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
            Value::Number(n) => n.to_string(),
            Value::Array(_) | Value::Object(_) => {
                return Err(format!("field `{k}` is not a scalar"));
            }
        };
        payload.insert(k.clone(), text);
    }
    Ok(payload)
}

/// Collects a source's records under `policy`. Returns the records and the
/// number skipped.
pub fn collect_records(
    desc: &SourceDescriptor,
    policy: RecordErrorPolicy,
) -> Result<(Vec<InformationRecord>, u64)> {
    let mut records = Vec::new();
    let mut skipped = 0;
    for item in open_source(desc)? {
        match item {
            Ok(r) => records.push(r),
            Err(e @ Error::Record { .. }) if policy == RecordErrorPolicy::Skip => {
                tracing::warn!(error = %e, "skipping malformed record");
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((records, skipped))
}

/// Loads a canonical reference JSONL file (or merged-profile JSONL, which is
/// converted to references). Duplicate ids are rejected.
pub fn passthrough_load(desc: &SourceDescriptor) -> Result<Vec<EntityReference>> {
    if desc.kind != SourceKind::ReferencePassthrough {
        return Err(Error::InvalidArgument(format!(
            "source `{}` is not a reference passthrough source",
            desc.source_id
        )));
    }
    let file = open_file(desc)?;
    load_references(BufReader::new(file))
}

pub fn load_references<R: BufRead>(input: R) -> Result<Vec<EntityReference>> {
    let mut refs = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let load_err = |message: String| Error::Load {
            line: line_no,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| load_err(e.to_string()))?;
        let loaded = if value.get("profile_id").is_some() {
            let profile: EntityProfile =
                serde_json::from_value(value).map_err(|e| load_err(e.to_string()))?;
            profiles_to_references(std::slice::from_ref(&profile))
                .map_err(|e| load_err(e.to_string()))?
        } else {
            let r: EntityReference =
                serde_json::from_value(value).map_err(|e| load_err(e.to_string()))?;
            vec![r]
        };
        for r in loaded {
            r.validate().map_err(|e| load_err(e.to_string()))?;
            if !seen.insert(r.ref_id.clone()) {
                return Err(load_err(format!("duplicate ref_id `{}`", r.ref_id)));
            }
            refs.push(r);
        }
    }
    Ok(refs)
}

/// Resolves a relative `location` against `base`.
pub fn resolve_location(desc: &mut SourceDescriptor, base: &Path) {
    let path = Path::new(&desc.location);
    if path.is_relative() {
        desc.location = base.join(path).to_string_lossy().into_owned();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(kind: SourceKind) -> SourceDescriptor {
        SourceDescriptor {
            source_id: "cust".into(),
            kind,
            location: String::new(),
            field_names: None,
        }
    }

    fn read_all(d: &SourceDescriptor, text: &'static str) -> Vec<Result<InformationRecord>> {
        read_source(d, text.as_bytes()).unwrap().collect()
    }

    #[test]
    fn csv_single_row() {
        let out = read_all(&desc(SourceKind::Csv), "name,city\nJohn,NYC\n");
        assert_eq!(out.len(), 1);
        let r = out[0].as_ref().unwrap();
        assert_eq!(r.record_ordinal, 0);
        assert_eq!(r.payload["name"], "John");
        assert_eq!(r.payload["city"], "NYC");
    }

    #[test]
    fn csv_arity_mismatch_is_record_error() {
        let out = read_all(&desc(SourceKind::Csv), "name,city\nJohn,NYC\na,b,c\nAl,LA\n");
        assert_eq!(out.len(), 3);
        match &out[1] {
            Err(Error::Record { ordinal, source_id, .. }) => {
                assert_eq!(*ordinal, 1);
                assert_eq!(source_id, "cust");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(out[2].as_ref().unwrap().record_ordinal, 2);
    }

    #[test]
    fn csv_headerless_with_field_names() {
        let mut d = desc(SourceKind::Csv);
        d.field_names = Some(vec!["name".into(), "city".into()]);
        let out = read_all(&d, "John,NYC\n\"Smith, Jo\",LA\n");
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].as_ref().unwrap().payload["name"], "Smith, Jo");
    }

    #[test]
    fn jsonl_record() {
        let out = read_all(&desc(SourceKind::Jsonl), "{\"name\":\"Jo\"}\n\n{\"age\":3,\"x\":null}\nnot json\n");
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].as_ref().unwrap().payload["name"], "Jo");
        let second = out[1].as_ref().unwrap();
        assert_eq!(second.record_ordinal, 2);
        assert_eq!(second.payload["age"], "3");
        assert!(!second.payload.contains_key("x"));
        assert!(matches!(out[2], Err(Error::Record { ordinal: 3, .. })));
    }

    #[test]
    fn jsonl_rejects_nested() {
        assert!(parse_jsonl_record("s", 0, r#"{"a":{"b":1}}"#).is_err());
        assert!(parse_jsonl_record("s", 0, r#"[1]"#).is_err());
    }

    #[test]
    fn missing_file() {
        let mut d = desc(SourceKind::Csv);
        d.location = "/definitely/not/here.csv".into();
        assert!(matches!(open_source(&d), Err(Error::SourceNotFound { .. })));
    }

    #[test]
    fn duplicate_reference_rejected() {
        let line = r#"{"ref_id":"cust:0","source_id":"cust","attributes":{},"provenance":[["cust",0]]}"#;
        let text = format!("{line}\n{line}\n");
        match load_references(text.as_bytes()) {
            Err(Error::Load { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_violation_names_line() {
        let text = "{\"ref_id\":\"a\",\"source_id\":\"s\",\"attributes\":{},\"provenance\":[]}\n";
        assert!(matches!(load_references(text.as_bytes()), Err(Error::Load { line: 1, .. })));
    }
}
