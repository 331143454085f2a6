use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::model::{AttributeValue, InformationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    CopyField,
    ConcatFields,
    TokenizeField,
    ParseNumber,
    Composite,
}

/// One step of an extraction chain.
///
/// `fields` names the payload keys read, `output` the attribute written.
/// Composites only carry `children`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extractor {
    pub name: String,
    pub kind: ExtractorKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Join string for `concat_fields`; a single space when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separator: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Extractor>,
}

impl Extractor {
    fn leaf(name: &str, kind: ExtractorKind, fields: &[&str], output: &str) -> Self {
        Extractor {
            name: name.to_owned(),
            kind,
            fields: fields.iter().map(|f| f.to_string()).collect(),
            output: Some(output.to_owned()),
            separator: None,
            children: Vec::new(),
        }
    }

    pub fn copy_field(field: &str, output: &str) -> Self {
        Self::leaf(output, ExtractorKind::CopyField, &[field], output)
    }

    pub fn concat_fields(fields: &[&str], output: &str, separator: &str) -> Self {
        let mut e = Self::leaf(output, ExtractorKind::ConcatFields, fields, output);
        e.separator = Some(separator.to_owned());
        e
    }

    pub fn tokenize_field(field: &str, output: &str) -> Self {
        Self::leaf(output, ExtractorKind::TokenizeField, &[field], output)
    }

    pub fn parse_number(field: &str, output: &str) -> Self {
        Self::leaf(output, ExtractorKind::ParseNumber, &[field], output)
    }

    pub fn composite(name: &str, children: Vec<Extractor>) -> Self {
        Extractor {
            name: name.to_owned(),
            kind: ExtractorKind::Composite,
            fields: Vec::new(),
            output: None,
            separator: None,
            children,
        }
    }

    /// Attribute names this extractor can emit, depth first.
    pub fn outputs(&self) -> Vec<&str> {
        match self.kind {
            ExtractorKind::Composite => self.children.iter().flat_map(|c| c.outputs()).collect(),
            _ => self.output.as_deref().into_iter().collect(),
        }
    }

    /// Structural checks for a single extractor; `path` prefixes messages.
    pub fn validate(&self, path: &str) -> Result<()> {
        let field_count = self.fields.len();
        match self.kind {
            ExtractorKind::Composite => {
                if self.children.is_empty() {
                    return Err(Error::config(path, "composite extractor needs children"));
                }
                if field_count > 0 || self.output.is_some() {
                    return Err(Error::config(
                        path,
                        "composite extractor takes no fields or output",
                    ));
                }
                for (i, child) in self.children.iter().enumerate() {
                    child.validate(&format!("{path}.children[{i}]"))?;
                }
            }
            kind => {
                let want_one = kind != ExtractorKind::ConcatFields;
                if (want_one && field_count != 1) || field_count == 0 {
                    return Err(Error::config(
                        format!("{path}.fields"),
                        format!("{kind:?} expects {}", if want_one { "exactly one field" } else { "at least one field" }),
                    ));
                }
                match &self.output {
                    Some(o) if !o.is_empty() => {}
                    _ => return Err(Error::config(format!("{path}.output"), "missing output attribute")),
                }
                if !self.children.is_empty() {
                    return Err(Error::config(path, "only composite extractors take children"));
                }
            }
        }
        Ok(())
    }
}

/// Validates every extractor and that output names are unique across the chain.
pub fn validate_chain(chain: &[Extractor], path: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, e) in chain.iter().enumerate() {
        let p = format!("{path}[{i}]");
        e.validate(&p)?;
        for out in e.outputs() {
            if !seen.insert(out) {
                return Err(Error::config(p, format!("duplicate output attribute `{out}`")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractStats {
    pub number_parse_failures: u64,
    pub collisions: u64,
}

impl ExtractStats {
    pub fn absorb(&mut self, other: ExtractStats) {
        self.number_parse_failures += other.number_parse_failures;
        self.collisions += other.collisions;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extracted {
    pub attributes: BTreeMap<String, AttributeValue>,
    pub stats: ExtractStats,
}

// First record carrying the field wins when several records are supplied.
fn lookup<'a>(records: &'a [InformationRecord], field: &str) -> Option<&'a str> {
    records.iter().find_map(|r| r.payload.get(field).map(String::as_str))
}

/// Runs one extractor over one or more (already cleaned) records.
///
/// Missing source fields produce no attribute. Composite outputs are merged
/// in child order; a later child overwrites an earlier one on a name clash
/// and the clash is counted.
pub fn apply_extractor(e: &Extractor, records: &[InformationRecord]) -> Result<Extracted> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("extractor needs at least one record".into()));
    }
    let mut out = Extracted::default();
    let output = || e.output.clone().unwrap_or_else(|| e.name.clone());
    match e.kind {
        ExtractorKind::CopyField => {
            if let Some(v) = e.fields.first().and_then(|f| lookup(records, f)) {
                out.attributes.insert(output(), AttributeValue::text(v));
            }
        }
        ExtractorKind::ConcatFields => {
            let sep = e.separator.as_deref().unwrap_or(" ");
            let parts: Vec<&str> = e.fields.iter().filter_map(|f| lookup(records, f)).collect();
            if !parts.is_empty() {
                out.attributes.insert(output(), AttributeValue::text(parts.join(sep)));
            }
        }
        ExtractorKind::TokenizeField => {
            if let Some(v) = e.fields.first().and_then(|f| lookup(records, f)) {
                if let Some(tokens) = AttributeValue::tokens(v.split_whitespace()) {
                    out.attributes.insert(output(), tokens);
                }
            }
        }
        ExtractorKind::ParseNumber => {
            if let Some(v) = e.fields.first().and_then(|f| lookup(records, f)) {
                match v.trim().parse::<f64>().ok().and_then(AttributeValue::number) {
                    Some(n) => {
                        out.attributes.insert(output(), n);
                    }
                    None => out.stats.number_parse_failures += 1,
                }
            }
        }
        ExtractorKind::Composite => {
            for child in &e.children {
                let sub = apply_extractor(child, records)?;
                out.stats.absorb(sub.stats);
                merge_into(&mut out, sub.attributes, &child.name);
            }
        }
    }
    Ok(out)
}

/// Runs a chain in order and unions the outputs (last writer wins).
pub fn apply_chain(chain: &[Extractor], records: &[InformationRecord]) -> Result<Extracted> {
    let mut out = Extracted::default();
    for e in chain {
        let sub = apply_extractor(e, records)?;
        out.stats.absorb(sub.stats);
        merge_into(&mut out, sub.attributes, &e.name);
    }
    Ok(out)
}

fn merge_into(out: &mut Extracted, attrs: BTreeMap<String, AttributeValue>, by: &str) {
    for (name, value) in attrs {
        if out.attributes.insert(name.clone(), value).is_some() {
            warn!(attribute = %name, extractor = %by, "attribute overwritten by later extractor");
            out.stats.collisions += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(pairs: &[(&str, &str)]) -> InformationRecord {
        InformationRecord {
            source_id: "s".into(),
            record_ordinal: 0,
            payload: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            ingest_seq: 0,
        }
    }

    #[test]
    fn copy_field_identity() {
        let out = apply_extractor(&Extractor::copy_field("name", "name"), &[record(&[("name", "john")])]).unwrap();
        assert_eq!(out.attributes["name"], AttributeValue::text("john"));
    }

    #[test]
    fn tokenize_splits_on_whitespace() {
        let out = apply_extractor(
            &Extractor::tokenize_field("name", "name_tokens"),
            &[record(&[("name", "john  smith")])],
        )
        .unwrap();
        assert_eq!(out.attributes["name_tokens"], AttributeValue::tokens(["john", "smith"]).unwrap());
    }

    #[test]
    fn parse_number_failure_is_counted() {
        let out = apply_extractor(&Extractor::parse_number("age", "age"), &[record(&[("age", "abc")])]).unwrap();
        assert!(out.attributes.is_empty());
        assert_eq!(out.stats.number_parse_failures, 1);
        let out = apply_extractor(&Extractor::parse_number("age", "age"), &[record(&[("age", " 42 ")])]).unwrap();
        assert_eq!(out.attributes["age"], AttributeValue::Number(42.0));
    }

    #[test]
    fn parse_number_rejects_non_finite() {
        let out = apply_extractor(&Extractor::parse_number("x", "x"), &[record(&[("x", "inf")])]).unwrap();
        assert!(out.attributes.is_empty());
        assert_eq!(out.stats.number_parse_failures, 1);
    }

    #[test]
    fn missing_field_yields_nothing() {
        let out = apply_extractor(&Extractor::copy_field("name", "name"), &[record(&[])]).unwrap();
        assert!(out.attributes.is_empty());
    }

    #[test]
    fn concat_skips_absent_parts() {
        let e = Extractor::concat_fields(&["first", "middle", "last"], "full", " ");
        let out = apply_extractor(&e, &[record(&[("first", "john"), ("last", "smith")])]).unwrap();
        assert_eq!(out.attributes["full"], AttributeValue::text("john smith"));
    }

    #[test]
    fn composite_last_child_wins() {
        let e = Extractor::composite(
            "both",
            vec![Extractor::copy_field("a", "x"), Extractor::copy_field("b", "x")],
        );
        let out = apply_extractor(&e, &[record(&[("a", "1"), ("b", "2")])]).unwrap();
        assert_eq!(out.attributes["x"], AttributeValue::text("2"));
        assert_eq!(out.stats.collisions, 1);
    }

    #[test]
    fn multi_record_input_takes_first_present() {
        let out = apply_extractor(
            &Extractor::copy_field("name", "name"),
            &[record(&[]), record(&[("name", "b")]), record(&[("name", "c")])],
        )
        .unwrap();
        assert_eq!(out.attributes["name"], AttributeValue::text("b"));
    }

    #[test]
    fn chain_validation() {
        assert!(validate_chain(&[Extractor::copy_field("a", "x"), Extractor::copy_field("b", "x")], "chain").is_err());
        assert!(validate_chain(&[Extractor::composite("c", vec![])], "chain").is_err());
        let mut bad = Extractor::copy_field("a", "x");
        bad.fields.push("b".into());
        assert!(validate_chain(&[bad], "chain").is_err());
        validate_chain(
            &[Extractor::copy_field("a", "x"), Extractor::concat_fields(&["a", "b"], "y", "-")],
            "chain",
        )
        .unwrap();
    }
}
