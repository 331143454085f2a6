use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::InformationRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleaningRules {
    pub trim_whitespace: bool,
    pub lowercase: bool,
    pub collapse_internal_whitespace: bool,
    /// Values treated as absent after the other rules have run.
    pub null_markers: BTreeSet<String>,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            trim_whitespace: true,
            lowercase: false,
            collapse_internal_whitespace: false,
            null_markers: ["", "NULL", "N/A", "-"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CleaningRules {
    /// Rules that leave every value untouched and drop nothing.
    pub fn passthrough() -> Self {
        CleaningRules {
            trim_whitespace: false,
            lowercase: false,
            collapse_internal_whitespace: false,
            null_markers: BTreeSet::new(),
        }
    }

    /// Cleans one value; `None` means the value is a null marker.
    pub fn clean_value(&self, raw: &str) -> Option<String> {
        let mut value = if self.trim_whitespace {
            raw.trim().to_owned()
        } else {
            raw.to_owned()
        };
        if self.collapse_internal_whitespace {
            value = collapse_whitespace(&value);
        }
        if self.lowercase {
            value = value.to_lowercase();
        }
        if self.is_null_marker(&value) {
            None
        } else {
            Some(value)
        }
    }

    // Checked on the fully transformed value so a second pass sees the same
    // input and makes the same decision.
    fn is_null_marker(&self, value: &str) -> bool {
        self.null_markers.contains(value)
            || (self.lowercase && self.null_markers.iter().any(|m| m.to_lowercase() == value))
    }
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            if !in_space {
                out.push(' ');
            }
            in_space = true;
        } else {
            out.push(c);
            in_space = false;
        }
    }
    out
}

pub fn clean_record(record: &InformationRecord, rules: &CleaningRules) -> InformationRecord {
    let payload = record
        .payload
        .iter()
        .filter_map(|(k, v)| rules.clean_value(v).map(|v| (k.clone(), v)))
        .collect();
    InformationRecord {
        source_id: record.source_id.clone(),
        record_ordinal: record.record_ordinal,
        payload,
        ingest_seq: record.ingest_seq,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn record(pairs: &[(&str, &str)]) -> InformationRecord {
        InformationRecord {
            source_id: "s".into(),
            record_ordinal: 0,
            payload: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            ingest_seq: 0,
        }
    }

    #[test]
    fn trims() {
        let out = clean_record(&record(&[("name", "  John  ")]), &CleaningRules::default());
        assert_eq!(out.payload["name"], "John");
    }

    #[test]
    fn lowercases() {
        let rules = CleaningRules {
            lowercase: true,
            ..CleaningRules::default()
        };
        let out = clean_record(&record(&[("name", "JOHN")]), &rules);
        assert_eq!(out.payload["name"], "john");
    }

    #[test]
    fn null_marker_removed() {
        let out = clean_record(&record(&[("city", "N/A")]), &CleaningRules::default());
        assert!(out.payload.is_empty());
    }

    #[test]
    fn null_marker_matches_after_lowercase() {
        let rules = CleaningRules {
            lowercase: true,
            ..CleaningRules::default()
        };
        let out = clean_record(&record(&[("city", " NULL "), ("x", "null")]), &rules);
        assert!(out.payload.is_empty());
    }

    #[test]
    fn collapses_runs() {
        let rules = CleaningRules {
            collapse_internal_whitespace: true,
            ..CleaningRules::default()
        };
        let out = clean_record(&record(&[("name", "john \t  smith")]), &rules);
        assert_eq!(out.payload["name"], "john smith");
    }

    fn rules_strategy() -> impl Strategy<Value = CleaningRules> {
        (
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
            prop::collection::btree_set("[a-zA-Z/ -]{0,4}", 0..4),
        )
            .prop_map(|(trim, lower, collapse, markers)| CleaningRules {
                trim_whitespace: trim,
                lowercase: lower,
                collapse_internal_whitespace: collapse,
                null_markers: markers,
            })
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent(
            rules in rules_strategy(),
            payload in prop::collection::btree_map("[a-z]{1,5}", "[ a-zA-Z\t/ÄÖ-]{0,10}", 0..6),
        ) {
            let r = InformationRecord {
                source_id: "s".into(),
                record_ordinal: 3,
                payload: payload.into_iter().collect::<BTreeMap<_, _>>(),
                ingest_seq: 7,
            };
            let once = clean_record(&r, &rules);
            let twice = clean_record(&once, &rules);
            prop_assert_eq!(once, twice);
        }
    }
}
