//! Synthetic record generators for benchmarks and large-scale tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use erflow_core::{make_reference_id, InformationRecord};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIRST: &[&str] = &[
    "john", "jon", "mary", "maria", "alice", "alicia", "robert", "rupert", "peter", "petra", "susan", "suzan",
    "michael", "michelle", "anna", "hannah", "thomas", "tomas", "linda", "lena", "george", "georgia", "olga",
    "oscar",
];
const LAST: &[&str] = &[
    "smith", "smyth", "jones", "johns", "brown", "braun", "miller", "muller", "wilson", "willson", "taylor",
    "tailor", "clark", "clarke", "lewis", "louis", "walker", "wagner", "young", "yang", "king", "kong",
];
const CITIES: &[&str] = &["nyc", "la", "boston", "austin", "denver", "miami"];

/// Generated records plus the entity each reference was drawn from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<InformationRecord>,
    /// ref_id -> entity label
    pub entity_of: BTreeMap<String, String>,
}

impl Dataset {
    pub fn records_of(&self, source_id: &str) -> Vec<InformationRecord> {
        self.records.iter().filter(|r| r.source_id == source_id).cloned().collect()
    }
}

fn typo(rng: &mut ChaCha8Rng, s: &str) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    if chars.len() < 2 {
        return s.to_owned();
    }
    let i = rng.gen_range(0..chars.len());
    match rng.gen_range(0..3) {
        0 => {
            chars.remove(i);
        }
        1 => chars[i] = (b'a' + rng.gen_range(0..26)) as char,
        _ => {
            let j = (i + 1).min(chars.len() - 1);
            chars.swap(i, j);
        }
    }
    chars.into_iter().collect()
}

fn record(source_id: &str, ordinal: u64, seq: u64, fields: &[(&str, String)]) -> InformationRecord {
    InformationRecord {
        source_id: source_id.to_owned(),
        record_ordinal: ordinal,
        payload: fields.iter().map(|(k, v)| ((*k).to_owned(), v.clone())).collect(),
        ingest_seq: seq,
    }
}

/// Records from two sources `"left"` and `"right"`, `n` in total. Each
/// entity appears once in `left`; with probability `dup_rate` a perturbed
/// copy also appears in `right`. Fields: `name`, `city`, `phone`.
pub fn two_sources(seed: u64, n: usize, dup_rate: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut entity_of = BTreeMap::new();
    let mut ordinals = [0u64; 2];
    let mut entity = 0usize;
    while records.len() < n {
        let name = format!("{} {}", FIRST.choose(&mut rng).unwrap(), LAST.choose(&mut rng).unwrap());
        let city = CITIES.choose(&mut rng).unwrap().to_string();
        let phone = format!("{:07}", rng.gen_range(0..10_000_000u32));
        let label = format!("e{entity}");
        entity += 1;

        let mut emit = |side: usize, name: String, phone: String, records: &mut Vec<InformationRecord>| {
            let source = if side == 0 { "left" } else { "right" };
            let ord = ordinals[side];
            ordinals[side] += 1;
            entity_of.insert(make_reference_id(source, ord).unwrap(), label.clone());
            let seq = records.len() as u64;
            records.push(record(
                source,
                ord,
                seq,
                &[("name", name), ("city", city.clone()), ("phone", phone)],
            ));
        };
        emit(0, name.clone(), phone.clone(), &mut records);
        if records.len() < n && rng.gen_bool(dup_rate) {
            let name = if rng.gen_bool(0.7) { typo(&mut rng, &name) } else { name };
            emit(1, name, phone, &mut records);
        }
    }
    Dataset { records, entity_of }
}

/// `n` single-source records (`"s"`) whose `city` cycles through `keys`
/// distinct values, so every block holds `n / keys` records.
pub fn balanced_blocks(seed: u64, n: usize, keys: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut entity_of = BTreeMap::new();
    for i in 0..n {
        let name = format!(
            "{} {}{}",
            FIRST.choose(&mut rng).unwrap(),
            LAST.choose(&mut rng).unwrap(),
            rng.gen_range(0..100)
        );
        let city = format!("city{}", i % keys);
        entity_of.insert(make_reference_id("s", i as u64).unwrap(), format!("e{i}"));
        records.push(record("s", i as u64, i as u64, &[("name", name), ("city", city)]));
    }
    Dataset { records, entity_of }
}

/// Writes records of one source as CSV with the given header.
pub fn write_csv(records: &[InformationRecord], header: &[&str], path: &Path) -> io::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in records {
        let row: Vec<&str> = header
            .iter()
            .map(|h| r.payload.get(*h).map(String::as_str).unwrap_or(""))
            .collect();
        writeln!(out, "{}", row.join(",")).expect("writing to a String");
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sources_sizes_and_labels() {
        let d = two_sources(7, 50, 0.5);
        assert_eq!(d.records.len(), 50);
        assert_eq!(d.entity_of.len(), 50);
        assert!(d.records_of("right").len() > 5);
        let again = two_sources(7, 50, 0.5);
        assert_eq!(d.records, again.records);
    }

    #[test]
    fn balanced_blocks_are_balanced() {
        let d = balanced_blocks(1, 100, 10);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &d.records {
            *counts.entry(r.payload["city"].as_str()).or_default() += 1;
        }
        assert_eq!(counts.len(), 10);
        assert!(counts.values().all(|&c| c == 10));
    }
}
