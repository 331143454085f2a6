//! Canonical JSON-lines encoding.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn to_line<T: Serialize>(item: &T) -> String {
    serde_json::to_string(item).expect("domain types always serialize")
}

pub fn write<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn to_string<T: Serialize>(items: &[T]) -> String {
    let mut buf = Vec::new();
    write(items, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Parses one item per non-blank line. Errors carry the 1-based line number.
pub fn read<T: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut items = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Load {
            line: idx + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn from_str<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    read(text.as_bytes())
}
