use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ucl_core::graphs::MessageRecord;

/// Parses one record per non-blank line. Errors name the 1-based line.
pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<MessageRecord>> {
    let mut records: Vec<MessageRecord> = Vec::new();
    let mut ids = HashSet::new();
    for (k, line) in reader.lines().enumerate() {
        let n = k + 1;
        let line = line.with_context(|| format!("line {n}: read failed"))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MessageRecord =
            serde_json::from_str(&line).with_context(|| format!("line {n}: malformed record"))?;
        if let Some(first) = records.first() {
            if record.features.len() != first.features.len() {
                bail!(
                    "line {n}: record {} has {} features, expected {}",
                    record.id,
                    record.features.len(),
                    first.features.len()
                );
            }
        }
        if !record.timestamp.is_finite() || record.features.iter().any(|x| !x.is_finite()) {
            bail!("line {n}: record {} has a non-finite value", record.id);
        }
        if !ids.insert(record.id) {
            bail!("line {n}: duplicate id {}", record.id);
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_jsonl(path: &Path) -> Result<Vec<MessageRecord>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_jsonl(BufReader::new(file)).with_context(|| format!("in {}", path.display()))
}

pub fn write_jsonl(path: &Path, records: &[MessageRecord]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
