//! Result records: content hashing, sorted-key JSON, run ledger, CSV.

use crate::error::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::Path;

/// Canonical JSON: round trip through `serde_json::Value`, whose object
/// representation keeps keys sorted.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    let v: serde_json::Value = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)?)
}

/// SHA-256 of the canonical JSON form; identifies configs and specs.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let json = to_sorted_json(value).expect("serializable value");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    format!("{:x}", h.finalize())
}

/// Append one record as a single JSON line to the run ledger.
pub fn append_ledger<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    let v: serde_json::Value = serde_json::to_value(record)?;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(&v)?)?;
    Ok(())
}

/// CSV profile writer: header row, decimal points, no locale.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    Ok(())
}
