//! On-disk cache of band sweeps, keyed by potential, truncation and grid.
//! The key includes the library version, so upgrades invalidate old entries.

use std::path::{Path, PathBuf};

use anyhow::Result;
use bloch_lap::planewave::{PotentialSpecJson, SweepRow};
use serde::{Deserialize, Serialize};

use crate::output::{sha256_hex, write_atomic};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Row {
    k: [f64; 2],
    s: [i64; 2],
    lambda: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    rows: Vec<Row>,
}

pub fn sweep_key(potential: &Option<PotentialSpecJson>, d: usize, s: usize, grid: usize) -> String {
    let pot = serde_json::to_string(potential).expect("serializable");
    let text = format!(
        "bloch-lap {}|d={d}|S={s}|grid={grid}|{pot}",
        bloch_lap::VERSION
    );
    sha256_hex(text.as_bytes())
}

fn entry_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("sweep-{key}.json"))
}

/// `None` on a miss or an unreadable entry.
pub fn load(dir: &Path, key: &str) -> Option<Vec<SweepRow>> {
    let text = std::fs::read_to_string(entry_path(dir, key)).ok()?;
    let e: Entry = serde_json::from_str(&text).ok()?;
    if e.key != key {
        return None;
    }
    Some(
        e.rows
            .into_iter()
            .map(|r| SweepRow {
                k: r.k,
                s: r.s,
                lambda: r.lambda,
            })
            .collect(),
    )
}

pub fn store(dir: &Path, key: &str, rows: &[SweepRow]) -> Result<()> {
    let e = Entry {
        key: key.to_string(),
        rows: rows
            .iter()
            .map(|r| Row {
                k: r.k,
                s: r.s,
                lambda: r.lambda,
            })
            .collect(),
    };
    write_atomic(&entry_path(dir, key), serde_json::to_string(&e)?.as_bytes())
}
