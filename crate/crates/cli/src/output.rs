//! Output directory: atomic writes, content hashes and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct OutputEntry {
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    library_version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    threads: usize,
    elapsed_seconds: f64,
    status: &'a str,
    warnings: &'a [String],
    outputs: &'a [OutputEntry],
}

pub struct OutDir {
    root: PathBuf,
    started: Instant,
    outputs: Vec<OutputEntry>,
    pub warnings: Vec<String>,
}

impl OutDir {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            started: Instant::now(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(name), bytes)?;
        self.outputs.push(OutputEntry {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    pub fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    /// Write `manifest.json`. The config stored there replays the run.
    pub fn finish(self, config: &RunConfig, status: &str) -> Result<()> {
        let m = Manifest {
            tool: "blochlap",
            version: env!("CARGO_PKG_VERSION"),
            library_version: bloch_lap::VERSION,
            command: config.command.as_deref().unwrap_or(""),
            config,
            threads: rayon::current_num_threads(),
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            status,
            warnings: &self.warnings,
            outputs: &self.outputs,
        };
        let mut s = serde_json::to_string_pretty(&m)?;
        s.push('\n');
        write_atomic(&self.root.join("manifest.json"), s.as_bytes())
    }
}
