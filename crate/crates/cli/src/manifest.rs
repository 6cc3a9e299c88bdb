//! `manifest.csv`: one row per produced file with its SHA-256.
//!
//! Rows are keyed by file name; re-running a command replaces its rows in
//! place so the manifest stays stable across identical re-runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.csv";
const HEADER: &str = "file,command,sha256";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub file: String,
    pub command: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>, CliError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = dpmil_core::textio::read_text(&path)?;
    let mut rows = Vec::new();
    for (n, line) in dpmil_core::textio::numbered_lines(&text) {
        if n == 1 {
            if line != HEADER {
                return Err(parse_err(&path, n, format!("bad header {line:?}")));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(parse_err(&path, n, format!("expected 3 fields, found {}", f.len())));
        }
        rows.push(ManifestRow {
            file: f[0].to_string(),
            command: f[1].to_string(),
            sha256: f[2].to_string(),
        });
    }
    Ok(rows)
}

fn parse_err(path: &Path, line: usize, msg: String) -> CliError {
    CliError::Core(dpmil_core::Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    })
}

/// Hashes `files` (relative to `dir`) and records them under `command`.
pub fn record(dir: &Path, command: &str, files: &[String]) -> Result<(), CliError> {
    let mut rows = read_manifest(dir)?;
    for file in files {
        let path = dir.join(file);
        let bytes = fs::read(&path).map_err(|e| dpmil_core::Error::Io { path: path.clone(), source: e })?;
        let row = ManifestRow {
            file: file.clone(),
            command: command.to_string(),
            sha256: sha256_hex(&bytes),
        };
        match rows.iter_mut().find(|r| r.file == *file) {
            Some(r) => *r = row,
            None => rows.push(row),
        }
    }
    let mut out = format!("{HEADER}\n");
    for r in &rows {
        let _ = writeln!(out, "{},{},{}", r.file, r.command, r.sha256);
    }
    dpmil_core::textio::write_text(&dir.join(MANIFEST_FILE), &out)?;
    Ok(())
}
