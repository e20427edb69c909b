use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::Command;
use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Columns excluded from the data hash because they measure elapsed time.
const TIMING_COLUMNS: &[&str] = &["wall_ms"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    /// File name relative to the output directory.
    pub name: String,
    pub sha256: String,
    /// Hash with timing columns removed; equal across faithful replays.
    pub data_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Command,
    pub config: RunConfig,
    pub seed: u64,
    pub threads: Option<usize>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<OutputDigest>,
    pub wall_ms: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file's bytes, except that CSV files lose any timing column.
pub fn data_hash(name: &str, bytes: &[u8]) -> String {
    if !name.ends_with(".csv") {
        return sha256_hex(bytes);
    }
    let text = String::from_utf8_lossy(bytes);
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return sha256_hex(bytes);
    };
    let cols: Vec<&str> = header.split(',').collect();
    let drop: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| TIMING_COLUMNS.contains(c))
        .map(|(i, _)| i)
        .collect();
    if drop.is_empty() {
        return sha256_hex(bytes);
    }
    let mut hasher = Sha256::new();
    for line in std::iter::once(header).chain(lines) {
        let kept: Vec<&str> = line
            .split(',')
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, f)| f)
            .collect();
        hasher.update(kept.join(",").as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

pub fn digest_input(path: &Path) -> Result<InputDigest, CliError> {
    let bytes = fs::read(path).map_err(ipsrec::Error::from)?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn digest_output(dir: &Path, name: &str) -> Result<OutputDigest, CliError> {
    let bytes = fs::read(dir.join(name)).map_err(ipsrec::Error::from)?;
    Ok(OutputDigest {
        name: name.to_string(),
        sha256: sha256_hex(&bytes),
        data_sha256: data_hash(name, &bytes),
    })
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_NAME);
        ipsrec::formats::write_json(self, &path)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Ok(ipsrec::formats::read_json(path)?)
    }

    /// Names whose data hashes differ between two runs, plus names present
    /// in only one of them.
    pub fn data_differences(&self, other: &RunManifest) -> Vec<String> {
        let mut diffs = Vec::new();
        for o in &self.outputs {
            match other.outputs.iter().find(|p| p.name == o.name) {
                Some(p) if p.data_sha256 == o.data_sha256 => {}
                Some(_) => diffs.push(o.name.clone()),
                None => diffs.push(format!("{} (missing)", o.name)),
            }
        }
        for p in &other.outputs {
            if !self.outputs.iter().any(|o| o.name == p.name) {
                diffs.push(format!("{} (unexpected)", p.name));
            }
        }
        diffs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn timing_column_is_ignored() {
        let a = b"epoch,train_loss,wall_ms\n1,0.5,12\n2,0.4,30\n";
        let b = b"epoch,train_loss,wall_ms\n1,0.5,99\n2,0.4,1\n";
        let c = b"epoch,train_loss,wall_ms\n1,0.5,12\n2,0.3,30\n";
        assert_eq!(data_hash("epoch_log.csv", a), data_hash("epoch_log.csv", b));
        assert_ne!(data_hash("epoch_log.csv", a), data_hash("epoch_log.csv", c));
        assert_ne!(sha256_hex(a), sha256_hex(b));
    }

    #[test]
    fn plain_files_hash_raw_bytes() {
        assert_eq!(data_hash("model.ckpt", b"xyz"), sha256_hex(b"xyz"));
        assert_eq!(data_hash("log.csv", b"user,item\n1,2\n"), sha256_hex(b"user,item\n1,2\n"));
    }
}
