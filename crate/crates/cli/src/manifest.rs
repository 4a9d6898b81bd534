//! Reproducibility manifest written next to every run's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: Option<u64>,
    pub split: u64,
    /// Training seed of each fold, in fold order.
    pub folds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    /// Output path relative to the run directory -> SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::io(dir, e))?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            hash_tree(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            let rel = path.strip_prefix(root).unwrap_or(&path);
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            out.insert(key, sha256_hex(&bytes));
        }
    }
    Ok(())
}

impl Manifest {
    /// Hashes the listed outputs (files or directories, relative to `out`)
    /// and writes `manifest.json` into `out`.
    pub fn write(
        command: &str,
        config: &ExperimentConfig,
        seeds: Seeds,
        out: &Path,
        outputs: &[&str],
    ) -> Result<Manifest, CliError> {
        let mut artifacts = BTreeMap::new();
        for name in outputs {
            let path = out.join(name);
            if path.is_dir() {
                hash_tree(out, &path, &mut artifacts)?;
            } else {
                let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
                artifacts.insert(name.to_string(), sha256_hex(&bytes));
            }
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            seeds,
            artifacts,
        };
        let path = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<Manifest, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
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
    fn hashes_nested_outputs() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("params/a")).unwrap();
        fs::write(dir.path().join("params/a/w.foat"), b"x").unwrap();
        fs::write(dir.path().join("results.csv"), b"abc").unwrap();
        let seeds = Seeds {
            data: Some(1),
            split: 2,
            folds: vec![3],
        };
        let m = Manifest::write("train", &ExperimentConfig::default(), seeds, dir.path(), &["results.csv", "params"])
            .unwrap();
        assert_eq!(m.artifacts.len(), 2);
        assert!(m.artifacts.contains_key("params/a/w.foat"));
        let back = Manifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        let cfg = ExperimentConfig::from_file(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }
}
