//! `run_manifest.json`: what ran, with which effective settings, and the
//! SHA-256 of every file read or written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Path as given → hex digest.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the output directory → hex digest.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub stages: Vec<StageRecord>,
    /// Unix seconds.
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            tool: "popgrid".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            stages: Vec::new(),
            started_at: now(),
            finished_at: 0,
        }
    }

    /// Records a stage, hashing `inputs` as given and `outputs` under
    /// `out_dir`.
    pub fn record(
        &mut self,
        stage: &str,
        inputs: &[PathBuf],
        out_dir: &Path,
        outputs: &[PathBuf],
    ) -> std::io::Result<()> {
        let mut rec = StageRecord {
            stage: stage.into(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        };
        for p in inputs {
            rec.inputs.insert(p.display().to_string(), hash_file(p)?);
        }
        for p in outputs {
            let rel = p.strip_prefix(out_dir).unwrap_or(p);
            rec.outputs.insert(rel.display().to_string().replace('\\', "/"), hash_file(p)?);
        }
        self.stages.push(rec);
        Ok(())
    }

    /// All output digests keyed by `stage/path`.
    pub fn output_hashes(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|s| {
                s.outputs
                    .iter()
                    .map(move |(k, v)| (format!("{}/{k}", s.stage), v.clone()))
            })
            .collect()
    }

    /// Stamps the finish time and writes the manifest to `path`.
    pub fn write(&mut self, path: &Path) -> std::io::Result<()> {
        self.finished_at = now();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            hash_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn outputs_are_keyed_relative_to_the_run_directory() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("n1");
        std::fs::create_dir(&sub).unwrap();
        let f = sub.join("x.txt");
        std::fs::write(&f, "x").unwrap();
        let mut m = RunManifest::new("test", serde_json::json!({}));
        m.record("stage", &[], dir.path(), &[f]).unwrap();
        let hashes = m.output_hashes();
        assert!(hashes.contains_key("stage/n1/x.txt"));
        let path = dir.path().join(MANIFEST_NAME);
        m.write(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
    }
}
