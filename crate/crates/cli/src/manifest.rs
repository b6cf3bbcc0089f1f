use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use amodal_core::dataset::canonical_json;
use amodal_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one run, written next to its primary output.
///
/// Everything except `duration_seconds` is a function of the inputs and the
/// flags, so repeated runs produce identical manifests apart from that field.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// SHA-256 of every file read, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written, keyed by path as given.
    pub outputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub duration_seconds: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// `report.json` -> `report.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

/// Collects digests while a command runs, then writes the manifest.
pub struct Recorder {
    command: &'static str,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Recorder {
            command,
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&mut self, path: &Path, contents: &[u8]) -> Result<()> {
        std::fs::write(path, contents).map_err(|e| io_error(path, e))?;
        self.output(path)
    }

    /// Registers a file that was written by other means.
    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn finish(self, beside: &Path, config: impl Serialize, seed: Option<u64>) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: serde_json::to_value(config)?,
            inputs: self.inputs,
            outputs: self.outputs,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = manifest_path(beside);
        std::fs::write(&path, canonical_json(&manifest)).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }
}

/// Independent seed for the named stream `name` under the run seed.
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(manifest_path(Path::new("out/report.json")), PathBuf::from("out/report.manifest.json"));
        assert_eq!(manifest_path(Path::new("tracks")), PathBuf::from("tracks.manifest.json"));
    }

    #[test]
    fn streams_differ_by_name_and_seed() {
        assert_eq!(stream_seed(7, "train"), stream_seed(7, "train"));
        assert_ne!(stream_seed(7, "train"), stream_seed(7, "eval"));
        assert_ne!(stream_seed(7, "train"), stream_seed(8, "train"));
    }

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
