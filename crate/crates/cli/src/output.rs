//! Atomic output files and run manifests.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Record of one invocation, written next to the main output as
/// `<out>.manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub seed: Option<u64>,
    pub versions: BTreeMap<String, String>,
    pub threads: usize,
    pub duration_seconds: f64,
    /// Option values after applying flags, config file and defaults.
    pub config: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<FileHash, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Write through a temporary file in the target directory and rename it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Data(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// `<out>.<suffix>` next to the output.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}

/// Collects the inputs and outputs of a run and writes its manifest.
pub struct Run {
    subcommand: String,
    argv: Vec<String>,
    threads: usize,
    start: Instant,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, serde_json::Value>,
    manifest_path: Option<PathBuf>,
}

impl Run {
    pub fn new(subcommand: &str, argv: Vec<String>, threads: usize) -> Self {
        Run {
            subcommand: subcommand.to_string(),
            argv,
            threads,
            start: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            config: BTreeMap::new(),
            manifest_path: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        if !path.is_file() {
            return Err(Failure::Data(format!("{}: no such file", path.display())));
        }
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    /// Declare the main output; the manifest goes next to it.
    pub fn main_output(&mut self, out: &Path) {
        self.manifest_path = Some(sidecar(out, "manifest.json"));
    }

    fn manifest_name(&self) -> Option<String> {
        self.manifest_path
            .as_ref()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
    }

    pub fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<(), Failure> {
        write_atomic(path, bytes)?;
        self.outputs.push(FileHash {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Pretty JSON with a `manifest` field naming the manifest file.
    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), Failure> {
        let mut v = serde_json::to_value(value).map_err(|e| Failure::Numerical(e.to_string()))?;
        if let (Some(obj), Some(name)) = (v.as_object_mut(), self.manifest_name()) {
            obj.insert("manifest".into(), serde_json::Value::String(name));
        }
        let mut text = serde_json::to_string_pretty(&v).map_err(|e| Failure::Numerical(e.to_string()))?;
        text.push('\n');
        self.write_bytes(path, text.as_bytes())
    }

    pub fn finish(self) -> Result<(), Failure> {
        let Some(path) = self.manifest_path.clone() else {
            return Ok(());
        };
        let versions = BTreeMap::from([
            ("onarch".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("onarch-core".to_string(), onarch_core::VERSION.to_string()),
        ]);
        let manifest = RunManifest {
            subcommand: self.subcommand,
            argv: self.argv,
            inputs: self.inputs,
            outputs: self.outputs,
            seed: self.seed,
            versions,
            threads: self.threads,
            duration_seconds: self.start.elapsed().as_secs_f64(),
            config: self.config,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Numerical(e.to_string()))?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_keeps_directory() {
        assert_eq!(
            sidecar(Path::new("out/fit.json"), "manifest.json"),
            PathBuf::from("out/fit.json.manifest.json")
        );
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
