//! Atomic file emission and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Writes `bytes` to a temporary file beside `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    /// `None` when the built-in default device was used.
    pub spec_path: Option<String>,
    pub outputs: Vec<OutputDigest>,
}

/// Collects the files of one run and writes them with their manifest.
#[derive(Debug)]
pub struct Emitter {
    command_line: Vec<String>,
    spec_path: Option<String>,
    outputs: Vec<OutputDigest>,
}

impl Emitter {
    pub fn new(command_line: &[String], spec_path: Option<&Path>) -> Self {
        Self {
            command_line: command_line.to_vec(),
            spec_path: spec_path.map(|p| p.display().to_string()),
            outputs: Vec::new(),
        }
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(OutputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn outputs(&self) -> &[OutputDigest] {
        &self.outputs
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(self, path: &Path) -> Result<RunManifest> {
        let manifest = RunManifest {
            command_line: self.command_line,
            spec_path: self.spec_path,
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
        Ok(manifest)
    }
}

/// Manifest path for a single-file output: `<file>.manifest.json`.
pub fn manifest_beside(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Checks that every listed output exists and matches its digest.
pub fn verify_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for out in &manifest.outputs {
        let bytes = fs::read(&out.path).with_context(|| format!("reading {}", out.path))?;
        let digest = sha256_hex(&bytes);
        if digest != out.sha256 {
            bail!("{}: digest {} does not match manifest {}", out.path, digest, out.sha256);
        }
    }
    Ok(manifest)
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
    fn manifest_round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.txt");
        let mut em = Emitter::new(&["mirrorscan".into(), "x".into()], None);
        em.write(&file, b"hello\n").unwrap();
        let mpath = manifest_beside(&file);
        assert!(mpath.to_string_lossy().ends_with("a.txt.manifest.json"));
        let written = em.finish(&mpath).unwrap();
        assert_eq!(verify_manifest(&mpath).unwrap(), written);
        fs::write(&file, b"changed\n").unwrap();
        assert!(verify_manifest(&mpath).is_err());
    }
}
