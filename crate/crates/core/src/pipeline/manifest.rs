//! Content hashes of run outputs and the failure marker.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_FILE: &str = "FAILED";

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sha256: String,
    pub bytes: u64,
}

/// Every regular file in the run directory except the manifest and failure marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn build(dir: &Path) -> Result<Self> {
        let mut files = BTreeMap::new();
        collect(dir, dir, &mut files)?;
        Ok(Self { files })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Names of files whose hashes differ or that appear in only one manifest.
    pub fn differences(&self, other: &Manifest) -> Vec<String> {
        let mut names: Vec<&String> = self.files.keys().chain(other.files.keys()).collect();
        names.sort();
        names.dedup();
        names
            .into_iter()
            .filter(|n| self.files.get(*n) != other.files.get(*n))
            .cloned()
            .collect()
    }
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, ManifestEntry>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        let ft = e.file_type().map_err(|err| Error::io(&path, err))?;
        if ft.is_dir() {
            collect(root, &path, out)?;
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .expect("walked below root")
            .to_string_lossy()
            .replace('\\', "/");
        if rel == MANIFEST_FILE || rel == FAILED_FILE {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
        out.insert(
            rel,
            ManifestEntry {
                sha256: sha256_bytes(&bytes),
                bytes: bytes.len() as u64,
            },
        );
    }
    Ok(())
}

pub fn write_failed_marker(dir: &Path, stage: &str, error: &Error) -> Result<()> {
    let path = dir.join(FAILED_FILE);
    std::fs::write(&path, format!("stage: {stage}\nerror: {error}\n")).map_err(|e| Error::io(path, e))
}

pub fn clear_failed_marker(dir: &Path) -> Result<()> {
    let path = dir.join(FAILED_FILE);
    match std::fs::remove_file(&path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.json"), "{}").unwrap();
        std::fs::write(dir.path().join(FAILED_FILE), "stage: x").unwrap();
        let m = Manifest::build(dir.path()).unwrap();
        assert_eq!(m.files.keys().collect::<Vec<_>>(), ["a.csv", "sub/b.json"]);
        m.write(dir.path()).unwrap();
        assert_eq!(Manifest::build(dir.path()).unwrap(), m);
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
        std::fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        assert_eq!(Manifest::build(dir.path()).unwrap().differences(&m), ["a.csv"]);
    }
}
