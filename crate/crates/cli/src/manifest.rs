//! Per-run manifests: the resolved config, the seed and SHA-256 hashes of
//! every input and artifact.

use std::path::{Path, PathBuf};

use dualrate_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileHash>,
    /// Relative to the manifest's directory unless written elsewhere.
    pub artifacts: Vec<FileHash>,
}

pub fn hash_file(path: &Path) -> Result<(String, u64), Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn entry(path: &Path, label: String) -> Result<FileHash, Error> {
    let (sha256, bytes) = hash_file(path)?;
    Ok(FileHash {
        path: label,
        sha256,
        bytes,
    })
}

impl Manifest {
    pub fn build(
        command: &str,
        config: &RunConfig,
        inputs: &[PathBuf],
        out_dir: &Path,
        artifacts: &[PathBuf],
    ) -> Result<Self, Error> {
        Ok(Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            config: config.clone(),
            inputs: inputs
                .iter()
                .map(|p| entry(p, p.display().to_string()))
                .collect::<Result<_, _>>()?,
            artifacts: artifacts
                .iter()
                .map(|p| {
                    let label = p.strip_prefix(out_dir).unwrap_or(p);
                    entry(p, label.display().to_string())
                })
                .collect::<Result<_, _>>()?,
        })
    }

    pub fn path_for(out_dir: &Path, command: &str) -> PathBuf {
        out_dir.join(format!("{command}{SUFFIX}"))
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, Error> {
        let path = Self::path_for(out_dir, &self.command);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Recomputes every artifact hash listed in the manifest at `path`.
/// Returns the number of files checked.
pub fn verify(path: &Path) -> Result<usize, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for a in &manifest.artifacts {
        let (sha, bytes) = hash_file(&dir.join(&a.path))?;
        if sha != a.sha256 || bytes != a.bytes {
            return Err(Error::Integrity(format!(
                "{}: artifact {} does not match its recorded hash",
                path.display(),
                a.path
            )));
        }
    }
    Ok(manifest.artifacts.len())
}

/// Verifies every manifest in `dir`, in name order.
pub fn verify_dir(dir: &Path) -> Result<Vec<(PathBuf, usize)>, Error> {
    let mut manifests: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(SUFFIX))
        .collect();
    manifests.sort();
    if manifests.is_empty() {
        return Err(Error::Empty("manifests in the output directory"));
    }
    manifests.into_iter().map(|p| verify(&p).map(|n| (p, n))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "hello").unwrap();
        let m = Manifest::build(
            "demo",
            &RunConfig::default(),
            &[],
            dir.path(),
            &[dir.path().join("a.txt")],
        )
        .unwrap();
        assert_eq!(m.artifacts[0].path, "a.txt");
        assert_eq!(
            m.artifacts[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        let path = m.write(dir.path()).unwrap();
        assert_eq!(verify(&path).unwrap(), 1);
        std::fs::write(dir.path().join("a.txt"), "hellO").unwrap();
        assert!(verify(&path).is_err());
        assert!(verify_dir(dir.path()).is_err());
    }
}
