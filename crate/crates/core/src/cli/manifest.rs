use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// What a command needs to be rerun: binary version, the effective config
/// and its hash, the seed and a digest of every input.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    /// Input path to SHA-256 of its bytes; directories hash their sorted
    /// relative paths and file contents.
    pub inputs: BTreeMap<String, String>,
    /// Command-specific arguments not covered by the config.
    pub args: BTreeMap<String, String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: impl Into<String>, config: &RunConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config_hash: hex(&Sha256::digest(config.to_toml()?.as_bytes())),
            inputs: BTreeMap::new(),
            args: BTreeMap::new(),
            config: config.clone(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), digest_path(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            h.update(rel.as_bytes());
            h.update([0]);
            let full = path.join(&rel);
            h.update(std::fs::read(&full).map_err(|e| Error::io(&full, e))?);
        }
    } else {
        h.update(std::fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(hex(&h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("inside root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, "abc").unwrap();
        assert_eq!(
            digest_path(&f).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let d1 = digest_path(dir.path()).unwrap();
        std::fs::write(dir.path().join("b.txt"), "x").unwrap();
        assert_ne!(d1, digest_path(dir.path()).unwrap());
    }

    #[test]
    fn manifest_echoes_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("oracle all", &RunConfig::default(), 7).unwrap();
        m.input(dir.path()).unwrap();
        m.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("seed = 7"));
        assert!(text.contains("[config.train]"));
        assert!(text.contains("beta1 = 20.0"));
    }
}
