//! `manifest.json`: what was run, with which seeds, and hashes of every
//! file written.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub master_seed: u64,
    /// The resolved configuration, reloadable as a config file.
    pub config: String,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

impl Manifest {
    pub fn new(subcommand: &str, cfg: &RunConfig, out_dir: &Path, files: &[PathBuf]) -> Result<Self> {
        let mut entries = files
            .iter()
            .map(|f| {
                let rel = f.strip_prefix(out_dir).unwrap_or(f);
                let path = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                let (bytes, sha256) = sha256_file(f)?;
                Ok(FileEntry { path, bytes, sha256 })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        entries.dedup_by(|a, b| a.path == b.path);
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            master_seed: cfg.simulation.master_seed,
            config: cfg.to_toml(),
            files: entries,
        })
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Mismatch(format!("{}: not a manifest: {e}", path.display())))
    }

    /// Re-hashes every listed file under `out_dir`.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        for f in &self.files {
            let (bytes, sha) = sha256_file(&out_dir.join(&f.path))?;
            if bytes != f.bytes || sha != f.sha256 {
                return Err(Error::Mismatch(format!("{} does not match its manifest hash", f.path)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("abc.txt");
        fs::write(&f, "abc").unwrap();
        let (n, h) = sha256_file(&f).unwrap();
        assert_eq!(n, 3);
        assert_eq!(h, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("cells/a");
        fs::create_dir_all(&sub).unwrap();
        let f1 = sub.join("x.csv");
        let f2 = dir.path().join("y.csv");
        fs::write(&f1, "1,2\n").unwrap();
        fs::write(&f2, "3\n").unwrap();
        let cfg = RunConfig::default();
        let m = Manifest::new("solve", &cfg, dir.path(), &[f2.clone(), f1.clone()]).unwrap();
        assert_eq!(m.files[0].path, "cells/a/x.csv");
        let p = m.write(dir.path()).unwrap();
        let back = Manifest::read(&p).unwrap();
        assert_eq!(back, m);
        back.verify(dir.path()).unwrap();
        assert_eq!(crate::config::parse_config(&back.config).unwrap(), cfg);
        fs::write(&f2, "4\n").unwrap();
        assert!(back.verify(dir.path()).is_err());
    }
}
