//! `manifest.json`: what a run directory contains and how it was made.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub kind: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub config: ExperimentConfig,
    /// Derived seeds by purpose, e.g. `"pool/k0/m003"`.
    pub seeds: BTreeMap<String, u64>,
    /// Keyed by path relative to the run directory.
    pub artifacts: BTreeMap<String, Artifact>,
    /// Stages that ran to completion.
    pub completed: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn file_sha256(path: &Path) -> CliResult<(String, u64)> {
    let mut f = fs::File::open(path)
        .map_err(|e| CliError::MissingArtifact(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex(&hasher.finalize()), total))
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        let t = now();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            master_seed: config.seed,
            created_unix: t,
            updated_unix: t,
            config: config.clone(),
            seeds: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            completed: Vec::new(),
        }
    }

    pub fn path(out: &Path) -> PathBuf {
        out.join(MANIFEST_FILE)
    }

    pub fn load(out: &Path) -> CliResult<Self> {
        let path = Self::path(out);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::MissingArtifact(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::MissingArtifact(format!("{}: {e}", path.display())))
    }

    /// The run directory's manifest, created if absent. A manifest written
    /// for a different configuration is a configuration error.
    pub fn open(config: &ExperimentConfig) -> CliResult<Self> {
        fs::create_dir_all(&config.out)?;
        if !Self::path(&config.out).exists() {
            let m = Self::new(config);
            m.save(&config.out)?;
            return Ok(m);
        }
        let m = Self::load(&config.out)?;
        if m.config_hash != config.hash() {
            return Err(CliError::Config(format!(
                "{} belongs to a run with config hash {}, current config hashes to {}; use a fresh --out",
                config.out.display(),
                m.config_hash,
                config.hash()
            )));
        }
        Ok(m)
    }

    /// Writes through a temporary file so an interrupted save never leaves
    /// a truncated manifest.
    pub fn save(&self, out: &Path) -> CliResult<()> {
        let tmp = out.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(
            &tmp,
            serde_json::to_string_pretty(self).expect("manifest serializes") + "\n",
        )?;
        fs::rename(tmp, Self::path(out))?;
        Ok(())
    }

    pub fn record(&mut self, out: &Path, rel: &str, kind: &str) -> CliResult<()> {
        let (sha256, bytes) = file_sha256(&out.join(rel))?;
        self.artifacts.insert(
            rel.to_string(),
            Artifact {
                kind: kind.into(),
                sha256,
                bytes,
            },
        );
        self.updated_unix = now();
        Ok(())
    }

    /// True when `rel` is recorded and the file on disk still matches.
    pub fn is_current(&self, out: &Path, rel: &str) -> bool {
        match self.artifacts.get(rel) {
            Some(a) => file_sha256(&out.join(rel)).is_ok_and(|(h, _)| h == a.sha256),
            None => false,
        }
    }

    pub fn has_completed(&self, stage: &str) -> bool {
        self.completed.iter().any(|s| s == stage)
    }

    pub fn mark_completed(&mut self, stage: &str) {
        if !self.has_completed(stage) {
            self.completed.push(stage.into());
        }
        self.updated_unix = now();
    }

    /// Every recorded artifact exists with its recorded hash.
    pub fn verify(&self, out: &Path) -> CliResult<()> {
        for (rel, a) in &self.artifacts {
            let (h, _) = file_sha256(&out.join(rel))?;
            if h != a.sha256 {
                return Err(CliError::MissingArtifact(format!(
                    "{rel} changed since it was recorded"
                )));
            }
        }
        Ok(())
    }

    /// Files under `out` that the manifest does not list.
    pub fn orphans(&self, out: &Path) -> CliResult<Vec<String>> {
        let mut found = Vec::new();
        walk(out, out, &mut found)?;
        Ok(found
            .into_iter()
            .filter(|rel| rel != MANIFEST_FILE && !self.artifacts.contains_key(rel))
            .collect())
    }
}

fn walk(root: &Path, dir: &Path, found: &mut Vec<String>) -> CliResult<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            walk(root, &p, found)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root");
            found.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
