//! Run manifests: one JSON file beside every command's outputs, recording
//! settings, seeds, checksums and timestamps.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Settings;
use crate::error::{Error, Result};

pub const DIR_MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub settings: Settings,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Checksums every regular file of a directory except its manifest, sorted by name.
pub fn sha256_dir(dir: &Path) -> Result<Vec<Artifact>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != DIR_MANIFEST))
        .collect();
    names.sort();
    names.iter().map(|p| artifact(p)).collect()
}

pub fn artifact(path: &Path) -> Result<Artifact> {
    Ok(Artifact {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json` otherwise.
pub fn manifest_path(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join(DIR_MANIFEST)
    } else {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }
}

impl RunManifest {
    pub fn start(command: &str, settings: &Settings) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("world".into(), settings.world.seed);
        seeds.insert("split".into(), settings.split.seed);
        seeds.insert("lm".into(), settings.lm.seed);
        seeds.insert("tune".into(), settings.tune.seed);
        seeds.insert("ranker".into(), settings.ranker.seed);
        seeds.insert("encoder_baseline".into(), settings.baselines.encoder_seed);
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            settings: settings.clone(),
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: now(),
            finished_at: String::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(artifact(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            self.outputs.extend(sha256_dir(path)?);
        } else {
            self.outputs.push(artifact(path)?);
        }
        Ok(())
    }

    /// Writes the manifest beside `anchor`, the command's main output.
    pub fn finish(mut self, anchor: &Path) -> Result<PathBuf> {
        self.finished_at = now();
        let path = manifest_path(anchor);
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Confirms an upstream artifact exists and still matches the checksum its
/// producing run recorded. `step` names the command that creates it.
pub fn check_input(path: &Path, step: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "{} not found; run `catprobe {step}` first",
            path.display()
        )));
    }
    let mpath = manifest_path(path);
    if !mpath.exists() {
        log::warn!("{} has no manifest; provenance not checked", path.display());
        return Ok(());
    }
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    if path.is_dir() {
        for o in &manifest.outputs {
            let p = Path::new(&o.path);
            let local = path.join(p.file_name().unwrap_or_default());
            if !local.exists() {
                return Err(Error::MissingArtifact(format!(
                    "{} not found; rerun `catprobe {}`",
                    local.display(),
                    manifest.command
                )));
            }
            compare(&local, &o.sha256, &manifest.command)?;
        }
    } else {
        let name = path.file_name();
        if let Some(r) = manifest.outputs.iter().find(|o| Path::new(&o.path).file_name() == name) {
            compare(path, &r.sha256, &manifest.command)?;
        }
    }
    Ok(())
}

fn compare(path: &Path, recorded: &str, command: &str) -> Result<()> {
    if sha256_file(path)? != recorded {
        return Err(Error::Stale(format!(
            "{} changed since `catprobe {command}` produced it; rerun that step",
            path.display()
        )));
    }
    Ok(())
}

/// Refuses to replace an existing output unless forced.
pub fn guard_output(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Precondition(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("lm.ckpt");
        fs::write(&f, b"abc").unwrap();
        let mut m = RunManifest::start("pretrain", &Settings::default());
        m.output(&f).unwrap();
        let mp = m.finish(&f).unwrap();
        assert!(mp.ends_with("lm.ckpt.manifest.json"));
        check_input(&f, "pretrain").unwrap();
        fs::write(&f, b"abd").unwrap();
        assert!(matches!(check_input(&f, "pretrain"), Err(Error::Stale(_))));
        let missing = check_input(&dir.path().join("nope.ckpt"), "pretrain").unwrap_err();
        assert!(missing.to_string().contains("catprobe pretrain"));
        assert!(guard_output(&f, false).is_err());
        assert!(guard_output(&f, true).is_ok());
    }
}
