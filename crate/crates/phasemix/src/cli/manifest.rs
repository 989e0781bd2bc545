//! Run manifest: written before any output, updated per stage, finalized last.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::hex;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub files: Vec<StageFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_id: String,
    pub fingerprint: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: usize,
    /// Constants fixed by the code rather than the configuration.
    pub resolved: serde_json::Value,
    pub complete: bool,
    pub error: Option<String>,
    pub wall_clock_seconds: Option<f64>,
    pub stages: Vec<Stage>,
}

/// Owns the output directory for one command.
pub struct Recorder {
    dir: PathBuf,
    path: PathBuf,
    started: Instant,
    pub manifest: RunManifest,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

impl Recorder {
    /// Removes whatever an earlier run of the same command left behind,
    /// then writes an incomplete manifest.
    pub fn start(dir: &Path, manifest: RunManifest) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("manifest-{}.json", manifest.command));
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(old) = serde_json::from_str::<RunManifest>(&text) {
                for f in old.stages.iter().flat_map(|s| &s.files) {
                    let _ = fs::remove_file(dir.join(&f.path));
                }
            }
            fs::remove_file(&path)?;
        }
        let rec = Recorder { dir: dir.to_path_buf(), path, started: Instant::now(), manifest };
        rec.save()?;
        Ok(rec)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn save(&self) -> Result<()> {
        let tmp = self.path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&self.manifest)?)?;
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }

    /// Writes `bytes` to `name` inside the output directory.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, bytes)?;
        Ok(p)
    }

    /// Records the checksums of a finished stage's files.
    pub fn stage(&mut self, name: &str, files: &[&str]) -> Result<()> {
        let files = files
            .iter()
            .map(|f| Ok(StageFile { path: f.to_string(), sha256: sha256_file(&self.dir.join(f))? }))
            .collect::<Result<_>>()?;
        self.manifest.stages.push(Stage { name: name.into(), files });
        self.save()
    }

    pub fn finish(mut self, error: Option<String>) -> Result<()> {
        self.manifest.complete = error.is_none();
        self.manifest.error = error;
        self.manifest.wall_clock_seconds = Some(self.started.elapsed().as_secs_f64());
        self.save()
    }
}
