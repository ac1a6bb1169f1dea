//! Per-run manifest, written before any work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use skelforge::motion::dataset::write_bytes;
use skelforge::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Written at start; a run that dies leaves this marker behind.
    Incomplete,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub input_digests: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// sha256 of each checkpoint written, keyed by path.
    pub checkpoint_digests: BTreeMap<String, String>,
    pub started_at: String,
    pub wall_clock_seconds: Option<f64>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub exit_code: Option<i32>,
}

/// Content hash of a file, or of a directory's files in sorted order.
pub fn digest_path(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            let bytes = std::fs::read(path.join(&rel))
                .map_err(|e| Error::io(format!("reading {}", path.join(&rel).display()), e))?;
            hasher.update(Sha256::digest(&bytes));
        }
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
        }
    }
    Ok(())
}

/// Live handle that rewrites `manifest.json` as the run progresses.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    started: Instant,
}

impl Run {
    pub fn start(
        dir: &Path,
        command: &str,
        argv: Vec<String>,
        config: serde_json::Value,
        seeds: BTreeMap<String, u64>,
        inputs: &[(&str, &Path)],
    ) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut input_digests = BTreeMap::new();
        for (name, path) in inputs {
            input_digests.insert(name.to_string(), digest_path(path)?);
        }
        let run = Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                argv,
                config,
                seeds,
                input_digests,
                outputs: Vec::new(),
                checkpoint_digests: BTreeMap::new(),
                started_at: chrono::Utc::now().to_rfc3339(),
                wall_clock_seconds: None,
                status: RunStatus::Incomplete,
                error: None,
                exit_code: None,
            },
            started: Instant::now(),
        };
        run.write()?;
        Ok(run)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn output(&mut self, rel: &str) {
        self.manifest.outputs.push(rel.to_string());
    }

    pub fn checkpoint(&mut self, rel: &str) -> Result<()> {
        let digest = digest_path(&self.dir.join(rel))?;
        self.manifest.checkpoint_digests.insert(rel.to_string(), digest);
        self.output(rel);
        Ok(())
    }

    fn write(&self) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::json("run manifest", e))?;
        write_bytes(&self.dir.join(MANIFEST_FILE), json.as_bytes())
    }

    pub fn finish(mut self, outcome: &Result<()>) -> Result<()> {
        self.manifest.wall_clock_seconds = Some(self.started.elapsed().as_secs_f64());
        match outcome {
            Ok(()) => {
                self.manifest.status = RunStatus::Succeeded;
                self.manifest.exit_code = Some(0);
            }
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(e.to_string());
                self.manifest.exit_code = Some(e.exit_code());
            }
        }
        self.write()
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}
