//! Per-stage run manifests: config snapshot, derived seeds, content hashes
//! of frozen artifacts, and every output path. Any reported number traces
//! back to exactly one manifest.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub stage: String,
    pub master_seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    /// Content hashes of frozen artifacts consumed or produced.
    pub frozen_hashes: BTreeMap<String, String>,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
    pub started_unix_secs: u64,
}

impl RunManifest {
    pub fn new(stage: &str, master_seed: u64, config: serde_json::Value) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stage: stage.to_string(),
            master_seed,
            stage_seeds: BTreeMap::new(),
            config,
            frozen_hashes: BTreeMap::new(),
            outputs: Vec::new(),
            wall_clock_secs: 0.0,
            started_unix_secs: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn seed(&mut self, stage: &str, value: u64) -> &mut Self {
        self.stage_seeds.insert(stage.to_string(), value);
        self
    }

    pub fn hash(&mut self, name: &str, value: &str) -> &mut Self {
        self.frozen_hashes.insert(name.to_string(), value.to_string());
        self
    }

    pub fn output(&mut self, rel_path: &str) -> &mut Self {
        self.outputs.push(rel_path.to_string());
        self
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every listed output must exist on disk.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        for out in &self.outputs {
            let p = dir.join(out);
            if !p.exists() {
                bail!("manifest {} lists missing output {out}", dir.display());
            }
        }
        Ok(())
    }
}

/// Validate a tree of stage manifests: each output exists and no output
/// path is claimed by two manifests.
pub fn validate_tree(root: &Path) -> Result<usize> {
    let mut seen: BTreeMap<PathBuf, PathBuf> = BTreeMap::new();
    let mut count = 0usize;
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "manifest.json") {
                let mdir = path.parent().unwrap().to_path_buf();
                let manifest = RunManifest::load(&mdir)?;
                manifest.validate(&mdir)?;
                count += 1;
                for out in &manifest.outputs {
                    let canon = mdir.join(out);
                    if let Some(prev) = seen.insert(canon.clone(), mdir.clone()) {
                        bail!(
                            "output {} claimed by manifests in {} and {}",
                            canon.display(),
                            prev.display(),
                            mdir.display()
                        );
                    }
                }
            }
        }
    }
    Ok(count)
}

/// Timer helper so wall-clock lands in the manifest.
pub struct StageTimer(std::time::Instant);

impl StageTimer {
    pub fn start() -> Self {
        StageTimer(std::time::Instant::now())
    }

    pub fn finish(&self, manifest: &mut RunManifest) {
        manifest.wall_clock_secs = self.0.elapsed().as_secs_f64();
    }
}
