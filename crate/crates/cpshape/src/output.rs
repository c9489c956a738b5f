//! Artifact directory: `manifest.json`, `summary.json` and `data/*.csv`.
//!
//! The manifest is written first with status `running` and rewritten at the
//! end, so an interrupted run is always labelled. Wall-clock data lives in
//! the manifest only; summary and data depend on the config alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::campaign::{run_campaign, Check};
use crate::config::ExperimentConfig;
use crate::error::{Result, RunError};

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct Versions {
    pub cpshape: &'static str,
    pub cpshape_core: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub status: Status,
    pub config: &'a ExperimentConfig,
    pub versions: Versions,
    pub master_seed: u64,
    pub threads: usize,
    pub started_unix: f64,
    pub wall_seconds: Option<f64>,
    pub data_files: Vec<String>,
    pub checks_passed: Option<bool>,
    pub error: Option<String>,
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub checks: Vec<Check>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// 0 when every acceptance check passed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            2
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| RunError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write(path, &bytes)
}

/// Validates `cfg`, runs its campaign and writes the artifacts under
/// `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.out.clone();
    let data_dir = dir.join("data");
    fs::create_dir_all(&data_dir).map_err(|e| RunError::io(&data_dir, e))?;
    // stale payloads from an earlier run in the same directory
    for stale in [dir.join("summary.json")] {
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| RunError::io(&stale, e))?;
        }
    }
    for entry in fs::read_dir(&data_dir).map_err(|e| RunError::io(&data_dir, e))? {
        let path = entry.map_err(|e| RunError::io(&data_dir, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            fs::remove_file(&path).map_err(|e| RunError::io(&path, e))?;
        }
    }

    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let mut manifest = Manifest {
        status: Status::Running,
        config: cfg,
        versions: Versions { cpshape: env!("CARGO_PKG_VERSION"), cpshape_core: cpshape_core::VERSION },
        master_seed: cfg.master_seed,
        threads: rayon::current_num_threads(),
        started_unix,
        wall_seconds: None,
        data_files: Vec::new(),
        checks_passed: None,
        error: None,
    };
    let manifest_path = dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    let artifacts = match run_campaign(cfg) {
        Ok(a) => a,
        Err(e) => {
            manifest.status = Status::Failed;
            manifest.error = Some(e.to_string());
            manifest.wall_seconds = Some(clock.elapsed().as_secs_f64());
            write_json(&manifest_path, &manifest)?;
            return Err(e);
        }
    };
    for d in &artifacts.data {
        write(&data_dir.join(&d.name), &d.bytes)?;
        manifest.data_files.push(format!("data/{}", d.name));
    }
    write_json(&dir.join("summary.json"), &artifacts.summary)?;
    manifest.status = Status::Complete;
    manifest.wall_seconds = Some(clock.elapsed().as_secs_f64());
    manifest.checks_passed = Some(artifacts.passed());
    write_json(&manifest_path, &manifest)?;
    Ok(RunOutcome { dir, checks: artifacts.checks })
}
