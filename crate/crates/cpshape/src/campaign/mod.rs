//! One campaign per subcommand. A campaign draws replicas in parallel,
//! aggregates them in index order and returns its data tables, its
//! summary and its acceptance checks.

use cpshape_core::environment::EnvironmentLaw;
use cpshape_core::replica::ReplicaFactory;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Subcommand};
use crate::error::Result;

pub mod couple;
pub mod ergodic;
pub mod oracle;
pub mod shape;
pub mod sigma;
pub mod survive;
pub mod tails;

/// One pass/fail statement about a campaign's results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    /// Acceptance criterion this check belongs to.
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(criterion: u8, name: &str, passed: bool, detail: String) -> Self {
        Check { criterion, name: name.to_string(), passed, detail }
    }
}

/// A CSV table, already serialized.
#[derive(Clone, Debug, PartialEq)]
pub struct DataFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub struct Artifacts {
    pub summary: serde_json::Value,
    pub data: Vec<DataFile>,
    pub checks: Vec<Check>,
}

impl Artifacts {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn table<T: Serialize>(name: &str, rows: &[T]) -> Result<DataFile> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::RunError::io(name, e.into_error()))?;
    Ok(DataFile { name: name.to_string(), bytes })
}

/// `f(i)` for `i < n`, evaluated in parallel and returned in index order.
pub fn par_map<R: Send>(n: u64, f: impl Fn(u64) -> Result<R> + Sync) -> Result<Vec<R>> {
    (0..n).into_par_iter().map(&f).collect()
}

/// Largest block of draws evaluated between two checks of the survivor
/// count. Blocks are sized from the remaining need only, never from the
/// thread count.
const CHUNK: u64 = 64;
const MIN_CHUNK: u64 = 8;

/// Draws `f(0), f(1), ...` until `target` of them are accepted or
/// `max_attempts` draws were made. The result stops right after the
/// `target`-th accepted draw, so it does not depend on scheduling.
pub fn collect_conditioned<R: Send>(
    target: u64,
    max_attempts: u64,
    f: impl Fn(u64) -> Result<R> + Sync,
    accepted: impl Fn(&R) -> bool,
) -> Result<Vec<R>> {
    let mut out: Vec<R> = Vec::new();
    let mut kept = 0u64;
    let mut next = 0u64;
    while kept < target && next < max_attempts {
        let end = (next + (target - kept).clamp(MIN_CHUNK, CHUNK)).min(max_attempts);
        let batch: Vec<R> = (next..end).into_par_iter().map(&f).collect::<Result<_>>()?;
        next = end;
        for r in batch {
            if kept >= target {
                break;
            }
            kept += accepted(&r) as u64;
            out.push(r);
        }
    }
    Ok(out)
}

pub type Factory = ReplicaFactory<EnvironmentLaw>;

/// Whether a draw of a conditioned campaign was accepted.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DrawRow {
    pub replica: u64,
    pub alive: bool,
}

pub fn factory(cfg: &ExperimentConfig) -> Result<Factory> {
    Ok(ReplicaFactory::new(cfg.law.clone(), cfg.dim, cfg.radius, cfg.horizon, cfg.master_seed)?)
}

/// Runs the campaign named by `cfg.subcommand`. The config must be valid.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<Artifacts> {
    match cfg.subcommand {
        Subcommand::Survive => survive::run(cfg),
        Subcommand::Shape => shape::run(cfg),
        Subcommand::Sigma => sigma::run(cfg),
        Subcommand::Tails => tails::run(cfg),
        Subcommand::Couple => couple::run(cfg),
        Subcommand::Ergodic => ergodic::run(cfg),
        Subcommand::OracleCheck => oracle::run(cfg),
    }
}

/// Finite values as is, anything else as `None` (JSON `null`).
pub(crate) fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conditioned_collection_is_deterministic() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let run = || collect_conditioned(10, 1000, Ok, |i| i % 7 == 0).unwrap();
        let a = run();
        let b = pool.install(run);
        assert_eq!(a, b);
        assert_eq!(*a.last().unwrap(), 63);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn conditioned_collection_respects_cap() {
        let v = collect_conditioned(10, 100, Ok, |_| false).unwrap();
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn tables_round_trip_floats() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Row {
            x: f64,
        }
        let rows = vec![Row { x: 0.1 + 0.2 }, Row { x: 1.0 / 3.0 }, Row { x: f64::INFINITY }];
        let f = table("t.csv", &rows).unwrap();
        let mut r = csv::Reader::from_reader(&f.bytes[..]);
        let back: Vec<Row> = r.deserialize().collect::<std::result::Result<_, _>>().unwrap();
        assert_eq!(back, rows);
    }
}
