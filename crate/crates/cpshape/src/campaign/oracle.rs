//! Monte Carlo estimates on one-dimensional boxes of a few sites against
//! the exact transient law.

use std::sync::Arc;

use cpshape_core::dynamics::{evolve, Configuration};
use cpshape_core::environment::{Environment, RateBounds};
use cpshape_core::lattice::{LatticeBox, Site, Topology};
use cpshape_core::oracle::{ExactChain, OracleEvent};
use cpshape_core::rng::{combine, replica_seed};
use cpshape_core::substrate::GraphicalRealization;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{table, Artifacts, Check};
use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct OracleRow {
    pub sites: u32,
    pub rate: f64,
    pub t: f64,
    /// `survives` or `occupied`; the occupied site is the last one of the box.
    pub event: &'static str,
    pub exact: f64,
    pub truncation_bound: f64,
    pub estimate: f64,
    /// Standard error at the exact probability.
    pub se: f64,
    /// `(estimate − exact) / se`.
    pub z: f64,
    pub pass: bool,
}

/// The box `{−1, ..., sites − 2}`, which puts the origin at its second site.
pub fn oracle_box(sites: u32) -> Result<LatticeBox> {
    Ok(LatticeBox::new(1, Site::unit(0, -1), Site::unit(0, sites as i32 - 2))?)
}

fn case(cfg: &ExperimentConfig, index: u64, sites: u32, rate: f64) -> Result<Vec<OracleRow>> {
    let bbox = oracle_box(sites)?;
    let topo = Arc::new(Topology::new(&bbox));
    let env = Environment::from_rates(RateBounds::new(rate, rate)?, bbox, vec![rate; topo.n_edges()])?;
    let chain = ExactChain::new(&env)?;
    let last = bbox.hi();
    let times = &cfg.sample_times;
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let key = combine(cfg.master_seed, index);
    let initial = Configuration::single(Site::ORIGIN);
    let counts: Vec<(u64, u64)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|j| -> Result<Vec<(u64, u64)>> {
            let real = GraphicalRealization::with_topology(bbox, topo.clone(), cfg.horizon, replica_seed(key, j), rate)?;
            let tr = evolve(&real.view(), &env, &initial, t_max)?;
            Ok(times
                .iter()
                .map(|t| {
                    let c = tr.configuration_at(*t);
                    (!c.is_empty() as u64, c.contains(&last) as u64)
                })
                .collect())
        })
        .try_fold(
            || vec![(0u64, 0u64); times.len()],
            |mut acc, r| -> Result<Vec<(u64, u64)>> {
                for (a, b) in acc.iter_mut().zip(r?) {
                    a.0 += b.0;
                    a.1 += b.1;
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![(0u64, 0u64); times.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    x.0 += y.0;
                    x.1 += y.1;
                }
                Ok(a)
            },
        )?;
    let n = cfg.replicas as f64;
    let mut rows = Vec::new();
    for (t, (alive, occ)) in times.iter().zip(counts) {
        for (event, name, hits) in [(OracleEvent::Survives, "survives", alive), (OracleEvent::Occupied(last), "occupied", occ)] {
            let exact = chain.transient_prob(&initial, *t, event)?;
            let estimate = hits as f64 / n;
            let se = (exact.value * (1.0 - exact.value) / n).sqrt();
            let z = if se > 0.0 { (estimate - exact.value) / se } else if estimate == exact.value { 0.0 } else { f64::INFINITY };
            rows.push(OracleRow {
                sites,
                rate,
                t: *t,
                event: name,
                exact: exact.value,
                truncation_bound: exact.truncation_bound,
                estimate,
                se,
                z,
                pass: z.abs() <= 3.0,
            });
        }
    }
    Ok(rows)
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut rows = Vec::new();
    let mut index = 0;
    for &sites in &cfg.params.oracle_sizes {
        for &rate in &cfg.params.oracle_rates {
            rows.extend(case(cfg, index, sites, rate)?);
            index += 1;
        }
    }
    let failing: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} sites, rate {}, t = {}, {}: z = {:.2}", r.sites, r.rate, r.t, r.event, r.z))
        .collect();
    let worst = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    let checks = vec![Check::new(
        2,
        "Monte Carlo within 3 se of the exact chain",
        failing.is_empty(),
        if failing.is_empty() {
            format!("{} comparisons, largest |z| = {worst:.2}", rows.len())
        } else {
            failing.join("; ")
        },
    )];
    let summary = json!({
        "replicas": cfg.replicas,
        "comparisons": rows.len(),
        "max_abs_z": worst,
        "max_truncation_bound": rows.iter().map(|r| r.truncation_bound).fold(0.0, f64::max),
        "rows": rows,
        "checks": checks,
    });
    Ok(Artifacts { summary, data: vec![table("oracle.csv", &rows)?], checks })
}
