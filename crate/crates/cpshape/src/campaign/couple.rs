//! Pathwise identities of the graphical construction, the nested
//! weak/strong/Richardson coupling and the constants it yields.

use cpshape_core::coupling::{aggregate_constants, constants_record, evolve_coupled, restart_sequence, NestedInitial, DEFAULT_S0};
use cpshape_core::dynamics::{evolve, semigroup_check, Configuration};
use cpshape_core::lattice::Site;
use cpshape_core::rng::CounterRng;
use serde::Serialize;
use serde_json::json;

use super::{factory, finite, par_map, table, Artifacts, Check};
use crate::config::ExperimentConfig;
use crate::error::Result;

/// Stream of the per-case random choices, apart from the replica streams.
const CASE_STREAM: u64 = 0x6361_7365;

#[derive(Clone, Debug, Serialize)]
pub struct CaseRow {
    pub replica: u64,
    pub t: f64,
    pub s: f64,
    pub size_a: usize,
    pub size_b: usize,
    pub semigroup: bool,
    pub additivity: bool,
    pub monotonicity: bool,
    pub nesting: bool,
    /// The contact process from `{0}` died before the horizon.
    pub death_run: bool,
    pub u_k: f64,
    pub extinction_time: Option<f64>,
    /// `u_K = τ`; true on surviving runs.
    pub u_k_is_extinction: bool,
}

fn random_set(rng: &mut CounterRng, dim: usize, spread: i32) -> Configuration {
    let n = 1 + rng.below(4) as usize;
    Configuration::from_sites((0..n).map(|_| {
        let mut c = [0i32; 4];
        for x in c.iter_mut().take(dim) {
            *x = rng.below(2 * spread as u64 + 1) as i32 - spread;
        }
        Site::from_slice(&c[..dim])
    }))
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let f = factory(cfg)?;
    let h = cfg.survival_horizon;
    let spread = (cfg.radius as i32 / 4).clamp(1, 5);
    let cases = par_map(cfg.replicas, |i| {
        let rep = f.replica(i)?;
        let view = rep.real.view();
        let env = &rep.env;
        let mut rng = CounterRng::derive(rep.seed, CASE_STREAM);
        let a = random_set(&mut rng, cfg.dim, spread);
        let b = random_set(&mut rng, cfg.dim, spread);
        let t = h / 2.0 * rng.next_f64();
        let s = h / 2.0 * rng.next_f64();
        let semigroup = semigroup_check(&view, env, &a, t, s)?;

        let union = a.union(&b);
        let (ta, tb, tu) = (evolve(&view, env, &a, h)?, evolve(&view, env, &b, h)?, evolve(&view, env, &union, h)?);
        let mut times: Vec<f64> = tu.events.iter().map(|e| e.time).collect();
        times.extend([0.0, t, t + s, h]);
        let mut additivity = true;
        let mut monotonicity = true;
        for &u in &times {
            let (ca, cb, cu) = (ta.configuration_at(u), tb.configuration_at(u), tu.configuration_at(u));
            additivity &= ca.union(&cb) == cu;
            monotonicity &= ca.is_subset(&cu) && cb.is_subset(&cu);
        }

        let weak = Configuration::from_sites(a.occupied.intersection(&b.occupied).copied());
        let nested = NestedInitial { weak, strong: a.clone(), richardson: union };
        let nesting = evolve_coupled(&view, env, &NestedInitial::single(Site::ORIGIN), h)?.nesting_holds()
            && evolve_coupled(&view, env, &nested, h)?.nesting_holds();

        let r = restart_sequence(&view, env, h)?;
        let root = evolve(&view, env, &Configuration::single(Site::ORIGIN), h)?;
        let death_run = !root.is_alive();
        Ok(CaseRow {
            replica: i,
            t,
            s,
            size_a: a.len(),
            size_b: b.len(),
            semigroup,
            additivity,
            monotonicity,
            nesting,
            death_run,
            u_k: r.u_k(),
            extinction_time: finite(root.extinction_time),
            u_k_is_extinction: !death_run || r.u_k() == root.extinction_time,
        })
    })?;

    let count = |p: fn(&CaseRow) -> bool| cases.iter().filter(|c| p(c)).count();
    let n = cases.len();
    let deaths = count(|c| c.death_run);
    let checks = vec![
        Check::new(1, "trajectorial semigroup", count(|c| c.semigroup) == n, format!("{}/{n} cases", count(|c| c.semigroup))),
        Check::new(
            1,
            "additivity and monotonicity",
            count(|c| c.additivity && c.monotonicity) == n,
            format!("additive {}/{n}, monotone {}/{n}", count(|c| c.additivity), count(|c| c.monotonicity)),
        ),
        Check::new(1, "nesting weak in strong in Richardson", count(|c| c.nesting) == n, format!("{}/{n} coupled runs", count(|c| c.nesting))),
        Check::new(
            1,
            "u_K equals the extinction time on death runs",
            deaths > 0 && count(|c| c.u_k_is_extinction) == n,
            format!("{deaths} death runs, {} mismatches", n - count(|c| c.u_k_is_extinction)),
        ),
    ];

    let probes = &cfg.params.probe_norms;
    let records = par_map(cfg.params.aux_replicas, |i| {
        let rep = f.replica(cfg.replicas + i)?;
        Ok(constants_record(&rep.real.view(), &rep.env, h, DEFAULT_S0, probes)?)
    })?;
    let constants = aggregate_constants(&records, probes, DEFAULT_S0)?;
    let summary = json!({
        "cases": n,
        "death_runs": deaths,
        "constants": constants,
        "checks": checks,
    });
    Ok(Artifacts { summary, data: vec![table("cases.csv", &cases)?], checks })
}
