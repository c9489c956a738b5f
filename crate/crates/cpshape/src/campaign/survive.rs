//! Weak survival, restart counts and the tails of `K(x)`.

use cpshape_core::coupling::restart_sequence;
use cpshape_core::engine::NEVER;
use cpshape_core::regeneration::essential_hitting;
use cpshape_core::stats::{wilson, Proportion, Z95};
use serde::Serialize;
use serde_json::json;

use super::{collect_conditioned, factory, finite, table, Artifacts, Check};
use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct SurviveRow {
    pub replica: u64,
    /// The contact process from `{0}` is alive at the survival horizon.
    pub alive: bool,
    pub extinction_time: Option<f64>,
    /// The weak process from `{0}` is alive at the survival horizon.
    pub weak_alive: bool,
    pub restart_k: u32,
    pub restart_u_k: f64,
    pub restart_censored: bool,
    /// `K(x)` on surviving replicas; empty when censored or not alive.
    pub k_x: Option<u32>,
    pub t_x: Option<f64>,
    pub sigma_x: Option<f64>,
    pub k_x_censored: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailRow {
    pub n: u32,
    /// `(1 − ρ̂)^n`.
    pub bound: f64,
    /// `P(K(x) > n)` on surviving replicas, censored traces counted as
    /// exceeding every `n`.
    pub k_x_tail: f64,
    pub k_x_se: f64,
    pub k_x_pass: bool,
    /// `P(K ≥ n)` for the restart count on surviving replicas.
    pub restart_tail: f64,
    pub restart_se: f64,
    pub restart_pass: bool,
    /// `P(K ≥ n)` for the restart count on all replicas.
    pub restart_tail_all: f64,
}

fn tail(count: usize, total: usize) -> (f64, f64) {
    let p = count as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let f = factory(cfg)?;
    let h = cfg.survival_horizon;
    let x = cfg.site_list()[0];
    let rows = collect_conditioned(
        cfg.replicas,
        cfg.max_attempts(),
        |i| {
            let rep = f.replica(i)?;
            let view = rep.real.view();
            let r = restart_sequence(&view, &rep.env, h)?;
            let alive = r.strong_extinction == NEVER;
            let mut row = SurviveRow {
                replica: i,
                alive,
                extinction_time: finite(r.strong_extinction),
                weak_alive: r.k == 0 && r.survived,
                restart_k: r.k,
                restart_u_k: r.u_k(),
                restart_censored: r.censored,
                k_x: None,
                t_x: None,
                sigma_x: None,
                k_x_censored: false,
            };
            if alive {
                let tr = essential_hitting(&view, &rep.env, x, h)?;
                row.k_x = tr.k;
                row.t_x = finite(tr.t);
                row.sigma_x = finite(tr.sigma);
                row.k_x_censored = tr.censored;
            }
            Ok(row)
        },
        |r| r.alive,
    )?;

    let draws = rows.len();
    let weak = rows.iter().filter(|r| r.weak_alive).count();
    let rho: Proportion = wilson(weak as u64, draws as u64, Z95);
    let rho_hat = rho.lo;
    let alive: Vec<&SurviveRow> = rows.iter().filter(|r| r.alive).collect();
    let acceptance = wilson(alive.len() as u64, draws as u64, Z95);
    let censored = alive.iter().filter(|r| r.k_x_censored).count();

    let mut tails = Vec::new();
    if !alive.is_empty() {
        for n in 0..=cfg.params.tail_max_n {
            let bound = (1.0 - rho_hat).powi(n as i32);
            let kx = alive.iter().filter(|r| r.k_x_censored || r.k_x.is_some_and(|k| k > n)).count();
            let (k_x_tail, k_x_se) = tail(kx, alive.len());
            let rk = alive.iter().filter(|r| r.restart_k >= n).count();
            let (restart_tail, restart_se) = tail(rk, alive.len());
            let all = rows.iter().filter(|r| r.restart_k >= n).count();
            tails.push(TailRow {
                n,
                bound,
                k_x_tail,
                k_x_se,
                k_x_pass: k_x_tail <= bound + 3.0 * k_x_se,
                restart_tail,
                restart_se,
                restart_pass: restart_tail <= bound + 3.0 * restart_se,
                restart_tail_all: all as f64 / draws as f64,
            });
        }
    }

    let enough = alive.len() as u64 >= cfg.replicas;
    let failing: Vec<String> = tails
        .iter()
        .filter(|t| !(t.k_x_pass && t.restart_pass))
        .map(|t| format!("n = {}: K(x) {:.4}, restart {:.4}, bound {:.4}", t.n, t.k_x_tail, t.restart_tail, t.bound))
        .collect();
    let checks = vec![Check::new(
        3,
        "restart tails below (1 - rho)^n + 3 se",
        enough && !tails.is_empty() && failing.is_empty(),
        format!(
            "{} surviving of {draws} draws, rho_hat = {rho_hat:.4}, {censored} censored K(x) counted as exceeding; {}",
            alive.len(),
            if failing.is_empty() { "all n within bound".to_string() } else { failing.join("; ") }
        ),
    )];
    let summary = json!({
        "x": x.coords(cfg.dim),
        "draws": draws,
        "surviving": alive.len(),
        "rho": rho,
        "rho_hat": rho_hat,
        "acceptance": acceptance,
        "acceptance_minus_rho": acceptance.estimate - rho.estimate,
        "k_x_censored": censored,
        "tails": tails,
        "checks": checks,
    });
    Ok(Artifacts {
        summary,
        data: vec![table("replicas.csv", &rows)?, table("tails.csv", &tails)?],
        checks,
    })
}
