//! `σ(x) − t(x)` gaps and the law of `σ` along the `θ̃` chain.

use cpshape_core::lattice::Site;
use cpshape_core::regeneration::{SigmaChain, SigmaSetup};
use cpshape_core::stats::{ks_two_sample, linear_fit, normal_ci, permutation_correlation, wilson, MeanEstimate, TestResult, Z95};
use serde::Serialize;
use serde_json::json;

use super::{collect_conditioned, factory, finite, table, Artifacts, Check, DrawRow};
use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct GapRow {
    pub replica: u64,
    pub norm: i64,
    pub t: Option<f64>,
    pub sigma: Option<f64>,
    pub k: Option<u32>,
    pub censored: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainRow {
    pub replica: u64,
    /// `j` in `σ(x) ∘ θ̃_x^j`.
    pub step: u32,
    pub sigma: Option<f64>,
    pub censored: bool,
}

struct Record {
    replica: u64,
    alive: bool,
    gaps: Vec<GapRow>,
    chain: Vec<ChainRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapPoint {
    pub norm: i64,
    /// `(σ − t) / ‖x‖` over uncensored surviving replicas.
    pub scaled: MeanEstimate,
    /// `σ − t`.
    pub gap: MeanEstimate,
    pub censored: usize,
}

fn record(f: &super::Factory, cfg: &ExperimentConfig, i: u64, sites: &[Site], step: Site) -> Result<Record> {
    let rep = f.replica(i)?;
    let view = rep.real.view();
    let mut setup = SigmaSetup::new(&view, &rep.env, cfg.survival_horizon, true)?;
    let mut chain = SigmaChain::new(view, &mut setup, step)?;
    if !chain.root_alive() {
        return Ok(Record { replica: i, alive: false, gaps: Vec::new(), chain: Vec::new() });
    }
    let mut gaps = Vec::with_capacity(sites.len());
    for y in sites {
        let tr = chain.sigma(*y)?;
        gaps.push(GapRow { replica: i, norm: y.norm_inf(), t: finite(tr.t), sigma: finite(tr.sigma), k: tr.k, censored: tr.censored });
    }
    let mut rows = Vec::new();
    for j in 0..=cfg.params.chain_length {
        let tr = chain.advance()?;
        rows.push(ChainRow { replica: i, step: j, sigma: finite(tr.sigma), censored: tr.censored });
        if tr.censored {
            break;
        }
    }
    Ok(Record { replica: i, alive: true, gaps, chain: rows })
}

fn describe_test(t: Option<&TestResult>) -> String {
    match t {
        Some(t) => format!("statistic {:.4}, p = {:.4}{}", t.statistic, t.p_value, if t.exact { " (exact)" } else { "" }),
        None => "test not computable".into(),
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let f = factory(cfg)?;
    let sites = cfg.site_list();
    let step = Site::from_slice(&cfg.params.chain_step);
    let records = collect_conditioned(cfg.replicas, cfg.max_attempts(), |i| record(&f, cfg, i, &sites, step), |r| r.alive)?;
    let draws = records.len();
    let alive: Vec<&Record> = records.iter().filter(|r| r.alive).collect();
    let acceptance = wilson(alive.len() as u64, draws as u64, Z95);
    let mut checks = Vec::new();

    // gaps
    let mut points = Vec::new();
    for (j, y) in sites.iter().enumerate() {
        let norm = y.norm_inf();
        let rows: Vec<&GapRow> = alive.iter().map(|r| &r.gaps[j]).collect();
        let gaps: Vec<f64> = rows.iter().filter(|g| !g.censored).filter_map(|g| Some(g.sigma? - g.t?)).collect();
        let censored = rows.len() - gaps.len();
        let scaled: Vec<f64> = gaps.iter().map(|g| g / norm as f64).collect();
        if let (Ok(s), Ok(g)) = (normal_ci(&scaled, Z95), normal_ci(&gaps, Z95)) {
            points.push(GapPoint { norm, scaled: s, gap: g, censored });
        }
    }
    points.sort_by_key(|p| p.norm);
    let nonincreasing = points.len() == sites.len()
        && points.windows(2).all(|w| w[1].scaled.mean <= w[0].scaled.mean + Z95 * (w[0].scaled.se.powi(2) + w[1].scaled.se.powi(2)).sqrt());
    let means: Vec<f64> = points.iter().map(|p| p.gap.mean).collect();
    let log_x: Vec<f64> = points.iter().map(|p| (1.0 + p.norm as f64).ln()).collect();
    let lin_x: Vec<f64> = points.iter().map(|p| p.norm as f64).collect();
    let log_fit = linear_fit(&log_x, &means).ok();
    let lin_fit = linear_fit(&lin_x, &means).ok();
    let fit_ok = match (&log_fit, &lin_fit) {
        (Some(a), Some(b)) => a.slope >= 0.0 && a.residual < b.residual,
        _ => false,
    };
    let enough = alive.len() as u64 >= cfg.replicas;
    checks.push(Check::new(
        4,
        "scaled gap nonincreasing in |x|",
        enough && nonincreasing,
        points.iter().map(|p| format!("|x| = {}: {:.4} ± {:.4}", p.norm, p.scaled.mean, Z95 * p.scaled.se)).collect::<Vec<_>>().join(", "),
    ));
    checks.push(Check::new(
        4,
        "mean gap fits ln(1+|x|) better than |x|",
        enough && fit_ok,
        match (&log_fit, &lin_fit) {
            (Some(a), Some(b)) => format!(
                "mean gaps {}; ln(1+|x|) fit slope {:.3e}, residual {:.4e}; |x| fit slope {:.3e}, residual {:.4e}",
                points.iter().map(|p| format!("{:.4}", p.gap.mean)).collect::<Vec<_>>().join(", "),
                a.slope,
                a.residual,
                b.slope,
                b.residual
            ),
            _ => "not enough sites for a fit".into(),
        },
    ));

    // chain law
    let full: Vec<Vec<f64>> = alive
        .iter()
        .filter(|r| r.chain.len() == cfg.params.chain_length as usize + 1 && r.chain.iter().all(|c| !c.censored))
        .map(|r| r.chain.iter().map(|c| c.sigma.unwrap_or(f64::NAN)).collect())
        .collect();
    let incomplete = alive.len() - full.len();
    // fresh samples from even positions, shifted ones from odd positions,
    // so the two samples come from disjoint replicas
    let fresh: Vec<f64> = full.iter().step_by(2).map(|c| c[0]).collect();
    let shifted: Vec<f64> = full.iter().skip(1).step_by(2).map(|c| c[1]).collect();
    let ks = ks_two_sample(&fresh, &shifted).ok();
    let columns: Vec<Vec<f64>> = (0..=cfg.params.chain_length as usize).map(|j| full.iter().map(|c| c[j]).collect()).collect();
    let perm = permutation_correlation(&columns, cfg.params.permutations, cfg.master_seed).ok();
    checks.push(Check::new(
        8,
        "KS fresh sigma vs sigma after one shift",
        enough && ks.is_some_and(|t| t.p_value > 0.01),
        format!("{} vs {} samples, {}", fresh.len(), shifted.len(), describe_test(ks.as_ref())),
    ));
    checks.push(Check::new(
        8,
        "permutation correlation along the chain",
        enough && perm.is_some_and(|t| t.p_value > 0.01),
        format!("{} chains of length {}, {} incomplete, {}", full.len(), cfg.params.chain_length + 1, incomplete, describe_test(perm.as_ref())),
    ));

    let column_means: Vec<Option<MeanEstimate>> = columns.iter().map(|c| normal_ci(c, Z95).ok()).collect();
    let summary = json!({
        "draws": draws,
        "surviving": alive.len(),
        "acceptance": acceptance,
        "gaps": points,
        "log_fit": log_fit,
        "linear_fit": lin_fit,
        "chain_step": step.coords(cfg.dim),
        "chain_complete": full.len(),
        "chain_incomplete": incomplete,
        "chain_column_means": column_means,
        "ks": ks,
        "permutation": perm,
        "checks": checks,
    });
    let gap_rows: Vec<&GapRow> = alive.iter().flat_map(|r| &r.gaps).collect();
    let chain_rows: Vec<&ChainRow> = alive.iter().flat_map(|r| &r.chain).collect();
    let draws_rows: Vec<DrawRow> = records.iter().map(|r| DrawRow { replica: r.replica, alive: r.alive }).collect();
    Ok(Artifacts {
        summary,
        data: vec![table("draws.csv", &draws_rows)?, table("gaps.csv", &gap_rows)?, table("chain.csv", &chain_rows)?],
        checks,
    })
}
