//! The almost-subadditive ergodic harness on two synthetic processes and
//! on the `σ` chain.

use cpshape_core::lattice::Site;
use cpshape_core::rng::combine;
use cpshape_core::subadditive::{
    harness_report, AdditiveProcess, HarnessPlan, HarnessReport, NoisyLinearProcess, SigmaChainProcess, SubadditiveProcess,
};
use serde::Serialize;
use serde_json::json;

use super::{factory, par_map, table, Artifacts, Check};
use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRow {
    pub process: String,
    pub n: u32,
    pub mean: f64,
    pub se: f64,
    pub spread: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AlignmentRow {
    pub process: String,
    pub n: u32,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentRow {
    pub process: String,
    pub p: u32,
    pub moment: f64,
    pub se: f64,
    pub budget: f64,
    pub within_budget: bool,
}

fn harness<P: SubadditiveProcess>(process: &P, plan: &HarnessPlan, replicas: u64) -> Result<HarnessReport> {
    let samples = par_map(replicas, |i| Ok(process.sample(i, plan)?))?;
    let rejected = samples.iter().filter(|s| s.is_none()).count();
    let accepted: Vec<_> = samples.into_iter().flatten().collect();
    Ok(harness_report(process, plan, &accepted, rejected)?)
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p = &cfg.params;
    let synthetic_plan =
        HarnessPlan { ns: p.harness_ns.clone(), ks: p.align_ks.clone(), align_ns: p.align_ns.clone(), defect_pairs: p.defect_pairs.clone() };
    let chain_plan = HarnessPlan { ns: p.chain_ns.clone(), ..synthetic_plan.clone() };

    let (low, high) = p.additive_support;
    let additive = AdditiveProcess { low, high, seed: combine(cfg.master_seed, 1) };
    let additive_report = harness(&additive, &synthetic_plan, p.aux_replicas)?;
    let noisy = NoisyLinearProcess { amplitude: p.noise_amplitude, seed: combine(cfg.master_seed, 2) };
    let noisy_report = harness(&noisy, &synthetic_plan, p.aux_replicas)?;
    let x = Site::from_slice(&cfg.sites[0]);
    let sigma = SigmaChainProcess { factory: factory(cfg)?, x, survival_horizon: cfg.survival_horizon };
    let sigma_report = harness(&sigma, &chain_plan, cfg.replicas)?;

    let analytic = (low + high) / 2.0;
    let rel_error = (additive_report.limit.mean - analytic).abs() / analytic.abs();
    let n_max = p.harness_ns.iter().max().copied().unwrap_or(0);
    let checks = vec![
        Check::new(
            7,
            "additive process recovers its limit within 1%",
            rel_error <= 0.01,
            format!("f_n/n at n = {n_max}: {:.6}, limit {analytic}, relative error {rel_error:.2e}", additive_report.limit.mean),
        ),
        Check::new(
            7,
            "sigma-chain alignment quantity decreases in n",
            sigma_report.alignment_decreasing,
            format!(
                "{} accepted, {} rejected; {}",
                sigma_report.accepted,
                sigma_report.rejected,
                sigma_report
                    .alignment
                    .iter()
                    .map(|a| format!("n = {}: {:.4} ± {:.4}", a.n, a.value.mean, 1.96 * a.value.se))
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        ),
    ];

    let reports = [&additive_report, &noisy_report, &sigma_report];
    let trajectory: Vec<TrajectoryRow> = reports
        .iter()
        .flat_map(|r| {
            r.trajectory.iter().map(|t| TrajectoryRow {
                process: r.process.clone(),
                n: t.n,
                mean: t.ratio.mean,
                se: t.ratio.se,
                spread: t.spread,
            })
        })
        .collect();
    let alignment: Vec<AlignmentRow> = reports
        .iter()
        .flat_map(|r| r.alignment.iter().map(|a| AlignmentRow { process: r.process.clone(), n: a.n, mean: a.value.mean, se: a.value.se }))
        .collect();
    let moments: Vec<MomentRow> = reports
        .iter()
        .flat_map(|r| {
            r.h3.moments.iter().map(|m| MomentRow {
                process: r.process.clone(),
                p: m.p,
                moment: m.moment.mean,
                se: m.moment.se,
                budget: m.budget,
                within_budget: m.within_budget,
            })
        })
        .collect();
    let summary = json!({
        "additive": additive_report,
        "additive_limit": analytic,
        "noisy_linear": noisy_report,
        "sigma_chain": sigma_report,
        "chain_step": x.coords(cfg.dim),
        "checks": checks,
    });
    Ok(Artifacts {
        summary,
        data: vec![table("trajectory.csv", &trajectory)?, table("alignment.csv", &alignment)?, table("moments.csv", &moments)?],
        checks,
    })
}
