//! Direction estimates of `μ`, the reconstructed unit ball and the shape
//! inclusions along one conditioned campaign.

use cpshape_core::coupling::{containment_quantile, richardson_speed, CONTAINMENT_LEVEL, DEFAULT_S0};
use cpshape_core::replica::ReplicaFactory;
use cpshape_core::rng::combine;
use cpshape_core::subadditive::{replica_margins, shape_record, shape_report, ShapePlan, ShapeRecord, UnitBall};
use cpshape_core::subadditive::{direction_estimate, norm_checks, DirectionEstimate, DirectionSample, MuSource};
use serde::Serialize;
use serde_json::json;

use super::{collect_conditioned, factory, finite, par_map, table, Artifacts, Check, DrawRow};
use crate::config::ExperimentConfig;
use crate::error::Result;

/// Seed stream of the growth-speed campaign.
const GROWTH_STREAM: u64 = 0x6772_6f77;
/// Population at which the front pre-check hands over to the full pipeline.
const PRECHECK_POPULATION: usize = 200;
/// `ε` and sample time of the inclusion acceptance statement.
const ACCEPT_EPSILON: f64 = 0.15;
const ACCEPT_RATE: f64 = 0.95;

#[derive(Clone, Debug, Serialize)]
pub struct GrowthRow {
    pub replica: u64,
    pub sup_ratio: f64,
    pub contact_time: Option<f64>,
    pub observed_until: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleRow {
    pub replica: u64,
    pub x1: i32,
    pub x2: i32,
    pub sigma: Option<f64>,
    pub t: Option<f64>,
    pub censored: bool,
    pub contaminated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateRow {
    pub x1: i32,
    pub x2: i32,
    pub n: u32,
    pub source: MuSource,
    pub mu_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub used: usize,
    pub censored_fraction: f64,
    pub contaminated_fraction: f64,
    pub degraded: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct NormRow {
    pub property: String,
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MarginRow {
    pub replica: u64,
    pub t: f64,
    pub contaminated: bool,
    pub inner_margin: f64,
    pub outer_margin: f64,
    pub chain_holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct InclusionCsvRow {
    pub t: f64,
    pub epsilon: f64,
    pub surviving: usize,
    pub eligible: usize,
    pub inner_pass: usize,
    pub outer_pass: usize,
    pub pass_rate: f64,
    pub pass_lo: f64,
    pub pass_hi: f64,
    pub box_restricted: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BallRow {
    pub angle: f64,
    pub radius: f64,
}

fn estimate_row(e: &DirectionEstimate) -> EstimateRow {
    EstimateRow {
        x1: e.x.0[0],
        x2: e.x.0[1],
        n: e.n_used,
        source: e.source,
        mu_hat: e.mu_hat,
        se: e.se,
        ci_lo: e.ci.0,
        ci_hi: e.ci.1,
        used: e.used,
        censored_fraction: e.censored_fraction,
        contaminated_fraction: e.contaminated_fraction,
        degraded: e.degraded,
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let p = &cfg.params;

    let growth_factory = ReplicaFactory::new(cfg.law.clone(), cfg.dim, p.aux_radius, p.aux_horizon, combine(cfg.master_seed, GROWTH_STREAM))?;
    let growth = par_map(p.aux_replicas, |i| {
        let rep = growth_factory.replica(i)?;
        let r = richardson_speed(&rep.real.view(), &rep.env, p.aux_horizon, DEFAULT_S0)?;
        Ok(GrowthRow { replica: i, sup_ratio: r.sup_ratio, contact_time: finite(r.contact_time), observed_until: r.observed_until })
    })?;
    let sups: Vec<f64> = growth.iter().map(|g| g.sup_ratio).collect();
    let (m_hat, m_ci) = containment_quantile(&sups, CONTAINMENT_LEVEL);

    let f = factory(cfg)?;
    let dirs = cfg.site_list();
    let n = p.direction_steps;
    let plan = ShapePlan {
        sample_times: cfg.sample_times.clone(),
        survival_horizon: cfg.survival_horizon,
        direction_sites: dirs.iter().map(|x| *x * n as i32).collect(),
        precheck_population: PRECHECK_POPULATION,
    };
    let records: Vec<(u64, ShapeRecord)> = collect_conditioned(
        cfg.replicas,
        cfg.max_attempts(),
        |i| {
            let rep = f.replica(i)?;
            Ok((i, shape_record(&rep.real.view(), &rep.env, &plan)?))
        },
        |r| r.1.root_alive,
    )?;
    let draws = records.len();
    let alive: Vec<&(u64, ShapeRecord)> = records.iter().filter(|r| r.1.root_alive).collect();
    let surviving = alive.len();

    let samples_at = |j: usize| -> Vec<DirectionSample> { alive.iter().map(|r| r.1.directions[j]).collect() };
    let mut sigma_est = Vec::new();
    let mut t_est = Vec::new();
    for (j, x) in dirs.iter().enumerate() {
        let s = samples_at(j);
        sigma_est.push(direction_estimate(*x, n, &s, MuSource::Sigma)?);
        t_est.push(direction_estimate(*x, n, &s, MuSource::T)?);
    }
    let norms = norm_checks(&sigma_est, m_hat);
    let min_used = sigma_est.iter().map(|e| e.used).min().unwrap_or(0);
    let norm_failures: Vec<String> = norms.iter().filter(|c| !c.holds).map(|c| format!("{} {}", format!("{:?}", c.property).to_lowercase(), c.label)).collect();
    let mut checks = vec![Check::new(
        5,
        "norm properties of mu_hat",
        min_used >= 500 && norm_failures.is_empty(),
        format!(
            "{} checks, {} failing{}; M_hat = {m_hat:.4}; at least {min_used} usable replicas per direction",
            norms.len(),
            norm_failures.len(),
            if norm_failures.is_empty() { String::new() } else { format!(" ({})", norm_failures.join(", ")) }
        ),
    )];

    let ball = UnitBall::from_estimates(&sigma_est, cfg.dim)?;
    let recs: Vec<ShapeRecord> = alive.iter().map(|r| r.1.clone()).collect();
    let margins = replica_margins(&recs, &ball, f.bbox());
    let report = shape_report(sigma_est.clone(), ball.clone(), &recs, &margins, &cfg.epsilons)?;

    let row_at = |t: f64| report.rows.iter().find(|r| r.t == t && r.epsilon == ACCEPT_EPSILON);
    let t_last = cfg.sample_times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let t_first = cfg.sample_times.iter().cloned().fold(f64::INFINITY, f64::min);
    let last = row_at(t_last);
    let first = row_at(t_first);
    let rate_ok = last.is_some_and(|r| r.eligible > 0 && r.pass_rate.estimate >= ACCEPT_RATE);
    let monotone = match (first, last) {
        (Some(a), Some(b)) => b.eligible > 0 && a.eligible > 0 && b.pass_rate.estimate >= a.pass_rate.estimate,
        _ => false,
    };
    let describe = |r: Option<&cpshape_core::subadditive::InclusionRow>| match r {
        Some(r) => format!(
            "t = {}: {}/{} eligible pass (inner {}, outer {}), box-restricted rate {:.3}",
            r.t,
            (r.pass_rate.estimate * r.eligible as f64).round(),
            r.eligible,
            r.inner_pass,
            r.outer_pass,
            r.box_restricted.estimate
        ),
        None => "no row".into(),
    };
    checks.push(Check::new(6, "inclusions at the last sample time", rate_ok && report.chain_holds, describe(last)));
    checks.push(Check::new(
        6,
        "pass rate does not drop from the first to the last sample time",
        monotone,
        format!("{}; {}", describe(first), describe(last)),
    ));

    let first_contacts: Vec<f64> = alive.iter().map(|r| r.1.first_contact).filter(|t| t.is_finite()).collect();
    let contact_median = if first_contacts.is_empty() { None } else { Some(cpshape_core::stats::median(&first_contacts)) };
    let summary = json!({
        "draws": draws,
        "surviving": surviving,
        "m_hat": m_hat,
        "m_ci": m_ci,
        "growth_replicas": growth.len(),
        "direction_steps": n,
        "sigma_estimates": sigma_est,
        "t_estimates": t_est,
        "norm_checks": norms,
        "ball": ball,
        "inclusions": report.rows,
        "chain_holds": report.chain_holds,
        "median_first_contact": contact_median,
        "checks": checks,
    });

    let draw_rows: Vec<DrawRow> = records.iter().map(|r| DrawRow { replica: r.0, alive: r.1.root_alive }).collect();
    let sample_rows: Vec<SampleRow> = alive
        .iter()
        .flat_map(|(i, r)| {
            dirs.iter().zip(&r.directions).map(move |(x, s)| SampleRow {
                replica: *i,
                x1: x.0[0],
                x2: x.0[1],
                sigma: finite(s.sigma),
                t: finite(s.t),
                censored: s.censored,
                contaminated: s.contaminated,
            })
        })
        .collect();
    let estimate_rows: Vec<EstimateRow> = sigma_est.iter().chain(&t_est).map(estimate_row).collect();
    let norm_rows: Vec<NormRow> = norms
        .iter()
        .map(|c| NormRow {
            property: format!("{:?}", c.property).to_lowercase(),
            label: c.label.clone(),
            lhs: c.lhs,
            rhs: c.rhs,
            slack: c.slack,
            holds: c.holds,
        })
        .collect();
    let margin_rows: Vec<MarginRow> = alive
        .iter()
        .zip(&margins)
        .flat_map(|((i, r), m)| {
            r.snapshots.iter().zip(m).map(move |(s, m)| MarginRow {
                replica: *i,
                t: s.t,
                contaminated: s.contaminated,
                inner_margin: m.inner_margin,
                outer_margin: m.outer_margin,
                chain_holds: s.chain_holds,
            })
        })
        .collect();
    let inclusion_rows: Vec<InclusionCsvRow> = report
        .rows
        .iter()
        .map(|r| InclusionCsvRow {
            t: r.t,
            epsilon: r.epsilon,
            surviving: r.surviving,
            eligible: r.eligible,
            inner_pass: r.inner_pass,
            outer_pass: r.outer_pass,
            pass_rate: r.pass_rate.estimate,
            pass_lo: r.pass_rate.lo,
            pass_hi: r.pass_rate.hi,
            box_restricted: r.box_restricted.estimate,
        })
        .collect();
    let ball_rows: Vec<BallRow> = ball.angles.iter().zip(&ball.radii).map(|(a, r)| BallRow { angle: *a, radius: *r }).collect();
    Ok(Artifacts {
        summary,
        data: vec![
            table("growth.csv", &growth)?,
            table("draws.csv", &draw_rows)?,
            table("direction_samples.csv", &sample_rows)?,
            table("estimates.csv", &estimate_rows)?,
            table("norm_checks.csv", &norm_rows)?,
            table("ball.csv", &ball_rows)?,
            table("margins.csv", &margin_rows)?,
            table("inclusions.csv", &inclusion_rows)?,
        ],
        checks,
    })
}
