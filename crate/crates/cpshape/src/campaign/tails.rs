//! Tails of finite extinction times and of subadditivity defects.

use cpshape_core::dynamics::{evolve, Configuration};
use cpshape_core::lattice::Site;
use cpshape_core::regeneration::defect_sample;
use cpshape_core::stats::{fit_tail, TailFit, TailKind};
use serde::Serialize;
use serde_json::json;

use super::{factory, finite, par_map, table, Artifacts, Check};
use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct TailsRow {
    pub replica: u64,
    /// Extinction time of the contact process from `{0}`, empty when it is
    /// alive at the survival horizon.
    pub extinction_time: Option<f64>,
    /// `r(x, y)`, on surviving replicas with uncensored traces.
    pub defect: Option<f64>,
    pub sigma_xy: Option<f64>,
    pub sigma_x: Option<f64>,
    pub sigma_y_shifted: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitRow {
    pub quantity: &'static str,
    pub kind: TailKind,
    pub samples: usize,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub residual: Option<f64>,
    pub r_squared: Option<f64>,
}

fn fit_row(quantity: &'static str, kind: TailKind, samples: &[f64]) -> (FitRow, Option<TailFit>) {
    let fit = fit_tail(samples, kind).ok();
    (
        FitRow {
            quantity,
            kind,
            samples: samples.len(),
            slope: fit.map(|f| f.slope),
            intercept: fit.map(|f| f.intercept),
            residual: fit.map(|f| f.residual),
            r_squared: fit.map(|f| f.r_squared),
        },
        fit,
    )
}

pub fn run(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let f = factory(cfg)?;
    let h = cfg.survival_horizon;
    let sites = cfg.site_list();
    let (x, y) = (sites[0], sites[1]);
    let rows = par_map(cfg.replicas, |i| {
        let rep = f.replica(i)?;
        let view = rep.real.view();
        let tr = evolve(&view, &rep.env, &Configuration::single(Site::ORIGIN), h)?;
        let mut row = TailsRow {
            replica: i,
            extinction_time: finite(tr.extinction_time),
            defect: None,
            sigma_xy: None,
            sigma_x: None,
            sigma_y_shifted: None,
        };
        if tr.is_alive() {
            let d = defect_sample(&view, &rep.env, x, y, h)?;
            row.defect = d.r;
            row.sigma_xy = finite(d.sigma_xy);
            row.sigma_x = finite(d.sigma_x);
            row.sigma_y_shifted = finite(d.sigma_y_shifted);
        }
        Ok(row)
    })?;

    let extinctions: Vec<f64> = rows.iter().filter_map(|r| r.extinction_time).collect();
    let defects: Vec<f64> = rows.iter().filter_map(|r| r.defect).collect();
    let (ext_exp, ext_fit) = fit_row("extinction_time", TailKind::Exponential, &extinctions);
    let (ext_str, _) = fit_row("extinction_time", TailKind::Stretched, &extinctions);
    let (def_exp, _) = fit_row("defect", TailKind::Exponential, &defects);
    let (def_str, _) = fit_row("defect", TailKind::Stretched, &defects);
    let positive = defects.iter().filter(|r| **r > 0.0).count();
    let checks = vec![Check::new(
        9,
        "finite extinction times have an exponential tail",
        ext_fit.is_some_and(|f| f.slope < 0.0 && f.r_squared > 0.9),
        match ext_fit {
            Some(f) => format!("{} samples, slope {:.4}, R^2 {:.4}", extinctions.len(), f.slope, f.r_squared),
            None => format!("{} samples, no fit", extinctions.len()),
        },
    )];
    let fits = vec![ext_exp, ext_str, def_exp, def_str];
    let summary = json!({
        "x": x.coords(cfg.dim),
        "y": y.coords(cfg.dim),
        "replicas": rows.len(),
        "finite_extinctions": extinctions.len(),
        "defect_samples": defects.len(),
        "positive_defects": positive,
        "fits": fits,
        "checks": checks,
    });
    Ok(Artifacts { summary, data: vec![table("replicas.csv", &rows)?, table("fits.csv", &fits)?], checks })
}
