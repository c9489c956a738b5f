//! The monotone coupling of a strong process (environment `λ`), a weak
//! homogeneous process (rate `λ_min`) and Richardson growth (the substrate
//! base rate), the restart sequence built on it, and estimates of the
//! uniform constants `ρ`, `M`, `c` and `α`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dynamics::{check_window, site_keys, thresholds, trajectory_from_log, Configuration, Trajectory, Transition};
use crate::engine::{Engine, LayerSpec, Schedule, Thinning, NEVER};
use crate::environment::{Environment, RateField};
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::replica::ReplicaFactory;
use crate::stats::{fit_tail, linear_fit, median, wilson, LinearFit, Proportion, TailFit, TailKind, Z95, Z99};
use crate::substrate::RealizationView;

/// Initial sets of the coupled triple; must satisfy
/// `weak ⊆ strong ⊆ richardson`.
#[derive(Clone, Debug, PartialEq)]
pub struct NestedInitial {
    pub weak: Configuration,
    pub strong: Configuration,
    pub richardson: Configuration,
}

impl NestedInitial {
    pub fn single(s: Site) -> Self {
        let c = Configuration::single(s);
        NestedInitial { weak: c.clone(), strong: c.clone(), richardson: c }
    }

    pub fn is_nested(&self) -> bool {
        self.weak.is_subset(&self.strong) && self.strong.is_subset(&self.richardson)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledTrajectories {
    pub strong: Trajectory,
    pub weak: Trajectory,
    pub richardson: Trajectory,
}

impl CoupledTrajectories {
    /// Replays the three logs together and checks
    /// `weak ⊆ strong ⊆ richardson` after every event time.
    pub fn nesting_holds(&self) -> bool {
        let mut all: Vec<(f64, u8, Site, Transition)> = Vec::new();
        for (tag, tr) in [(0u8, &self.weak), (1, &self.strong), (2, &self.richardson)] {
            all.extend(tr.events.iter().map(|e| (e.time, tag, e.site, e.kind)));
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut sets = [self.weak.initial.clone(), self.strong.initial.clone(), self.richardson.initial.clone()];
        let nested = |s: &[Configuration; 3]| s[0].is_subset(&s[1]) && s[1].is_subset(&s[2]);
        if !nested(&sets) {
            return false;
        }
        let mut i = 0;
        while i < all.len() {
            let t = all[i].0;
            while i < all.len() && all[i].0 == t {
                let (_, tag, site, kind) = all[i];
                let set = &mut sets[tag as usize].occupied;
                match kind {
                    Transition::Birth => set.insert(site),
                    Transition::Death => set.remove(&site),
                };
                i += 1;
            }
            if !nested(&sets) {
                return false;
            }
        }
        true
    }
}

fn weak_threshold(view: &RealizationView<'_>, env: &Environment) -> f64 {
    env.bounds().lambda_min / view.base().edge_rate()
}

fn coupled_specs(weak_th: f64) -> [LayerSpec; 3] {
    [
        LayerSpec { thinning: Thinning::Constant(weak_th), deaths: true, record: true },
        LayerSpec::contact(),
        LayerSpec { thinning: Thinning::Always, deaths: false, record: true },
    ]
}

/// Runs weak, strong and Richardson processes on the same events.
pub fn evolve_coupled(
    view: &RealizationView<'_>,
    env: &Environment,
    initial: &NestedInitial,
    t_end: f64,
) -> Result<CoupledTrajectories> {
    if !initial.is_nested() {
        return Err(Error::NotNested);
    }
    check_window(view, t_end)?;
    let th = thresholds(view, env)?;
    let w = site_keys(view, &initial.weak)?;
    let s = site_keys(view, &initial.strong)?;
    let r = site_keys(view, &initial.richardson)?;
    let start = view.time_offset();
    let end = view.abs_time(t_end);
    let specs = coupled_specs(weak_threshold(view, env));
    let mut engine = Engine::new(view.base(), &th, &specs, &[&w, &s, &r], start, end, Schedule::Front)?;
    engine.run();
    let layers = engine.into_layers();
    let tr = |i: usize, init: &Configuration| {
        let l = &layers[i];
        trajectory_from_log(view, init, l.log(), t_end, l.boundary_contacts() > 0, l.extinct_at())
    };
    Ok(CoupledTrajectories {
        weak: tr(0, &initial.weak),
        strong: tr(1, &initial.strong),
        richardson: tr(2, &initial.richardson),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    /// `u_0 = 0, u_1, ..., u_K`.
    pub u: Vec<f64>,
    /// `z_0 = 0, z_1, ..., z_K` (only while `ξ_{u_k}` is nonempty).
    pub z: Vec<Site>,
    pub k: u32,
    /// A weak launch was still alive at the horizon.
    pub survived: bool,
    /// The surviving weak launch had less than half the window left, so its
    /// survival is weakly resolved.
    pub censored: bool,
    /// Extinction time of the strong process, or [`NEVER`].
    pub strong_extinction: f64,
}

impl RestartOutcome {
    pub fn u_k(&self) -> f64 {
        self.u[self.k as usize]
    }
}

/// The restart sequence of the strong process from `{0}` against fresh
/// weak launches on the same events.
pub fn restart_sequence(view: &RealizationView<'_>, env: &Environment, t_end: f64) -> Result<RestartOutcome> {
    check_window(view, t_end)?;
    let th = thresholds(view, env)?;
    let real = view.base();
    let origin = view.site_key(Site::ORIGIN)?;
    let start = view.time_offset();
    let end = view.abs_time(t_end);
    let quiet = LayerSpec { record: false, ..LayerSpec::contact() };
    let mut strong = Engine::new(real, &th, &[quiet], &[&[origin]], start, end, Schedule::Front)?;
    let weak_spec = LayerSpec { thinning: Thinning::Constant(weak_threshold(view, env)), deaths: true, record: false };
    let mut weak = Engine::new(real, &th, &[weak_spec], &[&[]], start, end, Schedule::Front)?;
    let bbox = real.bbox();
    let off = view.space_offset();
    let mut u = vec![0.0];
    let mut z = vec![Site::ORIGIN];
    let mut zk = origin;
    let mut uk = start;
    loop {
        weak.reset(&[&[zk]], uk, end)?;
        weak.run_until_extinct();
        if weak.layer(0).count() > 0 {
            let k = (u.len() - 1) as u32;
            strong.run_until_extinct();
            let strong_extinction = strong.layer(0).extinct_at();
            let rel_ext = if strong_extinction == NEVER { NEVER } else { strong_extinction - start };
            return Ok(RestartOutcome {
                censored: end - uk < 0.5 * (end - start),
                u,
                z,
                k,
                survived: true,
                strong_extinction: rel_ext,
            });
        }
        uk = weak.layer(0).extinct_at();
        u.push(uk - start);
        strong.advance_to(uk);
        let least = strong.layer(0).occupied_sites().next();
        match least {
            None => {
                let k = (u.len() - 1) as u32;
                let ext = strong.layer(0).extinct_at();
                return Ok(RestartOutcome {
                    u,
                    z,
                    k,
                    survived: false,
                    censored: false,
                    strong_extinction: ext - start,
                });
            }
            Some(s) => {
                zk = s;
                z.push(bbox.site_at(s) - off);
            }
        }
    }
}

/// Whether the weak process from `{0}` is alive at `t_end`.
pub fn weak_survives(view: &RealizationView<'_>, env: &Environment, t_end: f64) -> Result<bool> {
    check_window(view, t_end)?;
    let th = thresholds(view, env)?;
    let origin = view.site_key(Site::ORIGIN)?;
    let spec = LayerSpec { thinning: Thinning::Constant(weak_threshold(view, env)), deaths: true, record: false };
    let mut e = Engine::new(view.base(), &th, &[spec], &[&[origin]], view.time_offset(), view.abs_time(t_end), Schedule::Front)?;
    e.run_until_extinct();
    Ok(e.layer(0).count() > 0)
}

/// Richardson growth from `{0}` up to `t_end` or its first attempt to
/// leave the box, whichever comes first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RichardsonRun {
    /// `sup over births (t, y) of (‖y‖∞ − s0) / t`.
    pub sup_ratio: f64,
    /// Time of the first boundary contact, or [`NEVER`].
    pub contact_time: f64,
    pub observed_until: f64,
}

pub fn richardson_speed(view: &RealizationView<'_>, env: &Environment, t_end: f64, s0: f64) -> Result<RichardsonRun> {
    check_window(view, t_end)?;
    let th = thresholds(view, env)?;
    let real = view.base();
    let origin = view.site_key(Site::ORIGIN)?;
    let start = view.time_offset();
    let spec = LayerSpec { thinning: Thinning::Always, deaths: false, record: false };
    let mut e = Engine::new(real, &th, &[spec], &[&[origin]], start, view.abs_time(t_end), Schedule::Front)?;
    let off = view.space_offset();
    let mut sup = f64::NEG_INFINITY;
    let mut contact = NEVER;
    while let Some(t) = e.step() {
        if e.layer(0).boundary_contacts() > 0 {
            contact = t - start;
            break;
        }
        for (_, c) in e.changes() {
            let y = real.bbox().site_at(c.site) - off;
            sup = sup.max((y.norm_inf() as f64 - s0) / (c.time - start));
        }
    }
    let observed_until = if contact == NEVER { t_end } else { contact };
    Ok(RichardsonRun { sup_ratio: sup, contact_time: contact, observed_until })
}

/// First-infection times of the strong process from `{0}` at the given
/// sites, and whether it is alive at `t_end`.
pub fn strong_hitting(view: &RealizationView<'_>, env: &Environment, sites: &[Site], t_end: f64) -> Result<(bool, Vec<f64>)> {
    let tr = crate::dynamics::evolve(view, env, &Configuration::single(Site::ORIGIN), t_end)?;
    let mut times = vec![NEVER; sites.len()];
    for e in tr.events.iter().filter(|e| e.kind == Transition::Birth) {
        for (j, s) in sites.iter().enumerate() {
            if *s == e.site && times[j] == NEVER {
                times[j] = e.time;
            }
        }
    }
    for (j, s) in sites.iter().enumerate() {
        if s.is_origin() {
            times[j] = 0.0;
        }
    }
    Ok((tr.is_alive(), times))
}

/// Whether Richardson growth from `{0}` has left `B_r` (sup norm) by time
/// `t`, for each radius in `radii`.
pub fn richardson_escaped(view: &RealizationView<'_>, env: &Environment, t: f64, radii: &[u32]) -> Result<Vec<bool>> {
    check_window(view, t)?;
    let th = thresholds(view, env)?;
    let real = view.base();
    let origin = view.site_key(Site::ORIGIN)?;
    let inner = (0..view.bbox().dim()).map(|a| view.space_offset().0[a].unsigned_abs()).max().unwrap_or(0);
    let room = real.bbox().side(0) / 2 - inner;
    if let Some(r) = radii.iter().find(|r| **r >= room) {
        return Err(Error::InvalidParameter(format!("radius {r} does not fit inside the box")));
    }
    let spec = LayerSpec { thinning: Thinning::Always, deaths: false, record: true };
    let mut e = Engine::new(real, &th, &[spec], &[&[origin]], view.time_offset(), view.abs_time(t), Schedule::Front)?;
    e.run();
    let off = view.space_offset();
    let reach = e.layer(0).log().iter().map(|c| (real.bbox().site_at(c.site) - off).norm_inf()).max().unwrap_or(0);
    Ok(radii.iter().map(|r| reach > *r as i64).collect())
}

/// What one replica contributes to [`EstimatedConstants`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsRecord {
    pub weak_alive: bool,
    pub strong_alive: bool,
    pub richardson: RichardsonRun,
    /// `t(y)` at the probe sites, in order.
    pub hit_times: Vec<f64>,
    pub restart: RestartOutcome,
}

/// Measurements behind the constants for one replica. `probe_norms` are
/// the distances `k` of the probe sites `k·e_1`.
pub fn constants_record(
    view: &RealizationView<'_>,
    env: &Environment,
    t_end: f64,
    s0: f64,
    probe_norms: &[i32],
) -> Result<ConstantsRecord> {
    let probes: Vec<Site> = probe_norms.iter().map(|k| Site::unit(0, *k)).collect();
    let (strong_alive, hit_times) = strong_hitting(view, env, &probes, t_end)?;
    Ok(ConstantsRecord {
        weak_alive: weak_survives(view, env, t_end)?,
        strong_alive,
        richardson: richardson_speed(view, env, t_end, s0)?,
        hit_times,
        restart: restart_sequence(view, env, t_end)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatedConstants {
    /// Wilson 95% lower bound on `P(weak alive at T)`.
    pub rho_hat: f64,
    pub rho: Proportion,
    /// The 99% Wilson interval of the weak survival frequency reaches 0.
    pub subcritical_warning: bool,
    pub m_hat: f64,
    /// Order-statistic 95% interval for `m_hat`.
    pub m_ci: (f64, f64),
    pub s0: f64,
    pub containment_level: f64,
    pub c_hat: f64,
    pub c_ci: (f64, f64),
    pub c_fit: Option<LinearFit>,
    pub alpha_hat: f64,
    pub alpha_ci: (f64, f64),
    pub alpha_fit: Option<TailFit>,
    pub replicas: usize,
}

/// Offset of the linear growth envelope `B_{Mt + s0}`.
pub const DEFAULT_S0: f64 = 5.0;
/// Fraction of runs that must stay inside the envelope.
pub const CONTAINMENT_LEVEL: f64 = 0.99;

/// Smallest `M` with `η_t ⊆ B_{Mt+s0}` on at least `level` of the runs,
/// with a 95% distribution-free interval from order statistics.
pub fn containment_quantile(sups: &[f64], level: f64) -> (f64, (f64, f64)) {
    let mut v = sups.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return (f64::NAN, (f64::NAN, f64::NAN));
    }
    let idx = |r: f64| (libm::ceil(r) as usize).clamp(1, n) - 1;
    let centre = v[idx(level * n as f64)];
    let half = Z95 * libm::sqrt(n as f64 * level * (1.0 - level));
    (centre, (v[idx(level * n as f64 - half)], v[idx(level * n as f64 + half + 1.0)]))
}

/// Combines per-replica records; the result does not depend on record
/// order beyond the order of `probe_norms`.
pub fn aggregate_constants(records: &[ConstantsRecord], probe_norms: &[i32], s0: f64) -> Result<EstimatedConstants> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no replicas".into()));
    }
    let n = records.len() as u64;
    let alive = records.iter().filter(|r| r.weak_alive).count() as u64;
    let rho = wilson(alive, n, Z95);
    let rho99 = wilson(alive, n, Z99);
    let sups: Vec<f64> = records.iter().map(|r| r.richardson.sup_ratio).collect();
    let (m_hat, m_ci) = containment_quantile(&sups, CONTAINMENT_LEVEL);

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (j, k) in probe_norms.iter().enumerate() {
        let ts: Vec<f64> = records
            .iter()
            .filter(|r| r.strong_alive)
            .map(|r| r.hit_times[j])
            .filter(|t| *t != NEVER)
            .collect();
        if ts.len() >= 2 {
            xs.push(*k as f64);
            ys.push(median(&ts));
        }
    }
    let c_fit = linear_fit(&xs, &ys).ok();
    let (c_hat, c_ci) = match c_fit {
        Some(f) if f.slope > 0.0 => {
            let lo = f.slope + Z95 * f.slope_se;
            let hi = (f.slope - Z95 * f.slope_se).max(0.0);
            (1.0 / f.slope, (1.0 / lo, if hi > 0.0 { 1.0 / hi } else { f64::INFINITY }))
        }
        _ => (f64::NAN, (f64::NAN, f64::NAN)),
    };

    let uk: Vec<f64> = records.iter().map(|r| r.restart.u_k()).collect();
    let alpha_fit = fit_tail(&uk, TailKind::Exponential).ok();
    let (alpha_hat, alpha_ci) = match alpha_fit {
        Some(f) => {
            (-f.slope, (-f.slope - Z95 * f.slope_se, -f.slope + Z95 * f.slope_se))
        }
        None => (f64::NAN, (f64::NAN, f64::NAN)),
    };
    Ok(EstimatedConstants {
        rho_hat: rho.lo,
        rho,
        subcritical_warning: rho99.lo <= 0.0,
        m_hat,
        m_ci,
        s0,
        containment_level: CONTAINMENT_LEVEL,
        c_hat,
        c_ci,
        c_fit,
        alpha_hat,
        alpha_ci,
        alpha_fit,
        replicas: records.len(),
    })
}

/// Sequential campaign: replica `i` of `factory` for `i < replicas`.
pub fn estimate_constants<L: RateField>(
    factory: &ReplicaFactory<L>,
    replicas: u64,
    probe_norms: &[i32],
) -> Result<EstimatedConstants> {
    if replicas < 1000 {
        return Err(Error::InvalidParameter(format!("{replicas} replicas, need at least 1000")));
    }
    let t = factory.horizon();
    let mut records = Vec::with_capacity(replicas as usize);
    for i in 0..replicas {
        let r = factory.replica(i)?;
        records.push(constants_record(&r.real.view(), &r.env, t, DEFAULT_S0, probe_norms)?);
    }
    aggregate_constants(&records, probe_norms, DEFAULT_S0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvironmentLaw, Marginal, RateBounds};
    use crate::substrate::GraphicalRealization;

    fn iid_env(dim: usize, radius: u32, seed: u64) -> Environment {
        let law = EnvironmentLaw::Iid { bounds: RateBounds::new(1.5, 3.0).unwrap(), marginal: Marginal::Uniform { low: 1.5, high: 3.0 } };
        sample_environment(&law, seed, dim, radius).unwrap()
    }

    #[test]
    fn nesting_on_random_runs() {
        for seed in 0..30 {
            let env = iid_env(2, 6, seed);
            let real = GraphicalRealization::new(2, 6, 4.0, seed, 3.0).unwrap();
            let c = evolve_coupled(&real.view(), &env, &NestedInitial::single(Site::ORIGIN), 4.0).unwrap();
            assert!(c.nesting_holds());
            assert!(c.richardson.events.iter().all(|e| e.kind == Transition::Birth));
        }
    }

    #[test]
    fn rejects_non_nested() {
        let env = iid_env(1, 4, 0);
        let real = GraphicalRealization::new(1, 4, 2.0, 0, 3.0).unwrap();
        let mut init = NestedInitial::single(Site::ORIGIN);
        init.weak = Configuration::single(Site::from_slice(&[1]));
        assert!(matches!(evolve_coupled(&real.view(), &env, &init, 1.0), Err(Error::NotNested)));
    }

    #[test]
    fn constant_min_rate_makes_weak_equal_strong() {
        let env = sample_environment(&EnvironmentLaw::constant(2.0), 0, 1, 8).unwrap();
        let real = GraphicalRealization::new(1, 8, 5.0, 4, 2.0).unwrap();
        let c = evolve_coupled(&real.view(), &env, &NestedInitial::single(Site::ORIGIN), 5.0).unwrap();
        assert_eq!(c.weak.events, c.strong.events);
    }

    #[test]
    fn restart_ends_at_extinction_on_death_runs() {
        let mut deaths = 0;
        for seed in 0..60 {
            let env = iid_env(1, 30, seed);
            let real = GraphicalRealization::new(1, 30, 20.0, seed, 3.0).unwrap();
            let out = restart_sequence(&real.view(), &env, 20.0).unwrap();
            if !out.survived {
                deaths += 1;
                assert_eq!(out.u_k(), out.strong_extinction);
            }
            assert!(out.u.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(out.z[0], Site::ORIGIN);
        }
        assert!(deaths > 0);
    }

    #[test]
    fn containment_quantile_is_monotone() {
        let sups: Vec<f64> = (0..1000).map(|i| i as f64 / 100.0).collect();
        let (m, (lo, hi)) = containment_quantile(&sups, 0.99);
        assert_eq!(m, 9.89);
        assert!(lo <= m && m <= hi);
        let frac = |cand: f64| sups.iter().filter(|s| **s <= cand).count();
        assert!(frac(m) >= 990);
        assert!(frac(m - 0.01) < 990);
    }
}
