//! Essential hitting times `σ(x)` through the restart recursion, the
//! shifted system `θ̃_x`, and the defect and gap measurements built on them.
//!
//! "Survives forever" is replaced by "alive at the survival end", an
//! absolute time shared by every computation on one realization. All the
//! restart questions of a run are then answered by a single backward dual
//! sweep, and only restarts that die need a forward sub-simulation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dynamics::{check_window, thresholds};
use crate::engine::{DualSurvival, Engine, EventCache, LayerSpec, OccupancyHistory, RawChange, Schedule, NEVER};
use crate::environment::{shift_environment, Environment};
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::substrate::{GraphicalRealization, RealizationView};

/// The `u_k / v_k` recursion for one site, in the time frame of the view it
/// was computed on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub x: Site,
    /// `u_0 = 0, u_1 = t(x), ...`
    pub u: Vec<f64>,
    /// `v_0 = 0, v_1, ...`
    pub v: Vec<f64>,
    /// `K(x)`, absent when censored.
    pub k: Option<u32>,
    /// `σ(x) = u_K`, or [`NEVER`] when censored.
    pub sigma: f64,
    /// First-infection time `t(x)`, or [`NEVER`].
    pub t: f64,
    pub censored: bool,
    pub survival_horizon: f64,
}

impl RestartTrace {
    pub fn gap(&self) -> Option<f64> {
        (!self.censored).then_some(self.sigma - self.t)
    }
}

/// Occupancy history of a root process `ξ^{x}` started at some time, kept
/// in base indices and absolute times.
#[derive(Clone, Debug)]
pub struct RootRun {
    pub site: u32,
    pub start: f64,
    pub end: f64,
    pub history: OccupancyHistory,
    pub alive: bool,
    pub boundary_contacts: u64,
    pub first_contact: f64,
    pub extinct_at: f64,
}

impl RootRun {
    /// Root run rebuilt from a recorded log of `ξ^{site}` over `(start, end]`.
    pub fn from_log(site: u32, start: f64, end: f64, n_sites: usize, log: &[RawChange], first_contact: f64, extinct_at: f64) -> Self {
        let boundary_contacts = u64::from(first_contact != NEVER);
        RootRun {
            site,
            start,
            end,
            history: OccupancyHistory::from_log(n_sites, &[site], log, end),
            alive: extinct_at == NEVER,
            boundary_contacts,
            first_contact,
            extinct_at,
        }
    }
}

/// Restart machinery for one realization and one absolute survival end:
/// a survival oracle plus a reusable sub-simulation engine.
pub struct RestartSolver<'r> {
    real: &'r GraphicalRealization,
    th: &'r [f64],
    end: f64,
    dual: Option<DualSurvival>,
    probe: Engine<'r>,
}

impl<'r> RestartSolver<'r> {
    /// Answers survival questions by running each restart forward to `end`.
    pub fn forward(real: &'r GraphicalRealization, th: &'r [f64], end: f64) -> Result<Self> {
        let probe = Engine::new(real, th, &[LayerSpec { record: false, ..LayerSpec::contact() }], &[&[]], 0.0, end, Schedule::Front)?;
        Ok(RestartSolver { real, th, end, dual: None, probe })
    }

    /// Answers survival questions from a dual sweep ending at `dual.end()`.
    pub fn with_dual(real: &'r GraphicalRealization, th: &'r [f64], dual: DualSurvival) -> Result<Self> {
        let mut s = Self::forward(real, th, dual.end())?;
        s.dual = Some(dual);
        Ok(s)
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    /// Whether the process restarted from `site` at `u` is alive at the
    /// survival end, and its extinction time otherwise.
    pub fn restart(&mut self, site: u32, u: f64) -> Result<(bool, f64)> {
        if let Some(d) = &self.dual {
            if d.survives(site, u) {
                return Ok((true, NEVER));
            }
            self.probe.reset(&[&[site]], u, self.end)?;
            self.probe.run_until_extinct();
            let v = self.probe.layer(0).extinct_at();
            debug_assert!(v != NEVER);
            return Ok((false, v));
        }
        self.probe.reset(&[&[site]], u, self.end)?;
        self.probe.run();
        let layer = self.probe.layer(0);
        Ok((layer.count() > 0, layer.extinct_at()))
    }

    /// Forward run of `ξ^{site}` from `start` to the survival end.
    pub fn root(&self, site: u32, start: f64, cache: Option<&EventCache>) -> Result<RootRun> {
        let spec = [LayerSpec::contact()];
        let mut engine = match cache {
            Some(c) if c.start() == start && c.end() == self.end => Engine::with_cache(self.real, self.th, &spec, &[&[site]], c)?,
            _ => Engine::new(self.real, self.th, &spec, &[&[site]], start, self.end, Schedule::Sweep)?,
        };
        engine.run_until_extinct();
        let layer = engine.layer(0);
        let history = OccupancyHistory::from_log(self.real.topology().n_sites(), &[site], layer.log(), self.end);
        Ok(RootRun {
            site,
            start,
            end: self.end,
            history,
            alive: layer.count() > 0,
            boundary_contacts: layer.boundary_contacts(),
            first_contact: layer.first_contact(),
            extinct_at: layer.extinct_at(),
        })
    }

    /// The restart recursion for base site `x` against `root`, in absolute
    /// times.
    pub fn trace_abs(&mut self, root: &RootRun, x: u32) -> Result<AbsTrace> {
        self.trace_abs_until(root, x, NEVER)
    }

    /// As [`trace_abs`](Self::trace_abs), giving up (censored) as soon as
    /// some `u_k` exceeds `limit`, which already implies `σ(x) > limit`.
    pub fn trace_abs_until(&mut self, root: &RootRun, x: u32, limit: f64) -> Result<AbsTrace> {
        let first = root.history.first_hit(x, root.start);
        let mut tr = AbsTrace { u: vec![root.start], v: vec![root.start], k: None, sigma: NEVER, t: first };
        if first == NEVER {
            return Ok(tr);
        }
        let mut uk = first;
        loop {
            if uk > limit {
                return Ok(tr);
            }
            tr.u.push(uk);
            let (alive, v) = self.restart(x, uk)?;
            if alive {
                tr.k = Some((tr.u.len() - 1) as u32);
                tr.sigma = uk;
                return Ok(tr);
            }
            tr.v.push(v);
            match root.history.first_occupied_from(x, v) {
                Some(next) => uk = next,
                None => return Ok(tr),
            }
        }
    }
}

/// A restart recursion in base indices and absolute times.
#[derive(Clone, Debug, PartialEq)]
pub struct AbsTrace {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub k: Option<u32>,
    pub sigma: f64,
    pub t: f64,
}

impl AbsTrace {
    /// Re-expresses the trace relative to a view starting at `t0`.
    pub fn relative(&self, x: Site, t0: f64, survival_horizon: f64) -> RestartTrace {
        let rel = |s: f64| if s == NEVER { NEVER } else { s - t0 };
        RestartTrace {
            x,
            u: self.u.iter().map(|s| rel(*s)).collect(),
            v: self.v.iter().map(|s| rel(*s)).collect(),
            k: self.k,
            sigma: rel(self.sigma),
            t: rel(self.t),
            censored: self.k.is_none(),
            survival_horizon,
        }
    }
}

/// Everything needed to compute `σ` on one view: thresholds, an event
/// cache, a dual sweep and the root process from the view's origin.
pub struct SigmaSetup {
    th: Vec<f64>,
    dual: Option<DualSurvival>,
    cache: Option<EventCache>,
    start: f64,
    end: f64,
}

impl SigmaSetup {
    /// Prepares the window `(t0, t0 + survival_horizon]` of `view`. With
    /// `use_dual` false, restarts are answered by forward runs only.
    pub fn new(view: &RealizationView<'_>, env: &Environment, survival_horizon: f64, use_dual: bool) -> Result<Self> {
        check_window(view, survival_horizon)?;
        let th = thresholds(view, env)?;
        let start = view.time_offset();
        let end = view.abs_time(survival_horizon);
        let (dual, cache) = if use_dual {
            let cache = EventCache::build(view.base(), start, end)?;
            (Some(DualSurvival::from_cache(view.base(), &th, &cache)?), Some(cache))
        } else {
            (None, None)
        };
        Ok(SigmaSetup { th, dual, cache, start, end })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.th
    }

    pub fn solver<'r>(&'r mut self, real: &'r GraphicalRealization) -> Result<(RestartSolver<'r>, Option<&'r EventCache>)> {
        match self.dual.take() {
            Some(d) => Ok((RestartSolver::with_dual(real, &self.th, d)?, self.cache.as_ref())),
            None => Ok((RestartSolver::forward(real, &self.th, self.end)?, None)),
        }
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }
}

fn essential_hitting_with(
    view: &RealizationView<'_>,
    env: &Environment,
    x: Site,
    survival_horizon: f64,
    use_dual: bool,
) -> Result<RestartTrace> {
    let xi = view.site_key(x)?;
    let root_site = view.site_key(Site::ORIGIN)?;
    let mut setup = SigmaSetup::new(view, env, survival_horizon, use_dual)?;
    let t0 = setup.start();
    let real = view.base();
    let (mut solver, cache) = setup.solver(real)?;
    let root = solver.root(root_site, t0, cache)?;
    Ok(solver.trace_abs(&root, xi)?.relative(x, t0, survival_horizon))
}

/// `σ(x)` on `view`, with "survives" read as "alive at `survival_horizon`".
pub fn essential_hitting(view: &RealizationView<'_>, env: &Environment, x: Site, survival_horizon: f64) -> Result<RestartTrace> {
    essential_hitting_with(view, env, x, survival_horizon, true)
}

/// Same as [`essential_hitting`], running every restart forward instead of
/// reading the dual sweep. Slower; kept as a cross-check.
pub fn essential_hitting_forward(
    view: &RealizationView<'_>,
    env: &Environment,
    x: Site,
    survival_horizon: f64,
) -> Result<RestartTrace> {
    essential_hitting_with(view, env, x, survival_horizon, false)
}

/// `(T_x ∘ θ_{σ(x)} ω, T_x λ)`.
#[derive(Clone, Debug)]
pub struct ShiftedSystem<'a> {
    pub view: RealizationView<'a>,
    pub env: Environment,
}

pub fn tilde_shift<'a>(view: &RealizationView<'a>, env: &Environment, trace: &RestartTrace) -> Result<ShiftedSystem<'a>> {
    if trace.censored {
        return Err(Error::Censored(trace.x));
    }
    Ok(ShiftedSystem { view: view.space_shift(trace.x)?.time_shift(trace.sigma)?, env: shift_environment(env, trace.x)? })
}

/// Iterates `θ̃_x` along one realization. Every `σ` is computed against the
/// same absolute survival end, so one dual sweep answers all restarts.
pub struct SigmaChain<'r> {
    view: RealizationView<'r>,
    solver: RestartSolver<'r>,
    root: RootRun,
    x: Site,
    step: Site,
    elapsed: f64,
}

impl<'r> SigmaChain<'r> {
    /// Starts at the origin of `view`. The setup must have been built on
    /// the same view.
    pub fn new(view: RealizationView<'r>, setup: &'r mut SigmaSetup, step: Site) -> Result<Self> {
        let t0 = setup.start();
        let origin = view.site_key(Site::ORIGIN)?;
        let (solver, cache) = setup.solver(view.base())?;
        let root = solver.root(origin, t0, cache)?;
        Ok(SigmaChain { view, solver, root, x: Site::ORIGIN, step, elapsed: 0.0 })
    }

    /// Whether the process from the current chain point is alive at the
    /// survival end.
    pub fn root_alive(&self) -> bool {
        self.root.alive
    }

    pub fn root(&self) -> &RootRun {
        &self.root
    }

    /// `S_m(x)` for the number of steps taken so far.
    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    /// `σ(y)` on the current shifted system, for `y` in its coordinates.
    pub fn sigma(&mut self, y: Site) -> Result<RestartTrace> {
        let yi = self.view.site_key(self.x + y)?;
        let t0 = self.root.start;
        Ok(self.solver.trace_abs(&self.root, yi)?.relative(y, t0, self.solver.end() - t0))
    }

    /// Computes `σ(step)` on the current system and moves to
    /// `θ̃_{step}` of it. Returns the trace; on censoring the chain stays put.
    pub fn advance(&mut self) -> Result<RestartTrace> {
        let tr = self.sigma(self.step)?;
        if tr.censored {
            return Ok(tr);
        }
        let next = self.x + self.step;
        let start = self.root.start + tr.sigma;
        let site = self.view.site_key(next)?;
        self.root = self.solver.root(site, start, None)?;
        self.x = next;
        self.elapsed += tr.sigma;
        Ok(tr)
    }

    /// The chain's current system as a view and environment.
    pub fn shifted(&self, env: &Environment) -> Result<ShiftedSystem<'r>> {
        Ok(ShiftedSystem {
            view: self.view.space_shift(self.x)?.time_shift(self.elapsed)?,
            env: shift_environment(env, self.x)?,
        })
    }
}

/// `r(x, y) = max(0, σ(x+y) − σ(x) − σ(y)∘θ̃_x)` and its parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSample {
    pub x: Site,
    pub y: Site,
    /// `None` when any of the three traces is censored.
    pub r: Option<f64>,
    pub sigma_xy: f64,
    pub sigma_x: f64,
    pub sigma_y_shifted: f64,
}

pub fn defect_sample(view: &RealizationView<'_>, env: &Environment, x: Site, y: Site, horizon: f64) -> Result<DefectSample> {
    let mut setup = SigmaSetup::new(view, env, horizon, true)?;
    let mut chain = SigmaChain::new(*view, &mut setup, x)?;
    let xy = chain.sigma(x + y)?;
    let sx = chain.advance()?;
    let mut out = DefectSample { x, y, r: None, sigma_xy: xy.sigma, sigma_x: sx.sigma, sigma_y_shifted: NEVER };
    if sx.censored {
        return Ok(out);
    }
    let sy = chain.sigma(y)?;
    out.sigma_y_shifted = sy.sigma;
    if !xy.censored && !sy.censored {
        out.r = Some((xy.sigma - sx.sigma - sy.sigma).max(0.0));
    }
    Ok(out)
}

/// `(σ(x) − t(x), K(x))`.
pub fn gap_sample(view: &RealizationView<'_>, env: &Environment, x: Site, horizon: f64) -> Result<(f64, u32)> {
    let tr = essential_hitting(view, env, x, horizon)?;
    match (tr.gap(), tr.k) {
        (Some(g), Some(k)) => Ok((g, k)),
        _ => Err(Error::Censored(x)),
    }
}

/// Checks the defining recursion of a trace against an independent replay:
/// each `v_k` is the extinction time of a fresh forward run from `(x, u_k)`
/// and each `u_{k+1}` is the first occupation of `x` by `root` after `v_k`.
pub fn replay_trace(view: &RealizationView<'_>, env: &Environment, trace: &RestartTrace) -> Result<bool> {
    let th = thresholds(view, env)?;
    let t0 = view.time_offset();
    let end = t0 + trace.survival_horizon;
    let xi = view.site_key(trace.x)?;
    let origin = view.site_key(Site::ORIGIN)?;
    let real = view.base();
    let spec = [LayerSpec::contact()];
    let mut root = Engine::new(real, &th, &spec, &[&[origin]], t0, end, Schedule::Front)?;
    root.run();
    let hist = OccupancyHistory::from_log(real.topology().n_sites(), &[origin], root.layer(0).log(), end);
    if trace.u.first() != Some(&0.0) || trace.v.first() != Some(&0.0) {
        return Ok(false);
    }
    let first = hist.first_hit(xi, t0);
    if first == NEVER {
        return Ok(trace.censored && trace.u.len() == 1);
    }
    for k in 1..trace.u.len() {
        let uk = trace.u[k] + t0;
        let mut e = Engine::new(real, &th, &spec, &[&[xi]], uk, end, Schedule::Front)?;
        e.run();
        let alive = e.layer(0).count() > 0;
        let last = k + 1 == trace.u.len();
        if alive {
            return Ok(last && trace.k == Some(k as u32) && trace.sigma == trace.u[k]);
        }
        let vk = e.layer(0).extinct_at();
        if trace.v.get(k).map(|v| v + t0) != Some(vk) {
            return Ok(false);
        }
        let expected = hist.first_occupied_from(xi, vk);
        match trace.u.get(k + 1) {
            Some(next) if Some(next + t0) == expected => {}
            None if expected.is_none() => return Ok(trace.censored),
            _ => return Ok(false),
        }
    }
    Err(Error::Degenerate(format!("trace for {:?} has no restart", trace.x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvironmentLaw};

    fn setup(dim: usize, radius: u32, horizon: f64, seed: u64, rate: f64) -> (GraphicalRealization, Environment) {
        let real = GraphicalRealization::new(dim, radius, horizon, seed, rate).unwrap();
        let env = sample_environment(&EnvironmentLaw::constant(rate), 0, dim, radius).unwrap();
        (real, env)
    }

    #[test]
    fn origin_on_surviving_run() {
        for seed in 0..30 {
            let (real, env) = setup(1, 30, 20.0, seed, 3.0);
            let tr = essential_hitting(&real.view(), &env, Site::ORIGIN, 20.0).unwrap();
            if !tr.censored {
                assert_eq!(tr.k, Some(1));
                assert_eq!(tr.sigma, 0.0);
                assert_eq!(tr.u, alloc::vec![0.0, 0.0]);
            }
        }
    }

    #[test]
    fn dual_and_forward_agree() {
        for seed in 0..40 {
            let (real, env) = setup(1, 25, 15.0, seed, 2.5);
            for x in [3, -6, 10] {
                let x = Site::from_slice(&[x]);
                let a = essential_hitting(&real.view(), &env, x, 15.0).unwrap();
                let b = essential_hitting_forward(&real.view(), &env, x, 15.0).unwrap();
                assert_eq!(a, b);
                assert!(replay_trace(&real.view(), &env, &a).unwrap());
                if !a.censored {
                    assert!(a.sigma >= a.t);
                }
            }
        }
    }

    #[test]
    fn shifted_identity_and_composition() {
        for seed in 0..20 {
            let (real, env) = setup(1, 30, 20.0, seed, 3.0);
            let v = real.view();
            let tr = essential_hitting(&v, &env, Site::ORIGIN, 20.0).unwrap();
            if tr.censored {
                continue;
            }
            let s = tilde_shift(&v, &env, &tr).unwrap();
            assert_eq!(s.view, v);
            let x = Site::from_slice(&[2]);
            let tx = essential_hitting(&v, &env, x, 20.0).unwrap();
            if tx.censored {
                continue;
            }
            let s1 = tilde_shift(&v, &env, &tx).unwrap();
            assert_eq!(s1.view.space_offset(), x);
            assert_eq!(s1.view.time_offset(), tx.sigma);
            return;
        }
    }

    #[test]
    fn chain_matches_explicit_shift() {
        let mut checked = 0;
        for seed in 0..30 {
            let (real, env) = setup(1, 40, 30.0, seed, 3.0);
            let v = real.view();
            let x = Site::from_slice(&[3]);
            let mut s = SigmaSetup::new(&v, &env, 30.0, true).unwrap();
            let mut chain = SigmaChain::new(v, &mut s, x).unwrap();
            if !chain.root_alive() {
                continue;
            }
            let first = chain.advance().unwrap();
            if first.censored {
                continue;
            }
            let shifted = tilde_shift(&v, &env, &first).unwrap();
            let direct = essential_hitting(&shifted.view, &shifted.env, x, shifted.view.remaining()).unwrap();
            let via_chain = chain.sigma(x).unwrap();
            assert_eq!(direct.sigma, via_chain.sigma);
            assert_eq!(direct.k, via_chain.k);
            checked += 1;
        }
        assert!(checked > 5);
    }

    #[test]
    fn defect_trivial_cases() {
        for seed in 0..10 {
            let (real, env) = setup(1, 30, 30.0, seed, 3.0);
            let x = Site::from_slice(&[4]);
            let d = defect_sample(&real.view(), &env, x, Site::ORIGIN, 30.0).unwrap();
            if let Some(r) = d.r {
                assert_eq!(d.sigma_y_shifted, 0.0);
                assert_eq!(r, 0.0);
            }
            let d = defect_sample(&real.view(), &env, Site::ORIGIN, x, 30.0).unwrap();
            if let Some(r) = d.r {
                assert_eq!(r, 0.0);
            }
        }
    }
}
