//! The contact process `ξ^A_t` read off the graphical construction, its
//! hitting times and the coupled region.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EventCache, LayerSpec, RawChange, Schedule, NEVER};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{LatticeBox, Site};
use crate::substrate::{GraphicalRealization, RealizationView};

/// A finite set of occupied sites.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Configuration {
    pub occupied: BTreeSet<Site>,
}

impl Configuration {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(s: Site) -> Self {
        Configuration { occupied: [s].into_iter().collect() }
    }

    pub fn from_sites<I: IntoIterator<Item = Site>>(sites: I) -> Self {
        Configuration { occupied: sites.into_iter().collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn contains(&self, s: &Site) -> bool {
        self.occupied.contains(s)
    }

    pub fn is_subset(&self, other: &Configuration) -> bool {
        self.occupied.is_subset(&other.occupied)
    }

    pub fn union(&self, other: &Configuration) -> Configuration {
        Configuration { occupied: self.occupied.union(&other.occupied).copied().collect() }
    }

    /// Lexicographically smallest occupied site.
    pub fn least(&self) -> Option<Site> {
        self.occupied.first().copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    Birth,
    Death,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub time: f64,
    pub site: Site,
    pub kind: Transition,
}

/// A piecewise-constant path `t ↦ ξ_t` on `[0, final_time]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial: Configuration,
    pub events: Vec<TrajectoryEvent>,
    pub final_time: f64,
    pub boundary_contact: bool,
    /// First time the configuration is empty, or [`NEVER`].
    pub extinction_time: f64,
}

impl Trajectory {
    /// Configuration at time `t` (right-continuous).
    pub fn configuration_at(&self, t: f64) -> Configuration {
        let mut c = self.initial.clone();
        for ev in self.events.iter().take_while(|e| e.time <= t) {
            match ev.kind {
                Transition::Birth => c.occupied.insert(ev.site),
                Transition::Death => c.occupied.remove(&ev.site),
            };
        }
        c
    }

    pub fn final_configuration(&self) -> Configuration {
        self.configuration_at(self.final_time)
    }

    pub fn is_alive(&self) -> bool {
        self.extinction_time == NEVER
    }
}

/// `λ_e / λ_base` per compact edge, after checking that `env` covers
/// exactly the box seen through `view`.
pub fn thresholds(view: &RealizationView<'_>, env: &Environment) -> Result<Vec<f64>> {
    let base = view.base();
    if *env.bbox() != view.bbox() {
        return Err(Error::EnvironmentMismatch);
    }
    if env.bounds().lambda_max > base.edge_rate() {
        return Err(Error::InvalidParameter(format!(
            "environment rate {} above the substrate base rate {}",
            env.bounds().lambda_max,
            base.edge_rate()
        )));
    }
    let r = base.edge_rate();
    Ok(env.rates().iter().map(|l| l / r).collect())
}

pub(crate) fn site_keys(view: &RealizationView<'_>, c: &Configuration) -> Result<Vec<u32>> {
    c.occupied.iter().map(|s| view.site_key(*s)).collect()
}

pub(crate) fn check_window(view: &RealizationView<'_>, t_end: f64) -> Result<()> {
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("t_end {t_end}")));
    }
    if t_end > view.remaining() {
        return Err(Error::HorizonExceeded { requested: view.abs_time(t_end), horizon: view.base().horizon() });
    }
    Ok(())
}

pub(crate) fn trajectory_from_log(
    view: &RealizationView<'_>,
    initial: &Configuration,
    log: &[RawChange],
    t_end: f64,
    boundary_contact: bool,
    extinct_abs: f64,
) -> Trajectory {
    let base = view.base();
    let off = view.space_offset();
    let t0 = view.time_offset();
    let events = log
        .iter()
        .map(|c| TrajectoryEvent {
            time: c.time - t0,
            site: base.bbox().site_at(c.site) - off,
            kind: if c.birth { Transition::Birth } else { Transition::Death },
        })
        .collect();
    Trajectory {
        initial: initial.clone(),
        events,
        final_time: t_end,
        boundary_contact,
        extinction_time: if extinct_abs == NEVER { NEVER } else { extinct_abs - t0 },
    }
}

/// `ξ^A` on `[0, t_end]` in environment `env`, read through `view`.
pub fn evolve(view: &RealizationView<'_>, env: &Environment, initial: &Configuration, t_end: f64) -> Result<Trajectory> {
    check_window(view, t_end)?;
    let th = thresholds(view, env)?;
    let init = site_keys(view, initial)?;
    let base = view.base();
    let start = view.time_offset();
    let end = view.abs_time(t_end);
    let mut engine = Engine::new(base, &th, &[LayerSpec::contact()], &[&init], start, end, Schedule::Front)?;
    engine.run();
    let layer = engine.layer(0);
    Ok(trajectory_from_log(view, initial, layer.log(), t_end, layer.boundary_contacts() > 0, layer.extinct_at()))
}

/// First-infection times and the time-indexed sets derived from them.
/// Every set here is a threshold set `{x : time(x) ≤ t}`, so it is stored as
/// a per-site time in box index order.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthSets {
    pub bbox: LatticeBox,
    /// `t^A(x)` or [`NEVER`].
    pub t_of: Vec<f64>,
    /// `σ(x)` or [`NEVER`] when unresolved.
    pub sigma_of: Option<Vec<f64>>,
    /// Entry time into `K'`: `x ∈ K'_t` iff `coupled_since(x) ≤ t`.
    pub coupled_since: Option<Vec<f64>>,
    pub horizon: f64,
}

impl GrowthSets {
    fn threshold_set(&self, times: &[f64], t: f64) -> Vec<Site> {
        times
            .iter()
            .enumerate()
            .filter(|(_, s)| **s <= t)
            .map(|(i, _)| self.bbox.site_at(i as u32))
            .collect()
    }

    pub fn t_at(&self, s: Site) -> Option<f64> {
        self.bbox.index_of(s).map(|i| self.t_of[i as usize])
    }

    /// `H_t`.
    pub fn h(&self, t: f64) -> Vec<Site> {
        self.threshold_set(&self.t_of, t)
    }

    /// `G_t`, when `σ` is available.
    pub fn g(&self, t: f64) -> Option<Vec<Site>> {
        self.sigma_of.as_ref().map(|s| self.threshold_set(s, t))
    }

    /// `K'_t`, censored at the horizon.
    pub fn k_prime(&self, t: f64) -> Option<Vec<Site>> {
        self.coupled_since.as_ref().map(|s| self.threshold_set(s, t))
    }

    /// `t'(x) = inf{t : x ∈ K'_t ∩ G_t}`, or [`NEVER`] when not entered
    /// within the horizon.
    pub fn coupling_time(&self, s: Site) -> Option<f64> {
        let i = self.bbox.index_of(s)? as usize;
        let sig = self.sigma_of.as_ref()?[i];
        let k = self.coupled_since.as_ref()?[i];
        Some(sig.max(k))
    }
}

/// `t^A(x)` for every site of the box, from a run of `ξ^A` up to `t_end`.
pub fn hitting_times(view: &RealizationView<'_>, env: &Environment, initial: &Configuration, t_end: f64) -> Result<GrowthSets> {
    check_window(view, t_end)?;
    let th = thresholds(view, env)?;
    let init = site_keys(view, initial)?;
    let base = view.base();
    let start = view.time_offset();
    let mut engine = Engine::new(base, &th, &[LayerSpec::contact()], &[&init], start, view.abs_time(t_end), Schedule::Front)?;
    engine.run();
    let n = base.topology().n_sites();
    let mut t_of = vec![NEVER; n];
    for s in &init {
        t_of[*s as usize] = 0.0;
    }
    for c in engine.layer(0).log() {
        if c.birth && t_of[c.site as usize] == NEVER {
            t_of[c.site as usize] = c.time - start;
        }
    }
    Ok(GrowthSets { bbox: view.bbox(), t_of, sigma_of: None, coupled_since: None, horizon: t_end })
}

/// Joint run of `ξ^0` and the full-box process `ξ^B` on one view.
#[derive(Clone, Debug)]
pub struct CoupledRegion {
    pub bbox: LatticeBox,
    /// `x ∈ K'_t` iff `coupled_since[x] ≤ t` (agreement on `[t, t_end]`).
    pub coupled_since: Vec<f64>,
    /// `K_t` membership per site at each requested time.
    pub snapshots: Vec<(f64, Vec<bool>)>,
    /// `ξ^0` tried to leave the box.
    pub boundary_contact: bool,
    pub t_end: f64,
}

impl CoupledRegion {
    pub fn k_at(&self, i: usize) -> Vec<Site> {
        self.snapshots[i].1.iter().enumerate().filter(|(_, b)| **b).map(|(j, _)| self.bbox.site_at(j as u32)).collect()
    }

    pub fn k_prime(&self, t: f64) -> Vec<Site> {
        self.coupled_since
            .iter()
            .enumerate()
            .filter(|(_, s)| **s <= t)
            .map(|(j, _)| self.bbox.site_at(j as u32))
            .collect()
    }
}

/// Everything one forward sweep of `(ξ^0, ξ^B)` produces, in base indices
/// and absolute times.
pub(crate) struct ForwardPair {
    pub root_log: Vec<RawChange>,
    pub root_boundary: u64,
    pub root_first_contact: f64,
    pub root_extinct: f64,
    pub coupled_since: Vec<f64>,
    pub snapshots: Vec<(f64, Vec<bool>)>,
}

pub(crate) fn forward_pair(
    real: &GraphicalRealization,
    th: &[f64],
    root: u32,
    start: f64,
    end: f64,
    sample_abs: &[f64],
    cache: Option<&EventCache>,
) -> Result<ForwardPair> {
    let n = real.topology().n_sites();
    let all: Vec<u32> = (0..n as u32).collect();
    let specs = [LayerSpec::contact(), LayerSpec { record: false, ..LayerSpec::contact() }];
    let mut engine = match cache {
        Some(c) if c.start() == start && c.end() == end => Engine::with_cache(real, th, &specs, &[&[root], &all], c)?,
        _ => Engine::new(real, th, &specs, &[&[root], &all], start, end, Schedule::Sweep)?,
    };
    let mut since = vec![NEVER; n];
    since[root as usize] = start;
    let mut snapshots = Vec::new();
    let mut samples: Vec<f64> = sample_abs.to_vec();
    samples.sort_by(f64::total_cmp);
    let mut next_sample = 0;
    loop {
        let next = engine.next_time();
        let cutoff = next.unwrap_or(f64::INFINITY);
        while next_sample < samples.len() && samples[next_sample] < cutoff {
            snapshots.push((samples[next_sample], snapshot(&engine)));
            next_sample += 1;
        }
        if next.is_none() {
            break;
        }
        engine.step();
        for (_, c) in engine.changes() {
            let s = c.site as usize;
            let agree = engine.layer(0).is_occupied(c.site) == engine.layer(1).is_occupied(c.site);
            if !agree {
                since[s] = NEVER;
            } else if since[s] == NEVER {
                since[s] = c.time;
            }
        }
    }
    let l0 = engine.layer(0);
    Ok(ForwardPair {
        root_log: l0.log().to_vec(),
        root_boundary: l0.boundary_contacts(),
        root_first_contact: l0.first_contact(),
        root_extinct: l0.extinct_at(),
        coupled_since: since,
        snapshots,
    })
}

fn snapshot(engine: &Engine<'_>) -> Vec<bool> {
    let a = engine.layer(0).occupancy();
    let b = engine.layer(1).occupancy();
    a.iter().zip(b).map(|(x, y)| x == y).collect()
}

/// `K_t` at `sample_times` and `K'_t` (censored at `t_end`) for the pair
/// `ξ^0`, `ξ^{B}` with `B` the whole box.
pub fn coupled_region(view: &RealizationView<'_>, env: &Environment, t_end: f64, sample_times: &[f64]) -> Result<CoupledRegion> {
    check_window(view, t_end)?;
    let th = thresholds(view, env)?;
    let root = view.site_key(Site::ORIGIN)?;
    let t0 = view.time_offset();
    let samples: Vec<f64> = sample_times.iter().map(|t| t0 + t).collect();
    let pair = forward_pair(view.base(), &th, root, t0, view.abs_time(t_end), &samples, None)?;
    Ok(CoupledRegion {
        bbox: view.bbox(),
        coupled_since: pair.coupled_since.iter().map(|s| if *s == NEVER { NEVER } else { s - t0 }).collect(),
        snapshots: pair.snapshots.into_iter().map(|(t, k)| (t - t0, k)).collect(),
        boundary_contact: pair.root_boundary > 0,
        t_end,
    })
}

/// The trajectorial Markov identity `ξ^A_{t+s} = ξ^{ξ^A_t}_s ∘ θ_t`.
pub fn semigroup_check(view: &RealizationView<'_>, env: &Environment, a: &Configuration, t: f64, s: f64) -> Result<bool> {
    let whole = evolve(view, env, a, t + s)?;
    let first = evolve(view, env, a, t)?;
    let shifted = view.time_shift(t)?;
    let second = evolve(&shifted, env, &first.final_configuration(), s)?;
    Ok(whole.final_configuration() == second.final_configuration())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvironmentLaw};
    use crate::lattice::ObjectId;

    fn setup(dim: usize, radius: u32, horizon: f64, seed: u64, rate: f64) -> (GraphicalRealization, Environment) {
        let real = GraphicalRealization::new(dim, radius, horizon, seed, rate).unwrap();
        let env = sample_environment(&EnvironmentLaw::constant(rate), 0, dim, radius).unwrap();
        (real, env)
    }

    #[test]
    fn empty_initial() {
        let (real, env) = setup(1, 5, 5.0, 1, 2.0);
        let tr = evolve(&real.view(), &env, &Configuration::empty(), 5.0).unwrap();
        assert!(tr.events.is_empty());
        assert_eq!(tr.extinction_time, 0.0);
    }

    #[test]
    fn lone_site_dies_at_its_first_death_mark() {
        // find a seed where no edge around the origin fires before the first death
        for seed in 0..200 {
            let (real, env) = setup(1, 3, 5.0, seed, 2.0);
            let v = real.view();
            let death = v.events(&ObjectId::Site(Site::ORIGIN)).unwrap();
            let Some(&d) = death.times.first() else { continue };
            let early_edge = [Site::from_slice(&[-1]), Site::from_slice(&[1])].iter().any(|n| {
                let e = crate::lattice::Edge::between(Site::ORIGIN, *n).unwrap();
                v.events(&ObjectId::Edge(e)).unwrap().times.iter().any(|t| *t < d)
            });
            if early_edge {
                continue;
            }
            let tr = evolve(&v, &env, &Configuration::single(Site::ORIGIN), 5.0).unwrap();
            assert_eq!(tr.extinction_time, d);
            return;
        }
        panic!("no suitable seed");
    }

    #[test]
    fn errors() {
        let (real, env) = setup(1, 3, 5.0, 1, 2.0);
        let v = real.view();
        assert!(matches!(
            evolve(&v, &env, &Configuration::single(Site::ORIGIN), 6.0),
            Err(Error::HorizonExceeded { .. })
        ));
        assert!(matches!(
            evolve(&v, &env, &Configuration::single(Site::from_slice(&[4])), 1.0),
            Err(Error::OutOfBox(_))
        ));
        let other = sample_environment(&EnvironmentLaw::constant(2.0), 0, 1, 4).unwrap();
        assert!(matches!(evolve(&v, &other, &Configuration::empty(), 1.0), Err(Error::EnvironmentMismatch)));
    }

    #[test]
    fn replay_matches_final() {
        let (real, env) = setup(2, 6, 6.0, 3, 2.0);
        let tr = evolve(&real.view(), &env, &Configuration::single(Site::ORIGIN), 6.0).unwrap();
        let mut c = tr.initial.clone();
        for ev in &tr.events {
            match ev.kind {
                Transition::Birth => assert!(c.occupied.insert(ev.site)),
                Transition::Death => assert!(c.occupied.remove(&ev.site)),
            }
        }
        assert_eq!(c, tr.final_configuration());
        assert!(tr.events.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn hitting_times_basic() {
        let (real, env) = setup(1, 10, 8.0, 4, 3.0);
        let g = hitting_times(&real.view(), &env, &Configuration::single(Site::ORIGIN), 8.0).unwrap();
        assert_eq!(g.t_at(Site::ORIGIN), Some(0.0));
        let mut prev = 0;
        for k in 0..16 {
            let h = g.h(k as f64 * 0.5);
            assert!(h.len() >= prev);
            prev = h.len();
        }
    }

    #[test]
    fn coupled_region_at_zero_and_inclusion() {
        let (real, env) = setup(1, 8, 6.0, 5, 2.5);
        let cr = coupled_region(&real.view(), &env, 6.0, &[0.0, 2.0, 4.0]).unwrap();
        assert_eq!(cr.k_at(0), alloc::vec![Site::ORIGIN]);
        for (i, (t, _)) in cr.snapshots.iter().enumerate() {
            let k = cr.k_at(i);
            for s in cr.k_prime(*t) {
                assert!(k.contains(&s));
            }
        }
    }

    #[test]
    fn semigroup_trivial_cases() {
        let (real, env) = setup(1, 6, 5.0, 6, 2.0);
        let a = Configuration::single(Site::ORIGIN);
        assert!(semigroup_check(&real.view(), &env, &a, 2.0, 0.0).unwrap());
        assert!(semigroup_check(&real.view(), &env, &a, 0.0, 3.0).unwrap());
    }
}
