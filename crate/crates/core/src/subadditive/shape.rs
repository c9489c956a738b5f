//! The reconstructed unit ball `A_μ` and the inclusions
//! `(1−ε)tA_μ ⊆ K̃'_t ∩ G̃_t ⊆ G̃_t ⊆ H̃_t ⊆ (1+ε)tA_μ`, where `S̃ = S + [0,1]^d`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{DirectionEstimate, DirectionSample};
use crate::dynamics::{check_window, forward_pair, thresholds};
use crate::engine::{DualSurvival, Engine, EventCache, LayerSpec, Schedule, NEVER};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{LatticeBox, Site};
use crate::regeneration::{RestartSolver, RootRun};
use crate::stats::{wilson, Proportion, Z95};
use crate::substrate::RealizationView;

/// Star-shaped set `{z : ‖z‖₂ ≤ r(angle z)}` with `r` interpolated
/// linearly in angle between estimated directions (`d = 2`), or an interval
/// (`d = 1`). Symmetric under `z ↦ −z` by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitBall {
    pub dim: usize,
    /// Angles in `[0, 2π)`, increasing. In `d = 1` the single entry is the
    /// half-width.
    pub angles: Vec<f64>,
    pub radii: Vec<f64>,
}

fn wrap(a: f64) -> f64 {
    let t = a % (2.0 * PI);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

/// Points of a sampled cell boundary per side.
const CELL_SAMPLES: usize = 8;

impl UnitBall {
    /// Needs at least 8 directions in `d = 2`, or 1 in `d = 1` (its
    /// opposite is supplied by symmetry).
    pub fn from_estimates(estimates: &[DirectionEstimate], dim: usize) -> Result<Self> {
        let bad = |e: &DirectionEstimate| !(e.mu_hat > 0.0 && e.mu_hat.is_finite());
        if let Some(e) = estimates.iter().find(|e| bad(e)) {
            return Err(Error::NotStarShaped(format!("μ̂({:?}) = {}", e.x, e.mu_hat)));
        }
        match dim {
            1 => {
                let r: Vec<f64> = estimates.iter().map(|e| e.x.norm2() / e.mu_hat).collect();
                if r.is_empty() {
                    return Err(Error::InsufficientData("no directions".into()));
                }
                let half = r.iter().sum::<f64>() / r.len() as f64;
                Ok(UnitBall { dim, angles: vec![0.0], radii: vec![half] })
            }
            2 => {
                // (angle, radius) grouped by angle, then averaged with the
                // opposite angle
                let mut pts: Vec<(f64, f64, usize)> = Vec::new();
                for e in estimates {
                    let a = wrap(libm::atan2(e.x.0[1] as f64, e.x.0[0] as f64));
                    let r = e.x.norm2() / e.mu_hat;
                    match pts.iter_mut().find(|p| libm::fabs(p.0 - a) < 1e-12) {
                        Some(p) => {
                            p.1 += r;
                            p.2 += 1;
                        }
                        None => pts.push((a, r, 1)),
                    }
                }
                let own: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1 / p.2 as f64)).collect();
                let mut sym: Vec<(f64, f64)> = Vec::new();
                for &(a, r) in &own {
                    let opp = wrap(a + PI);
                    let ro = own.iter().find(|q| libm::fabs(q.0 - opp) < 1e-9 || libm::fabs(libm::fabs(q.0 - opp) - 2.0 * PI) < 1e-9);
                    let rs = ro.map_or(r, |q| 0.5 * (r + q.1));
                    for b in [a, opp] {
                        if !sym.iter().any(|q| libm::fabs(q.0 - b) < 1e-9) {
                            sym.push((b, rs));
                        }
                    }
                }
                sym.sort_by(|x, y| x.0.total_cmp(&y.0));
                if own.len() < 8 {
                    return Err(Error::InsufficientData(format!("{} directions, need 8", own.len())));
                }
                let gap = sym
                    .windows(2)
                    .map(|w| w[1].0 - w[0].0)
                    .chain(core::iter::once(sym[0].0 + 2.0 * PI - sym[sym.len() - 1].0))
                    .fold(0.0, f64::max);
                if gap >= PI {
                    return Err(Error::NotStarShaped(format!("angular gap {gap}")));
                }
                Ok(UnitBall { dim, angles: sym.iter().map(|p| p.0).collect(), radii: sym.iter().map(|p| p.1).collect() })
            }
            _ => Err(Error::InvalidParameter(format!("unit ball reconstruction in dimension {dim}"))),
        }
    }

    pub fn radius(&self, angle: f64) -> f64 {
        if self.dim == 1 {
            return self.radii[0];
        }
        let a = wrap(angle);
        let n = self.angles.len();
        let j = self.angles.partition_point(|x| *x <= a);
        let (i0, i1) = if j == 0 || j == n { (n - 1, 0) } else { (j - 1, j) };
        let a0 = self.angles[i0];
        let mut a1 = self.angles[i1];
        let mut at = a;
        if a1 <= a0 {
            a1 += 2.0 * PI;
            if at < a0 {
                at += 2.0 * PI;
            }
        }
        let w = (at - a0) / (a1 - a0);
        self.radii[i0] * (1.0 - w) + self.radii[i1] * w
    }

    /// Gauge of the ball: `μ̂(z) = ‖z‖₂ / r(angle z)`.
    pub fn mu(&self, z: &[f64]) -> f64 {
        match self.dim {
            1 => libm::fabs(z[0]) / self.radii[0],
            _ => {
                let n = libm::sqrt(z[0] * z[0] + z[1] * z[1]);
                if n == 0.0 {
                    0.0
                } else {
                    n / self.radius(libm::atan2(z[1], z[0]))
                }
            }
        }
    }

    pub fn r_min(&self) -> f64 {
        self.radii.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn r_max(&self) -> f64 {
        self.radii.iter().cloned().fold(0.0, f64::max)
    }

    fn cell_points(&self, c: Site) -> Vec<[f64; 2]> {
        let (x, y) = (c.0[0] as f64, c.0[1] as f64);
        if self.dim == 1 {
            return vec![[x, 0.0], [x + 1.0, 0.0]];
        }
        let mut pts = Vec::with_capacity(4 * CELL_SAMPLES);
        for k in 0..CELL_SAMPLES {
            let s = k as f64 / CELL_SAMPLES as f64;
            pts.push([x + s, y]);
            pts.push([x + 1.0, y + s]);
            pts.push([x + 1.0 - s, y + 1.0]);
            pts.push([x, y + 1.0 - s]);
        }
        pts
    }

    /// Smallest gauge on the cell `c + [0,1]^d`, from its sampled boundary
    /// (zero when the cell holds the origin).
    pub fn min_on_cell(&self, c: Site) -> f64 {
        if (0..self.dim).all(|a| c.0[a] <= 0 && c.0[a] >= -1) {
            return 0.0;
        }
        self.cell_points(c).iter().map(|p| self.mu(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_on_cell(&self, c: Site) -> f64 {
        self.cell_points(c).iter().map(|p| self.mu(p)).fold(0.0, f64::max)
    }
}

/// A set of box cells, by box index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSet {
    len: usize,
    words: Vec<u64>,
}

impl CellSet {
    pub fn new(len: usize) -> Self {
        CellSet { len, words: vec![0; len.div_ceil(64)] }
    }

    pub fn from_fn(len: usize, f: impl Fn(usize) -> bool) -> Self {
        let mut s = Self::new(len);
        for i in 0..len {
            if f(i) {
                s.insert(i);
            }
        }
        s
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }
}

/// What a shape replica computes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapePlan {
    pub sample_times: Vec<f64>,
    /// "Survives" means alive at this time; also the end of `K'`.
    pub survival_horizon: f64,
    pub direction_sites: Vec<Site>,
    /// A root process whose population exceeds this size during the
    /// front-engine pre-check goes on to the full computation.
    pub precheck_population: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeSnapshot {
    pub t: f64,
    /// The root process touched the box boundary at or before `t`.
    pub contaminated: bool,
    /// `K'_t ∩ G_t`.
    pub inner: CellSet,
    /// `H_t`.
    pub reached: CellSet,
    pub g_count: usize,
    /// `K'_t ∩ G_t ⊆ G_t ⊆ H_t`.
    pub chain_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub root_alive: bool,
    /// First boundary contact of the root process, or [`NEVER`].
    pub first_contact: f64,
    /// One per plan direction site; empty when the root died.
    pub directions: Vec<DirectionSample>,
    pub snapshots: Vec<ShapeSnapshot>,
}

fn dead_record(first_contact: f64) -> ShapeRecord {
    ShapeRecord { root_alive: false, first_contact, directions: Vec::new(), snapshots: Vec::new() }
}

/// Per-replica pipeline: root survival, the `(ξ^0, ξ^B)` pair, the dual
/// sweep and `σ` over the sites reached by the last sample time.
pub fn shape_record(view: &RealizationView<'_>, env: &Environment, plan: &ShapePlan) -> Result<ShapeRecord> {
    check_window(view, plan.survival_horizon)?;
    if let Some(t) = plan.sample_times.iter().find(|t| !(**t >= 0.0 && **t <= plan.survival_horizon)) {
        return Err(Error::InvalidParameter(format!("sample time {t} outside the window")));
    }
    let th = thresholds(view, env)?;
    let real = view.base();
    let start = view.time_offset();
    let end = view.abs_time(plan.survival_horizon);
    let rel = |t: f64| if t == NEVER { NEVER } else { t - start };
    let origin = view.site_key(Site::ORIGIN)?;
    let keys = plan.direction_sites.iter().map(|s| view.site_key(*s)).collect::<Result<Vec<u32>>>()?;

    {
        let quiet = LayerSpec { record: false, ..LayerSpec::contact() };
        let mut e = Engine::new(real, &th, &[quiet], &[&[origin]], start, end, Schedule::Front)?;
        while e.layer(0).count() > 0 && e.layer(0).count() <= plan.precheck_population && e.step().is_some() {}
        if e.layer(0).count() == 0 {
            return Ok(dead_record(rel(e.layer(0).first_contact())));
        }
    }

    let cache = EventCache::build(real, start, end)?;
    let pair = forward_pair(real, &th, origin, start, end, &[], Some(&cache))?;
    if pair.root_extinct != NEVER {
        return Ok(dead_record(rel(pair.root_first_contact)));
    }
    let dual = DualSurvival::from_cache(real, &th, &cache)?;
    drop(cache);
    let n = real.topology().n_sites();
    let root = RootRun::from_log(origin, start, end, n, &pair.root_log, pair.root_first_contact, pair.root_extinct);
    drop(pair.root_log);
    let mut solver = RestartSolver::with_dual(real, &th, dual)?;

    let mut directions = Vec::with_capacity(keys.len());
    for k in keys {
        let tr = solver.trace_abs(&root, k)?;
        let known_at = if tr.k.is_some() { tr.sigma } else { end };
        directions.push(DirectionSample {
            sigma: rel(tr.sigma),
            t: rel(tr.t),
            censored: tr.k.is_none(),
            contaminated: root.first_contact <= known_at,
        });
    }

    let t_max = plan.sample_times.iter().cloned().fold(0.0, f64::max) + start;
    let t_of: Vec<f64> = (0..n as u32).map(|i| root.history.first_hit(i, start)).collect();
    let mut sigma_of = vec![NEVER; n];
    for i in 0..n {
        if t_of[i] <= t_max {
            let tr = solver.trace_abs_until(&root, i as u32, t_max)?;
            if tr.k.is_some() {
                sigma_of[i] = tr.sigma;
            }
        }
    }
    let snapshots = plan
        .sample_times
        .iter()
        .map(|&t| {
            let ta = start + t;
            let inner = CellSet::from_fn(n, |i| pair.coupled_since[i] <= ta && sigma_of[i] <= ta);
            let g = CellSet::from_fn(n, |i| sigma_of[i] <= ta);
            let reached = CellSet::from_fn(n, |i| t_of[i] <= ta);
            ShapeSnapshot {
                t,
                contaminated: root.first_contact <= ta,
                chain_holds: inner.is_subset(&g) && g.is_subset(&reached),
                g_count: g.count(),
                inner,
                reached,
            }
        })
        .collect();
    Ok(ShapeRecord { root_alive: true, first_contact: rel(root.first_contact), directions, snapshots })
}

/// Tightest `ε` for each inclusion on one snapshot: the inner inclusion
/// holds iff `inner_margin ≥ 1 − ε` and the outer one iff
/// `outer_margin ≤ 1 + ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionMargins {
    /// `min μ̂ / t` over cells outside `K'_t ∩ G_t`.
    pub inner_margin: f64,
    /// `max μ̂ / t` over cells of `H_t`.
    pub outer_margin: f64,
}

impl InclusionMargins {
    pub fn inner_holds(&self, eps: f64) -> bool {
        self.inner_margin >= 1.0 - eps
    }

    pub fn outer_holds(&self, eps: f64) -> bool {
        self.outer_margin <= 1.0 + eps
    }
}

/// `bbox` is the box the snapshot's cell indices refer to, in the
/// coordinates of the process origin.
pub fn inclusion_margins(snapshot: &ShapeSnapshot, ball: &UnitBall, bbox: &LatticeBox) -> InclusionMargins {
    let n = bbox.len();
    let half_diag = libm::sqrt(ball.dim as f64) / 2.0;
    let centre_norm = |i: usize| {
        let c = bbox.site_at(i as u32);
        libm::sqrt((0..ball.dim).map(|a| (c.0[a] as f64 + 0.5) * (c.0[a] as f64 + 0.5)).sum())
    };

    let mut outside: Vec<(f64, usize)> = (0..n)
        .filter(|i| !snapshot.inner.contains(*i))
        .map(|i| ((centre_norm(i) - half_diag).max(0.0) / ball.r_max(), i))
        .collect();
    outside.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut inner = f64::INFINITY;
    for (lb, i) in outside {
        if lb >= inner {
            break;
        }
        inner = inner.min(ball.min_on_cell(bbox.site_at(i as u32)));
    }

    let mut reached: Vec<(f64, usize)> = (0..n)
        .filter(|i| snapshot.reached.contains(*i))
        .map(|i| ((centre_norm(i) + half_diag) / ball.r_min(), i))
        .collect();
    reached.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut outer: f64 = 0.0;
    for (ub, i) in reached {
        if ub <= outer {
            break;
        }
        outer = outer.max(ball.max_on_cell(bbox.site_at(i as u32)));
    }
    InclusionMargins { inner_margin: inner / snapshot.t, outer_margin: outer / snapshot.t }
}

/// Pass rates at one `(t, ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionRow {
    pub t: f64,
    pub epsilon: f64,
    pub surviving: usize,
    /// Surviving and not contaminated by `t`.
    pub eligible: usize,
    pub inner_pass: usize,
    pub outer_pass: usize,
    /// Both inclusions, over eligible replicas.
    pub pass_rate: Proportion,
    /// Both inclusions with `A_μ` cut to the box, over all surviving
    /// replicas, contaminated or not.
    pub box_restricted: Proportion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeEstimate {
    pub directions: Vec<DirectionEstimate>,
    pub ball: UnitBall,
    pub rows: Vec<InclusionRow>,
    /// `K̃'_t ∩ G̃_t ⊆ G̃_t ⊆ H̃_t` on every surviving replica and time.
    pub chain_holds: bool,
}

/// Per-replica margins for every snapshot of every surviving record.
pub fn replica_margins(records: &[ShapeRecord], ball: &UnitBall, bbox: &LatticeBox) -> Vec<Vec<InclusionMargins>> {
    records
        .iter()
        .map(|r| r.snapshots.iter().map(|s| inclusion_margins(s, ball, bbox)).collect())
        .collect()
}

/// Aggregates shape records against the ball reconstructed from
/// `directions`. `margins` must come from [`replica_margins`] on the same
/// records and ball.
pub fn shape_report(
    directions: Vec<DirectionEstimate>,
    ball: UnitBall,
    records: &[ShapeRecord],
    margins: &[Vec<InclusionMargins>],
    epsilons: &[f64],
) -> Result<ShapeEstimate> {
    let alive: Vec<(&ShapeRecord, &Vec<InclusionMargins>)> = records.iter().zip(margins).filter(|(r, _)| r.root_alive).collect();
    if alive.is_empty() {
        return Err(Error::NoSurvivors(records.len()));
    }
    let times: Vec<f64> = alive[0].0.snapshots.iter().map(|s| s.t).collect();
    let mut rows = Vec::new();
    for (j, &t) in times.iter().enumerate() {
        for &eps in epsilons {
            let (mut eligible, mut inner_pass, mut outer_pass, mut both, mut boxed) = (0, 0, 0, 0, 0);
            for (r, m) in &alive {
                let m = m[j];
                let ok = m.inner_holds(eps) && m.outer_holds(eps);
                boxed += ok as usize;
                if !r.snapshots[j].contaminated {
                    eligible += 1;
                    inner_pass += m.inner_holds(eps) as usize;
                    outer_pass += m.outer_holds(eps) as usize;
                    both += ok as usize;
                }
            }
            rows.push(InclusionRow {
                t,
                epsilon: eps,
                surviving: alive.len(),
                eligible,
                inner_pass,
                outer_pass,
                pass_rate: wilson(both as u64, eligible as u64, Z95),
                box_restricted: wilson(boxed as u64, alive.len() as u64, Z95),
            });
        }
    }
    let chain_holds = alive.iter().all(|(r, _)| r.snapshots.iter().all(|s| s.chain_holds));
    Ok(ShapeEstimate { directions, ball, rows, chain_holds })
}
