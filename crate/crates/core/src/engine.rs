//! Event-driven simulation over a [`GraphicalRealization`].
//!
//! Several processes ("layers") can be driven by the same event streams at
//! once; each layer thins the edge events with its own threshold, so nested
//! processes (weak ⊆ strong ⊆ Richardson, or `ξ^0 ⊆ ξ^B`) stay coupled
//! event by event. Two schedulers feed events in `(time, object)` order:
//!
//! * [`Schedule::Front`] keeps a heap of the next event of every object next
//!   to an occupied site. Cheap when the occupied set is small.
//! * [`Schedule::Sweep`] merges every object of the box block by block.
//!   Cheap when the box is mostly occupied.
//!
//! Both apply exactly the same state-changing events in the same order.
//! All times here are absolute (base realization) times.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::lattice::NO_SITE;
use crate::substrate::{GraphicalRealization, BLOCK_WIDTH};

/// Sentinel for "never happened before the horizon".
pub const NEVER: f64 = f64::INFINITY;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Thinning {
    /// Edge fires when `mark < λ_e / λ_base`.
    Environment,
    /// Edge fires when `mark < threshold`.
    Constant(f64),
    /// Every edge event fires.
    Always,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub thinning: Thinning,
    pub deaths: bool,
    pub record: bool,
}

impl LayerSpec {
    pub fn contact() -> Self {
        LayerSpec { thinning: Thinning::Environment, deaths: true, record: true }
    }
}

/// One state change, in base indices and absolute time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawChange {
    pub time: f64,
    pub site: u32,
    pub birth: bool,
}

#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    occ: Vec<bool>,
    count: usize,
    log: Vec<RawChange>,
    boundary_contacts: u64,
    first_contact: f64,
    extinct_at: f64,
}

impl Layer {
    pub fn is_occupied(&self, site: u32) -> bool {
        self.occ[site as usize]
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn log(&self) -> &[RawChange] {
        &self.log
    }

    pub fn boundary_contacts(&self) -> u64 {
        self.boundary_contacts
    }

    /// Time of the first birth attempt across the box boundary.
    pub fn first_contact(&self) -> f64 {
        self.first_contact
    }

    pub fn extinct_at(&self) -> f64 {
        self.extinct_at
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occ
    }

    pub fn occupied_sites(&self) -> impl Iterator<Item = u32> + '_ {
        self.occ.iter().enumerate().filter(|(_, o)| **o).map(|(i, _)| i as u32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Front,
    Sweep,
}

#[derive(Clone, Copy, Debug)]
struct HeapEntry {
    time: f64,
    key: u32,
    block: u32,
    idx: u32,
    mark: f64,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.key.cmp(&self.key))
    }
}

/// An event as delivered by a scheduler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub key: u32,
    pub mark: f64,
}

#[derive(Default)]
pub(crate) struct GatherScratch {
    pairs: Vec<(f64, f64)>,
    raw: Vec<Event>,
    starts: Vec<u32>,
}

/// Fills `out` with all events of all objects in block `b` within
/// `(after, until]`, sorted by `(time, key)`.
pub(crate) fn gather_block(
    real: &GraphicalRealization,
    b: u32,
    after: f64,
    until: f64,
    scratch: &mut GatherScratch,
    out: &mut Vec<Event>,
) {
    let raw = &mut scratch.raw;
    raw.clear();
    let n = real.topology().n_objects() as u32;
    for key in 0..n {
        real.block_events(key, b, &mut scratch.pairs);
        for (t, m) in scratch.pairs.iter() {
            if *t > after && *t <= until {
                raw.push(Event { time: *t, key, mark: *m });
            }
        }
    }
    // times are uniform over the block: bucket by time, then finish each
    // bucket with a small comparison sort
    let nb = (raw.len() / 4).max(1);
    let lo = b as f64 * BLOCK_WIDTH;
    let scale = nb as f64 / BLOCK_WIDTH;
    let bucket = |t: f64| (((t - lo) * scale) as usize).min(nb - 1);
    let starts = &mut scratch.starts;
    starts.clear();
    starts.resize(nb + 1, 0);
    for ev in raw.iter() {
        starts[bucket(ev.time) + 1] += 1;
    }
    for i in 0..nb {
        starts[i + 1] += starts[i];
    }
    out.clear();
    out.resize(raw.len(), Event { time: 0.0, key: 0, mark: 0.0 });
    let mut fill: Vec<u32> = starts[..nb].to_vec();
    for ev in raw.iter() {
        let k = bucket(ev.time);
        out[fill[k] as usize] = *ev;
        fill[k] += 1;
    }
    for i in 0..nb {
        let (a, z) = (starts[i] as usize, starts[i + 1] as usize);
        if z - a > 1 {
            sort_events(&mut out[a..z]);
        }
    }
}

/// Every event of a window, sorted and grouped by block, so that several
/// sweeps over the same realization generate the streams only once.
#[derive(Debug, Clone)]
pub struct EventCache {
    start: f64,
    end: f64,
    first_block: u32,
    blocks: Vec<Vec<Event>>,
}

impl EventCache {
    /// Events in `(start, end]`.
    pub fn build(real: &GraphicalRealization, start: f64, end: f64) -> Result<Self> {
        if end > real.horizon() {
            return Err(Error::HorizonExceeded { requested: end, horizon: real.horizon() });
        }
        if !(start >= 0.0 && start <= end) {
            return Err(Error::InvalidParameter(alloc::format!("window ({start}, {end}]")));
        }
        let first_block = (start / BLOCK_WIDTH) as u32;
        let last = (end / BLOCK_WIDTH) as u32;
        let mut scratch = GatherScratch::default();
        let mut buf = Vec::new();
        let mut blocks = Vec::with_capacity((last - first_block + 1) as usize);
        for b in first_block..=last {
            gather_block(real, b, start, end, &mut scratch, &mut buf);
            blocks.push(buf.as_slice().to_vec());
        }
        Ok(EventCache { start, end, first_block, blocks })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn iter_rev(&self) -> impl Iterator<Item = &Event> {
        self.blocks.iter().rev().flat_map(|b| b.iter().rev())
    }
}

fn sort_events(events: &mut [Event]) {
    events.sort_unstable_by(|a, b| a.time.total_cmp(&b.time).then(a.key.cmp(&b.key)));
}

pub struct Engine<'r> {
    real: &'r GraphicalRealization,
    thresholds: &'r [f64],
    layers: Vec<Layer>,
    occ_any: Vec<u8>,
    schedule: Schedule,
    now: f64,
    end: f64,
    // front scheduler
    heap: BinaryHeap<HeapEntry>,
    active: Vec<bool>,
    activated: Vec<u32>,
    touched: Vec<u32>,
    scratch: Vec<(f64, f64)>,
    // sweep scheduler
    block_buf: Vec<Event>,
    cache: Option<&'r EventCache>,
    gather: GatherScratch,
    block_pos: usize,
    next_block: u32,
    changes: Vec<(usize, RawChange)>,
}

impl<'r> Engine<'r> {
    /// Starts the layers from `initial[i]` at absolute time `start`; events
    /// in `(start, end]` will be applied. `thresholds` holds `λ_e / λ_base`
    /// per compact edge.
    pub fn new(
        real: &'r GraphicalRealization,
        thresholds: &'r [f64],
        specs: &[LayerSpec],
        initial: &[&[u32]],
        start: f64,
        end: f64,
        schedule: Schedule,
    ) -> Result<Self> {
        let topo = real.topology();
        if thresholds.len() != topo.n_edges() {
            return Err(Error::EnvironmentMismatch);
        }
        if specs.is_empty() || specs.len() > u8::MAX as usize {
            return Err(Error::InvalidParameter("one initial set per layer".into()));
        }
        if end > real.horizon() {
            return Err(Error::HorizonExceeded { requested: end, horizon: real.horizon() });
        }
        if !(start >= 0.0 && start <= end) {
            return Err(Error::InvalidParameter(alloc::format!("window ({start}, {end}]")));
        }
        let ns = topo.n_sites();
        let layers = specs
            .iter()
            .map(|spec| Layer {
                spec: *spec,
                occ: vec![false; ns],
                count: 0,
                log: Vec::new(),
                boundary_contacts: 0,
                first_contact: NEVER,
                extinct_at: NEVER,
            })
            .collect();
        let mut engine = Engine {
            real,
            thresholds,
            layers,
            occ_any: vec![0u8; ns],
            schedule,
            now: start,
            end,
            heap: BinaryHeap::new(),
            active: Vec::new(),
            activated: Vec::new(),
            touched: Vec::new(),
            scratch: Vec::new(),
            block_buf: Vec::new(),
            cache: None,
            gather: GatherScratch::default(),
            block_pos: 0,
            next_block: (start / BLOCK_WIDTH) as u32,
            changes: Vec::new(),
        };
        if schedule == Schedule::Front {
            engine.active = vec![false; topo.n_objects()];
        }
        engine.load(initial)?;
        Ok(engine)
    }

    /// A sweep engine reading pre-generated events; the window is the
    /// cache's.
    pub fn with_cache(
        real: &'r GraphicalRealization,
        thresholds: &'r [f64],
        specs: &[LayerSpec],
        initial: &[&[u32]],
        cache: &'r EventCache,
    ) -> Result<Self> {
        let mut e = Self::new(real, thresholds, specs, initial, cache.start, cache.end, Schedule::Sweep)?;
        e.cache = Some(cache);
        Ok(e)
    }

    fn load(&mut self, initial: &[&[u32]]) -> Result<()> {
        let ns = self.occ_any.len();
        if initial.len() != self.layers.len() {
            return Err(Error::InvalidParameter("one initial set per layer".into()));
        }
        for (li, init) in initial.iter().enumerate() {
            for s in init.iter() {
                let s = *s as usize;
                if s >= ns {
                    return Err(Error::OutOfBox(alloc::format!("site index {s}")));
                }
                let layer = &mut self.layers[li];
                if !layer.occ[s] {
                    layer.occ[s] = true;
                    layer.count += 1;
                    if self.occ_any[s] == 0 && self.schedule == Schedule::Front {
                        self.touched.push(s as u32);
                    }
                    self.occ_any[s] += 1;
                }
            }
        }
        let start = self.now;
        for layer in &mut self.layers {
            layer.extinct_at = if layer.count == 0 { start } else { NEVER };
        }
        if self.schedule == Schedule::Front {
            for i in 0..self.touched.len() {
                let s = self.touched[i];
                self.touch(s);
            }
        }
        Ok(())
    }

    /// Restarts a front-scheduled engine on a new window, clearing only the
    /// state touched by the previous run. Much cheaper than building a new
    /// engine when runs are small compared to the box.
    pub fn reset(&mut self, initial: &[&[u32]], start: f64, end: f64) -> Result<()> {
        if self.schedule != Schedule::Front {
            return Err(Error::InvalidParameter("reset needs the front scheduler".into()));
        }
        if end > self.real.horizon() {
            return Err(Error::HorizonExceeded { requested: end, horizon: self.real.horizon() });
        }
        if !(start >= 0.0 && start <= end) {
            return Err(Error::InvalidParameter(alloc::format!("window ({start}, {end}]")));
        }
        for s in self.touched.drain(..) {
            self.occ_any[s as usize] = 0;
            for layer in &mut self.layers {
                layer.occ[s as usize] = false;
            }
        }
        for k in self.activated.drain(..) {
            self.active[k as usize] = false;
        }
        for layer in &mut self.layers {
            layer.count = 0;
            layer.log.clear();
            layer.boundary_contacts = 0;
            layer.first_contact = NEVER;
        }
        self.heap.clear();
        self.changes.clear();
        self.now = start;
        self.end = end;
        self.load(initial)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    /// Changes made by the last [`step`](Self::step): `(layer, change)`.
    pub fn changes(&self) -> &[(usize, RawChange)] {
        &self.changes
    }

    /// Schedules whatever became relevant after a change at site `s`.
    fn touch(&mut self, s: u32) {
        let topo = self.real.topology();
        let ns = topo.n_sites() as u32;
        let mut around = [NO_SITE; 2 * crate::lattice::MAX_DIM];
        let inc = topo.incident(s);
        around[..inc.len()].copy_from_slice(inc);
        if self.relevant(s) {
            self.activate(s);
        }
        for e in around {
            if e != NO_SITE && self.relevant(ns + e) {
                self.activate(ns + e);
            }
        }
    }

    fn activate(&mut self, key: u32) {
        if self.active[key as usize] {
            return;
        }
        self.active[key as usize] = true;
        self.activated.push(key);
        let block = (self.now / BLOCK_WIDTH) as u32;
        if let Some(entry) = self.find_next(key, block, 0, self.now) {
            self.heap.push(entry);
        }
    }

    /// First event of `key` strictly after `after`, searching from
    /// `(block, idx)`, within the window end.
    fn find_next(&mut self, key: u32, mut block: u32, mut idx: u32, after: f64) -> Option<HeapEntry> {
        loop {
            if block as f64 * BLOCK_WIDTH > self.end {
                return None;
            }
            self.real.block_events(key, block, &mut self.scratch);
            for (j, (t, m)) in self.scratch.iter().enumerate().skip(idx as usize) {
                if *t > self.end {
                    return None;
                }
                if *t > after {
                    return Some(HeapEntry { time: *t, key, block, idx: j as u32, mark: *m });
                }
            }
            block += 1;
            idx = 0;
        }
    }

    /// Whether an event of `key` could change some layer: a death at a site
    /// occupied in a layer with deaths, or an edge event with exactly one
    /// occupied endpoint in some layer.
    fn relevant(&self, key: u32) -> bool {
        let topo = self.real.topology();
        let ns = topo.n_sites() as u32;
        if key < ns {
            let k = key as usize;
            self.occ_any[k] > 0 && self.layers.iter().any(|l| l.spec.deaths && l.occ[k])
        } else {
            let [a, b] = topo.ends(key - ns);
            let occ = |l: &Layer, s: u32| s != NO_SITE && l.occ[s as usize];
            let near = |s: u32| s != NO_SITE && self.occ_any[s as usize] > 0;
            (near(a) || near(b)) && self.layers.iter().any(|l| occ(l, a) != occ(l, b))
        }
    }

    fn next_event(&mut self) -> Option<Event> {
        match self.schedule {
            Schedule::Front => loop {
                let top = self.heap.pop()?;
                if !self.relevant(top.key) {
                    self.active[top.key as usize] = false;
                    continue;
                }
                if let Some(next) = self.find_next(top.key, top.block, top.idx + 1, top.time) {
                    self.heap.push(next);
                }
                return Some(Event { time: top.time, key: top.key, mark: top.mark });
            },
            Schedule::Sweep => loop {
                if let Some(ev) = self.sweep_block().get(self.block_pos).copied() {
                    self.block_pos += 1;
                    return Some(ev);
                }
                if self.next_block as f64 * BLOCK_WIDTH > self.end {
                    return None;
                }
                self.refill();
            },
        }
    }

    fn sweep_block(&self) -> &[Event] {
        match self.cache {
            Some(c) if self.next_block > c.first_block => {
                c.blocks.get((self.next_block - 1 - c.first_block) as usize).map_or(&[], |b| b.as_slice())
            }
            Some(_) => &[],
            None => &self.block_buf,
        }
    }

    fn refill(&mut self) {
        if self.cache.is_none() {
            gather_block(self.real, self.next_block, self.now, self.end, &mut self.gather, &mut self.block_buf);
        }
        self.block_pos = 0;
        self.next_block += 1;
    }

    fn peek_time(&mut self) -> Option<f64> {
        match self.schedule {
            Schedule::Front => self.heap.peek().map(|e| e.time),
            Schedule::Sweep => loop {
                if let Some(ev) = self.sweep_block().get(self.block_pos) {
                    return Some(ev.time);
                }
                if self.next_block as f64 * BLOCK_WIDTH > self.end {
                    return None;
                }
                self.refill();
            },
        }
    }

    fn set(&mut self, li: usize, site: u32, birth: bool, time: f64) {
        let layer = &mut self.layers[li];
        layer.occ[site as usize] = birth;
        if birth {
            layer.count += 1;
            if self.occ_any[site as usize] == 0 && self.schedule == Schedule::Front {
                self.touched.push(site);
            }
            self.occ_any[site as usize] += 1;
        } else {
            layer.count -= 1;
            self.occ_any[site as usize] -= 1;
            if layer.count == 0 {
                layer.extinct_at = time;
            }
        }
        let change = RawChange { time, site, birth };
        if layer.spec.record {
            layer.log.push(change);
        }
        self.changes.push((li, change));
    }

    fn apply(&mut self, ev: Event) {
        let first_change = self.changes.len();
        self.apply_event(ev);
        if self.schedule == Schedule::Front {
            for i in first_change..self.changes.len() {
                let s = self.changes[i].1.site;
                self.touch(s);
            }
        }
    }

    fn apply_event(&mut self, ev: Event) {
        let ns = self.real.topology().n_sites() as u32;
        if ev.key < ns {
            let s = ev.key;
            for li in 0..self.layers.len() {
                if self.layers[li].spec.deaths && self.layers[li].occ[s as usize] {
                    self.set(li, s, false, ev.time);
                }
            }
            return;
        }
        let e = ev.key - ns;
        let [a, b] = self.real.topology().ends(e);
        let env_threshold = self.thresholds[e as usize];
        for li in 0..self.layers.len() {
            let pass = match self.layers[li].spec.thinning {
                Thinning::Environment => ev.mark < env_threshold,
                Thinning::Constant(th) => ev.mark < th,
                Thinning::Always => true,
            };
            if !pass {
                continue;
            }
            let layer = &self.layers[li];
            let a_occ = a != NO_SITE && layer.occ[a as usize];
            let b_occ = b != NO_SITE && layer.occ[b as usize];
            if a_occ == b_occ {
                continue;
            }
            let target = if a_occ { b } else { a };
            if target == NO_SITE {
                let l = &mut self.layers[li];
                if l.boundary_contacts == 0 {
                    l.first_contact = ev.time;
                }
                l.boundary_contacts += 1;
                continue;
            }
            self.set(li, target, true, ev.time);
        }
    }

    /// Time of the next event in the window, without applying it.
    pub fn next_time(&mut self) -> Option<f64> {
        self.peek_time()
    }

    /// Applies the next event, if any remains in the window. Returns its time.
    pub fn step(&mut self) -> Option<f64> {
        self.changes.clear();
        let ev = self.next_event()?;
        self.now = ev.time;
        self.apply(ev);
        Some(ev.time)
    }

    /// Applies all events with time `≤ t`.
    pub fn advance_to(&mut self, t: f64) {
        let t = t.min(self.end);
        while let Some(next) = self.peek_time() {
            if next > t {
                break;
            }
            self.step();
        }
        if t > self.now {
            self.now = t;
        }
    }

    /// Runs to the end of the window.
    pub fn run(&mut self) {
        self.advance_to(self.end);
    }

    /// Runs until every layer is empty or the window ends.
    pub fn run_until_extinct(&mut self) {
        while self.layers.iter().any(|l| l.count > 0) {
            if self.step().is_none() {
                self.now = self.end;
                break;
            }
        }
    }
}

/// Membership of `(site, time)` in the set of space-time points from which
/// an open path (for the environment thinning) reaches the horizon.
#[derive(Debug, Clone)]
pub struct DualSurvival {
    end: f64,
    /// Membership flips per site, in decreasing time order. Membership at
    /// `end` is `true` for every site.
    flips: Vec<Vec<f64>>,
}

impl DualSurvival {
    /// Runs the dual process backwards from the full box at `end` down to
    /// `start`.
    pub fn compute(real: &GraphicalRealization, thresholds: &[f64], start: f64, end: f64) -> Result<Self> {
        let cache = EventCache::build(real, start, end)?;
        Self::from_cache(real, thresholds, &cache)
    }

    /// Same as [`compute`](Self::compute) over the window of `cache`.
    pub fn from_cache(real: &GraphicalRealization, thresholds: &[f64], cache: &EventCache) -> Result<Self> {
        let topo = real.topology();
        if thresholds.len() != topo.n_edges() {
            return Err(Error::EnvironmentMismatch);
        }
        let ns = topo.n_sites() as u32;
        let mut member = vec![true; ns as usize];
        let mut flips: Vec<Vec<f64>> = vec![Vec::new(); ns as usize];
        for ev in cache.iter_rev() {
            if ev.key < ns {
                let s = ev.key as usize;
                if member[s] {
                    member[s] = false;
                    flips[s].push(ev.time);
                }
            } else {
                let e = ev.key - ns;
                if ev.mark >= thresholds[e as usize] {
                    continue;
                }
                let [a, b] = topo.ends(e);
                let a_in = a != NO_SITE && member[a as usize];
                let b_in = b != NO_SITE && member[b as usize];
                if a_in == b_in {
                    continue;
                }
                let target = if a_in { b } else { a };
                if target != NO_SITE {
                    member[target as usize] = true;
                    flips[target as usize].push(ev.time);
                }
            }
        }
        Ok(DualSurvival { end: cache.end, flips })
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    /// Whether the process started from `site` at absolute time `t`
    /// (applying events in `(t, end]`) is still alive at `end`.
    pub fn survives(&self, site: u32, t: f64) -> bool {
        let f = &self.flips[site as usize];
        let later = f.partition_point(|s| *s > t);
        later % 2 == 0
    }
}

/// Occupancy history of one process: per site, the alternating birth and
/// death times (births at even positions), in increasing order.
#[derive(Debug, Clone, Default)]
pub struct OccupancyHistory {
    changes: Vec<Vec<f64>>,
    initially: Vec<bool>,
    end: f64,
}

impl OccupancyHistory {
    pub fn new(n_sites: usize, initial: &[u32], end: f64) -> Self {
        let mut initially = vec![false; n_sites];
        for s in initial {
            initially[*s as usize] = true;
        }
        OccupancyHistory { changes: vec![Vec::new(); n_sites], initially, end }
    }

    pub fn record(&mut self, c: &RawChange) {
        self.changes[c.site as usize].push(c.time);
    }

    pub fn from_log(n_sites: usize, initial: &[u32], log: &[RawChange], end: f64) -> Self {
        let mut h = Self::new(n_sites, initial, end);
        for c in log {
            h.record(c);
        }
        h
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn occupied_at(&self, site: u32, t: f64) -> bool {
        let c = &self.changes[site as usize];
        let n = c.partition_point(|s| *s <= t);
        self.initially[site as usize] ^ (n % 2 == 1)
    }

    /// `inf{s ≥ t : site occupied at s}` within the recorded window.
    pub fn first_occupied_from(&self, site: u32, t: f64) -> Option<f64> {
        let c = &self.changes[site as usize];
        let n = c.partition_point(|s| *s <= t);
        if self.initially[site as usize] ^ (n % 2 == 1) {
            return Some(t);
        }
        c.get(n).copied()
    }

    /// First time the site is occupied (the start time if initially occupied).
    pub fn first_hit(&self, site: u32, start: f64) -> f64 {
        if self.initially[site as usize] {
            start
        } else {
            self.changes[site as usize].first().copied().unwrap_or(NEVER)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ObjectId, Site};

    fn thresholds(real: &GraphicalRealization, th: f64) -> Vec<f64> {
        vec![th; real.topology().n_edges()]
    }

    #[test]
    fn front_and_sweep_agree_on_logs() {
        for seed in 0..5 {
            let real = GraphicalRealization::new(2, 6, 8.0, seed, 2.0).unwrap();
            let th = thresholds(&real, 0.8);
            let origin = real.object_key(&ObjectId::Site(Site::ORIGIN)).unwrap();
            let specs = [LayerSpec::contact()];
            let mut f = Engine::new(&real, &th, &specs, &[&[origin]], 0.0, 8.0, Schedule::Front).unwrap();
            f.run();
            let mut s = Engine::new(&real, &th, &specs, &[&[origin]], 0.0, 8.0, Schedule::Sweep).unwrap();
            s.run();
            assert_eq!(f.layer(0).log(), s.layer(0).log());
            assert_eq!(f.layer(0).boundary_contacts(), s.layer(0).boundary_contacts());
        }
    }

    #[test]
    fn cached_sweep_matches_generated() {
        let real = GraphicalRealization::new(2, 5, 6.0, 11, 2.0).unwrap();
        let th = thresholds(&real, 0.7);
        let cache = EventCache::build(&real, 0.5, 6.0).unwrap();
        let specs = [LayerSpec::contact()];
        let mut a = Engine::new(&real, &th, &specs, &[&[3, 60]], 0.5, 6.0, Schedule::Sweep).unwrap();
        a.run();
        let mut b = Engine::with_cache(&real, &th, &specs, &[&[3, 60]], &cache).unwrap();
        b.run();
        assert_eq!(a.layer(0).log(), b.layer(0).log());
    }

    #[test]
    fn reset_matches_fresh_engine() {
        let real = GraphicalRealization::new(1, 10, 8.0, 12, 2.0).unwrap();
        let th = thresholds(&real, 0.8);
        let specs = [LayerSpec::contact()];
        let mut reused = Engine::new(&real, &th, &specs, &[&[10]], 0.0, 8.0, Schedule::Front).unwrap();
        reused.run();
        for (site, start) in [(3u32, 1.5), (10, 0.0), (20, 4.0), (7, 2.25)] {
            reused.reset(&[&[site]], start, 8.0).unwrap();
            reused.run();
            let mut fresh = Engine::new(&real, &th, &specs, &[&[site]], start, 8.0, Schedule::Front).unwrap();
            fresh.run();
            assert_eq!(reused.layer(0).log(), fresh.layer(0).log());
            assert_eq!(reused.layer(0).extinct_at(), fresh.layer(0).extinct_at());
        }
    }

    #[test]
    fn dual_matches_forward_survival() {
        let real = GraphicalRealization::new(1, 8, 6.0, 3, 2.0).unwrap();
        let th = thresholds(&real, 0.9);
        let dual = DualSurvival::compute(&real, &th, 0.0, 6.0).unwrap();
        let specs = [LayerSpec { record: false, ..LayerSpec::contact() }];
        for site in 0..17u32 {
            for k in 0..12 {
                let t = k as f64 * 0.5;
                let mut e = Engine::new(&real, &th, &specs, &[&[site]], t, 6.0, Schedule::Front).unwrap();
                e.run();
                assert_eq!(dual.survives(site, t), e.layer(0).count() > 0, "site {site} t {t}");
            }
        }
    }

    #[test]
    fn history_queries() {
        let log = [
            RawChange { time: 1.0, site: 0, birth: true },
            RawChange { time: 2.0, site: 0, birth: false },
            RawChange { time: 3.0, site: 0, birth: true },
        ];
        let h = OccupancyHistory::from_log(2, &[], &log, 10.0);
        assert!(!h.occupied_at(0, 0.5));
        assert!(h.occupied_at(0, 1.0));
        assert!(!h.occupied_at(0, 2.5));
        assert_eq!(h.first_occupied_from(0, 0.0), Some(1.0));
        assert_eq!(h.first_occupied_from(0, 1.5), Some(1.5));
        assert_eq!(h.first_occupied_from(0, 2.0), Some(3.0));
        assert_eq!(h.first_occupied_from(1, 0.0), None);
        assert_eq!(h.first_hit(0, 0.0), 1.0);
        assert_eq!(h.first_hit(1, 0.0), NEVER);
    }
}
