//! The randomness of the graphical construction.
//!
//! Each site carries a rate-1 Poisson clock (deaths) and each edge a clock at
//! the base rate `λ_max`, every event tagged with a uniform mark. Time is cut
//! into blocks of fixed width; the events of one object in one block are a
//! pure function of `(master seed, object, block)`, so streams can be read
//! forwards, backwards or from any starting time without stored state.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lattice::{LatticeBox, ObjectId, Site, Topology};
use crate::rng::{block_key, block_word, combine, unit_f64};

/// Width of the time blocks streams are generated in.
pub const BLOCK_WIDTH: f64 = 1.0;

const MARK_BASE: u32 = 1 << 31;

/// Inverse-CDF table for Poisson counts of a fixed mean.
#[derive(Debug, Clone)]
pub(crate) struct PoissonTable {
    cdf: Vec<f64>,
}

impl PoissonTable {
    pub(crate) fn new(mean: f64) -> Self {
        let mut cdf = Vec::new();
        let mut p = libm::exp(-mean);
        let mut acc = 0.0;
        let mut k = 0u32;
        loop {
            acc += p;
            cdf.push(acc);
            k += 1;
            p *= mean / k as f64;
            if (1.0 - acc < 1e-17 && k as f64 > mean) || k > 10_000 {
                break;
            }
        }
        PoissonTable { cdf }
    }

    #[inline]
    pub(crate) fn sample(&self, u: f64) -> u32 {
        // linear scan: means here are small
        for (k, c) in self.cdf.iter().enumerate() {
            if u < *c {
                return k as u32;
            }
        }
        self.cdf.len() as u32
    }
}

/// Events of one object over `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedEventStream {
    pub times: Vec<f64>,
    pub marks: Vec<f64>,
    pub rate: f64,
    pub horizon: f64,
}

impl MarkedEventStream {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// The realization `ω`: a box of `Z^d`, a time horizon and a master seed.
#[derive(Debug, Clone)]
pub struct GraphicalRealization {
    bbox: LatticeBox,
    topo: Arc<Topology>,
    horizon: f64,
    master_seed: u64,
    edge_rate: f64,
    keys: Arc<Vec<u64>>,
    site_table: Arc<PoissonTable>,
    edge_table: Arc<PoissonTable>,
}

/// Hash key of an object's stream; depends only on the seed and the
/// object's absolute coordinates.
pub fn stream_key(master_seed: u64, id: &ObjectId) -> u64 {
    let (tag, site, axis) = match id {
        ObjectId::Site(s) => (1u64, *s, 0u64),
        ObjectId::Edge(e) => (2u64, e.low(), e.axis() as u64),
    };
    let mut k = combine(master_seed, tag);
    for c in site.0 {
        k = combine(k, c as i64 as u64);
    }
    combine(k, axis)
}

impl GraphicalRealization {
    /// Realization on the box `‖z‖∞ ≤ radius` of `Z^dim`.
    pub fn new(dim: usize, radius: u32, horizon: f64, master_seed: u64, edge_rate: f64) -> Result<Self> {
        Self::with_box(LatticeBox::centered(dim, radius)?, horizon, master_seed, edge_rate)
    }

    pub fn with_box(bbox: LatticeBox, horizon: f64, master_seed: u64, edge_rate: f64) -> Result<Self> {
        Self::with_topology(bbox, Arc::new(Topology::new(&bbox)), horizon, master_seed, edge_rate)
    }

    /// As [`with_box`](Self::with_box), reusing index tables built for a box
    /// of the same shape.
    pub fn with_topology(
        bbox: LatticeBox,
        topo: Arc<Topology>,
        horizon: f64,
        master_seed: u64,
        edge_rate: f64,
    ) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon {horizon}")));
        }
        if !(edge_rate > 0.0 && edge_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("edge rate {edge_rate}")));
        }
        if topo.n_sites() != bbox.len() || topo.dim() != bbox.dim() {
            return Err(Error::InvalidParameter("topology does not match box".into()));
        }
        let mut keys = Vec::with_capacity(topo.n_objects());
        for i in 0..topo.n_sites() as u32 {
            keys.push(stream_key(master_seed, &ObjectId::Site(bbox.site_at(i))));
        }
        for e in 0..topo.n_edges() as u32 {
            keys.push(stream_key(master_seed, &ObjectId::Edge(topo.edge_at(bbox.lo(), e))));
        }
        Ok(GraphicalRealization {
            bbox,
            topo,
            horizon,
            master_seed,
            edge_rate,
            keys: Arc::new(keys),
            site_table: Arc::new(PoissonTable::new(BLOCK_WIDTH)),
            edge_table: Arc::new(PoissonTable::new(edge_rate * BLOCK_WIDTH)),
        })
    }

    pub fn bbox(&self) -> &LatticeBox {
        &self.bbox
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topo
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Base rate of edge clocks (`λ_max`).
    pub fn edge_rate(&self) -> f64 {
        self.edge_rate
    }

    pub fn dim(&self) -> usize {
        self.bbox.dim()
    }

    /// Number of blocks covering `[0, horizon]`.
    pub fn n_blocks(&self) -> u32 {
        libm::ceil(self.horizon / BLOCK_WIDTH).max(1.0) as u32
    }

    /// Engine key of an object: sites first, then edges.
    pub fn object_key(&self, id: &ObjectId) -> Result<u32> {
        match id {
            ObjectId::Site(s) => self
                .bbox
                .index_of(*s)
                .ok_or_else(|| Error::OutOfBox(format!("{s:?}"))),
            ObjectId::Edge(e) => self
                .topo
                .edge_index(self.bbox.lo(), e)
                .map(|i| i + self.topo.n_sites() as u32)
                .ok_or_else(|| Error::OutOfBox(format!("{e:?}"))),
        }
    }

    pub fn object_at(&self, key: u32) -> ObjectId {
        let ns = self.topo.n_sites() as u32;
        if key < ns {
            ObjectId::Site(self.bbox.site_at(key))
        } else {
            ObjectId::Edge(self.topo.edge_at(self.bbox.lo(), key - ns))
        }
    }

    #[inline]
    pub(crate) fn is_site_key(&self, key: u32) -> bool {
        (key as usize) < self.topo.n_sites()
    }

    /// Events (time, mark) of object `key` in `block`, sorted by time.
    /// Times may exceed the horizon in the last block; callers filter.
    pub fn block_events(&self, key: u32, block: u32, out: &mut Vec<(f64, f64)>) {
        out.clear();
        let hkey = self.keys[key as usize];
        let table = if self.is_site_key(key) { &self.site_table } else { &self.edge_table };
        let bk = block_key(hkey, block);
        let n = table.sample(unit_f64(block_word(bk, 0)));
        if n == 0 {
            return;
        }
        let start = block as f64 * BLOCK_WIDTH;
        for i in 0..n {
            out.push((start + BLOCK_WIDTH * unit_f64(block_word(bk, 1 + i)), 0.0));
        }
        out.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        for (j, ev) in out.iter_mut().enumerate() {
            ev.1 = unit_f64(block_word(bk, MARK_BASE + j as u32));
        }
    }

    /// The complete stream of `id` over `[0, horizon]`.
    pub fn stream_for(&self, id: &ObjectId) -> Result<MarkedEventStream> {
        let key = self.object_key(id)?;
        let rate = if self.is_site_key(key) { 1.0 } else { self.edge_rate };
        let mut times = Vec::new();
        let mut marks = Vec::new();
        let mut buf = Vec::new();
        if self.horizon > 0.0 {
            for b in 0..self.n_blocks() {
                self.block_events(key, b, &mut buf);
                for (t, m) in &buf {
                    if *t <= self.horizon {
                        times.push(*t);
                        marks.push(*m);
                    }
                }
            }
        }
        Ok(MarkedEventStream { times, marks, rate, horizon: self.horizon })
    }

    /// The unshifted view.
    pub fn view(&self) -> RealizationView<'_> {
        RealizationView { base: self, time_offset: 0.0, space_offset: Site::ORIGIN }
    }
}

/// `T_x ∘ θ_t` applied to a realization: object `o` reads the base object
/// `o + space_offset`, at base times `≥ time_offset`, shifted back by
/// `time_offset`.
#[derive(Debug, Clone, Copy)]
pub struct RealizationView<'a> {
    base: &'a GraphicalRealization,
    time_offset: f64,
    space_offset: Site,
}

impl PartialEq for RealizationView<'_> {
    fn eq(&self, other: &Self) -> bool {
        core::ptr::eq(self.base, other.base)
            && self.time_offset == other.time_offset
            && self.space_offset == other.space_offset
    }
}

impl<'a> RealizationView<'a> {
    pub fn base(&self) -> &'a GraphicalRealization {
        self.base
    }

    pub fn time_offset(&self) -> f64 {
        self.time_offset
    }

    pub fn space_offset(&self) -> Site {
        self.space_offset
    }

    /// Time left before the base horizon.
    pub fn remaining(&self) -> f64 {
        self.base.horizon - self.time_offset
    }

    /// The box in this view's coordinates.
    pub fn bbox(&self) -> LatticeBox {
        self.base.bbox.translate(-self.space_offset)
    }

    /// `θ_t`.
    pub fn time_shift(&self, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("negative time shift {t}")));
        }
        let offset = self.time_offset + t;
        if offset > self.base.horizon {
            return Err(Error::HorizonExceeded { requested: offset, horizon: self.base.horizon });
        }
        Ok(RealizationView { time_offset: offset, ..*self })
    }

    /// `T_x`.
    pub fn space_shift(&self, x: Site) -> Result<Self> {
        let offset = self.space_offset + x;
        let dim = self.base.dim();
        if x.support_dim() > dim {
            return Err(Error::OutOfBox(format!("shift {x:?} in dimension {dim}")));
        }
        Ok(RealizationView { space_offset: offset, ..*self })
    }

    /// Events of `id` as seen through the view.
    pub fn events(&self, id: &ObjectId) -> Result<MarkedEventStream> {
        let base = self.base.stream_for(&id.translate(self.space_offset))?;
        let mut times = Vec::new();
        let mut marks = Vec::new();
        for (t, m) in base.times.iter().zip(&base.marks) {
            if *t >= self.time_offset {
                times.push(*t - self.time_offset);
                marks.push(*m);
            }
        }
        Ok(MarkedEventStream { times, marks, rate: base.rate, horizon: self.remaining() })
    }

    /// Base object key of a site given in view coordinates.
    pub fn site_key(&self, s: Site) -> Result<u32> {
        self.base.object_key(&ObjectId::Site(s + self.space_offset))
    }

    /// Base time of view time `t`.
    pub fn abs_time(&self, t: f64) -> f64 {
        self.time_offset + t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Edge;

    fn real() -> GraphicalRealization {
        GraphicalRealization::new(2, 4, 10.0, 99, 2.0).unwrap()
    }

    #[test]
    fn poisson_table_matches_pmf() {
        let t = PoissonTable::new(2.0);
        assert!((t.cdf[0] - libm::exp(-2.0)).abs() < 1e-15);
        assert_eq!(t.sample(0.0), 0);
        assert_eq!(t.sample(0.999_999_999_999), t.cdf.iter().position(|c| *c > 0.999_999_999_999).unwrap() as u32);
    }

    #[test]
    fn empty_window() {
        let r = GraphicalRealization::new(1, 3, 0.0, 1, 1.0).unwrap();
        assert!(r.stream_for(&ObjectId::Site(Site::ORIGIN)).unwrap().is_empty());
    }

    #[test]
    fn streams_are_deterministic_and_sorted() {
        let r = real();
        let id = ObjectId::Edge(Edge::from_low(Site::from_slice(&[1, -2]), 1));
        let a = r.stream_for(&id).unwrap();
        let b = real().stream_for(&id).unwrap();
        assert_eq!(a, b);
        assert!(a.times.windows(2).all(|w| w[0] < w[1]));
        assert!(a.times.iter().all(|t| (0.0..=10.0).contains(t)));
        assert!(a.marks.iter().all(|m| (0.0..1.0).contains(m)));
    }

    #[test]
    fn stream_content_independent_of_box() {
        let small = GraphicalRealization::new(2, 2, 10.0, 5, 2.0).unwrap();
        let big = GraphicalRealization::new(2, 6, 10.0, 5, 2.0).unwrap();
        let id = ObjectId::Site(Site::from_slice(&[1, 1]));
        assert_eq!(small.stream_for(&id).unwrap(), big.stream_for(&id).unwrap());
    }

    #[test]
    fn out_of_box_is_an_error() {
        let r = real();
        assert!(matches!(r.stream_for(&ObjectId::Site(Site::from_slice(&[5, 0]))), Err(Error::OutOfBox(_))));
        // straddling edges are materialized, outer ones are not
        assert!(r.stream_for(&ObjectId::Edge(Edge::from_low(Site::from_slice(&[4, 0]), 0))).is_ok());
        assert!(r.stream_for(&ObjectId::Edge(Edge::from_low(Site::from_slice(&[5, 0]), 0))).is_err());
    }

    #[test]
    fn time_shift_semantics() {
        let r = real();
        let v = r.view();
        assert_eq!(v.time_shift(0.0).unwrap(), v);
        let id = ObjectId::Site(Site::ORIGIN);
        let base = v.events(&id).unwrap();
        let shifted = v.time_shift(1.0).unwrap().events(&id).unwrap();
        let expect: Vec<f64> = base.times.iter().filter(|t| **t >= 1.0).map(|t| t - 1.0).collect();
        assert_eq!(shifted.times, expect);
        assert!(matches!(v.time_shift(10.5), Err(Error::HorizonExceeded { .. })));
    }

    #[test]
    fn space_shift_semantics() {
        let r = real();
        let v = r.view();
        let x = Site::from_slice(&[1, -1]);
        let z = Site::from_slice(&[2, 0]);
        let through = v.space_shift(x).unwrap().events(&ObjectId::Site(z)).unwrap();
        let direct = v.events(&ObjectId::Site(z + x)).unwrap();
        assert_eq!(through, direct);
        assert_eq!(v.space_shift(x).unwrap().space_shift(-x).unwrap(), v);
    }
}
