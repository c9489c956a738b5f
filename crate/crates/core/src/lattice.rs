//! Sites, edges and finite boxes of `Z^d`.

use alloc::format;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 4;

/// Marker for "no site" in index tables.
pub const NO_SITE: u32 = u32::MAX;

/// A point of `Z^d`. Coordinates past the dimension in use are zero, so the
/// derived ordering is the lexicographic order on `Z^d`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site(pub [i32; MAX_DIM]);

impl Site {
    pub const ORIGIN: Site = Site([0; MAX_DIM]);

    pub fn from_slice(coords: &[i32]) -> Self {
        assert!(coords.len() <= MAX_DIM, "dimension above {MAX_DIM}");
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Site(c)
    }

    /// `k` times the unit vector along `axis`.
    pub fn unit(axis: usize, k: i32) -> Self {
        let mut c = [0; MAX_DIM];
        c[axis] = k;
        Site(c)
    }

    pub fn coords(&self, dim: usize) -> &[i32] {
        &self.0[..dim]
    }

    pub fn norm_inf(&self) -> i64 {
        self.0.iter().map(|c| (*c as i64).abs()).max().unwrap_or(0)
    }

    pub fn norm1(&self) -> i64 {
        self.0.iter().map(|c| (*c as i64).abs()).sum()
    }

    pub fn norm2(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|c| (*c as f64) * (*c as f64)).sum())
    }

    pub fn is_origin(&self) -> bool {
        *self == Site::ORIGIN
    }

    /// Dimension of the smallest `Z^k` containing the point.
    pub fn support_dim(&self) -> usize {
        self.0.iter().rposition(|c| *c != 0).map_or(0, |i| i + 1)
    }
}

impl Add for Site {
    type Output = Site;
    fn add(self, rhs: Site) -> Site {
        let mut c = self.0;
        for (a, b) in c.iter_mut().zip(rhs.0) {
            *a += b;
        }
        Site(c)
    }
}

impl Sub for Site {
    type Output = Site;
    fn sub(self, rhs: Site) -> Site {
        self + (-rhs)
    }
}

impl Neg for Site {
    type Output = Site;
    fn neg(self) -> Site {
        Site(self.0.map(|c| -c))
    }
}

impl Mul<i32> for Site {
    type Output = Site;
    fn mul(self, k: i32) -> Site {
        Site(self.0.map(|c| c * k))
    }
}

/// A nearest-neighbour edge, stored canonically by its lower endpoint and
/// the axis along which it points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    low: Site,
    axis: u8,
}

impl Edge {
    /// The edge joining `a` and `b`, in either order.
    pub fn between(a: Site, b: Site) -> Result<Self> {
        let diff = b - a;
        if diff.norm1() != 1 {
            return Err(Error::InvalidParameter(format!(
                "{a:?} and {b:?} are not nearest neighbours"
            )));
        }
        let axis = diff.0.iter().position(|c| *c != 0).unwrap();
        let low = if diff.0[axis] > 0 { a } else { b };
        Ok(Edge { low, axis: axis as u8 })
    }

    pub fn from_low(low: Site, axis: usize) -> Self {
        assert!(axis < MAX_DIM);
        Edge { low, axis: axis as u8 }
    }

    pub fn low(&self) -> Site {
        self.low
    }

    pub fn high(&self) -> Site {
        self.low + Site::unit(self.axis as usize, 1)
    }

    pub fn axis(&self) -> usize {
        self.axis as usize
    }

    pub fn translate(&self, x: Site) -> Edge {
        Edge { low: self.low + x, axis: self.axis }
    }
}

/// Anything that carries a Poisson clock in the graphical construction.
/// Sites order before edges; within a kind the order is lexicographic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectId {
    Site(Site),
    Edge(Edge),
}

impl ObjectId {
    pub fn translate(&self, x: Site) -> ObjectId {
        match self {
            ObjectId::Site(s) => ObjectId::Site(*s + x),
            ObjectId::Edge(e) => ObjectId::Edge(e.translate(x)),
        }
    }
}

/// Axis-aligned box `lo ..= hi` in `Z^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeBox {
    dim: usize,
    lo: Site,
    hi: Site,
}

impl LatticeBox {
    pub fn new(dim: usize, lo: Site, hi: Site) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidParameter(format!("dimension {dim} not in 1..={MAX_DIM}")));
        }
        for a in 0..MAX_DIM {
            if a < dim && lo.0[a] > hi.0[a] {
                return Err(Error::InvalidParameter(format!("empty box {lo:?}..={hi:?}")));
            }
            if a >= dim && (lo.0[a] != 0 || hi.0[a] != 0) {
                return Err(Error::InvalidParameter(format!("coordinate {a} used in dimension {dim}")));
            }
        }
        Ok(LatticeBox { dim, lo, hi })
    }

    /// The box `{z : ‖z‖∞ ≤ radius}`.
    pub fn centered(dim: usize, radius: u32) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidParameter("box radius must be positive".into()));
        }
        let r = radius as i32;
        let mut lo = [0; MAX_DIM];
        let mut hi = [0; MAX_DIM];
        for a in 0..dim.min(MAX_DIM) {
            lo[a] = -r;
            hi[a] = r;
        }
        Self::new(dim, Site(lo), Site(hi))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> Site {
        self.lo
    }

    pub fn hi(&self) -> Site {
        self.hi
    }

    pub fn side(&self, axis: usize) -> u32 {
        (self.hi.0[axis] - self.lo.0[axis] + 1) as u32
    }

    pub fn len(&self) -> usize {
        (0..self.dim).map(|a| self.side(a) as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, s: Site) -> bool {
        (0..MAX_DIM).all(|a| s.0[a] >= self.lo.0[a] && s.0[a] <= self.hi.0[a])
    }

    /// Same box seen from an observer standing at `x`: every site moves by `-x`.
    pub fn translate(&self, x: Site) -> LatticeBox {
        LatticeBox { dim: self.dim, lo: self.lo + x, hi: self.hi + x }
    }

    /// Row-major index with the first coordinate most significant, so
    /// indices follow the lexicographic order of sites.
    pub fn index_of(&self, s: Site) -> Option<u32> {
        if !self.contains(s) {
            return None;
        }
        let mut idx: u64 = 0;
        for a in 0..self.dim {
            idx = idx * self.side(a) as u64 + (s.0[a] - self.lo.0[a]) as u64;
        }
        Some(idx as u32)
    }

    pub fn site_at(&self, mut idx: u32) -> Site {
        let mut c = [0; MAX_DIM];
        for a in (0..self.dim).rev() {
            let side = self.side(a);
            c[a] = self.lo.0[a] + (idx % side) as i32;
            idx /= side;
        }
        Site(c)
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len() as u32).map(move |i| self.site_at(i))
    }

    /// True when `s` lies on the outer face of the box.
    pub fn on_boundary(&self, s: Site) -> bool {
        (0..self.dim).any(|a| s.0[a] == self.lo.0[a] || s.0[a] == self.hi.0[a])
    }

    pub fn same_shape(&self, other: &LatticeBox) -> bool {
        self.dim == other.dim && (0..self.dim).all(|a| self.side(a) == other.side(a))
    }
}

/// Index tables for a box shape: which sites each edge joins and which
/// edges touch each site. Independent of where the box sits in `Z^d`.
#[derive(Debug, Clone)]
pub struct Topology {
    dim: usize,
    sides: [u32; MAX_DIM],
    n_sites: u32,
    /// Endpoints (low, high) per edge; `NO_SITE` for an endpoint outside.
    ends: Vec<[u32; 2]>,
    /// Low endpoint relative to the box corner, and axis, per edge.
    edge_rel: Vec<([i32; MAX_DIM], u8)>,
    /// `2 * dim` incident edges per site: `[+e_0, -e_0, +e_1, -e_1, ...]`.
    incident: Vec<u32>,
}

impl Topology {
    /// Every edge with at least one endpoint in the box, in lexicographic
    /// order of `(low endpoint, axis)`.
    pub fn new(bbox: &LatticeBox) -> Self {
        let dim = bbox.dim;
        let mut sides = [1u32; MAX_DIM];
        for (a, side) in sides.iter_mut().enumerate().take(dim) {
            *side = bbox.side(a);
        }
        let n_sites = bbox.len() as u32;
        let rel_index = |c: &[i32; MAX_DIM]| -> u32 {
            let mut idx: u64 = 0;
            for a in 0..dim {
                if c[a] < 0 || c[a] >= sides[a] as i32 {
                    return NO_SITE;
                }
                idx = idx * sides[a] as u64 + c[a] as u64;
            }
            idx as u32
        };
        // Low endpoints range over the box extended by one cell downwards.
        let ext: Vec<u32> = (0..dim).map(|a| sides[a] + 1).collect();
        let n_ext: usize = ext.iter().map(|s| *s as usize).product();
        let mut ends = Vec::new();
        let mut edge_rel = Vec::new();
        let mut incident = alloc::vec![NO_SITE; n_sites as usize * 2 * dim];
        for cell in 0..n_ext {
            let mut c = [0i32; MAX_DIM];
            let mut rem = cell;
            for a in (0..dim).rev() {
                c[a] = (rem % ext[a] as usize) as i32 - 1;
                rem /= ext[a] as usize;
            }
            for axis in 0..dim {
                let mut h = c;
                h[axis] += 1;
                let lo_idx = rel_index(&c);
                let hi_idx = rel_index(&h);
                // the edge must have at least one endpoint in the box and its
                // transverse coordinates inside
                let transverse_ok = (0..dim).all(|a| a == axis || (c[a] >= 0 && c[a] < sides[a] as i32));
                if !transverse_ok || (lo_idx == NO_SITE && hi_idx == NO_SITE) {
                    continue;
                }
                let e = ends.len() as u32;
                ends.push([lo_idx, hi_idx]);
                edge_rel.push((c, axis as u8));
                if lo_idx != NO_SITE {
                    incident[lo_idx as usize * 2 * dim + 2 * axis] = e;
                }
                if hi_idx != NO_SITE {
                    incident[hi_idx as usize * 2 * dim + 2 * axis + 1] = e;
                }
            }
        }
        Topology { dim, sides, n_sites, ends, edge_rel, incident }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites as usize
    }

    pub fn n_edges(&self) -> usize {
        self.ends.len()
    }

    pub fn n_objects(&self) -> usize {
        self.n_sites() + self.n_edges()
    }

    #[inline]
    pub fn ends(&self, edge: u32) -> [u32; 2] {
        self.ends[edge as usize]
    }

    #[inline]
    pub fn incident(&self, site: u32) -> &[u32] {
        let k = 2 * self.dim;
        &self.incident[site as usize * k..(site as usize + 1) * k]
    }

    /// Absolute edge for compact index `edge` of a box with corner `lo`.
    pub fn edge_at(&self, lo: Site, edge: u32) -> Edge {
        let (rel, axis) = self.edge_rel[edge as usize];
        Edge::from_low(lo + Site(rel), axis as usize)
    }

    /// Compact index of `edge` in a box with corner `lo`.
    pub fn edge_index(&self, lo: Site, edge: &Edge) -> Option<u32> {
        let rel = edge.low() - lo;
        let axis = edge.axis();
        if axis >= self.dim {
            return None;
        }
        // binary search on the lexicographic order
        let key = (rel.0, axis as u8);
        self.edge_rel.binary_search(&key).ok().map(|i| i as u32)
    }

    pub fn sides(&self) -> &[u32] {
        &self.sides[..self.dim]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_canonical_order() {
        let a = Site::from_slice(&[1, 2]);
        let b = Site::from_slice(&[1, 3]);
        let e1 = Edge::between(a, b).unwrap();
        let e2 = Edge::between(b, a).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.low(), a);
        assert_eq!(e1.high(), b);
        assert!(Edge::between(a, Site::from_slice(&[2, 3])).is_err());
        assert!(Edge::between(a, a).is_err());
    }

    #[test]
    fn box_indexing_roundtrip_and_order() {
        let b = LatticeBox::centered(2, 3).unwrap();
        assert_eq!(b.len(), 49);
        let mut prev = None;
        for i in 0..b.len() as u32 {
            let s = b.site_at(i);
            assert_eq!(b.index_of(s), Some(i));
            if let Some(p) = prev {
                assert!(p < s);
            }
            prev = Some(s);
        }
        assert_eq!(b.index_of(Site::from_slice(&[4, 0])), None);
    }

    #[test]
    fn topology_counts_and_incidence() {
        // 1-D box of 4 sites: 3 inner edges plus 2 straddling the boundary
        let b = LatticeBox::new(1, Site::from_slice(&[0]), Site::from_slice(&[3])).unwrap();
        let t = Topology::new(&b);
        assert_eq!(t.n_edges(), 5);
        assert_eq!(t.ends(0), [NO_SITE, 0]);
        assert_eq!(t.ends(4), [3, NO_SITE]);
        // 2-D 3x3: 2*3*4 edges touching the box
        let b2 = LatticeBox::centered(2, 1).unwrap();
        let t2 = Topology::new(&b2);
        assert_eq!(t2.n_edges(), 24);
        for s in 0..t2.n_sites() as u32 {
            for (k, e) in t2.incident(s).iter().enumerate() {
                let ends = t2.ends(*e);
                assert_eq!(ends[k % 2], s);
            }
        }
        for e in 0..t2.n_edges() as u32 {
            let edge = t2.edge_at(b2.lo(), e);
            assert_eq!(t2.edge_index(b2.lo(), &edge), Some(e));
            assert_eq!(b2.index_of(edge.low()).unwrap_or(NO_SITE), t2.ends(e)[0]);
            assert_eq!(b2.index_of(edge.high()).unwrap_or(NO_SITE), t2.ends(e)[1]);
        }
        // lexicographic order of compact edges
        for e in 1..t2.n_edges() as u32 {
            assert!(t2.edge_at(b2.lo(), e - 1) < t2.edge_at(b2.lo(), e));
        }
    }
}
