//! Exact transient law of the contact process on very small boxes, by
//! uniformization of the explicit generator. Independent of the event
//! engine: it only reads the rate table of an [`Environment`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::Configuration;
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::lattice::{LatticeBox, Site};

/// Largest box the oracle accepts.
pub const MAX_SITES: usize = 12;
/// Target truncation error of [`ExactChain::transient`].
pub const TRUNCATION_TARGET: f64 = 1e-10;

/// Generator of the contact process on all subsets of a small box, with
/// states encoded as bitmasks over box indices.
#[derive(Clone, Debug)]
pub struct ExactChain {
    bbox: LatticeBox,
    /// `(i, j, λ)` per edge of the box.
    edges: Vec<(usize, usize, f64)>,
    /// Off-diagonal transitions per state: `(target, rate)`.
    rows: Vec<Vec<(u32, f64)>>,
    exit: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OracleEvent {
    Survives,
    Occupied(Site),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactProb {
    pub value: f64,
    /// Upper bound on the mass dropped by truncating the Poisson series.
    pub truncation_bound: f64,
    pub terms: usize,
}

impl ExactChain {
    pub fn new(env: &Environment) -> Result<Self> {
        let bbox = *env.bbox();
        let n = bbox.len();
        if n > MAX_SITES {
            return Err(Error::StateSpaceTooLarge { sites: n, max: MAX_SITES });
        }
        // edges leaving the box only ever try to infect outside sites
        let edges: Vec<(usize, usize, f64)> = env
            .iter()
            .filter_map(|(e, rate)| Some((bbox.index_of(e.low())? as usize, bbox.index_of(e.high())? as usize, rate)))
            .collect();
        let states = 1usize << n;
        let mut rows = Vec::with_capacity(states);
        let mut exit = Vec::with_capacity(states);
        for s in 0..states as u32 {
            let mut row = Vec::new();
            for i in 0..n {
                if s & (1 << i) != 0 {
                    row.push((s & !(1 << i), 1.0));
                }
            }
            // births into each vacant site, summed over occupied neighbours
            let mut birth = vec![0.0; n];
            for &(i, j, rate) in &edges {
                let (oi, oj) = (s & (1 << i) != 0, s & (1 << j) != 0);
                if oi && !oj {
                    birth[j] += rate;
                } else if oj && !oi {
                    birth[i] += rate;
                }
            }
            for (k, r) in birth.iter().enumerate() {
                if *r > 0.0 {
                    row.push((s | (1 << k), *r));
                }
            }
            exit.push(row.iter().map(|(_, r)| r).sum());
            rows.push(row);
        }
        Ok(ExactChain { bbox, edges, rows, exit })
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Rate of `from → to`, or the diagonal entry when they coincide.
    pub fn generator(&self, from: u32, to: u32) -> f64 {
        if from == to {
            return -self.exit[from as usize];
        }
        self.rows[from as usize].iter().filter(|(t, _)| *t == to).map(|(_, r)| r).sum()
    }

    pub fn encode(&self, c: &Configuration) -> Result<u32> {
        let mut m = 0u32;
        for s in &c.occupied {
            let i = self.bbox.index_of(*s).ok_or_else(|| Error::OutOfBox(format!("{s:?}")))?;
            m |= 1 << i;
        }
        Ok(m)
    }

    /// Law of `ξ_t` started from `initial`, as a vector over states.
    pub fn transient(&self, initial: &Configuration, t: f64) -> Result<(Vec<f64>, f64, usize)> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("t = {t}")));
        }
        let s0 = self.encode(initial)? as usize;
        let states = self.n_states();
        let mut v = vec![0.0; states];
        v[s0] = 1.0;
        let q = self.exit.iter().cloned().fold(0.0, f64::max);
        if t == 0.0 || q == 0.0 {
            return Ok((v, 0.0, 1));
        }
        let qt = q * t;
        let log_qt = libm::log(qt);
        let mut out = vec![0.0; states];
        let mut next = vec![0.0; states];
        let mut mass = 0.0;
        let mut k = 0usize;
        loop {
            let w = libm::exp(-qt + k as f64 * log_qt - libm::lgamma(k as f64 + 1.0));
            for (o, x) in out.iter_mut().zip(&v) {
                *o += w * x;
            }
            mass += w;
            k += 1;
            let tail = (1.0 - mass).max(0.0);
            if (k as f64 > qt && tail < TRUNCATION_TARGET) || k > 100_000 {
                return Ok((out, tail, k));
            }
            // v ← v (I + Q/q)
            next.iter_mut().for_each(|x| *x = 0.0);
            for (s, row) in self.rows.iter().enumerate() {
                let p = v[s];
                if p == 0.0 {
                    continue;
                }
                next[s] += p * (1.0 - self.exit[s] / q);
                for &(to, r) in row {
                    next[to as usize] += p * r / q;
                }
            }
            core::mem::swap(&mut v, &mut next);
        }
    }

    pub fn transient_prob(&self, initial: &Configuration, t: f64, event: OracleEvent) -> Result<ExactProb> {
        let mask = match event {
            OracleEvent::Survives => None,
            OracleEvent::Occupied(x) => Some(1u32 << self.bbox.index_of(x).ok_or_else(|| Error::OutOfBox(format!("{x:?}")))?),
        };
        let (law, truncation_bound, terms) = self.transient(initial, t)?;
        let value = law
            .iter()
            .enumerate()
            .filter(|(s, _)| match mask {
                None => *s != 0,
                Some(m) => *s as u32 & m != 0,
            })
            .map(|(_, p)| p)
            .sum::<f64>()
            .clamp(0.0, 1.0);
        Ok(ExactProb { value, truncation_bound, terms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{sample_environment, EnvironmentLaw, Marginal, RateBounds};

    fn chain(dim: usize, radius: u32, rate: f64) -> ExactChain {
        ExactChain::new(&sample_environment(&EnvironmentLaw::constant(rate), 0, dim, radius).unwrap()).unwrap()
    }

    #[test]
    fn rows_sum_to_zero_and_empty_absorbs() {
        let law = EnvironmentLaw::Iid { bounds: RateBounds::new(1.0, 3.0).unwrap(), marginal: Marginal::Uniform { low: 1.0, high: 3.0 } };
        let c = ExactChain::new(&sample_environment(&law, 5, 2, 1).unwrap()).unwrap();
        assert_eq!(c.n_states(), 512);
        for s in 0..512u32 {
            let total: f64 = (0..512u32).map(|t| c.generator(s, t)).sum();
            assert!(total.abs() < 1e-12);
        }
        assert_eq!(c.generator(0, 0), 0.0);
    }

    #[test]
    fn time_zero_is_indicator() {
        let c = chain(1, 2, 2.0);
        let init = Configuration::single(Site::ORIGIN);
        assert_eq!(c.transient_prob(&init, 0.0, OracleEvent::Survives).unwrap().value, 1.0);
        assert_eq!(c.transient_prob(&init, 0.0, OracleEvent::Occupied(Site::unit(0, 1))).unwrap().value, 0.0);
    }

    #[test]
    fn lone_site_decays_exponentially() {
        let bbox = LatticeBox::new(2, Site::ORIGIN, Site::ORIGIN).unwrap();
        let n_edges = crate::lattice::Topology::new(&bbox).n_edges();
        let env = Environment::from_rates(RateBounds::new(2.0, 2.0).unwrap(), bbox, vec![2.0; n_edges]).unwrap();
        let c = ExactChain::new(&env).unwrap();
        assert_eq!(c.n_edges(), 0);
        for t in [0.1, 1.0, 3.0] {
            let p = c.transient_prob(&Configuration::single(Site::ORIGIN), t, OracleEvent::Survives).unwrap();
            assert!((p.value - libm::exp(-t)).abs() < 1e-9);
            assert!(p.truncation_bound < 1e-9);
        }
    }

    #[test]
    fn two_sites_match_reduced_chain() {
        // by symmetry only the count matters: 1 → 0 at rate 1, 1 → 2 at
        // rate λ, 2 → 1 at rate 2
        let lambda = 1.5;
        let bbox = LatticeBox::new(1, Site::ORIGIN, Site::unit(0, 1)).unwrap();
        let n_edges = crate::lattice::Topology::new(&bbox).n_edges();
        let env = Environment::from_rates(RateBounds::new(1.0, 2.0).unwrap(), bbox, vec![lambda; n_edges]).unwrap();
        let c = ExactChain::new(&env).unwrap();
        let t = 0.7;
        let deriv = |p: [f64; 3]| [p[1], -(1.0 + lambda) * p[1] + 2.0 * p[2], lambda * p[1] - 2.0 * p[2]];
        let mut p = [0.0, 1.0, 0.0];
        let steps = 7000;
        let h = t / steps as f64;
        for _ in 0..steps {
            let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
            let k1 = deriv(p);
            let k2 = deriv(add(p, k1, h / 2.0));
            let k3 = deriv(add(p, k2, h / 2.0));
            let k4 = deriv(add(p, k3, h));
            for i in 0..3 {
                p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let got = c.transient_prob(&Configuration::single(Site::ORIGIN), t, OracleEvent::Survives).unwrap();
        assert!((got.value - (1.0 - p[0])).abs() < 1e-10);
        let other = c.transient_prob(&Configuration::single(Site::ORIGIN), t, OracleEvent::Occupied(Site::unit(0, 1))).unwrap();
        assert!(other.value <= got.value);
    }

    #[test]
    fn too_large_rejected() {
        let env = sample_environment(&EnvironmentLaw::constant(1.0), 0, 2, 2).unwrap();
        assert!(matches!(ExactChain::new(&env), Err(Error::StateSpaceTooLarge { sites: 25, .. })));
    }

    #[test]
    fn attractive_in_initial_set() {
        let c = chain(1, 2, 2.0);
        let small = Configuration::single(Site::ORIGIN);
        let big = Configuration::from_sites([Site::ORIGIN, Site::unit(0, 1)]);
        for t in [0.5, 2.0] {
            let a = c.transient_prob(&small, t, OracleEvent::Survives).unwrap().value;
            let b = c.transient_prob(&big, t, OracleEvent::Survives).unwrap().value;
            assert!(a <= b + 1e-12);
        }
    }
}
