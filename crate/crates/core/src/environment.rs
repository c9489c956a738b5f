//! Quenched birth-rate fields and the laws they are drawn from.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Edge, LatticeBox, Site, Topology};
use crate::rng::{combine, unit_f64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl RateBounds {
    pub fn new(lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_min <= lambda_max && lambda_max.is_finite()) {
            return Err(Error::InvalidLaw(format!(
                "need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        Ok(RateBounds { lambda_min, lambda_max })
    }

    pub fn contains(&self, rate: f64) -> bool {
        rate >= self.lambda_min && rate <= self.lambda_max
    }
}

/// One-site marginal of an i.i.d. law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Uniform { low: f64, high: f64 },
    /// Finite distribution: `values[i]` with probability `weights[i] / Σ weights`.
    Discrete { values: Vec<f64>, weights: Vec<f64> },
}

impl Marginal {
    fn support(&self) -> Result<(f64, f64)> {
        match self {
            Marginal::Uniform { low, high } => {
                if !(low <= high) {
                    return Err(Error::InvalidLaw(format!("uniform [{low}, {high}]")));
                }
                Ok((*low, *high))
            }
            Marginal::Discrete { values, weights } => {
                if values.is_empty() || values.len() != weights.len() {
                    return Err(Error::InvalidLaw("discrete marginal needs matching values and weights".into()));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::InvalidLaw("discrete weights must be nonnegative with positive sum".into()));
                }
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok((lo, hi))
            }
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        match self {
            Marginal::Uniform { low, high } => low + (high - low) * u,
            Marginal::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut acc = 0.0;
                for (v, w) in values.iter().zip(weights) {
                    acc += w / total;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().unwrap()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal::Uniform { low, high } => 0.5 * (low + high),
            Marginal::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
            }
        }
    }
}

/// Which translations leave a law invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stationarity {
    /// Invariant and ergodic under all of `Z^d`.
    Full,
    /// Invariant and ergodic only under the sublattice `period · Z^d`.
    Sublattice(Vec<u32>),
}

/// A birth-rate field generator. The shipped laws implement it; other
/// stationary ergodic laws can be plugged in through the same interface.
pub trait RateField {
    fn bounds(&self) -> RateBounds;
    /// Rate of `edge` in the field drawn with `seed`.
    fn rate(&self, seed: u64, edge: &Edge) -> f64;
    fn stationarity(&self) -> Stationarity;
    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

/// The shipped environment laws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentLaw {
    Constant { rate: f64 },
    Iid { bounds: RateBounds, marginal: Marginal },
    /// `table[(pattern cell) * d + axis]`, the pattern cell being the lower
    /// endpoint reduced modulo `period` (row-major, first axis most significant).
    Periodic { bounds: RateBounds, period: Vec<u32>, table: Vec<f64> },
}

impl EnvironmentLaw {
    pub fn constant(rate: f64) -> Self {
        EnvironmentLaw::Constant { rate }
    }

    fn periodic_cell(period: &[u32], edge: &Edge) -> usize {
        let low = edge.low();
        let mut cell = 0usize;
        for (a, p) in period.iter().enumerate() {
            let c = low.0[a].rem_euclid(*p as i32) as usize;
            cell = cell * *p as usize + c;
        }
        cell * period.len() + edge.axis()
    }
}

impl RateField for EnvironmentLaw {
    fn bounds(&self) -> RateBounds {
        match self {
            EnvironmentLaw::Constant { rate } => RateBounds { lambda_min: *rate, lambda_max: *rate },
            EnvironmentLaw::Iid { bounds, .. } | EnvironmentLaw::Periodic { bounds, .. } => *bounds,
        }
    }

    fn rate(&self, seed: u64, edge: &Edge) -> f64 {
        match self {
            EnvironmentLaw::Constant { rate } => *rate,
            EnvironmentLaw::Iid { marginal, .. } => {
                let mut k = combine(seed, 0xe0e0);
                for c in edge.low().0 {
                    k = combine(k, c as i64 as u64);
                }
                k = combine(k, edge.axis() as u64);
                marginal.quantile(unit_f64(k))
            }
            EnvironmentLaw::Periodic { period, table, .. } => table[Self::periodic_cell(period, edge)],
        }
    }

    fn stationarity(&self) -> Stationarity {
        match self {
            EnvironmentLaw::Periodic { period, .. } => Stationarity::Sublattice(period.clone()),
            _ => Stationarity::Full,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            EnvironmentLaw::Constant { rate } => {
                RateBounds::new(*rate, *rate)?;
            }
            EnvironmentLaw::Iid { bounds, marginal } => {
                RateBounds::new(bounds.lambda_min, bounds.lambda_max)?;
                let (lo, hi) = marginal.support()?;
                if !(bounds.contains(lo) && bounds.contains(hi)) {
                    return Err(Error::InvalidLaw(format!(
                        "marginal support [{lo}, {hi}] outside [{}, {}]",
                        bounds.lambda_min, bounds.lambda_max
                    )));
                }
            }
            EnvironmentLaw::Periodic { bounds, period, table } => {
                RateBounds::new(bounds.lambda_min, bounds.lambda_max)?;
                if period.is_empty() || period.contains(&0) {
                    return Err(Error::InvalidLaw("period entries must be positive".into()));
                }
                let cells: usize = period.iter().map(|p| *p as usize).product();
                if table.len() != cells * period.len() {
                    return Err(Error::InvalidLaw(format!(
                        "periodic table has {} entries, expected {}",
                        table.len(),
                        cells * period.len()
                    )));
                }
                if let Some(r) = table.iter().find(|r| !bounds.contains(**r)) {
                    return Err(Error::InvalidLaw(format!("periodic rate {r} outside bounds")));
                }
            }
        }
        Ok(())
    }
}

/// A quenched field `λ = (λ_e)` on every edge touching a box.
#[derive(Clone, Debug)]
pub struct Environment {
    bounds: RateBounds,
    bbox: LatticeBox,
    topo: Arc<Topology>,
    rates: Arc<Vec<f64>>,
}

impl PartialEq for Environment {
    fn eq(&self, other: &Self) -> bool {
        self.bounds == other.bounds && self.bbox == other.bbox && self.rates == other.rates
    }
}

/// Draws an environment from `law` on the box `‖z‖∞ ≤ radius`.
pub fn sample_environment<L: RateField + ?Sized>(law: &L, seed: u64, dim: usize, radius: u32) -> Result<Environment> {
    let bbox = LatticeBox::centered(dim, radius)?;
    sample_environment_on(law, seed, bbox, Arc::new(Topology::new(&bbox)))
}

/// As [`sample_environment`] on an arbitrary box with prebuilt index tables.
pub fn sample_environment_on<L: RateField + ?Sized>(
    law: &L,
    seed: u64,
    bbox: LatticeBox,
    topo: Arc<Topology>,
) -> Result<Environment> {
    law.validate()?;
    if let Stationarity::Sublattice(p) = law.stationarity() {
        if p.len() != bbox.dim() {
            return Err(Error::InvalidLaw(format!("period of length {} in dimension {}", p.len(), bbox.dim())));
        }
    }
    let bounds = law.bounds();
    let rates: Vec<f64> = (0..topo.n_edges() as u32)
        .map(|e| law.rate(seed, &topo.edge_at(bbox.lo(), e)))
        .collect();
    if let Some(r) = rates.iter().find(|r| !bounds.contains(**r)) {
        return Err(Error::InvalidLaw(format!("generated rate {r} outside bounds")));
    }
    Ok(Environment { bounds, bbox, topo, rates: Arc::new(rates) })
}

/// `x.λ`, with `(x.λ)_e = λ_{x+e}`. The field is carried over unchanged and
/// the box moves by `-x`, so the result covers exactly the translated box.
pub fn shift_environment(env: &Environment, x: Site) -> Result<Environment> {
    if x.support_dim() > env.bbox.dim() {
        return Err(Error::OutOfBox(format!("shift {x:?} in dimension {}", env.bbox.dim())));
    }
    Ok(Environment { bbox: env.bbox.translate(-x), ..env.clone() })
}

impl Environment {
    /// Builds an environment from explicit per-edge rates.
    pub fn from_rates(bounds: RateBounds, bbox: LatticeBox, rates: Vec<f64>) -> Result<Self> {
        let topo = Arc::new(Topology::new(&bbox));
        if rates.len() != topo.n_edges() {
            return Err(Error::InvalidParameter(format!(
                "{} rates for {} edges",
                rates.len(),
                topo.n_edges()
            )));
        }
        if let Some(r) = rates.iter().find(|r| !bounds.contains(**r)) {
            return Err(Error::InvalidLaw(format!("rate {r} outside bounds")));
        }
        Ok(Environment { bounds, bbox, topo, rates: Arc::new(rates) })
    }

    pub fn bounds(&self) -> RateBounds {
        self.bounds
    }

    pub fn bbox(&self) -> &LatticeBox {
        &self.bbox
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topo
    }

    /// Rates in compact edge order.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, edge: &Edge) -> Result<f64> {
        self.topo
            .edge_index(self.bbox.lo(), edge)
            .map(|i| self.rates[i as usize])
            .ok_or_else(|| Error::OutOfBox(format!("{edge:?}")))
    }

    /// `(edge, rate)` pairs in compact order.
    pub fn iter(&self) -> impl Iterator<Item = (Edge, f64)> + '_ {
        (0..self.topo.n_edges() as u32).map(move |e| (self.topo.edge_at(self.bbox.lo(), e), self.rates[e as usize]))
    }
}
