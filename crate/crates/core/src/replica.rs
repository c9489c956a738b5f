//! Independent replicas of (environment, graphical construction) derived
//! from a campaign seed.

use alloc::sync::Arc;

use crate::environment::{sample_environment_on, Environment, RateField};
use crate::error::Result;
use crate::lattice::{LatticeBox, Topology};
use crate::rng::{combine, replica_seed};
use crate::substrate::GraphicalRealization;

const ENV_STREAM: u64 = 1;
const SUBSTRATE_STREAM: u64 = 2;

/// One replica: its environment and its realization, on the same box. The
/// substrate base rate is the law's `λ_max`.
#[derive(Clone, Debug)]
pub struct Replica {
    pub index: u64,
    pub seed: u64,
    pub real: GraphicalRealization,
    pub env: Environment,
}

/// Builds replica `i` of a campaign as a pure function of `(master_seed, i)`.
pub struct ReplicaFactory<L> {
    law: L,
    bbox: LatticeBox,
    topo: Arc<Topology>,
    horizon: f64,
    master_seed: u64,
}

impl<L: RateField> ReplicaFactory<L> {
    pub fn new(law: L, dim: usize, radius: u32, horizon: f64, master_seed: u64) -> Result<Self> {
        law.validate()?;
        let bbox = LatticeBox::centered(dim, radius)?;
        let topo = Arc::new(Topology::new(&bbox));
        Ok(ReplicaFactory { law, bbox, topo, horizon, master_seed })
    }

    pub fn law(&self) -> &L {
        &self.law
    }

    pub fn bbox(&self) -> &LatticeBox {
        &self.bbox
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn replica(&self, index: u64) -> Result<Replica> {
        let seed = replica_seed(self.master_seed, index);
        let env = sample_environment_on(&self.law, combine(seed, ENV_STREAM), self.bbox, self.topo.clone())?;
        let real = GraphicalRealization::with_topology(
            self.bbox,
            self.topo.clone(),
            self.horizon,
            combine(seed, SUBSTRATE_STREAM),
            self.law.bounds().lambda_max,
        )?;
        Ok(Replica { index, seed, real, env })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{EnvironmentLaw, Marginal, RateBounds};

    #[test]
    fn replicas_are_pure_and_distinct() {
        let law = EnvironmentLaw::Iid { bounds: RateBounds::new(1.0, 3.0).unwrap(), marginal: Marginal::Uniform { low: 1.0, high: 3.0 } };
        let f = ReplicaFactory::new(law, 2, 4, 3.0, 9).unwrap();
        let a = f.replica(5).unwrap();
        let b = f.replica(5).unwrap();
        let c = f.replica(6).unwrap();
        assert_eq!(a.env, b.env);
        assert_eq!(a.real.master_seed(), b.real.master_seed());
        assert_ne!(a.env, c.env);
        assert_eq!(a.real.edge_rate(), 3.0);
    }
}
