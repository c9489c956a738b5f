//! Fekete limits, direction-wise estimates of the time constant `μ`, the
//! norm checks on those estimates, the unit ball `A_μ` with its shape
//! inclusion checks, and a harness for almost-subadditive processes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::engine::NEVER;
use crate::environment::{Environment, RateField};
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::regeneration::SigmaSetup;
use crate::replica::ReplicaFactory;
use crate::stats::{normal_ci, Z95};
use crate::substrate::RealizationView;

mod harness;
mod shape;

pub use harness::*;
pub use shape::*;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeketeEstimate {
    /// `inf_n (u_n + M₁)/n` over the provided indices.
    pub limit: f64,
    pub argmin: u64,
    /// No provided triple `(n, p, n+p)` exceeds the defect at all.
    pub conforming: bool,
    /// Largest `u_{n+p} − u_n − u_p − M₁` seen, with its `(n, p)`.
    pub worst_excess: f64,
    pub witness: Option<(u64, u64)>,
}

/// Limit of an almost-subadditive sequence given as `(n, u_n)` pairs in any
/// order. Excesses up to `tolerance` are flagged, larger ones are errors.
pub fn fekete_limit(u: &[(u64, f64)], m1: f64, tolerance: f64) -> Result<FeketeEstimate> {
    let mut map = BTreeMap::new();
    for &(n, v) in u {
        if n == 0 || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("u_{n} = {v}")));
        }
        if map.insert(n, v).is_some() {
            return Err(Error::InvalidParameter(format!("index {n} given twice")));
        }
    }
    if map.is_empty() {
        return Err(Error::InsufficientData("empty sequence".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for (&n, &un) in &map {
        for (&p, &up) in map.range(n..) {
            if let Some(&unp) = map.get(&(n + p)) {
                let excess = unp - un - up - m1;
                if excess > worst {
                    worst = excess;
                    witness = Some((n, p));
                }
            }
        }
    }
    if worst > tolerance {
        let (n, p) = witness.expect("excess comes with a witness");
        return Err(Error::SubadditivityViolation { n, p, excess: worst });
    }
    let (argmin, limit) = map
        .iter()
        .map(|(&n, &v)| (n, (v + m1) / n as f64))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    Ok(FeketeEstimate { limit, argmin, conforming: worst <= 0.0, worst_excess: worst.max(0.0), witness })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuSource {
    Sigma,
    T,
}

/// `σ(y)` and `t(y)` at one site on one surviving replica.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionSample {
    pub sigma: f64,
    pub t: f64,
    pub censored: bool,
    /// The root process touched the box boundary before `σ(y)` was known.
    pub contaminated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub x: Site,
    pub n_used: u32,
    /// Time per step along `x`.
    pub mu_hat: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub source: MuSource,
    pub samples: usize,
    pub used: usize,
    pub censored_fraction: f64,
    pub contaminated_fraction: f64,
    pub degraded: bool,
}

/// Censoring above this fraction marks an estimate as degraded.
pub const MAX_CENSORED_FRACTION: f64 = 0.05;

/// `μ̂(x)` from samples at the site `n·x`, keeping the replicas where the
/// sample is neither censored nor contaminated.
pub fn direction_estimate(x: Site, n: u32, samples: &[DirectionSample], source: MuSource) -> Result<DirectionEstimate> {
    if n == 0 || x.is_origin() {
        return Err(Error::InvalidParameter(format!("direction {x:?} with n = {n}")));
    }
    let censored = samples.iter().filter(|s| s.censored || s.t == NEVER).count();
    let contaminated = samples.iter().filter(|s| s.contaminated).count();
    let values: Vec<f64> = samples
        .iter()
        .filter(|s| !s.censored && s.t != NEVER && !s.contaminated)
        .map(|s| match source {
            MuSource::Sigma => s.sigma,
            MuSource::T => s.t,
        } / n as f64)
        .collect();
    let ci = normal_ci(&values, Z95)?;
    let total = samples.len().max(1) as f64;
    let censored_fraction = censored as f64 / total;
    let contaminated_fraction = contaminated as f64 / total;
    Ok(DirectionEstimate {
        x,
        n_used: n,
        mu_hat: ci.mean,
        se: ci.se,
        ci: (ci.lo, ci.hi),
        source,
        samples: samples.len(),
        used: values.len(),
        censored_fraction,
        contaminated_fraction,
        degraded: censored_fraction > MAX_CENSORED_FRACTION || contaminated > 0,
    })
}

/// `σ` and `t` at `sites` on one view, or `None` when the root process is
/// dead at the survival horizon (the replica is rejected).
pub fn direction_samples(
    view: &RealizationView<'_>,
    env: &Environment,
    sites: &[Site],
    survival_horizon: f64,
) -> Result<Option<Vec<DirectionSample>>> {
    let keys = sites.iter().map(|s| view.site_key(*s)).collect::<Result<Vec<u32>>>()?;
    let mut setup = SigmaSetup::new(view, env, survival_horizon, true)?;
    let t0 = setup.start();
    let origin = view.site_key(Site::ORIGIN)?;
    let (mut solver, cache) = setup.solver(view.base())?;
    let root = solver.root(origin, t0, cache)?;
    if !root.alive {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(sites.len());
    for k in keys {
        let tr = solver.trace_abs(&root, k)?;
        let known_at = if tr.k.is_some() { tr.sigma } else { root.end };
        out.push(DirectionSample {
            sigma: if tr.sigma == NEVER { NEVER } else { tr.sigma - t0 },
            t: if tr.t == NEVER { NEVER } else { tr.t - t0 },
            censored: tr.k.is_none(),
            contaminated: root.first_contact <= known_at,
        });
    }
    Ok(Some(out))
}

/// Sequential estimate of `μ(x)` from the site `n·x` over replicas
/// `0..replicas` of `factory`.
pub fn estimate_mu<L: RateField>(
    factory: &ReplicaFactory<L>,
    x: Site,
    n: u32,
    replicas: u64,
    survival_horizon: f64,
    source: MuSource,
) -> Result<DirectionEstimate> {
    let mut samples = Vec::new();
    for i in 0..replicas {
        let r = factory.replica(i)?;
        if let Some(s) = direction_samples(&r.real.view(), &r.env, &[x * n as i32], survival_horizon)? {
            samples.push(s[0]);
        }
    }
    direction_estimate(x, n, &samples, source)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormProperty {
    Symmetry,
    Homogeneity,
    Subadditivity,
    Positivity,
}

/// One norm axiom checked on estimates: `lhs ≤ rhs + slack` (or
/// `|lhs − rhs| ≤ slack` for the equalities).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormCheck {
    pub property: NormProperty,
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Symmetry, factor-2 homogeneity and subadditivity within joint 95%
/// intervals over every applicable combination of the estimated vectors,
/// and positivity `μ̂(x) ≥ ‖x‖∞ / (2M̂)`.
pub fn norm_checks(estimates: &[DirectionEstimate], m_hat: f64) -> Vec<NormCheck> {
    let find = |v: Site| estimates.iter().find(|e| e.x == v);
    let joint = |ses: &[f64]| Z95 * libm::sqrt(ses.iter().map(|s| s * s).sum());
    let dim = estimates.iter().filter_map(|e| e.x.0.iter().rposition(|c| *c != 0)).max().unwrap_or(0) + 1;
    let show = |x: Site| format!("{:?}", x.coords(dim));
    let mut out = Vec::new();
    for a in estimates {
        if let Some(b) = find(-a.x) {
            if a.x > b.x {
                out.push(NormCheck {
                    property: NormProperty::Symmetry,
                    label: format!("{} vs {}", show(a.x), show(b.x)),
                    lhs: a.mu_hat,
                    rhs: b.mu_hat,
                    slack: joint(&[a.se, b.se]),
                    holds: libm::fabs(a.mu_hat - b.mu_hat) <= joint(&[a.se, b.se]),
                });
            }
        }
        if let Some(b) = find(a.x * 2) {
            let slack = joint(&[b.se, 2.0 * a.se]);
            out.push(NormCheck {
                property: NormProperty::Homogeneity,
                label: format!("{} vs 2·{}", show(b.x), show(a.x)),
                lhs: b.mu_hat,
                rhs: 2.0 * a.mu_hat,
                slack,
                holds: libm::fabs(b.mu_hat - 2.0 * a.mu_hat) <= slack,
            });
        }
    }
    for (i, a) in estimates.iter().enumerate() {
        for b in &estimates[i + 1..] {
            let sum = a.x + b.x;
            if sum.is_origin() {
                continue;
            }
            if let Some(c) = find(sum) {
                let slack = joint(&[a.se, b.se, c.se]);
                out.push(NormCheck {
                    property: NormProperty::Subadditivity,
                    label: format!("{} = {} + {}", show(c.x), show(a.x), show(b.x)),
                    lhs: c.mu_hat,
                    rhs: a.mu_hat + b.mu_hat,
                    slack,
                    holds: c.mu_hat <= a.mu_hat + b.mu_hat + slack,
                });
            }
        }
    }
    for a in estimates {
        let bound = a.x.norm_inf() as f64 / (2.0 * m_hat);
        out.push(NormCheck {
            property: NormProperty::Positivity,
            label: show(a.x),
            lhs: bound,
            rhs: a.mu_hat,
            slack: 0.0,
            holds: a.mu_hat >= bound,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn fekete_linear() {
        let u: Vec<(u64, f64)> = (1..=20).map(|n| (n, n as f64)).collect();
        let f = fekete_limit(&u, 0.0, 0.0).unwrap();
        assert_eq!(f.limit, 1.0);
        assert!(f.conforming);
    }

    #[test]
    fn fekete_sqrt_correction_decreases() {
        let u: Vec<(u64, f64)> = (1..=64).map(|n| (n, n as f64 + libm::sqrt(n as f64))).collect();
        let f = fekete_limit(&u, 0.0, 0.0).unwrap();
        assert_eq!(f.argmin, 64);
        assert!((f.limit - 1.125).abs() < 1e-12);
        let short = fekete_limit(&u[..16], 0.0, 0.0).unwrap();
        assert!(short.limit > f.limit);
    }

    #[test]
    fn fekete_violation_has_witness() {
        let u = [(1, 1.0), (2, 3.5), (3, 3.0)];
        match fekete_limit(&u, 0.0, 0.1) {
            Err(Error::SubadditivityViolation { n, p, excess }) => {
                assert_eq!((n, p), (1, 1));
                assert!((excess - 1.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let flagged = fekete_limit(&u, 0.0, 2.0).unwrap();
        assert!(!flagged.conforming);
        assert_eq!(flagged.witness, Some((1, 1)));
    }

    proptest! {
        #[test]
        fn fekete_ignores_order(mut v in proptest::collection::vec(0.5f64..3.0, 2..12), seed in any::<u64>()) {
            let mut u: Vec<(u64, f64)> = Vec::new();
            for (i, s) in v.iter_mut().enumerate() {
                u.push((i as u64 + 1, *s * (i as f64 + 1.0)));
            }
            let a = fekete_limit(&u, 100.0, f64::INFINITY).unwrap();
            crate::rng::CounterRng::new(seed).shuffle(&mut u);
            let b = fekete_limit(&u, 100.0, f64::INFINITY).unwrap();
            prop_assert_eq!(a.limit, b.limit);
            prop_assert_eq!(a.argmin, b.argmin);
        }
    }

    fn est(x: Site, mu: f64, se: f64) -> DirectionEstimate {
        DirectionEstimate {
            x,
            n_used: 10,
            mu_hat: mu,
            se,
            ci: (mu - Z95 * se, mu + Z95 * se),
            source: MuSource::Sigma,
            samples: 100,
            used: 100,
            censored_fraction: 0.0,
            contaminated_fraction: 0.0,
            degraded: false,
        }
    }

    #[test]
    fn norm_checks_on_l1_norm() {
        let e1 = Site::unit(0, 1);
        let e2 = Site::unit(1, 1);
        let v = vec![
            est(e1, 1.0, 0.01),
            est(-e1, 1.01, 0.01),
            est(e2, 1.0, 0.01),
            est(e1 + e2, 2.0, 0.01),
            est(e1 * 2, 2.0, 0.01),
        ];
        let checks = norm_checks(&v, 1.0);
        assert!(checks.iter().all(|c| c.holds), "{checks:?}");
        let kinds = |p| checks.iter().filter(|c| c.property == p).count();
        assert_eq!(kinds(NormProperty::Symmetry), 1);
        assert_eq!(kinds(NormProperty::Homogeneity), 1);
        assert!(kinds(NormProperty::Subadditivity) >= 2);
        assert_eq!(kinds(NormProperty::Positivity), 5);
        let bad = norm_checks(&[est(e1, 1.0, 0.01), est(-e1, 1.2, 0.01)], 1.0);
        assert!(!bad[0].holds);
    }

    #[test]
    fn degraded_when_censored() {
        let mut s = vec![DirectionSample { sigma: 10.0, t: 9.0, censored: false, contaminated: false }; 90];
        s.extend(vec![DirectionSample { sigma: NEVER, t: 9.0, censored: true, contaminated: false }; 10]);
        let e = direction_estimate(Site::unit(0, 1), 10, &s, MuSource::Sigma).unwrap();
        assert!(e.degraded);
        assert_eq!(e.used, 90);
        assert_eq!(e.mu_hat, 1.0);
        let t = direction_estimate(Site::unit(0, 1), 10, &s[..90], MuSource::T).unwrap();
        assert!(!t.degraded);
        assert!((t.mu_hat - 0.9).abs() < 1e-12);
    }
}
