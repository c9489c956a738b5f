//! Numerical checks of the hypotheses and conclusions of the
//! almost-subadditive ergodic theorem on processes that can be sampled
//! along their shift chains.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::environment::RateField;
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::regeneration::{defect_sample, SigmaChain, SigmaSetup};
use crate::replica::ReplicaFactory;
use crate::rng::{counter_word, replica_seed, unit_f64};
use crate::stats::{linear_fit, normal_ci, variance, MeanEstimate, Z95};

/// Which indices a harness sample must provide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessPlan {
    /// `f_n` for these `n`.
    pub ns: Vec<u32>,
    /// Chain steps `k` for the alignment quantity.
    pub ks: Vec<u32>,
    /// `n` values of the alignment quantity.
    pub align_ns: Vec<u32>,
    /// Defect pairs `(n, p)`.
    pub defect_pairs: Vec<(u32, u32)>,
}

/// One realization's values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessSample {
    /// `f_n`, per `plan.ns`.
    pub f: Vec<f64>,
    /// `f_{nk}`, indexed `[k][n]` over `plan.ks × plan.align_ns`.
    pub f_nk: Vec<Vec<f64>>,
    /// `Σ_{i<n} f_k ∘ θ_k^i`, same indexing.
    pub chain: Vec<Vec<f64>>,
    /// `r_{n,p}⁺`, per `plan.defect_pairs`; `None` when unavailable.
    pub defects: Vec<Option<f64>>,
}

pub trait SubadditiveProcess: Sync {
    fn name(&self) -> String;
    /// Moment exponent `α > 1` of hypothesis H3.
    fn alpha(&self) -> f64;
    /// Claimed `C_p` with `E[(r_{n,p}⁺)^α] ≤ C_p`; `None` means "use the
    /// measured moments".
    fn budget(&self, p: u32) -> Option<f64>;
    /// Realization `index`; `None` when it is rejected by conditioning.
    fn sample(&self, index: u64, plan: &HarnessPlan) -> Result<Option<HarnessSample>>;
}

/// `f_n = X_0 + ... + X_{n−1}` with `X_i` iid uniform on `[low, high]`;
/// `θ` is the unit shift, `g ≡ 0`, `r ≡ 0`. The uniforms sit on a `2^-20`
/// grid so that block sums are exact and `r` is zero in floating point too.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveProcess {
    pub low: f64,
    pub high: f64,
    pub seed: u64,
}

impl AdditiveProcess {
    fn x(&self, key: u64, i: u64) -> f64 {
        let grid = (counter_word(key, (i >> 32) as u32, i as u32) >> 44) as f64 / (1u64 << 20) as f64;
        self.low + (self.high - self.low) * grid
    }

    fn partial(&self, key: u64, from: u64, to: u64) -> f64 {
        (from..to).map(|i| self.x(key, i)).sum()
    }
}

impl SubadditiveProcess for AdditiveProcess {
    fn name(&self) -> String {
        format!("additive uniform[{}, {}]", self.low, self.high)
    }

    fn alpha(&self) -> f64 {
        2.0
    }

    fn budget(&self, _p: u32) -> Option<f64> {
        Some(0.0)
    }

    fn sample(&self, index: u64, plan: &HarnessPlan) -> Result<Option<HarnessSample>> {
        let key = replica_seed(self.seed, index);
        let f = plan.ns.iter().map(|&n| self.partial(key, 0, n as u64)).collect();
        let mut f_nk = Vec::new();
        let mut chain = Vec::new();
        for &k in &plan.ks {
            let k = k as u64;
            f_nk.push(plan.align_ns.iter().map(|&n| self.partial(key, 0, n as u64 * k)).collect());
            chain.push(
                plan.align_ns
                    .iter()
                    .map(|&n| (0..n as u64).map(|i| self.partial(key, i * k, (i + 1) * k)).sum())
                    .collect(),
            );
        }
        let defects = plan
            .defect_pairs
            .iter()
            .map(|&(n, p)| {
                let (n, p) = (n as u64, p as u64);
                let r = self.partial(key, 0, n + p) - self.partial(key, 0, n) - self.partial(key, n, n + p);
                Some(r.max(0.0))
            })
            .collect();
        Ok(Some(HarnessSample { f, f_nk, chain, defects }))
    }
}

/// `f_n = n + a·U_n` with `U_m` iid uniform on `[0, 1]` attached to the
/// absolute index `m`, so `f_p ∘ θ_n = p + a·U_{n+p}` and
/// `r_{n,p} = −a·U_n ≤ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyLinearProcess {
    pub amplitude: f64,
    pub seed: u64,
}

impl NoisyLinearProcess {
    fn u(&self, key: u64, m: u64) -> f64 {
        unit_f64(counter_word(key, (m >> 32) as u32, m as u32))
    }

    /// `f_len ∘ θ_from`.
    fn f_from(&self, key: u64, from: u64, len: u64) -> f64 {
        len as f64 + self.amplitude * self.u(key, from + len)
    }
}

impl SubadditiveProcess for NoisyLinearProcess {
    fn name(&self) -> String {
        format!("linear with noise amplitude {}", self.amplitude)
    }

    fn alpha(&self) -> f64 {
        2.0
    }

    fn budget(&self, _p: u32) -> Option<f64> {
        Some(0.0)
    }

    fn sample(&self, index: u64, plan: &HarnessPlan) -> Result<Option<HarnessSample>> {
        let key = replica_seed(self.seed, index);
        let f = plan.ns.iter().map(|&n| self.f_from(key, 0, n as u64)).collect();
        let mut f_nk = Vec::new();
        let mut chain = Vec::new();
        for &k in &plan.ks {
            let k = k as u64;
            f_nk.push(plan.align_ns.iter().map(|&n| self.f_from(key, 0, n as u64 * k)).collect());
            chain.push(plan.align_ns.iter().map(|&n| (0..n as u64).map(|i| self.f_from(key, i * k, k)).sum()).collect());
        }
        let defects = plan
            .defect_pairs
            .iter()
            .map(|&(n, p)| {
                let (n, p) = (n as u64, p as u64);
                let r = self.f_from(key, 0, n + p) - self.f_from(key, 0, n) - self.f_from(key, n, p);
                Some(r.max(0.0))
            })
            .collect();
        Ok(Some(HarnessSample { f, f_nk, chain, defects }))
    }
}

/// `f_n = σ(n·x)` with `θ = θ̃_x` and `g ≡ 0`, on replicas of a campaign,
/// conditioned on survival of the root process.
pub struct SigmaChainProcess<L> {
    pub factory: ReplicaFactory<L>,
    pub x: Site,
    pub survival_horizon: f64,
}

impl<L: RateField + Sync> SubadditiveProcess for SigmaChainProcess<L> {
    fn name(&self) -> String {
        format!("sigma chain along {:?}", self.x)
    }

    fn alpha(&self) -> f64 {
        2.0
    }

    fn budget(&self, _p: u32) -> Option<f64> {
        None
    }

    fn sample(&self, index: u64, plan: &HarnessPlan) -> Result<Option<HarnessSample>> {
        let rep = self.factory.replica(index)?;
        let view = rep.real.view();
        let h = self.survival_horizon;
        let mut setup = SigmaSetup::new(&view, &rep.env, h, true)?;
        let mut chain0 = SigmaChain::new(view, &mut setup, self.x)?;
        if !chain0.root_alive() {
            return Ok(None);
        }
        let mut sigma_at = |m: u32| -> Result<Option<f64>> {
            let tr = chain0.sigma(self.x * m as i32)?;
            Ok((!tr.censored).then_some(tr.sigma))
        };
        let mut f = Vec::new();
        for &n in &plan.ns {
            match sigma_at(n)? {
                Some(s) => f.push(s),
                None => return Ok(None),
            }
        }
        let mut f_nk = Vec::new();
        for &k in &plan.ks {
            let mut row = Vec::new();
            for &n in &plan.align_ns {
                match sigma_at(n * k)? {
                    Some(s) => row.push(s),
                    None => return Ok(None),
                }
            }
            f_nk.push(row);
        }
        let mut chain = Vec::new();
        let n_max = plan.align_ns.iter().cloned().max().unwrap_or(0);
        for &k in &plan.ks {
            let mut setup_k = SigmaSetup::new(&view, &rep.env, h, true)?;
            let mut ch = SigmaChain::new(view, &mut setup_k, self.x * k as i32)?;
            let mut sums = vec![0.0; n_max as usize + 1];
            for i in 1..=n_max {
                let tr = ch.advance()?;
                if tr.censored {
                    return Ok(None);
                }
                sums[i as usize] = ch.elapsed();
            }
            chain.push(plan.align_ns.iter().map(|&n| sums[n as usize]).collect());
        }
        let mut defects = Vec::new();
        for &(n, p) in &plan.defect_pairs {
            let d = defect_sample(&view, &rep.env, self.x * n as i32, self.x * p as i32, h)?;
            defects.push(d.r);
        }
        Ok(Some(HarnessSample { f, f_nk, chain, defects }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub n: u32,
    /// `f_n / n` across realizations.
    pub ratio: MeanEstimate,
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub p: u32,
    /// `(r_{n,p}⁺)^α` over realizations and the planned `n`.
    pub moment: MeanEstimate,
    pub budget: f64,
    pub within_budget: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct H3Check {
    pub alpha: f64,
    pub moments: Vec<MomentPoint>,
    /// Slope `β` of `ln C_p` against `ln p`; `Σ C_p / p^α` converges when
    /// `β < α − 1`. Absent when every `C_p` is zero.
    pub growth_exponent: Option<f64>,
    /// `Σ C_p / p^α` over the planned `p`.
    pub partial_sum: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPoint {
    pub n: u32,
    /// `max_k (f_{nk} − Σ_{i<n} f_k ∘ θ_k^i)⁺ / n`.
    pub value: MeanEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub process: String,
    pub accepted: usize,
    pub rejected: usize,
    pub trajectory: Vec<RatioPoint>,
    /// `f_n / n` at the largest planned `n`.
    pub limit: MeanEstimate,
    /// The spread of `f_n / n` shrinks from the smallest to the largest `n`.
    pub concentrating: bool,
    pub h3: H3Check,
    pub alignment: Vec<AlignmentPoint>,
    /// Each alignment mean is at most the previous one plus their joint
    /// 95% half-width.
    pub alignment_decreasing: bool,
    pub violations: Vec<String>,
}

fn estimate_or_point(xs: &[f64]) -> MeanEstimate {
    normal_ci(xs, Z95).unwrap_or_else(|_| {
        let m = xs.first().copied().unwrap_or(f64::NAN);
        MeanEstimate { mean: m, se: f64::NAN, lo: m, hi: m, n: xs.len() }
    })
}

/// Aggregates samples in the given order; any order gives the same report
/// up to floating-point summation order.
pub fn harness_report<P: SubadditiveProcess + ?Sized>(
    process: &P,
    plan: &HarnessPlan,
    samples: &[HarnessSample],
    rejected: usize,
) -> Result<HarnessReport> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("{} accepted realizations", samples.len())));
    }
    let mut violations = Vec::new();
    let trajectory: Vec<RatioPoint> = plan
        .ns
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let xs: Vec<f64> = samples.iter().map(|s| s.f[j] / n as f64).collect();
            RatioPoint { n, ratio: estimate_or_point(&xs), spread: libm::sqrt(variance(&xs)) }
        })
        .collect();
    let limit = trajectory.last().map(|p| p.ratio).ok_or_else(|| Error::InvalidParameter("empty ns".into()))?;
    let concentrating = trajectory.len() < 2 || trajectory.last().unwrap().spread <= trajectory[0].spread;
    if !concentrating {
        violations.push(format!("spread of f_n/n grows from n = {} to n = {}", plan.ns[0], plan.ns[plan.ns.len() - 1]));
    }

    let alpha = process.alpha();
    let mut ps: Vec<u32> = plan.defect_pairs.iter().map(|d| d.1).collect();
    ps.sort_unstable();
    ps.dedup();
    let mut moments = Vec::new();
    for &p in &ps {
        let xs: Vec<f64> = samples
            .iter()
            .flat_map(|s| plan.defect_pairs.iter().zip(&s.defects).filter(|(d, _)| d.1 == p).filter_map(|(_, r)| *r))
            .map(|r| libm::pow(r, alpha))
            .collect();
        let moment = estimate_or_point(&xs);
        let se = if moment.se.is_nan() { 0.0 } else { moment.se };
        let budget = process.budget(p).unwrap_or(moment.mean + 3.0 * se);
        let within_budget = moment.mean <= budget + 3.0 * se;
        if !within_budget {
            violations.push(format!("E[(r⁺)^{alpha}] = {} above the budget {budget} at p = {p}", moment.mean));
        }
        moments.push(MomentPoint { p, moment, budget, within_budget });
    }
    let positive: Vec<(f64, f64)> = moments.iter().filter(|m| m.budget > 0.0).map(|m| (libm::log(m.p as f64), libm::log(m.budget))).collect();
    let growth_exponent = if positive.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        linear_fit(&x, &y).ok().map(|f| f.slope)
    } else {
        None
    };
    let partial_sum = moments.iter().map(|m| m.budget / libm::pow(m.p as f64, alpha)).sum();
    let summable = growth_exponent.is_none_or(|b| b < alpha - 1.0);
    if !summable {
        violations.push(format!("budget grows like p^{:.3}, not summable against p^{alpha}", growth_exponent.unwrap()));
    }
    let h3 = H3Check { alpha, passed: summable && moments.iter().all(|m| m.within_budget), moments, growth_exponent, partial_sum };

    let alignment: Vec<AlignmentPoint> = plan
        .align_ns
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let xs: Vec<f64> = samples
                .iter()
                .map(|s| {
                    (0..plan.ks.len()).map(|ki| (s.f_nk[ki][j] - s.chain[ki][j]).max(0.0)).fold(0.0, f64::max) / n as f64
                })
                .collect();
            AlignmentPoint { n, value: estimate_or_point(&xs) }
        })
        .collect();
    let alignment_decreasing = alignment.windows(2).all(|w| {
        let var = |m: &MeanEstimate| if m.se.is_nan() { 0.0 } else { m.se * m.se };
        w[1].value.mean <= w[0].value.mean + Z95 * libm::sqrt(var(&w[0].value) + var(&w[1].value))
    });
    if !alignment_decreasing {
        violations.push("alignment quantity does not decrease in n".into());
    }
    Ok(HarnessReport {
        process: process.name(),
        accepted: samples.len(),
        rejected,
        trajectory,
        limit,
        concentrating,
        h3,
        alignment,
        alignment_decreasing,
        violations,
    })
}

/// Sequential harness over realizations `0..replicas`.
pub fn ergodic_harness<P: SubadditiveProcess + ?Sized>(process: &P, plan: &HarnessPlan, replicas: u64) -> Result<HarnessReport> {
    let mut samples = Vec::new();
    let mut rejected = 0;
    for i in 0..replicas {
        match process.sample(i, plan)? {
            Some(s) => samples.push(s),
            None => rejected += 1,
        }
    }
    harness_report(process, plan, &samples, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvironmentLaw;

    fn plan(ns: Vec<u32>) -> HarnessPlan {
        HarnessPlan { ns, ks: vec![1, 2], align_ns: vec![2, 4, 8], defect_pairs: vec![(1, 1), (1, 2), (2, 4)] }
    }

    #[test]
    fn additive_limit() {
        let p = AdditiveProcess { low: 0.5, high: 2.5, seed: 3 };
        let r = ergodic_harness(&p, &plan(vec![10, 100, 1000]), 200).unwrap();
        assert!((r.limit.mean - 1.5).abs() < 0.01, "{:?}", r.limit);
        assert!(r.concentrating && r.h3.passed && r.alignment_decreasing);
        assert!(r.alignment.iter().all(|a| a.value.mean.abs() < 1e-9));
        assert!(r.violations.is_empty());
    }

    #[test]
    fn noisy_linear_limit() {
        let p = NoisyLinearProcess { amplitude: 3.0, seed: 1 };
        let r = ergodic_harness(&p, &plan(vec![10, 100, 1000]), 100).unwrap();
        assert!((r.limit.mean - 1.0).abs() < 0.005);
        assert!(r.h3.moments.iter().all(|m| m.moment.mean == 0.0));
        assert!(r.h3.passed);
    }

    #[test]
    fn sigma_chain_small() {
        let factory = ReplicaFactory::new(EnvironmentLaw::constant(3.0), 1, 60, 25.0, 9).unwrap();
        let proc_ = SigmaChainProcess { factory, x: Site::unit(0, 1), survival_horizon: 25.0 };
        let pl = HarnessPlan { ns: vec![2, 4], ks: vec![1], align_ns: vec![2, 4], defect_pairs: vec![(1, 1), (1, 2)] };
        let r = ergodic_harness(&proc_, &pl, 20).unwrap();
        assert!(r.accepted > 0 && r.accepted + r.rejected == 20);
        assert!(r.trajectory.iter().all(|p| p.ratio.mean > 0.0));
    }

    #[test]
    fn growing_budget_is_flagged() {
        struct Growing;
        impl SubadditiveProcess for Growing {
            fn name(&self) -> String {
                "growing".into()
            }
            fn alpha(&self) -> f64 {
                2.0
            }
            fn budget(&self, p: u32) -> Option<f64> {
                Some((p * p) as f64)
            }
            fn sample(&self, index: u64, plan: &HarnessPlan) -> Result<Option<HarnessSample>> {
                let v = index as f64;
                Ok(Some(HarnessSample {
                    f: plan.ns.iter().map(|n| *n as f64 + v).collect(),
                    f_nk: vec![vec![0.0; plan.align_ns.len()]; plan.ks.len()],
                    chain: vec![vec![0.0; plan.align_ns.len()]; plan.ks.len()],
                    defects: plan.defect_pairs.iter().map(|_| Some(0.0)).collect(),
                }))
            }
        }
        let r = ergodic_harness(&Growing, &plan(vec![1, 2]), 5).unwrap();
        assert!(!r.h3.passed);
        assert!(!r.violations.is_empty());
    }
}
