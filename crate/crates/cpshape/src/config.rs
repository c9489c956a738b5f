//! Experiment configuration: a JSON file whose every field can be
//! overridden from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use cpshape_core::environment::{EnvironmentLaw, Marginal, RateBounds, RateField};
use cpshape_core::lattice::{Site, MAX_DIM};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    /// Weak survival, restart counts and `K(x)` tails.
    Survive,
    /// Direction estimates, the unit ball and the shape inclusions.
    Shape,
    /// `σ − t` gaps and shift invariance along the `σ` chain.
    Sigma,
    /// Extinction-time and defect tails.
    Tails,
    /// Structural identities, the nested coupling and the constants.
    Couple,
    /// The almost-subadditive ergodic harness.
    Ergodic,
    /// Monte Carlo against the exact small-box chain.
    OracleCheck,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::Survive,
        Subcommand::Shape,
        Subcommand::Sigma,
        Subcommand::Tails,
        Subcommand::Couple,
        Subcommand::Ergodic,
        Subcommand::OracleCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Survive => "survive",
            Subcommand::Shape => "shape",
            Subcommand::Sigma => "sigma",
            Subcommand::Tails => "tails",
            Subcommand::Couple => "couple",
            Subcommand::Ergodic => "ergodic",
            Subcommand::OracleCheck => "oracle-check",
        }
    }

    /// Whether `replicas` counts surviving replicas rather than draws.
    pub fn conditioned(self) -> bool {
        matches!(self, Subcommand::Survive | Subcommand::Shape | Subcommand::Sigma)
    }
}

/// Secondary knobs. Each subcommand reads only some of them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Cap on draws while collecting conditioned replicas; 0 means
    /// `20 × replicas`.
    pub max_attempts: u64,
    /// Replicas of the auxiliary campaign: the growth-speed runs of
    /// `shape`, the constants of `couple`, the synthetic processes of
    /// `ergodic`.
    pub aux_replicas: u64,
    /// Box radius of the auxiliary campaign.
    pub aux_radius: u32,
    /// Horizon of the auxiliary campaign.
    pub aux_horizon: f64,
    /// Multiplier `n` of every shape direction (the site used is `n·x`).
    pub direction_steps: u32,
    /// Step of the `σ` chain.
    pub chain_step: Vec<i32>,
    /// Number of chain steps after the first `σ`.
    pub chain_length: u32,
    /// Largest `n` of the tail tables.
    pub tail_max_n: u32,
    pub permutations: u32,
    /// Distances `k` of the hitting-time probes `k·e_1`.
    pub probe_norms: Vec<i32>,
    /// Numbers of sites of the one-dimensional oracle boxes.
    pub oracle_sizes: Vec<u32>,
    pub oracle_rates: Vec<f64>,
    /// `n` values of the synthetic harness trajectories.
    pub harness_ns: Vec<u32>,
    /// `n` values of the `σ`-chain trajectory.
    pub chain_ns: Vec<u32>,
    pub align_ns: Vec<u32>,
    pub align_ks: Vec<u32>,
    pub defect_pairs: Vec<(u32, u32)>,
    /// Support of the synthetic additive increments.
    pub additive_support: (f64, f64),
    pub noise_amplitude: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            max_attempts: 0,
            aux_replicas: 1000,
            aux_radius: 60,
            aux_horizon: 60.0,
            direction_steps: 16,
            chain_step: vec![4],
            chain_length: 4,
            tail_max_n: 5,
            permutations: 999,
            probe_norms: vec![4, 8, 12, 16, 20],
            oracle_sizes: vec![3, 4],
            oracle_rates: vec![1.0, 2.0],
            harness_ns: vec![10, 100, 1000, 10_000],
            chain_ns: vec![1, 2, 4, 8],
            align_ns: vec![2, 4, 8],
            align_ks: vec![1, 2],
            defect_pairs: vec![(1, 1), (2, 2), (4, 4)],
            additive_support: (0.5, 2.5),
            noise_amplitude: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    /// Lattice dimension `d`.
    pub dim: usize,
    /// Box radius `L`: the box is `[−L, L]^d`.
    pub radius: u32,
    /// Horizon `T` of the graphical construction.
    pub horizon: f64,
    /// "Survives" means "alive at this time".
    pub survival_horizon: f64,
    pub law: EnvironmentLaw,
    pub sites: Vec<Vec<i32>>,
    pub replicas: u64,
    pub master_seed: u64,
    pub epsilons: Vec<f64>,
    pub sample_times: Vec<f64>,
    pub out: PathBuf,
    #[serde(default)]
    pub params: Params,
}

fn axis(d: usize, k: i32) -> Vec<i32> {
    let mut v = vec![0; d];
    v[0] = k;
    v
}

impl ExperimentConfig {
    /// The acceptance settings of each subcommand.
    pub fn preset(sub: Subcommand) -> Self {
        let base = ExperimentConfig {
            subcommand: sub,
            dim: 1,
            radius: 160,
            horizon: 50.0,
            survival_horizon: 50.0,
            law: EnvironmentLaw::constant(3.0),
            sites: vec![vec![5]],
            replicas: 10_000,
            master_seed: 20_240_601,
            epsilons: Vec::new(),
            sample_times: Vec::new(),
            out: PathBuf::from(format!("runs/{}", sub.name())),
            params: Params::default(),
        };
        match sub {
            Subcommand::Survive => base,
            Subcommand::Sigma => ExperimentConfig {
                sites: [4, 8, 16, 32].iter().map(|k| axis(1, *k)).collect(),
                replicas: 2000,
                ..base
            },
            Subcommand::Tails => ExperimentConfig { sites: vec![vec![8], vec![8]], replicas: 4000, ..base },
            Subcommand::Couple => ExperimentConfig {
                law: EnvironmentLaw::Iid {
                    bounds: RateBounds::new(1.5, 3.0).expect("valid bounds"),
                    marginal: Marginal::Uniform { low: 1.5, high: 3.0 },
                },
                radius: 40,
                horizon: 20.0,
                survival_horizon: 20.0,
                sites: Vec::new(),
                replicas: 1000,
                ..base
            },
            Subcommand::Ergodic => ExperimentConfig {
                sites: vec![vec![2]],
                replicas: 300,
                params: Params { aux_replicas: 200, ..Params::default() },
                ..base
            },
            Subcommand::OracleCheck => ExperimentConfig {
                radius: 1,
                horizon: 2.0,
                survival_horizon: 2.0,
                sites: Vec::new(),
                replicas: 100_000,
                sample_times: vec![0.5, 1.0, 2.0],
                ..base
            },
            Subcommand::Shape => {
                let mut dirs: Vec<Vec<i32>> = Vec::new();
                let base_dirs = [[1, 0], [0, 1], [-1, 0], [0, -1], [1, 1], [-1, 1], [-1, -1], [1, -1]];
                dirs.extend(base_dirs.iter().map(|v| v.to_vec()));
                dirs.extend(base_dirs.iter().map(|v| vec![2 * v[0], 2 * v[1]]));
                dirs.extend([[2, 1], [1, 2], [-1, 2], [-2, 1], [-2, -1], [-1, -2], [1, -2], [2, -1]].iter().map(|v| v.to_vec()));
                ExperimentConfig {
                    dim: 2,
                    radius: 150,
                    horizon: 60.0,
                    survival_horizon: 60.0,
                    law: EnvironmentLaw::constant(2.0),
                    sites: dirs,
                    replicas: 520,
                    epsilons: vec![0.05, 0.10, 0.15, 0.25],
                    sample_times: vec![30.0, 60.0],
                    ..base
                }
            }
        }
    }

    /// Parses a config; malformed JSON and unknown fields are validation
    /// errors.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| RunError::Validation(vec![format!("config: {e}")]))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn site_list(&self) -> Vec<Site> {
        self.sites.iter().map(|v| Site::from_slice(v)).collect()
    }

    /// Draw cap for conditioned campaigns.
    pub fn max_attempts(&self) -> u64 {
        if self.params.max_attempts > 0 {
            self.params.max_attempts
        } else {
            self.replicas.saturating_mul(20)
        }
    }

    /// Every violated constraint, or `Ok` when there is none.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let p = &self.params;
        if self.replicas == 0 {
            v.push("replicas must be positive".to_string());
        }
        if self.dim == 0 || self.dim > MAX_DIM {
            v.push(format!("dim = {} outside 1..={MAX_DIM}", self.dim));
        }
        if self.radius == 0 && self.subcommand != Subcommand::OracleCheck {
            v.push("radius must be positive".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            v.push(format!("horizon = {} must be positive and finite", self.horizon));
        }
        if !(self.survival_horizon > 0.0 && self.survival_horizon <= self.horizon) {
            v.push(format!("survival_horizon = {} must lie in (0, horizon]", self.survival_horizon));
        }
        if let Err(e) = self.law.validate() {
            v.push(e.to_string());
        }
        let dim_ok = self.dim >= 1 && self.dim <= MAX_DIM;
        for s in &self.sites {
            if dim_ok && s.len() != self.dim {
                v.push(format!("site {s:?} has {} coordinates, dim is {}", s.len(), self.dim));
            }
        }
        let reach = |s: &Vec<i32>, mult: i64| s.iter().map(|c| (*c as i64 * mult).abs()).max().unwrap_or(0);
        for t in &self.sample_times {
            if !(*t > 0.0 && *t <= self.survival_horizon) {
                v.push(format!("sample time {t} outside (0, survival_horizon]"));
            }
        }
        for e in &self.epsilons {
            if !(*e > 0.0 && *e < 1.0) {
                v.push(format!("epsilon {e} outside (0, 1)"));
            }
        }
        match self.subcommand {
            Subcommand::Survive | Subcommand::Tails => {
                let need = if self.subcommand == Subcommand::Tails { 2 } else { 1 };
                if self.sites.len() < need {
                    v.push(format!("{} needs {need} site(s)", self.subcommand.name()));
                }
                if self.sites.iter().any(|s| s.iter().all(|c| *c == 0)) {
                    v.push("sites must differ from the origin".into());
                }
                if self.subcommand == Subcommand::Tails && self.sites.len() >= 2 {
                    let sum: Vec<i32> = self.sites[0].iter().zip(&self.sites[1]).map(|(a, b)| a + b).collect();
                    if reach(&sum, 1) >= self.radius as i64 {
                        v.push(format!("x + y = {sum:?} outside the box"));
                    }
                }
            }
            Subcommand::Sigma => {
                if self.sites.is_empty() {
                    v.push("sigma needs at least one site".into());
                }
                if p.chain_step.len() != self.dim || p.chain_step.iter().all(|c| *c == 0) {
                    v.push(format!("chain_step {:?} must be a nonzero vector of dimension {}", p.chain_step, self.dim));
                }
                let far = reach(&p.chain_step, p.chain_length as i64 + 1);
                if far >= self.radius as i64 {
                    v.push(format!("the chain reaches distance {far}, outside the box"));
                }
                if p.chain_length == 0 {
                    v.push("chain_length must be positive".into());
                }
            }
            Subcommand::Shape => {
                if self.dim != 2 {
                    v.push("shape reconstructs the unit ball in d = 2 only".into());
                }
                if self.sites.len() < 8 {
                    v.push(format!("shape needs at least 8 directions, got {}", self.sites.len()));
                }
                if p.direction_steps == 0 {
                    v.push("direction_steps must be positive".into());
                }
                for s in &self.sites {
                    if reach(s, p.direction_steps as i64) >= self.radius as i64 {
                        v.push(format!("direction {s:?} × {} outside the box", p.direction_steps));
                    }
                    if s.iter().all(|c| *c == 0) {
                        v.push("directions must be nonzero".into());
                    }
                }
                if self.sample_times.is_empty() || self.epsilons.is_empty() {
                    v.push("shape needs sample_times and epsilons".into());
                }
                if p.aux_replicas < 1000 {
                    v.push(format!("aux_replicas = {} below the 1000 growth runs needed", p.aux_replicas));
                }
                if p.aux_radius == 0 || !(p.aux_horizon > 0.0) {
                    v.push("aux_radius and aux_horizon must be positive".into());
                }
            }
            Subcommand::Couple => {
                if p.aux_replicas < 1000 {
                    v.push(format!("aux_replicas = {} below the 1000 needed for the constants", p.aux_replicas));
                }
                if p.probe_norms.len() < 2 || p.probe_norms.iter().any(|k| *k <= 0 || *k as i64 >= self.radius as i64) {
                    v.push(format!("probe_norms {:?} must hold at least two distances inside the box", p.probe_norms));
                }
            }
            Subcommand::Ergodic => {
                if self.sites.is_empty() || self.sites[0].iter().all(|c| *c == 0) {
                    v.push("ergodic needs a nonzero chain step in sites[0]".into());
                }
                if p.chain_ns.is_empty() || p.harness_ns.is_empty() || p.align_ns.is_empty() || p.align_ks.is_empty() {
                    v.push("chain_ns, harness_ns, align_ns and align_ks must be nonempty".into());
                }
                if p.chain_ns.iter().chain(&p.harness_ns).chain(&p.align_ns).chain(&p.align_ks).any(|n| *n == 0) {
                    v.push("harness indices must be positive".into());
                }
                if let Some(s) = self.sites.first() {
                    let chain_max = p.chain_ns.iter().cloned().max().unwrap_or(0);
                    let align_max = p.align_ns.iter().cloned().max().unwrap_or(0) * p.align_ks.iter().cloned().max().unwrap_or(0);
                    let defect_max = p.defect_pairs.iter().map(|(n, q)| n + q).max().unwrap_or(0);
                    let far = reach(s, chain_max.max(align_max).max(defect_max) as i64);
                    if far >= self.radius as i64 {
                        v.push(format!("the harness reaches distance {far}, outside the box"));
                    }
                }
                let (lo, hi) = p.additive_support;
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    v.push(format!("additive_support ({lo}, {hi}) must be a nondegenerate interval"));
                }
                if p.aux_replicas < 2 {
                    v.push("aux_replicas must be at least 2".into());
                }
            }
            Subcommand::OracleCheck => {
                if self.dim != 1 {
                    v.push("oracle-check runs one-dimensional boxes".into());
                }
                if p.oracle_sizes.is_empty() || p.oracle_rates.is_empty() || self.sample_times.is_empty() {
                    v.push("oracle_sizes, oracle_rates and sample_times must be nonempty".into());
                }
                for s in &p.oracle_sizes {
                    if !(2..=cpshape_core::oracle::MAX_SITES as u32).contains(s) {
                        v.push(format!("oracle box of {s} sites outside 2..={}", cpshape_core::oracle::MAX_SITES));
                    }
                }
                for r in &p.oracle_rates {
                    if !(*r > 0.0 && r.is_finite()) {
                        v.push(format!("oracle rate {r} must be positive"));
                    }
                }
                if self.sample_times.iter().any(|t| *t > self.horizon) {
                    v.push("oracle sample times must not exceed the horizon".into());
                }
            }
        }
        if matches!(self.subcommand, Subcommand::Survive | Subcommand::Sigma) {
            for s in &self.sites {
                if reach(s, 1) >= self.radius as i64 {
                    v.push(format!("site {s:?} outside the box"));
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(RunError::Validation(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for sub in Subcommand::ALL {
            ExperimentConfig::preset(sub).validate().unwrap_or_else(|e| panic!("{}: {e}", sub.name()));
        }
    }

    #[test]
    fn zero_replicas_rejected() {
        let mut c = ExperimentConfig::preset(Subcommand::Survive);
        c.replicas = 0;
        match c.validate() {
            Err(RunError::Validation(v)) => assert!(v.iter().any(|m| m.contains("replicas"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_listed() {
        let mut c = ExperimentConfig::preset(Subcommand::Shape);
        c.replicas = 0;
        c.dim = 3;
        c.epsilons = vec![1.5];
        match c.validate() {
            Err(RunError::Validation(v)) => assert!(v.len() >= 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut c = ExperimentConfig::preset(Subcommand::Shape);
        c.horizon = 0.1 + 0.2;
        c.epsilons.push(1.0 / 3.0);
        let text = c.to_json().unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = ExperimentConfig::preset(Subcommand::Tails).to_json().unwrap().replacen('{', "{\"bogus\": 1,", 1);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}
