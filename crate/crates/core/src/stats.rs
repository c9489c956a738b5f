//! Small statistics toolkit: confidence intervals, tail fits, two-sample
//! and independence tests, and rejection conditioning.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Linear-interpolation quantile of unsorted data (`q` in `[0, 1]`).
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// A mean with its normal-approximation interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn overlaps(&self, other: &MeanEstimate) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

pub fn normal_ci(xs: &[f64], z: f64) -> Result<MeanEstimate> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData(format!("{} samples for an interval", xs.len())));
    }
    let m = mean(xs);
    let se = libm::sqrt(variance(xs) / xs.len() as f64);
    Ok(MeanEstimate { mean: m, se, lo: m - z * se, hi: m + z * se, n: xs.len() })
}

/// Wilson score interval for a binomial proportion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn wilson(successes: u64, trials: u64, z: f64) -> Proportion {
    if trials == 0 {
        return Proportion { successes, trials, estimate: f64::NAN, lo: 0.0, hi: 1.0 };
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * libm::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    Proportion { successes, trials, estimate: p, lo: (centre - half).max(0.0), hi: (centre + half).min(1.0) }
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean squared residual.
    pub residual: f64,
    pub r_squared: f64,
    pub slope_se: f64,
    pub n: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter(format!("{} x values for {} y values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!("{} points for a line", x.len())));
    }
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a) * (b - intercept - slope * a)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_se = if x.len() > 2 { libm::sqrt(sse / (n - 2.0) / sxx) } else { f64::NAN };
    Ok(LinearFit { slope, intercept, residual: libm::sqrt(sse / n), r_squared, slope_se, n: x.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailKind {
    /// `ln P(X > t)` against `t`.
    Exponential,
    /// `ln P(X > t)` against `√t`.
    Stretched,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub kind: TailKind,
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub r_squared: f64,
    pub slope_se: f64,
    pub sample_size: usize,
}

/// Points kept by the tail fit need this many samples strictly above them.
pub const MIN_EXCEEDANCES: usize = 20;
pub const MIN_TAIL_SAMPLES: usize = 200;

/// Least-squares line through the log empirical survival function.
pub fn fit_tail(samples: &[f64], kind: TailKind) -> Result<TailFit> {
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(Error::InsufficientData(format!("{} samples, need {MIN_TAIL_SAMPLES}", samples.len())));
    }
    if samples.iter().any(|s| !s.is_finite() || (kind == TailKind::Stretched && *s < 0.0)) {
        return Err(Error::InvalidParameter("tail samples must be finite (and nonnegative for stretched fits)".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[j + 1] == v[i] {
            j += 1;
        }
        let above = n - 1 - j;
        if above < MIN_EXCEEDANCES {
            break;
        }
        let t = v[i];
        xs.push(match kind {
            TailKind::Exponential => t,
            TailKind::Stretched => libm::sqrt(t),
        });
        ys.push(libm::log(above as f64 / n as f64));
        i = j + 1;
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate(format!("{} distinct tail points", xs.len())));
    }
    let f = linear_fit(&xs, &ys)?;
    Ok(TailFit { kind, slope: f.slope, intercept: f.intercept, residual: f.residual, r_squared: f.r_squared, slope_se: f.slope_se, sample_size: n })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Whether the p-value is exact rather than asymptotic.
    pub exact: bool,
}

/// Largest sample size for which the two-sample KS p-value is computed
/// exactly.
pub const KS_EXACT_MAX: usize = 50;

/// Two-sample Kolmogorov–Smirnov test, two-sided.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = if x[i] <= y[j] { x[i] } else { y[j] };
        while i < n && x[i] == t {
            i += 1;
        }
        while j < m && y[j] == t {
            j += 1;
        }
        d = d.max(libm::fabs(i as f64 / n as f64 - j as f64 / m as f64));
    }
    if n <= KS_EXACT_MAX && m <= KS_EXACT_MAX {
        Ok(TestResult { statistic: d, p_value: ks_exact_p(n, m, d), exact: true })
    } else {
        let en = libm::sqrt((n * m) as f64 / (n + m) as f64);
        Ok(TestResult { statistic: d, p_value: kolmogorov_q((en + 0.12 + 0.11 / en) * d), exact: false })
    }
}

/// `P(D ≥ d)` under the null by counting monotone lattice paths that stay
/// strictly inside the band `|i/n − j/m| < d`.
fn ks_exact_p(n: usize, m: usize, d: f64) -> f64 {
    // tolerance guards the strict inequality against rounding in d itself
    let tol = 1e-9;
    let inside = |i: usize, j: usize| libm::fabs(i as f64 / n as f64 - j as f64 / m as f64) < d - tol;
    // paths weighted by 1/C(n+m, n) via step probabilities
    let mut row = vec![0.0f64; m + 1];
    for i in 0..=n {
        for j in 0..=m {
            if i == 0 && j == 0 {
                row[0] = 1.0;
                continue;
            }
            if !inside(i, j) {
                row[j] = 0.0;
                continue;
            }
            // probability of stepping in i from (i-1, j) is (n-i+1)/(n+m-i-j+1)
            let rem = (n + m - i - j + 1) as f64;
            let from_up = if i > 0 { row[j] * (n - i + 1) as f64 / rem } else { 0.0 };
            let from_left = if j > 0 { row[j - 1] * (m - j + 1) as f64 / rem } else { 0.0 };
            row[j] = from_up + from_left;
        }
    }
    (1.0 - row[m]).clamp(0.0, 1.0)
}

/// Kolmogorov's limiting tail `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = libm::exp(-2.0 * kf * kf * lambda * lambda);
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / libm::sqrt(sxx * syy)
}

/// Mean lag-1 Pearson correlation across consecutive columns.
fn lag_statistic(columns: &[Vec<f64>]) -> f64 {
    let pairs = columns.len() - 1;
    columns.windows(2).map(|w| pearson(&w[0], &w[1])).sum::<f64>() / pairs as f64
}

/// Permutation test of independence along chains. `columns[j][r]` is the
/// `j`-th element of chain `r`. The statistic is the mean lag-1 correlation;
/// permutations shuffle each column independently across chains.
pub fn permutation_correlation(columns: &[Vec<f64>], permutations: u32, seed: u64) -> Result<TestResult> {
    if columns.len() < 2 {
        return Err(Error::InsufficientData("need at least two chain positions".into()));
    }
    let r = columns[0].len();
    if r < 3 || columns.iter().any(|c| c.len() != r) {
        return Err(Error::InsufficientData("columns must have equal length ≥ 3".into()));
    }
    let observed = lag_statistic(columns);
    let mut rng = CounterRng::derive(seed, 0x7065_726d);
    let mut work: Vec<Vec<f64>> = columns.to_vec();
    let mut extreme = 0u32;
    for _ in 0..permutations {
        for c in work.iter_mut() {
            rng.shuffle(c);
        }
        if libm::fabs(lag_statistic(&work)) >= libm::fabs(observed) - 1e-12 {
            extreme += 1;
        }
    }
    Ok(TestResult { statistic: observed, p_value: (1 + extreme) as f64 / (1 + permutations) as f64, exact: false })
}

/// A record that knows whether its replica survived.
pub trait SurvivalRecord {
    fn survived(&self) -> bool;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditioned<T> {
    pub records: Vec<T>,
    pub acceptance: Proportion,
}

/// Rejection conditioning on survival. Surviving records are kept as is,
/// in order.
pub fn condition_on_survival<T: SurvivalRecord>(records: Vec<T>) -> Result<Conditioned<T>> {
    let total = records.len() as u64;
    let kept: Vec<T> = records.into_iter().filter(|r| r.survived()).collect();
    if kept.is_empty() {
        return Err(Error::NoSurvivors(total as usize));
    }
    let acceptance = wilson(kept.len() as u64, total, Z95);
    Ok(Conditioned { records: kept, acceptance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn wilson_reference_value() {
        // 8 of 10 at 95%: textbook interval (0.4902, 0.9433)
        let p = wilson(8, 10, Z95);
        assert!((p.lo - 0.4902).abs() < 1e-4, "{}", p.lo);
        assert!((p.hi - 0.9433).abs() < 1e-4, "{}", p.hi);
    }

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn ks_exact_small_cases() {
        // n = m = 2 with complete separation: D = 1, P = 2 / C(4,2)
        let t = ks_two_sample(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(t.statistic, 1.0);
        assert!((t.p_value - 2.0 / 6.0).abs() < 1e-12);
        // interleaved: D = 1/2 for x<y<x<y ; paths with max deviation ≥ 1/2 are all but none
        let t = ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]).unwrap();
        assert_eq!(t.statistic, 0.5);
        assert!((t.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_tail_reference() {
        // Q(1.36) ≈ 0.0494
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 5e-4);
    }

    #[test]
    fn condition_filters() {
        struct R(bool);
        impl SurvivalRecord for R {
            fn survived(&self) -> bool {
                self.0
            }
        }
        let c = condition_on_survival(vec![R(true), R(false), R(true)]).unwrap();
        assert_eq!(c.records.len(), 2);
        assert_eq!(c.acceptance.successes, 2);
        assert!(matches!(condition_on_survival(vec![R(false)]), Err(Error::NoSurvivors(1))));
    }
}
