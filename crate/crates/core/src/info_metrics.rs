//! Closed-form divergences, information budgets and the mixture lower bound.
//!
//! All logarithms are natural. The static setting measures evidence as
//! `k^2 * chi2(Bern(p + delta) || Bern(p))`, the temporal setting as
//! `T * I` where `I` is a KL rate per unit time; both are compared against a
//! `ln n` search penalty.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{domain, Result};

/// Baseline edge probability `p` lifted additively by `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliShift {
    p: f64,
    delta: f64,
}

impl BernoulliShift {
    pub fn new(p: f64, delta: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(domain(format!("baseline probability p={p} must lie in (0,1)")));
        }
        let q = p + delta;
        if !(0.0..=1.0).contains(&q) {
            return Err(domain(format!("p+delta={q} must lie in [0,1]")));
        }
        Ok(Self { p, delta })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn lifted(&self) -> f64 {
        self.p + self.delta
    }
}

/// Poisson rate `mu` lifted to `mu + delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonShift {
    mu: f64,
    delta: f64,
}

impl PoissonShift {
    pub fn new(mu: f64, delta: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(domain(format!("baseline rate mu={mu} must be positive")));
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(domain(format!("rate lift delta={delta} must be non-negative")));
        }
        Ok(Self { mu, delta })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// `chi2(Bern(p + delta) || Bern(p)) = delta^2 / (p (1 - p))`.
pub fn chi_square_bernoulli(shift: BernoulliShift) -> f64 {
    shift.delta * shift.delta / (shift.p * (1.0 - shift.p))
}

/// KL divergence per unit time of a Poisson process at rate `mu + delta`
/// against one at rate `mu`: `(mu + delta) ln(1 + delta/mu) - delta`.
pub fn poisson_kl_rate(shift: PoissonShift) -> f64 {
    let PoissonShift { mu, delta } = shift;
    if delta == 0.0 {
        return 0.0;
    }
    let ratio = delta / mu;
    // For small ratios the two terms nearly cancel; use the series
    // mu * sum_{j>=2} (-1)^j r^j / (j (j-1)).
    if ratio < 1e-3 {
        let mut term = ratio * ratio;
        let mut sum = 0.0;
        for j in 2..12 {
            let jf = j as f64;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * term / (jf * (jf - 1.0));
            term *= ratio;
        }
        return mu * sum;
    }
    ((mu + delta) * ratio.ln_1p() - delta).max(0.0)
}

/// Smallest detectable lift with its clamping flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaMin {
    pub value: f64,
    /// Set when `sqrt(p(1-p) ln n)/k` exceeded `1 - p` and was clamped.
    pub clamped: bool,
}

fn check_nk(n: u64, k: u64) -> Result<()> {
    if n < 2 {
        return Err(domain(format!("n={n} must be at least 2")));
    }
    if k < 2 || k > n {
        return Err(domain(format!("k={k} must satisfy 2 <= k <= n={n}")));
    }
    Ok(())
}

/// `sqrt(p (1 - p) ln n) / k`, clamped so that `p + delta <= 1`.
pub fn delta_min(n: u64, p: f64, k: u64) -> Result<DeltaMin> {
    check_nk(n, k)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("p={p} must lie in (0,1)")));
    }
    let raw = (p * (1.0 - p) * (n as f64).ln()).sqrt() / k as f64;
    let cap = 1.0 - p;
    Ok(if raw > cap {
        DeltaMin { value: cap, clamped: true }
    } else {
        DeltaMin { value: raw, clamped: false }
    })
}

/// Minimal `d` in the sparse parametrisation `p = c/n`, `delta = d/n`:
/// `sqrt(c n ln n) / k`.
pub fn sparse_lift_threshold(n: u64, c: f64, k: u64) -> Result<f64> {
    check_nk(n, k)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(domain(format!("mean-degree parameter c={c} must be positive")));
    }
    let nf = n as f64;
    Ok((c * nf * nf.ln()).sqrt() / k as f64)
}

fn check_rate(info_rate: f64) -> Result<()> {
    if !(info_rate > 0.0) || !info_rate.is_finite() {
        return Err(domain(format!("information rate I={info_rate} must be positive")));
    }
    Ok(())
}

/// Horizon at which `T * I` reaches `ln n`.
pub fn required_horizon(n: u64, info_rate: f64) -> Result<f64> {
    if n < 2 {
        return Err(domain(format!("n={n} must be at least 2")));
    }
    check_rate(info_rate)?;
    Ok((n as f64).ln() / info_rate)
}

/// First-order CUSUM delay `|ln alpha| / I`.
pub fn expected_delay(alpha: f64, info_rate: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(format!("false-alarm level alpha={alpha} must lie in (0,1)")));
    }
    check_rate(info_rate)?;
    Ok(alpha.ln().abs() / info_rate)
}

/// Second moment of the uniform-support mixture likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureBound {
    pub n: u64,
    pub k: u64,
    pub chi2_edge: f64,
    pub chi2_mixture: f64,
    /// `min(1, sqrt(chi2_mixture / 2))`.
    pub tv_upper: f64,
    /// The bound says nothing (chi2_mixture > 2).
    pub vacuous: bool,
    /// The sum exceeded the representable range; chi2_mixture is +inf.
    pub overflow: bool,
}

/// Log-pmf of the overlap `|S ∩ S'|` of two independent uniform `k`-subsets
/// of `[n]`, for every feasible overlap `r`.
pub fn overlap_log_pmf(n: u64, k: u64) -> Vec<(u64, f64)> {
    let lo = (2 * k).saturating_sub(n);
    let norm = ln_binomial(n, k);
    (lo..=k)
        .map(|r| (r, ln_binomial(k, r) + ln_binomial(n - k, k - r) - norm))
        .collect()
}

/// `chi2(P1 || P0) = E_r[(1 + chi2_edge)^(r(r-1)/2)] - 1` with `r`
/// hypergeometric, together with the total-variation bound it implies.
pub fn mixture_chi_square(n: u64, k: u64, chi2_edge: f64) -> Result<MixtureBound> {
    check_nk(n, k)?;
    if !(chi2_edge >= 0.0) {
        return Err(domain(format!("per-edge chi2={chi2_edge} must be non-negative")));
    }
    let log_base = chi2_edge.ln_1p();
    let mut sum = 0.0;
    for (r, log_pmf) in overlap_log_pmf(n, k) {
        let pairs = (r * r.saturating_sub(1) / 2) as f64;
        let exponent = pairs * log_base;
        // (1+x)^pairs - 1, weighted; switch to the log form once expm1 would
        // overflow even though the weight is tiny.
        let term = if exponent < 700.0 {
            log_pmf.exp() * exponent.exp_m1()
        } else {
            (log_pmf + exponent).exp()
        };
        sum += term;
    }
    let overflow = !sum.is_finite();
    let chi2_mixture = if overflow { f64::INFINITY } else { sum.max(0.0) };
    let vacuous = chi2_mixture > 2.0;
    let tv_upper = if vacuous { 1.0 } else { (chi2_mixture / 2.0).sqrt().min(1.0) };
    Ok(MixtureBound { n, k, chi2_edge, chi2_mixture, tv_upper, vacuous, overflow })
}

/// Which search penalty an [`InfoBudget`] is measured against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// `ln n`.
    #[default]
    LogN,
    /// `k ln(n/k)`, the entropy of the support up to lower-order terms.
    SubsetEntropy,
}

/// Accumulated information against its search penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoBudget {
    pub accumulated: f64,
    pub penalty: f64,
    pub margin: f64,
}

impl InfoBudget {
    pub fn new(accumulated: f64, penalty: f64) -> Self {
        Self { accumulated, penalty, margin: accumulated - penalty }
    }

    pub fn is_above_threshold(&self) -> bool {
        self.margin >= 0.0
    }
}

/// `k^2 chi2(shift)` against the chosen penalty.
pub fn info_budget_static(n: u64, k: u64, shift: BernoulliShift, mode: PenaltyMode) -> Result<InfoBudget> {
    check_nk(n, k)?;
    let kf = k as f64;
    let accumulated = kf * kf * chi_square_bernoulli(shift);
    let penalty = match mode {
        PenaltyMode::LogN => (n as f64).ln(),
        PenaltyMode::SubsetEntropy => kf * (n as f64 / kf).ln(),
    };
    Ok(InfoBudget::new(accumulated, penalty))
}

/// `T * I` against `ln n`.
pub fn info_budget_temporal(n: u64, horizon: f64, info_rate: f64) -> Result<InfoBudget> {
    if n < 2 {
        return Err(domain(format!("n={n} must be at least 2")));
    }
    if !(horizon >= 0.0) || !(info_rate >= 0.0) {
        return Err(domain("horizon and information rate must be non-negative"));
    }
    Ok(InfoBudget::new(horizon * info_rate, (n as f64).ln()))
}

/// Total KL rate of `pairs` independent Poisson pairs lifted by `shift`.
pub fn aggregate_poisson_rate(shift: PoissonShift, pairs: u64) -> f64 {
    pairs as f64 * poisson_kl_rate(shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bernoulli_chi_square_examples() {
        assert_eq!(chi_square_bernoulli(BernoulliShift::new(0.01, 0.0).unwrap()), 0.0);
        assert_relative_eq!(chi_square_bernoulli(BernoulliShift::new(0.5, 0.1).unwrap()), 0.04, epsilon = 1e-15);
        let chi2 = chi_square_bernoulli(BernoulliShift::new(0.01, 6.74e-4).unwrap());
        assert_relative_eq!(chi2, 4.59e-5, max_relative = 0.01);
        assert_relative_eq!(250_000.0 * chi2, 1e5_f64.ln(), max_relative = 0.01);
    }

    #[test]
    fn bernoulli_shift_domain() {
        assert!(BernoulliShift::new(0.0, 0.1).is_err());
        assert!(BernoulliShift::new(1.0, 0.0).is_err());
        assert!(BernoulliShift::new(0.5, 0.6).is_err());
        assert!(BernoulliShift::new(0.5, -0.6).is_err());
        assert!(BernoulliShift::new(0.5, 0.5).is_ok());
    }

    #[test]
    fn poisson_kl_examples() {
        assert_eq!(poisson_kl_rate(PoissonShift::new(1.0, 0.0).unwrap()), 0.0);
        assert_relative_eq!(
            poisson_kl_rate(PoissonShift::new(1.0, 1.0).unwrap()),
            2.0 * 2f64.ln() - 1.0,
            epsilon = 1e-15
        );
        let kl = poisson_kl_rate(PoissonShift::new(10.0, 0.1).unwrap());
        assert_relative_eq!(kl, 4.983e-4, max_relative = 1e-3);
        assert_relative_eq!(kl, 5.0e-4, max_relative = 5e-3);
        assert!(PoissonShift::new(0.0, 1.0).is_err());
        assert!(PoissonShift::new(1.0, -0.1).is_err());
    }

    #[test]
    fn series_branch_is_continuous() {
        let mu = 3.0;
        let below = poisson_kl_rate(PoissonShift::new(mu, mu * 0.999e-3).unwrap());
        let above = poisson_kl_rate(PoissonShift::new(mu, mu * 1.001e-3).unwrap());
        let mid = |r: f64| mu * ((1.0 + r) * r.ln_1p() - r);
        assert_relative_eq!(below, mid(0.999e-3), max_relative = 1e-6);
        assert_relative_eq!(above, mid(1.001e-3), max_relative = 1e-6);
    }

    #[test]
    fn delta_min_examples() {
        let d = delta_min(100_000, 0.01, 500).unwrap();
        assert!(!d.clamped);
        assert_relative_eq!(d.value, 6.74e-4, max_relative = 0.01);
        let d2 = delta_min(100_000, 0.01, 1000).unwrap();
        assert_relative_eq!(d2.value, d.value / 2.0, epsilon = 1e-18);
        // p(1-p) = 1/4 halves sqrt(ln n)/k.
        let d3 = delta_min(100_000, 0.5, 500).unwrap();
        assert_relative_eq!(d3.value, 0.5 * 1e5_f64.ln().sqrt() / 500.0, epsilon = 1e-15);
        assert_relative_eq!(d3.value, 3.393e-3, max_relative = 1e-3);
    }

    #[test]
    fn delta_min_clamps() {
        let d = delta_min(1000, 0.9, 2).unwrap();
        assert!(d.clamped);
        assert_relative_eq!(d.value, 0.1, epsilon = 1e-15);
        assert!(delta_min(1, 0.5, 2).is_err());
        assert!(delta_min(10, 0.5, 11).is_err());
        assert!(delta_min(10, 1.5, 2).is_err());
    }

    #[test]
    fn sparse_lift_examples() {
        let d = sparse_lift_threshold(10_000, 5.0, 100).unwrap();
        assert_relative_eq!(d, (5e4 * 1e4_f64.ln()).sqrt() / 100.0, epsilon = 1e-12);
        assert_relative_eq!(d, 6.79, max_relative = 1e-3);
        assert!(sparse_lift_threshold(10_000, 0.0, 100).is_err());
    }

    #[test]
    fn sparse_lift_matches_chi_square_budget() {
        let (n, c, k) = (10_000u64, 5.0, 100u64);
        let d = sparse_lift_threshold(n, c, k).unwrap();
        let shift = BernoulliShift::new(c / n as f64, d / n as f64).unwrap();
        let budget = info_budget_static(n, k, shift, PenaltyMode::LogN).unwrap();
        assert_relative_eq!(budget.accumulated, budget.penalty, max_relative = 0.05);
    }

    #[test]
    fn horizon_and_delay_examples() {
        assert_relative_eq!(required_horizon(1_000_000, 0.1).unwrap(), 138.155, max_relative = 1e-4);
        assert_relative_eq!(required_horizon(1_000_000, 1.0).unwrap(), 13.8155, max_relative = 1e-4);
        assert!(required_horizon(10, 0.0).is_err());
        assert_relative_eq!(expected_delay(1e-4, 1.0).unwrap(), 9.2103, max_relative = 1e-4);
        assert_relative_eq!(expected_delay(1e-4, 0.5).unwrap(), 18.4207, max_relative = 1e-4);
        assert_relative_eq!(expected_delay((-1f64).exp(), 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(expected_delay(1.0, 1.0).is_err());
        assert!(expected_delay(0.1, -1.0).is_err());
    }

    #[test]
    fn mixture_small_case() {
        let b = mixture_chi_square(4, 2, 0.1).unwrap();
        assert_relative_eq!(b.chi2_mixture, 1.0 / 60.0, epsilon = 1e-15);
        assert_relative_eq!(b.tv_upper, (1.0f64 / 120.0).sqrt(), epsilon = 1e-15);
        let z = mixture_chi_square(50, 7, 0.0).unwrap();
        assert_eq!(z.chi2_mixture, 0.0);
        assert_eq!(z.tv_upper, 0.0);
    }

    #[test]
    fn mixture_overflow_and_vacuous() {
        let b = mixture_chi_square(20, 20, 1e6).unwrap();
        assert!(b.overflow && b.vacuous);
        assert_eq!(b.tv_upper, 1.0);
        let v = mixture_chi_square(10, 5, 3.0).unwrap();
        assert!(v.vacuous && !v.overflow);
    }

    #[test]
    fn overlap_pmf_sums_to_one() {
        for (n, k) in [(10, 3), (100, 40), (100_000, 500)] {
            let total: f64 = overlap_log_pmf(n, k).iter().map(|(_, l)| l.exp()).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn budgets() {
        let d = delta_min(100_000, 0.01, 500).unwrap();
        let b = info_budget_static(100_000, 500, BernoulliShift::new(0.01, d.value).unwrap(), PenaltyMode::LogN).unwrap();
        assert!(b.margin.abs() < 1e-9);
        let t = info_budget_temporal(1_000_000, 0.0, 0.1).unwrap();
        assert_relative_eq!(t.margin, -(1e6_f64).ln(), epsilon = 1e-12);
        let h = required_horizon(1_000_000, 0.1).unwrap();
        assert!(info_budget_temporal(1_000_000, h, 0.1).unwrap().margin.abs() < 1e-12);
        let e = info_budget_static(1000, 10, BernoulliShift::new(0.1, 0.05).unwrap(), PenaltyMode::SubsetEntropy).unwrap();
        assert_relative_eq!(e.penalty, 10.0 * 100f64.ln(), epsilon = 1e-12);
        assert_eq!(e.margin, e.accumulated - e.penalty);
    }
}
