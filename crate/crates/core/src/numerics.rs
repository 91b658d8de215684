//! Poisson, Skellam and modified-Bessel primitives.
//!
//! Everything here is evaluated in log space and exponentiated once, since
//! the solvers routinely see prefactors like `e^{-c}` with `c` in the
//! hundreds.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("mean must be finite and non-negative, got {0}")]
    InvalidMean(f64),
    #[error("argument must be finite and non-negative, got {0}")]
    NegativeArgument(f64),
    #[error("tail policy requires 0 < eps_tail <= 1 and a cap >= 1")]
    InvalidPolicy,
}

/// A Poisson law with the given mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonSpec {
    mean: f64,
}

impl PoissonSpec {
    pub fn new(mean: f64) -> Result<Self, NumericsError> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(NumericsError::InvalidMean(mean));
        }
        Ok(Self { mean })
    }

    #[inline]
    pub fn mean(&self) -> f64 {
        self.mean
    }
}

/// Law of `K1 - K2` with `K1 ~ Poisson(mean_plus)` and `K2 ~ Poisson(mean_minus)`
/// independent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkellamSpec {
    mean_plus: f64,
    mean_minus: f64,
}

impl SkellamSpec {
    pub fn new(mean_plus: f64, mean_minus: f64) -> Result<Self, NumericsError> {
        for m in [mean_plus, mean_minus] {
            if !m.is_finite() || m < 0.0 {
                return Err(NumericsError::InvalidMean(m));
            }
        }
        Ok(Self {
            mean_plus,
            mean_minus,
        })
    }

    #[inline]
    pub fn mean_plus(&self) -> f64 {
        self.mean_plus
    }

    #[inline]
    pub fn mean_minus(&self) -> f64 {
        self.mean_minus
    }

    /// `x = 2 sqrt(mean_plus * mean_minus)`, the Bessel argument.
    pub fn bessel_argument(&self) -> f64 {
        2.0 * (self.mean_plus * self.mean_minus).sqrt()
    }

    /// `y = atanh((mean_plus - mean_minus) / (mean_plus + mean_minus))`.
    ///
    /// Infinite when one of the means vanishes; zero when both do.
    pub fn rapidity(&self) -> f64 {
        let total = self.mean_plus + self.mean_minus;
        if total == 0.0 {
            return 0.0;
        }
        ((self.mean_plus - self.mean_minus) / total).atanh()
    }

    fn swapped(&self) -> Self {
        Self {
            mean_plus: self.mean_minus,
            mean_minus: self.mean_plus,
        }
    }
}

/// How much Poisson mass may be dropped when truncating an infinite sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPolicy {
    pub eps_tail: f64,
    /// Hard cap on the summation index. `None` means `10 * (mean + 10)`.
    pub k_max_cap: Option<u64>,
}

impl Default for TailPolicy {
    fn default() -> Self {
        Self {
            eps_tail: 1e-12,
            k_max_cap: None,
        }
    }
}

impl TailPolicy {
    pub fn with_eps(eps_tail: f64) -> Self {
        Self {
            eps_tail,
            k_max_cap: None,
        }
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        let eps_ok = self.eps_tail > 0.0 && self.eps_tail <= 1.0;
        let cap_ok = self.k_max_cap.is_none_or(|c| c >= 1);
        if eps_ok && cap_ok {
            Ok(())
        } else {
            Err(NumericsError::InvalidPolicy)
        }
    }

    fn cap_for(&self, mean: f64) -> u64 {
        self.k_max_cap
            .unwrap_or_else(|| (10.0 * (mean + 10.0)).ceil() as u64)
    }
}

const LN_FACTORIAL_TABLE: usize = 1024;

/// `ln k!`, tabulated for small `k`.
pub fn ln_factorial(k: u64) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LN_FACTORIAL_TABLE);
        let mut acc = 0.0f64;
        t.push(0.0);
        for i in 1..LN_FACTORIAL_TABLE {
            acc += (i as f64).ln();
            t.push(acc);
        }
        t
    });
    match table.get(k as usize) {
        Some(&v) => v,
        None => libm::lgamma(k as f64 + 1.0),
    }
}

/// `ln P_mean(k)`, `-inf` where the mass is exactly zero.
#[inline]
pub fn poisson_ln_pmf(mean: f64, k: u64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -mean + k as f64 * mean.ln() - ln_factorial(k)
}

pub fn poisson_pmf(spec: PoissonSpec, k: u64) -> f64 {
    poisson_ln_pmf(spec.mean, k).exp().min(1.0)
}

/// Strict lower tail `Q(k) = sum_{j<k} P(j)`.
pub fn poisson_cdf_below(spec: PoissonSpec, k: u64) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let bound = truncation_bound(spec, TailPolicy::with_eps(1e-17));
    if k > bound + 1 {
        // Everything but a sub-ulp tail lies below k.
        let upper: f64 = (k..).map(|j| poisson_pmf(spec, j)).take_while(|&p| p > 0.0).take(1 << 16).sum();
        return (1.0 - upper).clamp(0.0, 1.0);
    }
    (0..k).map(|j| poisson_pmf(spec, j)).sum::<f64>().min(1.0)
}

/// Smallest `k_max >= mean` whose upper tail `P(X > k_max)` is below
/// `eps_tail`, capped by the policy. A zero mean gives `0`.
pub fn truncation_bound(spec: PoissonSpec, policy: TailPolicy) -> u64 {
    let mean = spec.mean;
    let cap = policy.cap_for(mean);
    if mean == 0.0 {
        return 0;
    }
    let floor = mean.ceil() as u64;
    // Walk far enough out that the remaining mass is negligible, then sum
    // the tail back towards the mean.
    let sd = mean.sqrt();
    let mut far = (mean + 40.0 * sd + 40.0).ceil() as u64;
    while poisson_ln_pmf(mean, far) > -745.0 {
        far *= 2;
    }
    let mut tail = 0.0f64;
    let mut k = far;
    while k > floor {
        let next = tail + poisson_pmf(spec, k);
        if next >= policy.eps_tail {
            break;
        }
        tail = next;
        k -= 1;
    }
    k.min(cap).max(floor.min(cap))
}

/// Poisson pmf and strict lower cdf tabulated on `0..=k_max`.
#[derive(Debug, Clone)]
pub struct PoissonTable {
    pub pmf: Vec<f64>,
    /// `below[k] = Q(k)`, length `k_max + 2`.
    pub below: Vec<f64>,
}

impl PoissonTable {
    pub fn new(mean: f64, k_max: usize) -> Self {
        let pmf: Vec<f64> = (0..=k_max as u64)
            .map(|k| poisson_ln_pmf(mean, k).exp())
            .collect();
        let mut below = Vec::with_capacity(k_max + 2);
        let mut acc = 0.0;
        below.push(0.0);
        for &p in &pmf {
            acc += p;
            below.push(acc.min(1.0));
        }
        Self { pmf, below }
    }

    #[inline]
    pub fn pmf(&self, k: usize) -> f64 {
        self.pmf.get(k).copied().unwrap_or(0.0)
    }

    /// Mass strictly above `k` inside the table.
    pub fn upper_tails(&self) -> Vec<f64> {
        let mut upper = vec![0.0; self.pmf.len()];
        let mut acc = 0.0;
        for k in (0..self.pmf.len()).rev() {
            upper[k] = acc;
            acc += self.pmf[k];
        }
        upper
    }
}

const SMALL_X: f64 = 1e-5;

/// Scaled modified Bessel functions `e^{-x} I_k(x)` for `k = 0..=max_order`.
///
/// Miller's backward recurrence `I_{k-1} = I_{k+1} + (2k/x) I_k`, normalised
/// with `I_0 + 2 sum_k I_k = e^x`.
pub fn bessel_i_scaled_seq(max_order: usize, x: f64) -> Result<Vec<f64>, NumericsError> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(NumericsError::NegativeArgument(x));
    }
    let mut out = vec![0.0; max_order + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return Ok(out);
    }
    if x < SMALL_X {
        // Two series terms: (x/2)^k / k! * (1 + x^2 / (4(k+1))).
        let half = 0.5 * x;
        let scale = (-x).exp();
        for (k, v) in out.iter_mut().enumerate() {
            let lead = (k as f64 * half.ln() - ln_factorial(k as u64)).exp();
            *v = scale * lead * (1.0 + half * half / (k as f64 + 1.0));
        }
        return Ok(out);
    }

    let start = max_order + 40 + (80.0 * (x + 1.0)).sqrt().ceil() as usize;
    let mut v = vec![0.0f64; start + 2];
    v[start] = 1.0;
    let inv_x = 1.0 / x;
    for k in (1..=start).rev() {
        let prev = v[k + 1] + 2.0 * k as f64 * inv_x * v[k];
        v[k - 1] = prev;
        if prev > 1e200 {
            for w in v[k - 1..].iter_mut() {
                *w *= 1e-200;
            }
        }
    }
    let norm = v[0] + 2.0 * v[1..].iter().sum::<f64>();
    for (k, o) in out.iter_mut().enumerate() {
        *o = v[k] / norm;
    }
    Ok(out)
}

/// `e^{-x} I_order(x)`.
pub fn bessel_i_scaled(order: usize, x: f64) -> Result<f64, NumericsError> {
    Ok(bessel_i_scaled_seq(order, x)?[order])
}

/// Skellam pmf via the truncated convolution `sum_j P_1(j + k) P_2(j)`.
pub fn skellam_pmf(spec: SkellamSpec, k: i64) -> f64 {
    skellam_pmf_with(spec, k, TailPolicy::default())
}

pub fn skellam_pmf_with(spec: SkellamSpec, k: i64, policy: TailPolicy) -> f64 {
    if k < 0 {
        return skellam_pmf_with(spec.swapped(), -k, policy);
    }
    let k = k as u64;
    let (l1, l2) = (spec.mean_plus, spec.mean_minus);
    let j_max = truncation_bound(PoissonSpec { mean: l2 }, policy)
        .max(truncation_bound(PoissonSpec { mean: l1 }, policy).saturating_sub(k));
    (0..=j_max)
        .map(|j| (poisson_ln_pmf(l1, j + k) + poisson_ln_pmf(l2, j)).exp())
        .sum::<f64>()
        .min(1.0)
}

/// Skellam pmf in the Bessel form
/// `e^{-(l1+l2)} (l1/l2)^{k/2} I_|k|(2 sqrt(l1 l2))`.
///
/// The ratio is singular when either mean vanishes; those cases fall back to
/// the convolution.
pub fn skellam_pmf_bessel(spec: SkellamSpec, k: i64) -> f64 {
    let (l1, l2) = (spec.mean_plus, spec.mean_minus);
    if l1 < 1e-12 || l2 < 1e-12 {
        return skellam_pmf(spec, k);
    }
    let x = spec.bessel_argument();
    let Ok(scaled) = bessel_i_scaled(k.unsigned_abs() as usize, x) else {
        return f64::NAN;
    };
    if scaled == 0.0 {
        return 0.0;
    }
    let gap = l1.sqrt() - l2.sqrt();
    let ln_p = -gap * gap + 0.5 * k as f64 * (l1.ln() - l2.ln()) + scaled.ln();
    ln_p.exp().min(1.0)
}

/// `P(K1 - K2 < 0)`, `P(K1 = K2)` and `P(K1 - K2 > 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkellamTails {
    pub negative: f64,
    pub zero: f64,
    pub positive: f64,
}

impl SkellamTails {
    /// `P(k > 0) - P(k < 0)`.
    pub fn margin(&self) -> f64 {
        self.positive - self.negative
    }
}

/// Sign probabilities of a Skellam variable from convolution sums.
pub fn skellam_tails(spec: SkellamSpec, policy: TailPolicy) -> SkellamTails {
    let (l1, l2) = (spec.mean_plus, spec.mean_minus);
    let k_max = truncation_bound(PoissonSpec { mean: l1 }, policy)
        .max(truncation_bound(PoissonSpec { mean: l2 }, policy)) as usize
        + 1;
    let t1 = PoissonTable::new(l1, k_max);
    let t2 = PoissonTable::new(l2, k_max);
    let up1 = t1.upper_tails();
    let up2 = t2.upper_tails();
    let mut tails = SkellamTails {
        negative: 0.0,
        zero: 0.0,
        positive: 0.0,
    };
    for j in 0..=k_max {
        tails.zero += t1.pmf[j] * t2.pmf[j];
        tails.positive += t2.pmf[j] * up1[j];
        tails.negative += t1.pmf[j] * up2[j];
    }
    tails
}
