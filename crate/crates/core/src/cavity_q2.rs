//! Closed-form analysis for two groups.
//!
//! A node's vote margin `k = k1 - k2` is Skellam distributed, with `k1`
//! counting messages for its own label and `k2` for the other one. Without
//! tiebreaking a zero margin produces an uninformative message, so the state
//! is the pair `(m, q_tilde)`. With tiebreaking `q_tilde = 1` and only the
//! magnetization `m` remains.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{bessel_i_scaled, bessel_i_scaled_seq, skellam_tails, PoissonSpec, SkellamSpec, TailPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Q2Error {
    #[error("need c > 0 and 0 <= delta <= c, got c = {c}, delta = {delta}")]
    InvalidParams { c: f64, delta: f64 },
    #[error("need |m| <= q_tilde <= 1, got m = {m}, q_tilde = {q_tilde}")]
    InvalidState { m: f64, q_tilde: f64 },
    #[error("no detectable phase at c = {0}: q_tilde has only the trivial root")]
    NoDetectablePhase(f64),
    #[error("no crossing of the threshold with the diagonal in [{lo}, {hi}]")]
    NoCrossing { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Q2Params {
    pub c: f64,
    pub delta: f64,
}

impl Q2Params {
    pub fn new(c: f64, delta: f64) -> Result<Self, Q2Error> {
        if !(c > 0.0) || !c.is_finite() || !(delta >= 0.0) || delta > c * (1.0 + 1e-12) {
            return Err(Q2Error::InvalidParams { c, delta });
        }
        Ok(Self {
            c,
            delta: delta.min(c),
        })
    }

    pub fn alpha(&self) -> f64 {
        0.5 * (self.c + self.delta)
    }

    pub fn gamma(&self) -> f64 {
        0.5 * (self.c - self.delta)
    }
}

/// Magnetization `m = eta_+ - eta_-` and Edwards-Anderson parameter
/// `q_tilde = eta_+ + eta_-`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Q2State {
    pub m: f64,
    pub q_tilde: f64,
}

impl Q2State {
    pub fn new(m: f64, q_tilde: f64) -> Result<Self, Q2Error> {
        let tol = 1e-12;
        if !(q_tilde <= 1.0 + tol) || !(m.abs() <= q_tilde + tol) {
            return Err(Q2Error::InvalidState { m, q_tilde });
        }
        Ok(Self {
            m,
            q_tilde: q_tilde.min(1.0),
        })
    }

    /// Fully informative state with magnetization `m`.
    pub fn tiebroken(m: f64) -> Self {
        Self { m, q_tilde: 1.0 }
    }

    pub fn eta_plus(&self) -> f64 {
        0.5 * (self.q_tilde + self.m)
    }

    pub fn eta_minus(&self) -> f64 {
        0.5 * (self.q_tilde - self.m)
    }

    pub fn eta_zero(&self) -> f64 {
        1.0 - self.q_tilde
    }
}

/// Poisson means of the votes for and against a node's own label.
pub fn lambdas_q2(params: Q2Params, state: Q2State) -> (f64, f64) {
    let (a, g) = (params.alpha(), params.gamma());
    let (ep, em) = (state.eta_plus(), state.eta_minus());
    ((a * ep + g * em).max(0.0), (a * em + g * ep).max(0.0))
}

fn skellam(l1: f64, l2: f64) -> SkellamSpec {
    SkellamSpec::new(l1.max(0.0), l2.max(0.0)).expect("means are non-negative")
}

/// One step of the map without tiebreaking, from Skellam sign probabilities:
/// `1 - q_tilde' = P(0)` and `m' = P(k > 0) - P(k < 0)`.
pub fn rhs_no_tiebreak(params: Q2Params, state: Q2State) -> Q2State {
    let (l1, l2) = lambdas_q2(params, state);
    let tails = skellam_tails(skellam(l1, l2), TailPolicy::default());
    Q2State {
        m: tails.margin(),
        q_tilde: (1.0 - tails.zero).clamp(0.0, 1.0),
    }
}

/// The same map through the Bessel series
/// `1 - q' = e^{-c q} I_0(x)`, `m' = 2 e^{-c q} sum_k I_k(x) sinh(k y)`.
pub fn rhs_no_tiebreak_bessel(params: Q2Params, state: Q2State) -> Q2State {
    let (l1, l2) = lambdas_q2(params, state);
    let (zero, margin) = skellam_margin_bessel(l1, l2);
    Q2State {
        m: margin,
        q_tilde: (1.0 - zero).clamp(0.0, 1.0),
    }
}

/// `(P(0), P(k>0) - P(k<0))` for a Skellam law via the Bessel series.
///
/// Each term `e^{-(l1+l2)} I_k(x) e^{+-k y}` is assembled in log space from
/// the scaled Bessel function. Falls back to convolution when a mean
/// vanishes, where `y` is infinite.
pub fn skellam_margin_bessel(l1: f64, l2: f64) -> (f64, f64) {
    if l1 < 1e-12 || l2 < 1e-12 {
        let t = skellam_tails(skellam(l1, l2), TailPolicy::default());
        return (t.zero, t.margin());
    }
    let total = l1 + l2;
    let x = 2.0 * (l1 * l2).sqrt();
    let y = 0.5 * (l1.ln() - l2.ln());
    let k_max = crate::numerics::truncation_bound(
        PoissonSpec::new(total).expect("finite mean"),
        TailPolicy::default(),
    ) as usize
        + 1;
    let scaled = bessel_i_scaled_seq(k_max, x).expect("x is finite and non-negative");
    // e^{-(l1+l2)} I_k(x) = e^{x - total} * scaled[k]
    let shift = x - total;
    let zero = (shift + scaled[0].ln()).exp();
    let mut margin = 0.0;
    for (k, &s) in scaled.iter().enumerate().skip(1) {
        if s == 0.0 {
            break;
        }
        let base = shift + s.ln();
        let ky = k as f64 * y;
        let term = (base + ky).exp() - (base - ky).exp();
        margin += term;
        if term.abs() < 1e-17 && k as f64 > x {
            break;
        }
    }
    (zero, margin)
}

/// Largest root in `[0, 1]` of `1 - q = e^{-c q} I_0(c q)`.
///
/// `q = 0` is always a root; a positive one exists only for `c > 1`.
pub fn solve_q_tilde(c: f64) -> f64 {
    let f = |q: f64| 1.0 - q - bessel_i_scaled(0, c * q).expect("c q >= 0");
    let lo = 1e-6;
    let step = 1e-3;
    let mut hi = 1.0;
    let mut f_hi = f(hi);
    // Scan down from 1 so the first sign change is the largest root.
    while hi > lo {
        let a = (hi - step).max(lo);
        let f_a = f(a);
        if f_a == 0.0 {
            return a;
        }
        if f_a.signum() != f_hi.signum() {
            return bisect(f, a, hi, 1e-12);
        }
        hi = a;
        f_hi = f_a;
    }
    0.0
}

/// Bisection on a sign change until `|f| < tol` or the bracket collapses.
pub(crate) fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = f(mid);
        if fm.abs() < tol || (b - a) < 1e-15 * mid.abs().max(1.0) {
            return mid;
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Detection threshold without tiebreaking, `e^{c q} / (I_0(c q) + I_1(c q))`.
pub fn threshold_no_tiebreak(c: f64) -> Result<f64, Q2Error> {
    let q = solve_q_tilde(c);
    if q <= 0.0 {
        return Err(Q2Error::NoDetectablePhase(c));
    }
    Ok(inverse_bessel_sum(c * q))
}

/// Detection threshold with tiebreaking, `e^c / (I_0(c) + I_1(c))`.
pub fn threshold_tiebreak(c: f64) -> f64 {
    inverse_bessel_sum(c)
}

fn inverse_bessel_sum(x: f64) -> f64 {
    let s = bessel_i_scaled_seq(1, x).expect("x >= 0");
    1.0 / (s[0] + s[1])
}

/// The `c` at which `threshold_tiebreak(c) = c`: below it even `gamma = 0`
/// is undetectable with tiebreaking.
pub fn tiebreak_crossing() -> Result<f64, Q2Error> {
    let (lo, hi) = (1.0 + 1e-9, 10.0);
    let f = |c: f64| threshold_tiebreak(c) - c;
    if f(lo).signum() == f(hi).signum() {
        return Err(Q2Error::NoCrossing { lo, hi });
    }
    Ok(bisect(f, lo, hi, 1e-14))
}

/// Image of `m` under the tiebreaking map: the Skellam margin with
/// `l1 = (c + delta m)/2` and `l2 = (c - delta m)/2`.
pub fn rhs_tiebreak_m(params: Q2Params, m: f64) -> f64 {
    let (l1, l2) = tiebreak_lambdas(params, m);
    skellam_tails(skellam(l1, l2), TailPolicy::default()).margin()
}

/// [`rhs_tiebreak_m`] through `2 e^{-c} sum_k I_k(x) sinh(k y)` with
/// `x = sqrt(c^2 - delta^2 m^2)` and `y = atanh(delta m / c)`.
pub fn rhs_tiebreak_m_bessel(params: Q2Params, m: f64) -> f64 {
    let (l1, l2) = tiebreak_lambdas(params, m);
    skellam_margin_bessel(l1, l2).1
}

fn tiebreak_lambdas(params: Q2Params, m: f64) -> (f64, f64) {
    let m = m.clamp(-1.0, 1.0);
    let half = 0.5 * params.delta * m;
    ((0.5 * params.c + half).max(0.0), (0.5 * params.c - half).max(0.0))
}

/// Slope of the tiebreaking map at `m = 0`, `delta e^{-c} (I_0(c) + I_1(c))`.
pub fn tiebreak_slope_at_zero(params: Q2Params) -> f64 {
    params.delta / inverse_bessel_sum(params.c)
}

/// A fixed point of one of the q = 2 maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Q2FixedPoint {
    pub state: Q2State,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

const DAMPING: f64 = 0.5;
const MAX_ITER: usize = 200_000;

/// Fixed point of the tiebreaking map reached by damped iteration from
/// `m0`, then polished by bisection on `f(m) - m`.
pub fn solve_tiebreak_m(params: Q2Params, m0: f64) -> Q2FixedPoint {
    let f = |m: f64| rhs_tiebreak_m(params, m);
    let mut m = m0.clamp(-1.0, 1.0);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        let next = (1.0 - DAMPING) * m + DAMPING * f(m);
        iterations += 1;
        if (next - m).abs() < 1e-13 {
            m = next;
            converged = true;
            break;
        }
        m = next;
    }
    if m.abs() > 1e-8 {
        m = polish_root(|x| f(x) - x, m);
    } else {
        m = 0.0;
    }
    Q2FixedPoint {
        state: Q2State::tiebroken(m),
        residual: (f(m) - m).abs(),
        iterations,
        converged,
    }
}

/// Bracket a sign change of `h` around `x0` and bisect it.
fn polish_root<H: Fn(f64) -> f64>(h: H, x0: f64) -> f64 {
    let mut width = 1e-9f64.max(1e-7 * x0.abs());
    let h0 = h(x0);
    if h0 == 0.0 {
        return x0;
    }
    while width < 0.5 {
        let (a, b) = ((x0 - width).max(-1.0), (x0 + width).min(1.0));
        let (ha, hb) = (h(a), h(b));
        if ha.signum() != h0.signum() {
            return bisect(&h, a, x0, 1e-15);
        }
        if hb.signum() != h0.signum() {
            return bisect(&h, x0, b, 1e-15);
        }
        width *= 2.0;
    }
    x0
}

/// Fixed point of the map without tiebreaking by damped iteration.
pub fn solve_no_tiebreak(params: Q2Params, init: Q2State) -> Q2FixedPoint {
    let mut s = init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        let img = rhs_no_tiebreak(params, s);
        let next = Q2State {
            m: (1.0 - DAMPING) * s.m + DAMPING * img.m,
            q_tilde: (1.0 - DAMPING) * s.q_tilde + DAMPING * img.q_tilde,
        };
        iterations += 1;
        let step = (next.m - s.m).abs().max((next.q_tilde - s.q_tilde).abs());
        s = next;
        if step < 1e-13 {
            converged = true;
            break;
        }
    }
    let img = rhs_no_tiebreak(params, s);
    Q2FixedPoint {
        state: s,
        residual: (img.m - s.m).abs().max((img.q_tilde - s.q_tilde).abs()),
        iterations,
        converged,
    }
}
