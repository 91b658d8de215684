//! Fixed-point analysis for any number of groups.
//!
//! With tiebreaking every message carries exactly one label, so the state is
//! the density `eta` of correct messages. A node receives `k_0 ~
//! Poisson(lambda_1)` votes for its own label and `k_l ~ Poisson(lambda_2)`
//! for each of the `q - 1` others, and emits its own label with probability
//! `g(eta)`: it must attain the maximum and then win the tiebreak.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{truncation_bound, PoissonSpec, PoissonTable, TailPolicy};
use crate::params::{ModelParams, ParamError};
use crate::tiebreak::correct_win_probability;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CavityError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("threshold needs rho = 0 and beta = 1 so that eta = 1/q is a fixed point")]
    RequiresUnsupervised,
    #[error("critical rho needs beta = 1")]
    RequiresUnitBeta,
    #[error("paramagnetic point is stable for every delta in (0, c] at q = {q}, c = {c}")]
    ParamagnetStable { q: usize, c: f64 },
    #[error("could not bracket the spinodal; scanned (delta, roots): {table:?}")]
    BracketFailure { table: Vec<(f64, usize)> },
}

/// Density of correct messages. Wrong messages, `1 - eta_plus`, are spread
/// evenly over the `q - 1` wrong labels.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Accuracy {
    pub eta_plus: f64,
}

impl Accuracy {
    pub fn new(eta_plus: f64) -> Self {
        Self { eta_plus }
    }

    pub fn eta_minus(&self) -> f64 {
        1.0 - self.eta_plus
    }
}

/// Tail mass dropped from the sums defining `g`.
const G_TAIL: f64 = 1e-15;

/// Poisson means `(lambda_1, lambda_2)` of the votes for the own label and
/// for each wrong label, including the revealed fraction `rho`.
///
/// Always `lambda_1 + (q - 1) lambda_2 = c`.
pub fn lambdas_general(params: &ModelParams, eta: f64) -> (f64, f64) {
    let q1 = params.q as f64 - 1.0;
    let gamma = params.gamma();
    let l1 = gamma + params.delta * eta;
    let l2 = (params.c - l1) / q1;
    let rho = params.rho;
    let l1r = rho * params.alpha() + (1.0 - rho) * l1;
    // Take lambda_2 from the sum rule so degree conservation is exact.
    let l2r = if rho == 0.0 { l2 } else { (params.c - l1r) / q1 };
    (l1r.max(0.0), l2r.max(0.0))
}

/// `d lambda_1 / d eta` and `d lambda_2 / d eta`.
fn lambda_slopes(params: &ModelParams) -> (f64, f64) {
    let d1 = (1.0 - params.rho) * params.delta;
    (d1, -d1 / (params.q as f64 - 1.0))
}

fn binomials(n: usize) -> Vec<f64> {
    let mut row = vec![1.0f64; n + 1];
    for k in 1..n {
        row[k] = row[k - 1] * (n - k + 1) as f64 / k as f64;
    }
    row
}

fn table_bound(l1: f64, l2: f64) -> usize {
    let policy = TailPolicy::with_eps(G_TAIL);
    let b = |m: f64| truncation_bound(PoissonSpec::new(m).expect("non-negative mean"), policy);
    b(l1).max(b(l2)) as usize + 1
}

/// Probability that exactly `n` of the `q - 1` wrong labels receive `k`
/// votes and the others fewer.
pub fn pbar(params: &ModelParams, eta: f64, k: usize, n: usize) -> f64 {
    let q1 = params.q - 1;
    if n > q1 {
        return 0.0;
    }
    let (_, l2) = lambdas_general(params, eta);
    let t = PoissonTable::new(l2, k + 1);
    binomials(q1)[n] * t.pmf(k).powi(n as i32) * t.below[k].powi((q1 - n) as i32)
}

/// `g(eta)` and `dg/deta` evaluated together.
pub fn g_and_slope(params: &ModelParams, eta: f64) -> (f64, f64) {
    let q1 = params.q - 1;
    let (l1, l2) = lambdas_general(params, eta);
    let (d1, d2) = lambda_slopes(params);
    let k_max = table_bound(l1, l2);
    let t1 = PoissonTable::new(l1, k_max);
    let t2 = PoissonTable::new(l2, k_max);
    let binom = binomials(q1);
    let win: Vec<f64> = (0..=q1)
        .map(|n| binom[n] * correct_win_probability(n, params.beta, params.beta_mode))
        .collect();

    let mut pow_p = vec![1.0f64; q1 + 1];
    let mut pow_q = vec![1.0f64; q1 + 1];
    let (mut g, mut slope) = (0.0, 0.0);
    for k in 0..=k_max {
        let p = t2.pmf[k];
        let qb = t2.below[k];
        let p_prev = if k == 0 { 0.0 } else { t2.pmf[k - 1] };
        // d/dlambda of P(k) and of Q(k) = sum_{j<k} P(j).
        let dp = p_prev - p;
        let dq = -p_prev;
        for n in 1..=q1 {
            pow_p[n] = pow_p[n - 1] * p;
            pow_q[n] = pow_q[n - 1] * qb;
        }
        let mut h = 0.0;
        let mut dh = 0.0;
        for n in 0..=q1 {
            let rest = q1 - n;
            h += win[n] * pow_p[n] * pow_q[rest];
            let mut d = 0.0;
            if n > 0 {
                d += n as f64 * pow_p[n - 1] * pow_q[rest] * dp;
            }
            if rest > 0 {
                d += rest as f64 * pow_p[n] * pow_q[rest - 1] * dq;
            }
            dh += win[n] * d;
        }
        let p1 = t1.pmf[k];
        let p1_prev = if k == 0 { 0.0 } else { t1.pmf[k - 1] };
        g += p1 * h;
        slope += (p1_prev - p1) * d1 * h + p1 * d2 * dh;
    }
    (g.clamp(0.0, 1.0), slope)
}

/// Probability that an updated message is correct, given incoming accuracy
/// `eta`.
pub fn g(params: &ModelParams, eta: f64) -> f64 {
    g_and_slope(params, eta).0
}

/// Analytic `dg/deta`.
pub fn g_prime(params: &ModelParams, eta: f64) -> f64 {
    g_and_slope(params, eta).1
}

/// A root of `g(eta) = eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub eta: f64,
    pub slope: f64,
    pub stable: bool,
    pub residual: f64,
}

impl FixedPoint {
    fn at(params: &ModelParams, eta: f64) -> Self {
        let (gv, slope) = g_and_slope(params, eta);
        Self {
            eta,
            slope,
            stable: slope < 1.0,
            residual: (gv - eta).abs(),
        }
    }
}

const ROOT_SCAN_STEP: f64 = 1e-3;
const ROOT_TOL: f64 = 1e-10;

/// Evenly spaced grid on `[1/q, 1]` with spacing at most `step`.
fn eta_grid(params: &ModelParams, step: f64) -> Vec<f64> {
    let lo = params.chance();
    let cells = ((1.0 - lo) / step).ceil() as usize;
    let h = (1.0 - lo) / cells as f64;
    (0..=cells).map(|i| if i == cells { 1.0 } else { lo + i as f64 * h }).collect()
}

/// Every root of `g(eta) - eta` on `[1/q, 1]` found by a sign scan at
/// resolution `1e-3` plus bisection, in increasing order, each tagged stable
/// iff `g' < 1` there.
pub fn solve_fixed_points(params: &ModelParams) -> Vec<FixedPoint> {
    let grid = eta_grid(params, ROOT_SCAN_STEP);
    let resid: Vec<f64> = grid.iter().map(|&e| g(params, e) - e).collect();
    let f = |e: f64| g(params, e) - e;
    let mut roots: Vec<f64> = Vec::new();
    let mut start = 0;
    if resid[0].abs() < ROOT_TOL {
        roots.push(grid[0]);
        start = 1;
    }
    for i in start..grid.len() {
        if resid[i] == 0.0 {
            roots.push(grid[i]);
            continue;
        }
        if i > start && resid[i - 1] != 0.0 && resid[i - 1].signum() != resid[i].signum() {
            roots.push(crate::cavity_q2::bisect(f, grid[i - 1], grid[i], 1e-14));
        }
    }
    if resid[grid.len() - 1].abs() < ROOT_TOL && roots.last().is_none_or(|&r| r < 1.0 - 1e-9) {
        roots.push(1.0);
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    roots.into_iter().map(|e| FixedPoint::at(params, e)).collect()
}

/// The `delta` in `(0, c]` at which the paramagnetic point loses stability,
/// `g'(1/q) = 1`.
pub fn delta_c2(q: usize, c: f64) -> Result<f64, CavityError> {
    delta_c2_for(&ModelParams::new(q, c, 0.0)?)
}

/// [`delta_c2`] for a parameter point whose `delta` is ignored.
pub fn delta_c2_for(base: &ModelParams) -> Result<f64, CavityError> {
    if !base.is_unsupervised() {
        return Err(CavityError::RequiresUnsupervised);
    }
    let slope_at = |delta: f64| {
        let p = ModelParams { delta, ..*base };
        g_prime(&p, p.chance()) - 1.0
    };
    let c = base.c;
    if slope_at(c) < 0.0 {
        return Err(CavityError::ParamagnetStable { q: base.q, c });
    }
    // g'(1/q) should increase with delta; take the first crossing on a grid
    // in case it does not.
    let samples = 64;
    let mut lo = 0.0;
    let mut hi = c;
    for i in 1..=samples {
        let d = c * i as f64 / samples as f64;
        if slope_at(d) >= 0.0 {
            hi = d;
            break;
        }
        lo = d;
    }
    Ok(crate::cavity_q2::bisect(slope_at, lo, hi, 1e-12))
}

/// Point where the accurate fixed point appears, `g(eta_2) = eta_2` with
/// `g'(eta_2) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tangency {
    pub delta: f64,
    pub eta: f64,
    /// `max(|g - eta|, |g' - 1|)` at the reported point.
    pub residual: f64,
    /// True when the accurate root grows continuously out of `1/q`.
    pub continuous: bool,
    /// True when the Newton polish on the tangency system was accepted.
    pub polished: bool,
}

/// An accurate root must clear `1/q` by this much to count as distinct from
/// the paramagnetic one.
pub const SECOND_ROOT_GAP: f64 = 1e-4;
const CONTINUOUS_GAP: f64 = 1e-2;

/// `max g(eta) - eta` over `eta >= 1/q + SECOND_ROOT_GAP` and its argmax.
fn max_excess(params: &ModelParams) -> (f64, f64) {
    let lo = params.chance() + SECOND_ROOT_GAP;
    let cells = ((1.0 - lo) / ROOT_SCAN_STEP).ceil() as usize;
    let h = (1.0 - lo) / cells as f64;
    let f = |e: f64| g(params, e) - e;
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for i in 0..=cells {
        let v = f(lo + i as f64 * h);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    // Golden-section refinement around the best grid point.
    let mut a = (lo + (best_i as f64 - 1.0) * h).max(lo);
    let mut b = (lo + (best_i as f64 + 1.0) * h).min(1.0);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > 1e-10 {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx >= best {
        (fx, x)
    } else {
        (best, lo + best_i as f64 * h)
    }
}

/// Smallest `delta` at which an accurate fixed point `eta_2 > 1/q + 1e-4`
/// exists, with the tangency accuracy `eta_2`.
///
/// The existence test is `max_eta (g - eta) >= 0` on the accurate side,
/// bisected in `delta`, then polished by Newton on
/// `(g - eta, g' - 1) = 0`. For `q = 2` the root grows continuously out of
/// `1/2` and the result is flagged `continuous`. `Ok(None)` means no accurate
/// root exists for any admissible `delta`.
pub fn delta_c1(q: usize, c: f64) -> Result<Option<Tangency>, CavityError> {
    delta_c1_for(&ModelParams::new(q, c, 0.0)?)
}

pub fn delta_c1_for(base: &ModelParams) -> Result<Option<Tangency>, CavityError> {
    if !base.is_unsupervised() {
        return Err(CavityError::RequiresUnsupervised);
    }
    let at = |delta: f64| ModelParams { delta, ..*base };
    let c = base.c;
    if max_excess(&at(0.0)).0 >= 0.0 {
        let table = [0.0, c]
            .iter()
            .map(|&d| (d, solve_fixed_points(&at(d)).len()))
            .collect();
        return Err(CavityError::BracketFailure { table });
    }
    if max_excess(&at(c)).0 < 0.0 {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, c);
    while hi - lo > 1e-10 * c.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if max_excess(&at(mid)).0 >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (_, eta) = max_excess(&at(hi));
    let continuous = eta - base.chance() < CONTINUOUS_GAP;
    let mut tangency = Tangency {
        delta: hi,
        eta,
        residual: tangency_residual(&at(hi), eta),
        continuous,
        polished: false,
    };
    if !continuous {
        if let Some((d, e)) = newton_tangency(base, hi, eta) {
            let r = tangency_residual(&at(d), e);
            if r < tangency.residual && (d - hi).abs() < 1e-4 && (e - eta).abs() < 1e-2 {
                tangency = Tangency {
                    delta: d,
                    eta: e,
                    residual: r,
                    continuous,
                    polished: true,
                };
            }
        }
    }
    Ok(Some(tangency))
}

fn tangency_residual(params: &ModelParams, eta: f64) -> f64 {
    let (gv, s) = g_and_slope(params, eta);
    (gv - eta).abs().max((s - 1.0).abs())
}

fn newton_tangency(base: &ModelParams, delta0: f64, eta0: f64) -> Option<(f64, f64)> {
    let eval = |d: f64, e: f64| {
        let p = ModelParams { delta: d.min(base.c), ..*base };
        let (gv, s) = g_and_slope(&p, e);
        (gv - e, s - 1.0)
    };
    let (mut d, mut e) = (delta0, eta0);
    for _ in 0..30 {
        let (f1, f2) = eval(d, e);
        if f1.abs().max(f2.abs()) < 1e-13 {
            return Some((d, e));
        }
        let hd = 1e-6 * d.max(1.0);
        let he = 1e-6;
        let (f1d, f2d) = eval(d + hd, e);
        let (f1e, f2e) = eval(d, e + he);
        let j11 = (f1d - f1) / hd;
        let j12 = (f1e - f1) / he;
        let j21 = (f2d - f2) / hd;
        let j22 = (f2e - f2) / he;
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-300 || !det.is_finite() {
            return None;
        }
        d -= (f1 * j22 - f2 * j12) / det;
        e -= (j11 * f2 - j21 * f1) / det;
        if !(d.is_finite() && e.is_finite()) || e <= base.chance() || e > 1.0 {
            return None;
        }
    }
    let (f1, f2) = eval(d, e);
    (f1.abs().max(f2.abs()) < 1e-10).then_some((d, e))
}

/// Both thresholds at one `(q, c)` with solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseThresholds {
    pub delta_c1: Option<Tangency>,
    pub delta_c2: Option<f64>,
    pub meta: ThresholdDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdDiagnostics {
    /// `|g'(1/q) - 1|` at the reported `delta_c2`.
    pub c2_residual: Option<f64>,
    pub c1_residual: Option<f64>,
    /// Whether `g'(1/q)` was increasing in `delta` on a 64-point grid.
    pub c2_monotone: bool,
}

impl PhaseThresholds {
    pub fn compute(q: usize, c: f64) -> Result<Self, CavityError> {
        let base = ModelParams::new(q, c, 0.0)?;
        let c2 = match delta_c2_for(&base) {
            Ok(d) => Some(d),
            Err(CavityError::ParamagnetStable { .. }) => None,
            Err(e) => return Err(e),
        };
        let c1 = delta_c1_for(&base)?;
        let slope = |delta: f64| {
            let p = ModelParams { delta, ..base };
            g_prime(&p, p.chance())
        };
        let grid: Vec<f64> = (0..=64).map(|i| slope(c * i as f64 / 64.0)).collect();
        Ok(Self {
            delta_c1: c1,
            delta_c2: c2,
            meta: ThresholdDiagnostics {
                c2_residual: c2.map(|d| (slope(d) - 1.0).abs()),
                c1_residual: c1.map(|t| t.residual),
                c2_monotone: grid.windows(2).all(|w| w[1] >= w[0]),
            },
        })
    }
}

/// Explicit Euler settings for `d eta / dt = g(eta) - eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub max_steps: usize,
    /// Stop once `|g(eta) - eta|` falls below this.
    pub tol: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_steps: 100_000,
            tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOutcome {
    pub eta: f64,
    pub steps: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Trajectory of the flow on `[0, t_max]`, starting value included.
pub fn flow(params: &ModelParams, eta0: f64, t_max: f64, dt: f64) -> Vec<f64> {
    assert!(dt > 0.0, "dt must be positive");
    let steps = (t_max / dt).ceil() as usize;
    let mut eta = eta0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(eta);
    for _ in 0..steps {
        eta = (eta + dt * (g(params, eta) - eta)).clamp(0.0, 1.0);
        out.push(eta);
    }
    out
}

/// Run the flow from `eta0` until it stops moving.
pub fn flow_limit(params: &ModelParams, eta0: f64, cfg: FlowConfig) -> FlowOutcome {
    let mut eta = eta0.clamp(0.0, 1.0);
    for step in 0..cfg.max_steps {
        let r = g(params, eta) - eta;
        if r.abs() < cfg.tol {
            return FlowOutcome {
                eta,
                steps: step,
                residual: r.abs(),
                converged: true,
            };
        }
        eta = (eta + cfg.dt * r).clamp(0.0, 1.0);
    }
    let residual = (g(params, eta) - eta).abs();
    FlowOutcome {
        eta,
        steps: cfg.max_steps,
        residual,
        converged: residual < cfg.tol,
    }
}

/// Starting point standing in for random initial messages.
///
/// That is `1/q` itself, nudged by `1e-6` when `1/q` is an unstable fixed
/// point so that the flow leaves it as a perturbed system would.
pub fn random_init_eta(params: &ModelParams) -> f64 {
    let chance = params.chance();
    if params.is_unsupervised() && g_prime(params, chance) > 1.0 {
        chance + 1e-6
    } else {
        chance
    }
}

/// Accuracy of the branch reached from random initial messages.
pub fn random_init_accuracy(params: &ModelParams) -> f64 {
    flow_limit(params, random_init_eta(params), FlowConfig::default()).eta
}

/// Saddle-node in `rho` where the branch selected from random
/// initialisation disappears and the accuracy jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoCritical {
    pub rho: f64,
    pub eta_below: f64,
    pub eta_above: f64,
}

impl RhoCritical {
    pub fn jump(&self) -> f64 {
        self.eta_above - self.eta_below
    }
}

/// `rho` grid used when hunting for the saddle-node: fine at small `rho`.
pub fn rho_scan_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..200).map(|i| i as f64 * 5e-4).collect();
    grid.extend((20..=200).map(|i| i as f64 * 5e-3));
    grid
}

fn lowest_stable_root(params: &ModelParams) -> Option<f64> {
    solve_fixed_points(params).iter().find(|f| f.stable).map(|f| f.eta)
}

fn bistable(params: &ModelParams) -> bool {
    solve_fixed_points(params).iter().filter(|f| f.stable).count() >= 2
}

/// Critical revealed fraction at fixed `(q, c, delta)`; `None` when the
/// accuracy selected from random initialisation is continuous in `rho`.
pub fn rho_critical(params: &ModelParams) -> Result<Option<RhoCritical>, CavityError> {
    if params.beta != 1.0 {
        return Err(CavityError::RequiresUnitBeta);
    }
    let at = |rho: f64| ModelParams { rho, ..*params };
    let grid = rho_scan_grid();
    let flags: Vec<bool> = grid.par_iter().map(|&r| bistable(&at(r))).collect();
    for i in 0..grid.len() - 1 {
        if !(flags[i] && !flags[i + 1]) {
            continue;
        }
        // The lower branch is the one selected from random messages only if
        // the flow from 1/q lands below the upper stable root.
        let p = at(grid[i]);
        let stable: Vec<f64> = solve_fixed_points(&p).iter().filter(|f| f.stable).map(|f| f.eta).collect();
        let selected = random_init_accuracy(&p);
        if (selected - stable[0]).abs() > 1e-6 {
            continue;
        }
        let (mut lo, mut hi) = (grid[i], grid[i + 1]);
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if bistable(&at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // The flow is too slow near the saddle-node to use here; read both
        // branches off the roots instead.
        let below = lowest_stable_root(&at(lo)).unwrap_or(stable[0]);
        let above = solve_fixed_points(&at(hi))
            .iter()
            .filter(|f| f.stable && f.eta > below)
            .map(|f| f.eta)
            .next()
            .unwrap_or_else(|| random_init_accuracy(&at(hi)));
        return Ok(Some(RhoCritical {
            rho: 0.5 * (lo + hi),
            eta_below: below,
            eta_above: above,
        }));
    }
    Ok(None)
}

/// Tolerances used by the solvers in this module, for reporting alongside
/// results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    /// Poisson tail mass dropped when evaluating `g`.
    pub g_tail: f64,
    pub root_scan_step: f64,
    /// `|g - eta|` accepted for a root at `1/q` or `1`.
    pub root_tol: f64,
    pub root_bisection: f64,
    pub delta_c2_bisection: f64,
    /// Relative to `max(c, 1)`.
    pub delta_c1_bisection: f64,
    pub second_root_gap: f64,
    pub rho_bisection: f64,
    pub flow: FlowConfig,
}

pub fn solver_tolerances() -> SolverTolerances {
    SolverTolerances {
        g_tail: G_TAIL,
        root_scan_step: ROOT_SCAN_STEP,
        root_tol: ROOT_TOL,
        root_bisection: 1e-14,
        delta_c2_bisection: 1e-12,
        delta_c1_bisection: 1e-10,
        second_root_gap: SECOND_ROOT_GAP,
        rho_bisection: 1e-9,
        flow: FlowConfig::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cavity_q2::{rhs_tiebreak_m, threshold_tiebreak, Q2Params};
    use crate::tiebreak::BetaMode;
    use approx::assert_relative_eq;

    fn mp(q: usize, c: f64, delta: f64) -> ModelParams {
        ModelParams::new(q, c, delta).unwrap()
    }

    #[test]
    fn lambda_examples() {
        let p = mp(4, 8.0, 3.0);
        let (l1, l2) = lambdas_general(&p, 0.25);
        assert_relative_eq!(l1, p.gamma() + 3.0 / 4.0, epsilon = 1e-14);
        assert_relative_eq!(l2, l1, epsilon = 1e-14);

        let p1 = p.with_rho(1.0).unwrap();
        let (l1, l2) = lambdas_general(&p1, 0.6);
        assert_relative_eq!(l1, p.alpha(), epsilon = 1e-14);
        assert_relative_eq!(l2, p.gamma(), epsilon = 1e-14);

        let (l1, l2) = lambdas_general(&mp(10, 10.0, 5.0), 0.5);
        assert_relative_eq!(l1, 3.0, epsilon = 1e-14);
        assert_relative_eq!(l2, 7.0 / 9.0, epsilon = 1e-14);
    }

    #[test]
    fn pbar_examples() {
        let p = mp(2, 6.0, 2.0);
        let (_, l2) = lambdas_general(&p, 0.7);
        for k in 0..8u64 {
            let q = crate::numerics::poisson_cdf_below(PoissonSpec::new(l2).unwrap(), k);
            assert_relative_eq!(pbar(&p, 0.7, k as usize, 0), q, epsilon = 1e-15);
        }
        let p = mp(5, 6.0, 2.0);
        let (_, l2) = lambdas_general(&p, 0.4);
        assert_relative_eq!(pbar(&p, 0.4, 0, 4), (-l2).exp().powi(4), max_relative = 1e-12);
        // lambda_2 = 1 at q = 4: gamma + delta eta = c - 3.
        let p = mp(4, 6.0, 2.0);
        let eta = (6.0 - 3.0 - p.gamma()) / 2.0;
        let (_, l2) = lambdas_general(&p, eta);
        assert_relative_eq!(l2, 1.0, epsilon = 1e-14);
        let e1 = (-1.0f64).exp();
        assert_relative_eq!(pbar(&p, eta, 1, 2), 3.0 * e1 * e1 * e1, max_relative = 1e-12);
    }

    #[test]
    fn paramagnetic_point_is_fixed() {
        for q in [2, 3, 5, 10] {
            for delta in [0.0, 1.0, 4.0, 9.0] {
                let p = mp(q, 9.0, delta);
                let chance = p.chance();
                assert!((g(&p, chance) - chance).abs() < 1e-10, "q={q} delta={delta}");
            }
        }
    }

    #[test]
    fn zero_delta_has_zero_slope() {
        let p = mp(6, 7.0, 0.0);
        for eta in [0.2, 0.5, 0.9] {
            assert!(g_prime(&p, eta).abs() < 1e-15);
        }
    }

    #[test]
    fn two_groups_reduce_to_tiebreak_map() {
        for (c, delta) in [(3.0, 1.0), (10.0, 6.0), (20.0, 9.0)] {
            let p = mp(2, c, delta);
            let q2 = Q2Params::new(c, delta).unwrap();
            for eta in [0.5, 0.55, 0.7, 0.93, 1.0] {
                let expect = 0.5 * (1.0 + rhs_tiebreak_m(q2, 2.0 * eta - 1.0));
                assert!((g(&p, eta) - expect).abs() < 1e-9);
            }
        }
        let p = mp(2, 10.0, 4.0);
        let expect = crate::cavity_q2::tiebreak_slope_at_zero(Q2Params::new(10.0, 4.0).unwrap());
        assert_relative_eq!(g_prime(&p, 0.5), expect, max_relative = 1e-9);
    }

    #[test]
    fn slope_matches_finite_differences() {
        for (q, c, delta, rho) in [(3, 6.0, 4.0, 0.0), (10, 20.0, 6.0, 0.01), (7, 12.0, 12.0, 0.2)] {
            let p = mp(q, c, delta).with_rho(rho).unwrap();
            for eta in [0.2, 0.45, 0.8] {
                let h = 1e-5;
                let fd = (g(&p, eta + h) - g(&p, eta - h)) / (2.0 * h);
                assert!((fd - g_prime(&p, eta)).abs() < 1e-6);
            }
        }
        let p = mp(4, 6.0, 3.0).with_beta(2.5, BetaMode::Literal).unwrap();
        let fd = (g(&p, 0.5 + 1e-5) - g(&p, 0.5 - 1e-5)) / 2e-5;
        assert!((fd - g_prime(&p, 0.5)).abs() < 1e-6);
    }

    #[test]
    fn fixed_points_zero_delta() {
        let roots = solve_fixed_points(&mp(5, 8.0, 0.0));
        assert_eq!(roots.len(), 1);
        assert_relative_eq!(roots[0].eta, 0.2, epsilon = 1e-12);
        assert!(roots[0].stable);
    }

    #[test]
    fn bistable_window_has_three_roots() {
        let th = PhaseThresholds::compute(10, 10.0).unwrap();
        let (d1, d2) = (th.delta_c1.unwrap().delta, th.delta_c2.unwrap());
        assert!(d1 < d2);
        let roots = solve_fixed_points(&mp(10, 10.0, 0.5 * (d1 + d2)));
        assert_eq!(roots.len(), 3, "{roots:?}");
        assert!(roots[0].stable && !roots[1].stable && roots[2].stable);
        assert_relative_eq!(roots[0].eta, 0.1, epsilon = 1e-12);
        for r in &roots {
            assert!(r.residual < 1e-10);
        }
    }

    #[test]
    fn two_group_roots_match_magnetization() {
        let c = 10.0;
        let delta = threshold_tiebreak(c) * 1.3;
        let roots = solve_fixed_points(&mp(2, c, delta));
        let q2 = crate::cavity_q2::solve_tiebreak_m(Q2Params::new(c, delta).unwrap(), 0.5);
        let top = roots.last().unwrap();
        assert!(top.stable);
        assert!((top.eta - 0.5 * (1.0 + q2.state.m)).abs() < 1e-9);
        assert!(!roots[0].stable);
    }

    #[test]
    fn supervised_point_is_not_assumed_fixed() {
        let p = mp(10, 20.0, 4.0).with_rho(0.02).unwrap();
        let roots = solve_fixed_points(&p);
        assert!(roots[0].eta > p.chance() + 1e-6);
    }

    #[test]
    fn delta_c2_matches_two_group_formula() {
        for c in [5.0, 10.0, 20.0] {
            let d = delta_c2(2, c).unwrap();
            assert!((d - threshold_tiebreak(c)).abs() < 1e-6);
        }
        assert!(matches!(delta_c2(2, 1.5), Err(CavityError::ParamagnetStable { .. })));
        let p = mp(3, 5.0, 1.0).with_rho(0.1).unwrap();
        assert_eq!(delta_c2_for(&p), Err(CavityError::RequiresUnsupervised));
    }

    #[test]
    fn flow_stays_on_fixed_point() {
        let p = mp(4, 8.0, 2.0);
        let traj = flow(&p, 0.25, 5.0, 0.1);
        assert!(traj.iter().all(|&e| (e - 0.25).abs() < 1e-12));
    }

    #[test]
    fn rho_critical_absent_above_delta_c2() {
        let d2 = delta_c2(10, 20.0).unwrap();
        let p = mp(10, 20.0, (d2 * 1.1).min(20.0));
        assert_eq!(rho_critical(&p).unwrap(), None);
        let pb = p.with_beta(2.0, BetaMode::Normalized).unwrap();
        assert_eq!(rho_critical(&pb), Err(CavityError::RequiresUnitBeta));
    }
}
