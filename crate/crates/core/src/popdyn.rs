//! Annealed population dynamics.
//!
//! A pool of one-hot messages, each tagged correct or not, is rebuilt every
//! sweep. Each new message comes from a fresh node whose neighbour counts are
//! drawn from the block model and whose incoming messages are sampled from
//! the old pool, so the graph is effectively redrawn at every iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::params::ModelParams;
use crate::tiebreak::correct_win_probability;

/// Smallest pool accepted by [`MessagePool::new`].
pub const MIN_POOL: usize = 1_000;
/// Replacements sharing one random stream.
const BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessagePool {
    correct: Vec<bool>,
    pub seed: u64,
}

impl MessagePool {
    /// Pool of `size` messages whose first `ceil(eta * size)` entries are
    /// correct.
    pub fn new(size: usize, eta: f64, seed: u64) -> Self {
        assert!(size >= MIN_POOL, "pool must hold at least {MIN_POOL} messages");
        let eta = eta.clamp(0.0, 1.0);
        let n_correct = ((eta * size as f64).ceil() as usize).min(size);
        let correct = (0..size).map(|i| i < n_correct).collect();
        Self { correct, seed }
    }

    pub fn from_flags(correct: Vec<bool>, seed: u64) -> Self {
        Self { correct, seed }
    }

    pub fn len(&self) -> usize {
        self.correct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correct.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.correct
    }

    /// Empirical fraction of correct messages.
    pub fn eta(&self) -> f64 {
        self.correct.iter().filter(|&&c| c).count() as f64 / self.correct.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopDynConfig {
    pub pool_size: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for PopDynConfig {
    fn default() -> Self {
        Self {
            pool_size: 100_000,
            sweeps: 200,
            burn_in: 100,
            seed: 1,
        }
    }
}

/// Random stream for one block of one sweep; independent of thread count.
fn block_rng(seed: u64, sweep: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sweep.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ block);
    rng
}

struct Sampler {
    own: Option<Poisson<f64>>,
    other: Option<Poisson<f64>>,
}

impl Sampler {
    fn new(params: &ModelParams) -> Self {
        let mk = |m: f64| (m > 0.0).then(|| Poisson::new(m).expect("positive finite mean"));
        Self {
            own: mk(params.alpha()),
            other: mk((params.q as f64 - 1.0) * params.gamma()),
        }
    }

    fn draw<R: Rng>(d: &Option<Poisson<f64>>, rng: &mut R) -> usize {
        d.as_ref().map_or(0, |p| p.sample(rng) as usize)
    }
}

/// One new message for a receiving node whose true label is `0`.
fn emit<R: Rng>(pool: &[bool], params: &ModelParams, sampler: &Sampler, counts: &mut [u32], rng: &mut R) -> bool {
    let q = params.q;
    counts.iter_mut().for_each(|c| *c = 0);
    let incoming = |sender_label: usize, rng: &mut R| -> usize {
        let correct = (params.rho > 0.0 && rng.gen::<f64>() < params.rho) || pool[rng.gen_range(0..pool.len())];
        if correct {
            sender_label
        } else {
            // A uniformly chosen label other than the sender's.
            let l = rng.gen_range(0..q - 1);
            if l >= sender_label {
                l + 1
            } else {
                l
            }
        }
    };
    for _ in 0..Sampler::draw(&sampler.own, rng) {
        let l = incoming(0, rng);
        counts[l] += 1;
    }
    for _ in 0..Sampler::draw(&sampler.other, rng) {
        let group = rng.gen_range(1..q);
        let l = incoming(group, rng);
        counts[l] += 1;
    }
    let max = *counts.iter().max().unwrap();
    if counts[0] != max {
        return false;
    }
    let ties = counts[1..].iter().filter(|&&c| c == max).count();
    rng.gen::<f64>() < correct_win_probability(ties, params.beta, params.beta_mode)
}

/// Replace every message of the pool once, reading only the old pool.
pub fn popdyn_step(pool: &MessagePool, params: &ModelParams, sweep: u64) -> MessagePool {
    let sampler = Sampler::new(params);
    let old = pool.flags();
    let mut next = vec![false; old.len()];
    next.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
        let mut rng = block_rng(pool.seed, sweep, b as u64);
        let mut counts = vec![0u32; params.q];
        for slot in chunk.iter_mut() {
            *slot = emit(old, params, &sampler, &mut counts, &mut rng);
        }
    });
    MessagePool::from_flags(next, pool.seed)
}

/// Per-sweep accuracy and its post-burn-in summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopDynTrace {
    /// `series[t]` is the accuracy after sweep `t + 1`.
    pub series: Vec<f64>,
    pub mean: f64,
    /// Autocorrelation-corrected standard error of `mean`.
    pub std_err: f64,
}

/// Run `config.sweeps` synchronous sweeps from a pool with accuracy
/// `init_eta`.
pub fn popdyn_run(config: &PopDynConfig, params: &ModelParams, init_eta: f64) -> PopDynTrace {
    assert!(config.burn_in < config.sweeps, "burn_in must be below sweeps");
    let mut pool = MessagePool::new(config.pool_size, init_eta, config.seed);
    let mut series = Vec::with_capacity(config.sweeps);
    for sweep in 0..config.sweeps {
        pool = popdyn_step(&pool, params, sweep as u64);
        series.push(pool.eta());
    }
    let (mean, std_err) = mean_std_err(&series[config.burn_in..]);
    PopDynTrace {
        series,
        mean,
        std_err,
    }
}

/// Mean and standard error of a correlated series.
///
/// The series is treated as AR(1): the sample variance is inflated by
/// `(1 + r) / (1 - r)` with `r` the lag-1 autocorrelation, clamped to
/// `[0, 0.99]`.
pub fn mean_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 3 {
        return (mean, f64::NAN);
    }
    let dev: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let var = dev.iter().map(|d| d * d).sum::<f64>() / n as f64;
    if var == 0.0 {
        return (mean, 0.0);
    }
    let lag1 = dev.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / n as f64;
    let r = (lag1 / var).clamp(0.0, 0.99);
    let unbiased = var * n as f64 / (n - 1) as f64;
    (mean, (unbiased * (1.0 + r) / (1.0 - r) / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_initialisation() {
        let pool = MessagePool::new(1000, 0.1234, 7);
        assert_eq!(pool.flags().iter().filter(|&&c| c).count(), 124);
        assert!((MessagePool::new(1000, 1.0, 0).eta() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_pool_two_groups() {
        // gamma = 0: only isolated nodes err, flipping a fair coin.
        let c = 3.0;
        let params = ModelParams::new(2, c, c).unwrap();
        let pool = MessagePool::new(200_000, 1.0, 11);
        let next = popdyn_step(&pool, &params, 0);
        let expect = 1.0 - 0.5 * (-c).exp();
        let sd = (expect * (1.0 - expect) / 200_000.0).sqrt();
        assert!((next.eta() - expect).abs() < 4.0 * sd, "{} vs {expect}", next.eta());
    }

    #[test]
    fn one_step_matches_g() {
        let params = ModelParams::new(4, 6.0, 3.0).unwrap();
        let pool = MessagePool::new(200_000, 0.6, 5);
        let next = popdyn_step(&pool, &params, 0);
        let expect = crate::cavity::g(&params, pool.eta());
        let sd = (expect * (1.0 - expect) / 200_000.0).sqrt();
        assert!((next.eta() - expect).abs() < 4.0 * sd, "{} vs {expect}", next.eta());
    }

    #[test]
    fn zero_delta_is_uninformative() {
        let params = ModelParams::new(4, 5.0, 0.0).unwrap();
        let cfg = PopDynConfig {
            pool_size: 20_000,
            sweeps: 40,
            burn_in: 20,
            seed: 3,
        };
        let trace = popdyn_run(&cfg, &params, 0.8);
        let se = (0.25 * 0.75 / 20_000.0f64 / 20.0).sqrt();
        assert!((trace.mean - 0.25).abs() < 3.0 * trace.std_err.max(se));
        assert!(trace.series.iter().all(|&e| (0.0..=1.0).contains(&e)));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let params = ModelParams::new(3, 6.0, 3.0).unwrap().with_rho(0.05).unwrap();
        let cfg = PopDynConfig {
            pool_size: 10_000,
            sweeps: 10,
            burn_in: 5,
            seed: 99,
        };
        let a = popdyn_run(&cfg, &params, 0.5);
        let b = popdyn_run(&cfg, &params, 0.5);
        assert_eq!(a.series, b.series);
        let other = popdyn_run(&PopDynConfig { seed: 100, ..cfg }, &params, 0.5);
        assert_ne!(a.series, other.series);
    }

    #[test]
    fn std_err_of_constant() {
        let (m, se) = mean_std_err(&[0.3; 50]);
        assert!((m - 0.3).abs() < 1e-15);
        assert!(se.abs() < 1e-15);
    }

    #[test]
    fn std_err_tracks_ar1_process() {
        // x_t = r x_{t-1} + e_t has SE of the mean sigma / ((1 - r) sqrt(n)).
        let r = 0.5;
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let mut x = 0.0;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                x = r * x + normal.sample(&mut rng);
                x
            })
            .collect();
        let (_, se) = mean_std_err(&xs);
        let expect = 1.0 / ((1.0 - r) * (n as f64).sqrt());
        assert!((se / expect - 1.0).abs() < 0.1, "{se} vs {expect}");
    }
}
