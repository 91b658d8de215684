//! Parameter point of the planted-partition phase diagram.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tiebreak::BetaMode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("need at least two groups, got q = {0}")]
    TooFewGroups(usize),
    #[error("average degree must be positive and finite, got c = {0}")]
    InvalidDegree(f64),
    #[error("need 0 <= delta <= c for an assortative model, got delta = {delta} with c = {c}")]
    InvalidDelta { c: f64, delta: f64 },
    #[error("revealed fraction must lie in [0, 1], got {0}")]
    InvalidRho(f64),
    #[error("tiebreak weight must be >= 1, got {0}")]
    InvalidBeta(f64),
}

/// `(q, c, delta)` plus the semisupervised knobs `rho` and `beta`.
///
/// Each node has on average `alpha` neighbours in its own group and `gamma`
/// in each other group, with `c = alpha + (q - 1) gamma` and
/// `delta = alpha - gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub q: usize,
    pub c: f64,
    pub delta: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub beta_mode: BetaMode,
}

fn one() -> f64 {
    1.0
}

impl ModelParams {
    pub fn new(q: usize, c: f64, delta: f64) -> Result<Self, ParamError> {
        let p = Self {
            q,
            c,
            delta,
            rho: 0.0,
            beta: 1.0,
            beta_mode: BetaMode::Normalized,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_rho(mut self, rho: f64) -> Result<Self, ParamError> {
        self.rho = rho;
        self.validate()?;
        Ok(self)
    }

    pub fn with_beta(mut self, beta: f64, mode: BetaMode) -> Result<Self, ParamError> {
        self.beta = beta;
        self.beta_mode = mode;
        self.validate()?;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self, ParamError> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.q < 2 {
            return Err(ParamError::TooFewGroups(self.q));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(ParamError::InvalidDegree(self.c));
        }
        // Tolerate round-off when delta is computed as a fraction of c.
        if !(self.delta >= 0.0) || self.delta > self.c * (1.0 + 1e-12) {
            return Err(ParamError::InvalidDelta {
                c: self.c,
                delta: self.delta,
            });
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(ParamError::InvalidRho(self.rho));
        }
        if !(self.beta >= 1.0) || !self.beta.is_finite() {
            return Err(ParamError::InvalidBeta(self.beta));
        }
        Ok(())
    }

    /// Mean number of same-group neighbours.
    pub fn alpha(&self) -> f64 {
        (self.c + (self.q as f64 - 1.0) * self.delta) / self.q as f64
    }

    /// Mean number of neighbours in each other group.
    pub fn gamma(&self) -> f64 {
        ((self.c - self.delta) / self.q as f64).max(0.0)
    }

    /// `1/q`, the accuracy of uninformative messages.
    pub fn chance(&self) -> f64 {
        1.0 / self.q as f64
    }

    /// True when the paramagnetic point `eta = 1/q` is an exact fixed point.
    pub fn is_unsupervised(&self) -> bool {
        self.rho == 0.0 && self.beta == 1.0
    }
}
