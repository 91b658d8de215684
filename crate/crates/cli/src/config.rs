//! Defaults file, grid specs and the resolved per-command configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use zerotemp_core::{BetaMode, MessageInit};

/// The checked-in defaults, compiled into the binary.
pub const DEFAULTS_TOML: &str = include_str!("../defaults.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

/// A grid written as `start:stop:count`, `a,b,c` or a single value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Grid {
    spec: String,
    values: Vec<f64>,
}

impl Grid {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values as integers; fails on any fractional or negative entry.
    pub fn integers(&self) -> Result<Vec<usize>> {
        self.values
            .iter()
            .map(|&v| {
                ensure!(v >= 0.0 && v.fract() == 0.0, "grid value {v} is not a non-negative integer");
                Ok(v as usize)
            })
            .collect()
    }
}

impl FromStr for Grid {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| t.trim().parse::<f64>().with_context(|| format!("bad number {t:?} in grid {s:?}"));
        let values = if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            ensure!(parts.len() == 3, "range grid must be start:stop:count, got {s:?}");
            let (a, b) = (num(parts[0])?, num(parts[1])?);
            let count: usize = parts[2].trim().parse().with_context(|| format!("bad count in grid {s:?}"))?;
            ensure!(count >= 1, "grid {s:?} is empty");
            if count == 1 {
                vec![a]
            } else {
                (0..count)
                    .map(|i| if i == count - 1 { b } else { a + (b - a) * i as f64 / (count - 1) as f64 })
                    .collect()
            }
        } else {
            s.split(',').map(num).collect::<Result<Vec<_>>>()?
        };
        ensure!(values.iter().all(|v| v.is_finite()), "grid {s:?} has non-finite values");
        Ok(Self {
            spec: s.to_string(),
            values,
        })
    }
}

impl TryFrom<String> for Grid {
    type Error = anyhow::Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Grid> for String {
    fn from(g: Grid) -> String {
        g.spec
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec)
    }
}

/// Initial messages for graph runs: `random` or `planted:<fraction>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InitSpec {
    Random,
    Planted(f64),
}

impl InitSpec {
    pub fn to_init(self) -> MessageInit {
        match self {
            Self::Random => MessageInit::Random,
            Self::Planted(f) => MessageInit::PlantedFraction(f),
        }
    }
}

impl FromStr for InitSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "random" {
            return Ok(Self::Random);
        }
        if let Some(f) = s.strip_prefix("planted:") {
            let f: f64 = f.parse().with_context(|| format!("bad fraction in {s:?}"))?;
            ensure!((0.0..=1.0).contains(&f), "planted fraction must lie in [0, 1]");
            return Ok(Self::Planted(f));
        }
        bail!("init must be `random` or `planted:<fraction>`, got {s:?}")
    }
}

impl TryFrom<String> for InitSpec {
    type Error = anyhow::Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InitSpec> for String {
    fn from(i: InitSpec) -> String {
        match i {
            InitSpec::Random => "random".into(),
            InitSpec::Planted(f) => format!("planted:{f}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsQ2 {
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseQ {
    pub q: usize,
    pub c: f64,
    pub grid: Grid,
    pub beta: f64,
    pub beta_mode: BetaMode,
    pub accurate_init: f64,
    pub curve: bool,
    pub curve_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsVsQ {
    pub c: f64,
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Semisupervised {
    pub q: usize,
    pub c: f64,
    pub delta: Grid,
    pub grid: Grid,
    pub accurate_init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopDyn {
    pub q: usize,
    pub c: f64,
    pub grid: Grid,
    pub rho: f64,
    pub beta: f64,
    pub beta_mode: BetaMode,
    pub pool_size: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub init_eta: f64,
    pub seed: u64,
    pub series: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSim {
    pub q: usize,
    pub c: f64,
    pub grid: Grid,
    pub rho: f64,
    pub beta: f64,
    pub beta_mode: BetaMode,
    pub n: usize,
    pub runs: usize,
    pub seed: u64,
    pub init: InitSpec,
    pub max_sweeps: usize,
    /// Run on this graph file instead of sampling graphs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphGen {
    pub q: usize,
    pub c: f64,
    pub delta: f64,
    pub rho: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub format: Format,
    pub thresholds_q2: ThresholdsQ2,
    pub phase_q: PhaseQ,
    pub thresholds_vs_q: ThresholdsVsQ,
    pub semisupervised: Semisupervised,
    pub popdyn: PopDyn,
    pub graph_sim: GraphSim,
    pub graph_gen: GraphGen,
}

impl Defaults {
    pub fn builtin() -> Self {
        toml::from_str(DEFAULTS_TOML).expect("checked-in defaults parse")
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::builtin()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }
}
