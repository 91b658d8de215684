//! Driver behind the `zerotemp` binary: parameter sweeps over the cavity
//! solutions, population dynamics and sampled graphs, written as CSV or
//! JSON lines with the resolved configuration embedded.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use zerotemp_core::BetaMode;

use crate::config::{Defaults, Format, Grid, InitSpec};
use crate::output::{Metadata, SweepResult};

#[derive(Debug, Parser)]
#[command(name = "zerotemp", version, about = "Zero-temperature message passing for the stochastic block model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Defaults file to use instead of the built-in one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Output file; standard output when absent. For `graph-gen` this is the
    /// graph file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-group thresholds with and without tiebreaking over a grid of c.
    ThresholdsQ2(ThresholdsQ2Args),
    /// Fixed points, flow limits and thresholds over a grid of delta.
    PhaseQ(PhaseQArgs),
    /// Both thresholds over a grid of q at fixed c.
    ThresholdsVsQ(ThresholdsVsQArgs),
    /// Accuracy with revealed labels over delta values and a grid of rho.
    Semisupervised(SemisupervisedArgs),
    /// Population dynamics over a grid of delta.
    Popdyn(PopDynArgs),
    /// Message passing on sampled or loaded graphs over a grid of delta.
    GraphSim(GraphSimArgs),
    /// Sample one graph and write it in the text graph format.
    GraphGen(GraphGenArgs),
}

#[derive(Debug, Args)]
pub struct ThresholdsQ2Args {
    /// Values of c.
    #[arg(long)]
    pub grid: Option<Grid>,
}

#[derive(Debug, Args)]
pub struct PhaseQArgs {
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Values of delta.
    #[arg(long)]
    pub grid: Option<Grid>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub beta_mode: Option<BetaMode>,
    /// Emit samples of g(eta) instead of fixed points.
    #[arg(long)]
    pub curve: bool,
    #[arg(long)]
    pub curve_points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ThresholdsVsQArgs {
    #[arg(long)]
    pub c: Option<f64>,
    /// Values of q.
    #[arg(long)]
    pub grid: Option<Grid>,
}

#[derive(Debug, Args)]
pub struct SemisupervisedArgs {
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Values of delta.
    #[arg(long)]
    pub delta: Option<Grid>,
    /// Values of rho.
    #[arg(long)]
    pub grid: Option<Grid>,
}

#[derive(Debug, Args)]
pub struct PopDynArgs {
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Values of delta.
    #[arg(long)]
    pub grid: Option<Grid>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub beta_mode: Option<BetaMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub init_eta: Option<f64>,
    /// Emit the per-sweep accuracy instead of summaries.
    #[arg(long)]
    pub series: bool,
}

#[derive(Debug, Args)]
pub struct GraphSimArgs {
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Values of delta.
    #[arg(long)]
    pub grid: Option<Grid>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub beta_mode: Option<BetaMode>,
    /// First seed; run k uses seed + k.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Graphs per delta.
    #[arg(long)]
    pub runs: Option<usize>,
    /// `random` or `planted:<fraction>`.
    #[arg(long)]
    pub init: Option<InitSpec>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    /// Graph file to run on instead of sampling.
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GraphGenArgs {
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Result of one invocation.
pub struct Outcome {
    pub any_failed: bool,
}

fn metadata<C: Serialize>(command: &str, config: &C, seeds: Vec<u64>, started: Instant, notes: Vec<String>) -> Result<Metadata> {
    Ok(Metadata {
        tool: "zerotemp".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config: serde_json::to_value(config)?,
        seeds,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        tolerances: serde_json::to_value(zerotemp_core::cavity::solver_tolerances())?,
        notes,
    })
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

const ENERGY_NOTE: &str = "hamiltonian_energy sums delta(s_i, s_j) over unordered edges and doubles it, matching a sum over ordered pairs";

/// Resolve the configuration, run the command and write its output.
pub fn run(cli: Cli) -> Result<Outcome> {
    let mut defaults = Defaults::load(cli.config.as_deref())?;
    let format = cli.format.unwrap_or(defaults.format);
    let started = Instant::now();
    let (result, meta): (SweepResult, Metadata) = match cli.command {
        Command::ThresholdsQ2(a) => {
            let cfg = &mut defaults.thresholds_q2;
            set(&mut cfg.grid, a.grid);
            let r = commands::thresholds_q2(cfg);
            (r, metadata("thresholds-q2", cfg, vec![], started, vec![])?)
        }
        Command::PhaseQ(a) => {
            let cfg = &mut defaults.phase_q;
            set(&mut cfg.q, a.q);
            set(&mut cfg.c, a.c);
            set(&mut cfg.grid, a.grid);
            set(&mut cfg.beta, a.beta);
            set(&mut cfg.beta_mode, a.beta_mode);
            set(&mut cfg.curve_points, a.curve_points);
            cfg.curve |= a.curve;
            let r = commands::phase_q(cfg)?;
            (r, metadata("phase-q", cfg, vec![], started, vec![])?)
        }
        Command::ThresholdsVsQ(a) => {
            let cfg = &mut defaults.thresholds_vs_q;
            set(&mut cfg.c, a.c);
            set(&mut cfg.grid, a.grid);
            let r = commands::thresholds_vs_q(cfg)?;
            (r, metadata("thresholds-vs-q", cfg, vec![], started, vec![])?)
        }
        Command::Semisupervised(a) => {
            let cfg = &mut defaults.semisupervised;
            set(&mut cfg.q, a.q);
            set(&mut cfg.c, a.c);
            set(&mut cfg.delta, a.delta);
            set(&mut cfg.grid, a.grid);
            let r = commands::semisupervised(cfg)?;
            (r, metadata("semisupervised", cfg, vec![], started, vec![])?)
        }
        Command::Popdyn(a) => {
            let cfg = &mut defaults.popdyn;
            set(&mut cfg.q, a.q);
            set(&mut cfg.c, a.c);
            set(&mut cfg.grid, a.grid);
            set(&mut cfg.rho, a.rho);
            set(&mut cfg.beta, a.beta);
            set(&mut cfg.beta_mode, a.beta_mode);
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.pool_size, a.pool_size);
            set(&mut cfg.sweeps, a.sweeps);
            set(&mut cfg.burn_in, a.burn_in);
            set(&mut cfg.init_eta, a.init_eta);
            cfg.series |= a.series;
            let r = commands::popdyn(cfg)?;
            let seeds = commands::popdyn_seeds(cfg);
            (r, metadata("popdyn", cfg, seeds, started, vec![])?)
        }
        Command::GraphSim(a) => {
            let cfg = &mut defaults.graph_sim;
            set(&mut cfg.q, a.q);
            set(&mut cfg.c, a.c);
            set(&mut cfg.grid, a.grid);
            set(&mut cfg.rho, a.rho);
            set(&mut cfg.beta, a.beta);
            set(&mut cfg.beta_mode, a.beta_mode);
            set(&mut cfg.seed, a.seed);
            set(&mut cfg.n, a.n);
            set(&mut cfg.runs, a.runs);
            set(&mut cfg.init, a.init);
            set(&mut cfg.max_sweeps, a.max_sweeps);
            if a.graph.is_some() {
                cfg.graph = a.graph;
            }
            let r = commands::graph_sim(cfg)?;
            let seeds = commands::graph_sim_seeds(cfg);
            (r, metadata("graph-sim", cfg, seeds, started, vec![ENERGY_NOTE.into()])?)
        }
        Command::GraphGen(a) => {
            let cfg = &mut defaults.graph_gen;
            set(&mut cfg.q, a.q);
            set(&mut cfg.c, a.c);
            set(&mut cfg.delta, a.delta);
            set(&mut cfg.rho, a.rho);
            set(&mut cfg.n, a.n);
            set(&mut cfg.seed, a.seed);
            let (graph, summary) = commands::graph_gen(cfg)?;
            let mut w = open_out(&cli.out)?;
            graph.write_text(&mut w)?;
            w.flush()?;
            // The graph file format is fixed, so the summary goes to stderr.
            let meta = metadata("graph-gen", cfg, vec![cfg.seed], started, vec![])?;
            output::write(format, &meta, &summary, std::io::stderr().lock())?;
            return Ok(Outcome {
                any_failed: summary.any_failed(),
            });
        }
    };
    let mut w = open_out(&cli.out)?;
    output::write(format, &meta, &result, &mut w)?;
    w.flush()?;
    Ok(Outcome {
        any_failed: result.any_failed(),
    })
}
