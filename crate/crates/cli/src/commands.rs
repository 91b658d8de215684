//! One function per subcommand, each turning a resolved config into a
//! [`SweepResult`] with rows in grid order.

use std::fs::File;
use std::io::BufReader;

use anyhow::{Context, Result};
use rayon::prelude::*;
use zerotemp_core::cavity::{self, FlowConfig};
use zerotemp_core::cavity_q2::{threshold_no_tiebreak, threshold_tiebreak, Q2Error};
use zerotemp_core::graph::{generate, run_max_product, score};
use zerotemp_core::popdyn::popdyn_run;
use zerotemp_core::{MessagePassingConfig, ModelParams, PhaseThresholds, PopDynConfig, SbmGraph};

use crate::config::{GraphGen, GraphSim, PhaseQ, PopDyn, Semisupervised, ThresholdsQ2, ThresholdsVsQ};
use crate::output::{Cell, Row, Status, SweepResult};

fn error_row(width: usize, lead: Vec<Cell>, err: impl std::fmt::Display) -> Row {
    let mut cells = lead;
    cells.resize(width, Cell::Missing);
    Row::ok(cells).with_status(Status::Error, err.to_string())
}

pub fn thresholds_q2(cfg: &ThresholdsQ2) -> SweepResult {
    let cols = [
        "c",
        "delta_c_no_tiebreak",
        "delta_c_tiebreak",
        "ratio_no_tiebreak",
        "ratio_tiebreak",
        "reference_one",
        "reference_asymptote",
    ];
    let asymptote = (std::f64::consts::PI / 2.0).sqrt();
    let rows: Vec<Row> = cfg
        .grid
        .values()
        .par_iter()
        .map(|&c| {
            if !(c > 0.0) {
                return error_row(cols.len(), vec![c.into()], "c must be positive");
            }
            let tb = threshold_tiebreak(c);
            let (ntb, status, detail) = match threshold_no_tiebreak(c) {
                Ok(d) => (Some(d), Status::Ok, String::new()),
                Err(e @ Q2Error::NoDetectablePhase(_)) => (None, Status::Undefined, e.to_string()),
                Err(e) => (None, Status::Error, e.to_string()),
            };
            let root = c.sqrt();
            Row::ok(vec![
                c.into(),
                Cell::opt(ntb),
                tb.into(),
                Cell::opt(ntb.map(|d| d / root)),
                (tb / root).into(),
                1.0.into(),
                asymptote.into(),
            ])
            .with_status(status, detail)
        })
        .collect();
    collect(&cols, rows)
}

fn collect(cols: &[&str], rows: Vec<Row>) -> SweepResult {
    let mut out = SweepResult::new(cols);
    rows.into_iter().for_each(|r| out.push(r));
    out
}

fn format_roots(params: &ModelParams) -> (usize, String) {
    let roots = cavity::solve_fixed_points(params);
    let text = roots
        .iter()
        .map(|r| format!("{}:{}", r.eta, if r.stable { "stable" } else { "unstable" }))
        .collect::<Vec<_>>()
        .join(";");
    (roots.len(), text)
}

pub fn phase_q(cfg: &PhaseQ) -> Result<SweepResult> {
    let base = ModelParams::new(cfg.q, cfg.c, 0.0)?.with_beta(cfg.beta, cfg.beta_mode)?;
    if cfg.curve {
        return Ok(g_curves(cfg, &base));
    }
    let cols = [
        "q",
        "c",
        "delta",
        "n_roots",
        "roots",
        "eta_random_init",
        "eta_accurate_init",
        "delta_c1",
        "eta_tangency",
        "delta_c2",
    ];
    let th = PhaseThresholds::compute(cfg.q, cfg.c);
    let (c1, eta_t, c2, th_err) = match &th {
        Ok(t) => (t.delta_c1.map(|x| x.delta), t.delta_c1.map(|x| x.eta), t.delta_c2, None),
        Err(e) => (None, None, None, Some(e.to_string())),
    };
    let rows: Vec<Row> = cfg
        .grid
        .values()
        .par_iter()
        .map(|&delta| {
            let lead = vec![cfg.q.into(), cfg.c.into(), delta.into()];
            let p = match base.with_delta(delta) {
                Ok(p) => p,
                Err(e) => return error_row(cols.len(), lead, e),
            };
            let (n_roots, roots) = format_roots(&p);
            let random = cavity::flow_limit(&p, cavity::random_init_eta(&p), FlowConfig::default());
            let accurate = cavity::flow_limit(&p, cfg.accurate_init, FlowConfig::default());
            let row = Row::ok(vec![
                cfg.q.into(),
                cfg.c.into(),
                delta.into(),
                n_roots.into(),
                roots.into(),
                random.eta.into(),
                accurate.eta.into(),
                Cell::opt(c1),
                Cell::opt(eta_t),
                Cell::opt(c2),
            ]);
            if let Some(e) = &th_err {
                row.with_status(Status::Error, format!("thresholds: {e}"))
            } else if !(random.converged && accurate.converged) {
                row.with_status(Status::NotConverged, "flow did not settle")
            } else if c1.is_none() || c2.is_none() {
                row.with_status(Status::Undefined, "a threshold does not exist below delta = c")
            } else {
                row
            }
        })
        .collect();
    Ok(collect(&cols, rows))
}

fn g_curves(cfg: &PhaseQ, base: &ModelParams) -> SweepResult {
    let cols = ["q", "c", "delta", "eta", "g", "g_minus_eta"];
    let lo = base.chance();
    let m = cfg.curve_points.max(2);
    let etas: Vec<f64> = (0..m).map(|i| if i == m - 1 { 1.0 } else { lo + (1.0 - lo) * i as f64 / (m - 1) as f64 }).collect();
    let rows: Vec<Row> = cfg
        .grid
        .values()
        .par_iter()
        .flat_map_iter(|&delta| {
            let p = base.with_delta(delta);
            etas.iter()
                .map(move |&eta| {
                    let lead = vec![cfg.q.into(), cfg.c.into(), delta.into(), eta.into()];
                    match &p {
                        Ok(p) => {
                            let g = cavity::g(p, eta);
                            Row::ok(vec![cfg.q.into(), cfg.c.into(), delta.into(), eta.into(), g.into(), (g - eta).into()])
                        }
                        Err(e) => error_row(cols.len(), lead, e),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    collect(&cols, rows)
}

pub fn thresholds_vs_q(cfg: &ThresholdsVsQ) -> Result<SweepResult> {
    let cols = ["q", "c", "delta_c1", "eta_tangency", "delta_c2", "sqrt_c", "delta_c2_nondecreasing"];
    let qs = cfg.grid.integers()?;
    let computed: Vec<_> = qs.par_iter().map(|&q| (q, PhaseThresholds::compute(q, cfg.c))).collect();
    let mut out = SweepResult::new(&cols);
    let mut prev: Option<f64> = None;
    for (q, th) in computed {
        let lead = vec![q.into(), cfg.c.into()];
        let th = match th {
            Ok(t) => t,
            Err(e) => {
                out.push(error_row(cols.len(), lead, e));
                continue;
            }
        };
        let c2 = th.delta_c2;
        let nondecreasing = match (prev, c2) {
            (Some(a), Some(b)) => b >= a,
            _ => true,
        };
        if c2.is_some() {
            prev = c2;
        }
        let row = Row::ok(vec![
            q.into(),
            cfg.c.into(),
            Cell::opt(th.delta_c1.map(|t| t.delta)),
            Cell::opt(th.delta_c1.map(|t| t.eta)),
            Cell::opt(c2),
            cfg.c.sqrt().into(),
            nondecreasing.into(),
        ]);
        out.push(if th.delta_c1.is_none() || c2.is_none() {
            row.with_status(Status::Undefined, "a threshold does not exist below delta = c")
        } else {
            row
        });
    }
    Ok(out)
}

pub fn semisupervised(cfg: &Semisupervised) -> Result<SweepResult> {
    let cols = [
        "q",
        "c",
        "delta",
        "rho",
        "eta_random_init",
        "eta_accurate_init",
        "n_stable",
        "rho_critical",
        "eta_below",
        "eta_above",
    ];
    let base = ModelParams::new(cfg.q, cfg.c, 0.0)?;
    let deltas = cfg.delta.values().to_vec();
    let criticals: Vec<_> = deltas
        .iter()
        .map(|&d| base.with_delta(d).map_err(anyhow::Error::from).and_then(|p| Ok(cavity::rho_critical(&p)?)))
        .collect();
    let pairs: Vec<(usize, f64)> = (0..deltas.len()).flat_map(|i| cfg.grid.values().iter().map(move |&r| (i, r))).collect();
    let rows: Vec<Row> = pairs
        .par_iter()
        .map(|&(i, rho)| {
            let delta = deltas[i];
            let lead = vec![cfg.q.into(), cfg.c.into(), delta.into(), rho.into()];
            let p = match base.with_delta(delta).and_then(|p| p.with_rho(rho)) {
                Ok(p) => p,
                Err(e) => return error_row(cols.len(), lead, e),
            };
            let random = cavity::flow_limit(&p, cavity::random_init_eta(&p), FlowConfig::default());
            let accurate = cavity::flow_limit(&p, cfg.accurate_init, FlowConfig::default());
            let n_stable = cavity::solve_fixed_points(&p).iter().filter(|f| f.stable).count();
            let (crit, status, detail) = match &criticals[i] {
                Ok(Some(r)) => (Some(*r), Status::Ok, String::new()),
                Ok(None) => (None, Status::Undefined, "accuracy is continuous in rho".to_string()),
                Err(e) => (None, Status::Error, e.to_string()),
            };
            let row = Row::ok(vec![
                cfg.q.into(),
                cfg.c.into(),
                delta.into(),
                rho.into(),
                random.eta.into(),
                accurate.eta.into(),
                n_stable.into(),
                Cell::opt(crit.map(|r| r.rho)),
                Cell::opt(crit.map(|r| r.eta_below)),
                Cell::opt(crit.map(|r| r.eta_above)),
            ]);
            if status == Status::Ok && !(random.converged && accurate.converged) {
                row.with_status(Status::NotConverged, "flow did not settle")
            } else {
                row.with_status(status, detail)
            }
        })
        .collect();
    Ok(collect(&cols, rows))
}

pub fn popdyn(cfg: &PopDyn) -> Result<SweepResult> {
    anyhow::ensure!(cfg.burn_in < cfg.sweeps, "burn_in must be below sweeps");
    anyhow::ensure!(cfg.pool_size >= zerotemp_core::popdyn::MIN_POOL, "pool_size must be at least {}", zerotemp_core::popdyn::MIN_POOL);
    let base = ModelParams::new(cfg.q, cfg.c, 0.0)?.with_rho(cfg.rho)?.with_beta(cfg.beta, cfg.beta_mode)?;
    let cols: &[&str] = if cfg.series {
        &["q", "c", "delta", "seed", "sweep", "eta"]
    } else {
        &[
            "q",
            "c",
            "delta",
            "seed",
            "pool_size",
            "sweeps",
            "burn_in",
            "init_eta",
            "mean",
            "std_err",
            "nearest_stable_root",
            "z_score",
        ]
    };
    let deltas = cfg.grid.values();
    // Runs are sequential so each uses every core for its sweeps.
    let mut out = SweepResult::new(cols);
    for (i, &delta) in deltas.iter().enumerate() {
        let seed = cfg.seed + i as u64;
        let lead = vec![cfg.q.into(), cfg.c.into(), delta.into(), seed.into()];
        let p = match base.with_delta(delta) {
            Ok(p) => p,
            Err(e) => {
                out.push(error_row(cols.len(), lead, e));
                continue;
            }
        };
        let pd = PopDynConfig {
            pool_size: cfg.pool_size,
            sweeps: cfg.sweeps,
            burn_in: cfg.burn_in,
            seed,
        };
        let trace = popdyn_run(&pd, &p, cfg.init_eta);
        if cfg.series {
            for (t, &eta) in trace.series.iter().enumerate() {
                out.push(Row::ok(vec![cfg.q.into(), cfg.c.into(), delta.into(), seed.into(), (t + 1).into(), eta.into()]));
            }
            continue;
        }
        let nearest = cavity::solve_fixed_points(&p)
            .into_iter()
            .filter(|f| f.stable)
            .map(|f| f.eta)
            .min_by(|a, b| (a - trace.mean).abs().total_cmp(&(b - trace.mean).abs()));
        let z = nearest.map(|r| (trace.mean - r).abs() / trace.std_err);
        let row = Row::ok(vec![
            cfg.q.into(),
            cfg.c.into(),
            delta.into(),
            seed.into(),
            cfg.pool_size.into(),
            cfg.sweeps.into(),
            cfg.burn_in.into(),
            cfg.init_eta.into(),
            trace.mean.into(),
            trace.std_err.into(),
            Cell::opt(nearest),
            Cell::opt(z),
        ]);
        out.push(if nearest.is_none() {
            row.with_status(Status::Undefined, "no stable fixed point found")
        } else {
            row
        });
    }
    Ok(out)
}

/// Seeds used by a popdyn run, one per grid value.
pub fn popdyn_seeds(cfg: &PopDyn) -> Vec<u64> {
    (0..cfg.grid.values().len() as u64).map(|i| cfg.seed + i).collect()
}

pub fn graph_sim(cfg: &GraphSim) -> Result<SweepResult> {
    let cols = [
        "q",
        "c",
        "delta",
        "rho",
        "seed",
        "n",
        "edges",
        "revealed",
        "converged",
        "sweeps",
        "raw_agreement",
        "permuted_agreement",
        "normalized_overlap",
        "hamiltonian_energy",
        "analytic_eta",
    ];
    let loaded = match &cfg.graph {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Some(SbmGraph::read_text(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?)
        }
        None => None,
    };
    let deltas: Vec<f64> = match &loaded {
        Some(g) => vec![g.params.delta],
        None => cfg.grid.values().to_vec(),
    };
    let jobs: Vec<(f64, u64)> = deltas.iter().flat_map(|&d| (0..cfg.runs as u64).map(move |k| (d, cfg.seed + k))).collect();
    let init = cfg.init.to_init();
    let rows: Vec<Row> = jobs
        .par_iter()
        .map(|&(delta, seed)| {
            let lead = vec![cfg.q.into(), cfg.c.into(), delta.into(), cfg.rho.into(), seed.into()];
            let sampled;
            let graph = match &loaded {
                Some(g) => g,
                None => {
                    let p = ModelParams::new(cfg.q, cfg.c, delta)
                        .and_then(|p| p.with_rho(cfg.rho))
                        .and_then(|p| p.with_beta(cfg.beta, cfg.beta_mode));
                    let p = match p {
                        Ok(p) => p,
                        Err(e) => return error_row(cols.len(), lead, e),
                    };
                    sampled = match generate(&p, cfg.n, seed) {
                        Ok(g) => g,
                        Err(e) => return error_row(cols.len(), lead, e),
                    };
                    &sampled
                }
            };
            let p = graph.params;
            let res = run_max_product(
                graph,
                &init,
                &MessagePassingConfig {
                    max_sweeps: cfg.max_sweeps,
                    seed,
                },
            );
            let s = score(graph, &res.labels);
            let analytic = if p.is_unsupervised() || p.rho > 0.0 {
                Some(cavity::random_init_accuracy(&p))
            } else {
                None
            };
            let row = Row::ok(vec![
                p.q.into(),
                p.c.into(),
                p.delta.into(),
                p.rho.into(),
                seed.into(),
                graph.n().into(),
                graph.edges().len().into(),
                graph.revealed().iter().filter(|&&r| r).count().into(),
                res.converged.into(),
                res.sweeps.into(),
                s.raw_agreement.into(),
                s.permuted_agreement.into(),
                s.normalized_overlap.into(),
                s.hamiltonian_energy.into(),
                Cell::opt(analytic),
            ]);
            if res.converged {
                row
            } else {
                row.with_status(Status::NotConverged, format!("still changing after {} sweeps", res.sweeps))
            }
        })
        .collect();
    Ok(collect(&cols, rows))
}

/// Seeds used by a graph simulation.
pub fn graph_sim_seeds(cfg: &GraphSim) -> Vec<u64> {
    (0..cfg.runs as u64).map(|k| cfg.seed + k).collect()
}

pub fn graph_gen(cfg: &GraphGen) -> Result<(SbmGraph, SweepResult)> {
    let p = ModelParams::new(cfg.q, cfg.c, cfg.delta)?.with_rho(cfg.rho)?;
    let g = generate(&p, cfg.n, cfg.seed)?;
    let mut out = SweepResult::new(&["q", "c", "delta", "rho", "n", "seed", "edges", "mean_degree", "revealed"]);
    out.push(Row::ok(vec![
        cfg.q.into(),
        cfg.c.into(),
        cfg.delta.into(),
        cfg.rho.into(),
        cfg.n.into(),
        cfg.seed.into(),
        g.edges().len().into(),
        g.mean_degree().into(),
        g.revealed().iter().filter(|&&r| r).count().into(),
    ]));
    Ok((g, out))
}
