//! Quenched experiments on planted-partition graphs.

use std::io::{BufRead, Write};

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{ModelParams, ParamError};
use crate::tiebreak::choose_tied;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("need at least q = {q} nodes, got {n}")]
    TooFewNodes { n: usize, q: usize },
    #[error("edge probability {0} exceeds 1; the graph is too small for this degree")]
    DensityTooHigh(f64),
    #[error("self-loop at node {0}")]
    SelfLoop(u32),
    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(u32, u32),
    #[error("node {node} out of range for n = {n}")]
    NodeOutOfRange { node: u64, n: usize },
    #[error("label {label} out of range for q = {q}")]
    LabelOutOfRange { label: u64, q: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Undirected graph with planted labels and a revealed-node mask.
///
/// Adjacency is stored as CSR. Slot `e` in the neighbour list of `u` is the
/// directed edge `u -> neighbors[e]`, and `reverse[e]` is its partner.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmGraph {
    pub params: ModelParams,
    pub seed: u64,
    planted: Vec<u32>,
    revealed: Vec<bool>,
    edges: Vec<(u32, u32)>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    reverse: Vec<usize>,
}

impl SbmGraph {
    /// Assemble a graph from an edge list; edges may come in any order or
    /// orientation.
    pub fn from_parts(
        params: ModelParams,
        seed: u64,
        planted: Vec<u32>,
        revealed: Vec<bool>,
        mut edges: Vec<(u32, u32)>,
    ) -> Result<Self, GraphError> {
        let n = planted.len();
        assert_eq!(revealed.len(), n);
        if let Some(&label) = planted.iter().find(|&&l| l as usize >= params.q) {
            return Err(GraphError::LabelOutOfRange {
                label: label as u64,
                q: params.q,
            });
        }
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(GraphError::SelfLoop(e.0));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.1 as usize >= n {
                return Err(GraphError::NodeOutOfRange { node: e.1 as u64, n });
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }

        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![0u32; offsets[n]];
        let mut reverse = vec![0usize; offsets[n]];
        for &(u, v) in &edges {
            let (a, b) = (fill[u as usize], fill[v as usize]);
            neighbors[a] = v;
            neighbors[b] = u;
            reverse[a] = b;
            reverse[b] = a;
            fill[u as usize] += 1;
            fill[v as usize] += 1;
        }
        Ok(Self {
            params,
            seed,
            planted,
            revealed,
            edges,
            offsets,
            neighbors,
            reverse,
        })
    }

    pub fn n(&self) -> usize {
        self.planted.len()
    }

    pub fn q(&self) -> usize {
        self.params.q
    }

    pub fn planted(&self) -> &[u32] {
        &self.planted
    }

    pub fn revealed(&self) -> &[bool] {
        &self.revealed
    }

    /// Undirected edges `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.n() as f64
    }

    /// Number of directed edges.
    pub fn slots(&self) -> usize {
        self.neighbors.len()
    }

    /// Write the line-oriented text format: a header `n q c delta rho seed`,
    /// one `u v` line per edge (0-indexed nodes), one `label <node> <group>`
    /// line per node with groups numbered `1..=q`, and one `revealed <node>`
    /// line per revealed node.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let p = &self.params;
        writeln!(w, "{} {} {} {} {} {}", self.n(), p.q, p.c, p.delta, p.rho, self.seed)?;
        for &(u, v) in &self.edges {
            writeln!(w, "{u} {v}")?;
        }
        for (i, &l) in self.planted.iter().enumerate() {
            writeln!(w, "label {i} {}", l + 1)?;
        }
        for (i, _) in self.revealed.iter().enumerate().filter(|(_, &r)| r) {
            writeln!(w, "revealed {i}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, GraphError> {
        let mut lines = r.lines().enumerate();
        let perr = |line: usize, msg: &str| GraphError::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| perr(0, "missing header"))?;
        let header = header?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if tok.len() != 6 {
            return Err(perr(0, "header must be `n q c delta rho seed`"));
        }
        let num = |i: usize| -> Result<f64, GraphError> { tok[i].parse::<f64>().map_err(|e| perr(0, &e.to_string())) };
        let int = |i: usize| -> Result<u64, GraphError> { tok[i].parse::<u64>().map_err(|e| perr(0, &e.to_string())) };
        let n = int(0)? as usize;
        let params = ModelParams::new(int(1)? as usize, num(2)?, num(3)?)?.with_rho(num(4)?)?;
        let seed = int(5)?;

        let mut edges = Vec::new();
        let mut planted = vec![None; n];
        let mut revealed = vec![false; n];
        for (idx, line) in lines {
            let line = line?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| s.parse::<u64>().map_err(|e| perr(idx, &e.to_string()));
            let node = |s: &str| -> Result<usize, GraphError> {
                let v = parse(s)?;
                if v as usize >= n {
                    return Err(GraphError::NodeOutOfRange { node: v, n });
                }
                Ok(v as usize)
            };
            match parts.as_slice() {
                [] => continue,
                ["label", i, l] => {
                    let label = parse(l)?;
                    if label == 0 || label as usize > params.q {
                        return Err(GraphError::LabelOutOfRange { label, q: params.q });
                    }
                    planted[node(i)?] = Some(label as u32 - 1);
                }
                ["revealed", i] => revealed[node(i)?] = true,
                [u, v] => edges.push((node(u)? as u32, node(v)? as u32)),
                _ => return Err(perr(idx, "unrecognised line")),
            }
        }
        let planted = planted
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| perr(0, &format!("node {i} has no label"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_parts(params, seed, planted, revealed, edges)
    }
}

/// Sizes of `q` groups covering `n` nodes, equal up to a remainder spread
/// over the first groups.
pub fn group_sizes(n: usize, q: usize) -> Vec<usize> {
    (0..q).map(|g| n / q + usize::from(g < n % q)).collect()
}

/// Sample a planted-partition graph with `n` nodes.
///
/// Pairs inside a group are linked with `p_in = q alpha / n` and pairs
/// across groups with `p_out = q gamma / n`. Each block of pairs is sampled
/// by geometric skipping, so the cost is proportional to the number of
/// edges. `ceil(rho n)` nodes, chosen uniformly, are marked revealed.
pub fn generate(params: &ModelParams, n: usize, seed: u64) -> Result<SbmGraph, GraphError> {
    params.validate()?;
    let q = params.q;
    if n < q {
        return Err(GraphError::TooFewNodes { n, q });
    }
    let p_in = q as f64 * params.alpha() / n as f64;
    let p_out = q as f64 * params.gamma() / n as f64;
    for p in [p_in, p_out] {
        if p > 1.0 {
            return Err(GraphError::DensityTooHigh(p));
        }
    }

    let sizes = group_sizes(n, q);
    let mut starts = vec![0usize; q + 1];
    for g in 0..q {
        starts[g + 1] = starts[g] + sizes[g];
    }
    let planted: Vec<u32> = (0..q).flat_map(|g| std::iter::repeat_n(g as u32, sizes[g])).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity((params.c * n as f64 * 0.5 * 1.1) as usize + 16);
    for a in 0..q {
        for b in a..q {
            let (sa, sb) = (starts[a] as u64, starts[b] as u64);
            if a == b {
                let m = sizes[a] as u64;
                skip_sample(m * m.saturating_sub(1) / 2, p_in, &mut rng, |idx| {
                    let (i, j) = triangle_pair(idx);
                    edges.push(((sa + j) as u32, (sa + i) as u32));
                });
            } else {
                let mb = sizes[b] as u64;
                skip_sample(sizes[a] as u64 * mb, p_out, &mut rng, |idx| {
                    edges.push(((sa + idx / mb) as u32, (sb + idx % mb) as u32));
                });
            }
        }
    }

    let n_revealed = ((params.rho * n as f64).ceil() as usize).min(n);
    let mut revealed = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, n_revealed) {
        revealed[i] = true;
    }
    SbmGraph::from_parts(*params, seed, planted, revealed, edges)
}

/// Visit each index in `0..total` independently with probability `p`.
fn skip_sample<R: Rng, F: FnMut(u64)>(total: u64, p: f64, rng: &mut R, mut visit: F) {
    if p <= 0.0 || total == 0 {
        return;
    }
    if p >= 1.0 {
        (0..total).for_each(visit);
        return;
    }
    let log_q = (-p).ln_1p();
    let mut idx: i128 = -1;
    loop {
        let u: f64 = 1.0 - rng.gen::<f64>();
        let skip = (u.ln() / log_q).floor();
        idx += 1 + skip.min(u64::MAX as f64) as i128;
        if idx >= total as i128 {
            return;
        }
        visit(idx as u64);
    }
}

/// Map a linear index onto the pair `(i, j)` with `j < i`, ordered by `i`.
fn triangle_pair(idx: u64) -> (u64, u64) {
    let mut i = ((1.0 + (1.0 + 8.0 * idx as f64).sqrt()) / 2.0).floor() as u64;
    while i * (i - 1) / 2 > idx {
        i -= 1;
    }
    while (i + 1) * i / 2 <= idx {
        i += 1;
    }
    (i, idx - i * (i - 1) / 2)
}

/// Initial messages for [`run_max_product`].
#[derive(Debug, Clone, PartialEq)]
pub enum MessageInit {
    /// Every message uniform over the `q` labels.
    Random,
    /// Each directed edge carries the sender's planted label with this
    /// probability, otherwise a uniform label.
    PlantedFraction(f64),
    /// One label per directed edge, in CSR slot order.
    FromMessages(Vec<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessagePassingConfig {
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for MessagePassingConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessagePassingResult {
    /// Label carried by each directed edge, in CSR slot order.
    pub messages: Vec<u32>,
    /// Node labels from the full field.
    pub labels: Vec<u32>,
    pub converged: bool,
    pub sweeps: usize,
    /// Messages changed in each sweep.
    pub changes: Vec<usize>,
}

const SALT_TIE: u64 = 0x5E_ED0F_7135;
const SALT_NODE: u64 = 0x0D_E51A_B1E5;

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in `[0, 1)` from a counter keyed on `(seed, salt, index)`.
fn counter_uniform(seed: u64, salt: u64, index: u64) -> f64 {
    let h = mix(mix(seed ^ salt).wrapping_add(index));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn argmax_with_tiebreak(field: &[u32], favoured: Option<usize>, params: &ModelParams, u: f64, tied: &mut Vec<usize>) -> u32 {
    let max = *field.iter().max().unwrap();
    tied.clear();
    tied.extend(field.iter().enumerate().filter(|(_, &h)| h == max).map(|(l, _)| l));
    if tied.len() == 1 {
        return tied[0] as u32;
    }
    choose_tied(tied, favoured, params.beta, params.beta_mode, u) as u32
}

/// Zero-temperature message passing with random tiebreaking on a fixed
/// graph.
///
/// Directed edges are updated asynchronously in a fresh random order each
/// sweep until a full sweep changes nothing. Each directed edge carries its
/// own fixed tiebreak draw, which acts as a tiny quenched random field and
/// lets the dynamics settle. Revealed nodes always send their planted label.
pub fn run_max_product(graph: &SbmGraph, init: &MessageInit, cfg: &MessagePassingConfig) -> MessagePassingResult {
    let q = graph.q();
    let params = &graph.params;
    let n = graph.n();
    let slots = graph.slots();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let owner: Vec<u32> = (0..n).flat_map(|u| std::iter::repeat_n(u as u32, graph.degree(u))).collect();
    let mut messages: Vec<u32> = match init {
        MessageInit::FromMessages(m) => {
            assert_eq!(m.len(), slots, "one message per directed edge");
            m.clone()
        }
        MessageInit::Random => (0..slots).map(|_| rng.gen_range(0..q as u32)).collect(),
        MessageInit::PlantedFraction(f) => (0..slots)
            .map(|e| {
                let sender = owner[e] as usize;
                if rng.gen::<f64>() < *f {
                    graph.planted[sender]
                } else {
                    rng.gen_range(0..q as u32)
                }
            })
            .collect(),
    };
    for (e, m) in messages.iter_mut().enumerate() {
        let sender = owner[e] as usize;
        if graph.revealed[sender] {
            *m = graph.planted[sender];
        }
    }

    // counts[v * q + l]: messages into v carrying label l.
    let mut counts = vec![0u32; n * q];
    for e in 0..slots {
        let target = graph.neighbors[e] as usize;
        counts[target * q + messages[e] as usize] += 1;
    }

    let favoured = |u: usize| (params.beta > 1.0).then(|| graph.planted[u] as usize);
    let mut order: Vec<usize> = (0..slots).filter(|&e| !graph.revealed[owner[e] as usize]).collect();
    let mut cavity = vec![0u32; q];
    let mut tied = Vec::with_capacity(q);
    let mut changes = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_sweeps {
        order.shuffle(&mut rng);
        let mut changed = 0usize;
        for &e in &order {
            let u = owner[e] as usize;
            let v = graph.neighbors[e] as usize;
            cavity.copy_from_slice(&counts[u * q..(u + 1) * q]);
            cavity[messages[graph.reverse[e]] as usize] -= 1;
            let draw = counter_uniform(cfg.seed, SALT_TIE, e as u64);
            let new = argmax_with_tiebreak(&cavity, favoured(u), params, draw, &mut tied);
            let old = messages[e];
            if new != old {
                counts[v * q + old as usize] -= 1;
                counts[v * q + new as usize] += 1;
                messages[e] = new;
                changed += 1;
            }
        }
        changes.push(changed);
        if changed == 0 {
            converged = true;
            break;
        }
    }

    let labels = (0..n)
        .map(|u| {
            if graph.revealed[u] {
                return graph.planted[u];
            }
            let draw = counter_uniform(cfg.seed, SALT_NODE, u as u64);
            argmax_with_tiebreak(&counts[u * q..(u + 1) * q], favoured(u), params, draw, &mut tied)
        })
        .collect();
    MessagePassingResult {
        messages,
        labels,
        converged,
        sweeps: changes.len(),
        changes,
    }
}

/// Agreement between candidate and planted labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub raw_agreement: f64,
    /// Agreement maximised over relabelings of the candidate labels.
    pub permuted_agreement: f64,
    /// `(permuted - 1/q) / (1 - 1/q)`.
    pub normalized_overlap: f64,
    /// `-sum_{i,j} A_ij delta(s_i, s_j)` over ordered pairs, i.e. twice
    /// the number of edges joining equal labels, negated.
    pub hamiltonian_energy: i64,
}

/// Score `labels` against the planted partition; the best relabeling is an
/// optimal assignment on the `q x q` confusion matrix.
pub fn score(graph: &SbmGraph, labels: &[u32]) -> OverlapReport {
    let q = graph.q();
    let n = graph.n();
    assert_eq!(labels.len(), n, "one label per node");
    let mut confusion = vec![0i64; q * q];
    for (&s, &t) in labels.iter().zip(&graph.planted) {
        confusion[s as usize * q + t as usize] += 1;
    }
    let raw: i64 = (0..q).map(|l| confusion[l * q + l]).sum();
    let weights = Matrix::from_vec(q, q, confusion).expect("square matrix");
    let (best, _) = kuhn_munkres(&weights);
    let permuted = best as f64 / n as f64;
    let chance = 1.0 / q as f64;
    let same = graph.edges.iter().filter(|&&(u, v)| labels[u as usize] == labels[v as usize]).count();
    OverlapReport {
        raw_agreement: raw as f64 / n as f64,
        permuted_agreement: permuted,
        normalized_overlap: (permuted - chance) / (1.0 - chance),
        hamiltonian_energy: -2 * same as i64,
    }
}
