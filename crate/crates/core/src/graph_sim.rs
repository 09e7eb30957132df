//! Seeded Erdős–Rényi and planted-dense-subgraph generation, edge-budget
//! perturbations, and the plain-text graph file format.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::rng::{stream, StreamRng};

const STREAM_BACKGROUND: u64 = 1;
const STREAM_SUPPORT: u64 = 2;
const STREAM_INTERNAL: u64 = 3;
const STREAM_PERTURB: u64 = 4;

/// Undirected simple graph with a sorted edge list and CSR adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Builds a graph from arbitrary-order pairs. Pairs are normalised to
    /// `u < v`; self-loops, duplicates and out-of-range ids are rejected.
    pub fn from_edges(n: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for e in edges.iter_mut() {
            let (u, v) = *e;
            if u == v {
                return Err(domain(format!("self-loop at vertex {u}")));
            }
            if u >= n || v >= n {
                return Err(domain(format!("edge ({u},{v}) out of range for n={n}")));
            }
            if u > v {
                *e = (v, u);
            }
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(domain("duplicate edge"));
        }
        Ok(Self::from_sorted(n, edges))
    }

    fn from_sorted(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![0usize; 2 * edges.len()];
        for &(u, v) in &edges {
            neighbors[fill[u]] = v;
            fill[u] += 1;
            neighbors[fill[v]] = u;
            fill[v] += 1;
        }
        // Lexicographic edge order leaves every neighbour list sorted.
        Self { n, edges, offsets, neighbors }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_sorted(n, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u != v && u < self.n && v < self.n && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Number of unordered pairs `n(n-1)/2`.
    pub fn pair_count(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    /// Edges with both endpoints in `set` (set must be sorted).
    pub fn internal_edge_count(&self, set: &[usize]) -> usize {
        set.iter()
            .map(|&u| self.neighbors(u).iter().filter(|&&v| v > u && set.binary_search(&v).is_ok()).count())
            .sum()
    }

    /// Checks the simple-graph invariants and CSR consistency.
    pub fn validate(&self) -> Result<()> {
        for w in self.edges.windows(2) {
            if w[0] >= w[1] {
                return Err(domain("edge list not strictly sorted"));
            }
        }
        for &(u, v) in &self.edges {
            if u >= v || v >= self.n {
                return Err(domain(format!("invalid edge ({u},{v})")));
            }
            if !self.has_edge(u, v) || !self.has_edge(v, u) {
                return Err(domain(format!("adjacency missing edge ({u},{v})")));
            }
        }
        if self.neighbors.len() != 2 * self.edges.len() {
            return Err(domain("adjacency size mismatch"));
        }
        Ok(())
    }
}

fn check_probability(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain(format!("{what}={p} must lie in [0,1]")));
    }
    Ok(())
}

/// Geometric-skip sampler over the pairs `(u, v)`, `u < v`, visited in
/// column-major order. Expected cost is O(n + |E|).
fn sample_pairs(n: usize, p: f64, rng: &mut StreamRng, out: &mut Vec<(usize, usize)>) {
    if n < 2 || p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        for v in 1..n {
            out.extend((0..v).map(|u| (u, v)));
        }
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut v = 1usize;
    let mut w: i64 = -1;
    while v < n {
        let r: f64 = rng.random();
        let skip = ((1.0 - r).ln() / log_q).floor();
        // A skip past the end of the pair list terminates the scan.
        if skip >= (n * n) as f64 {
            break;
        }
        w += 1 + skip as i64;
        while v < n && w >= v as i64 {
            w -= v as i64;
            v += 1;
        }
        if v < n {
            out.push((w as usize, v));
        }
    }
}

/// `ER(n, p)`. Identical `(n, p, seed)` give identical graphs.
pub fn generate_er(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(domain("n must be at least 1"));
    }
    check_probability(p, "p")?;
    let mut rng = stream(seed, &[STREAM_BACKGROUND]);
    let mut edges = Vec::new();
    sample_pairs(n, p, &mut rng, &mut edges);
    edges.sort_unstable();
    Ok(Graph::from_sorted(n, edges))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    #[serde(rename = "H0")]
    Null,
    #[serde(rename = "H1")]
    Planted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    pub n: usize,
    pub p: f64,
    pub delta: f64,
    pub k: usize,
    pub seed: u64,
}

/// A graph together with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedGraphInstance {
    pub graph: Graph,
    /// Sorted planted vertex set; empty under the null.
    pub planted: Vec<usize>,
    pub params: PlantedParams,
    pub hypothesis: Hypothesis,
}

/// Uniform `k`-subset of `[n]` by partial Fisher–Yates, returned sorted.
pub fn sample_support(n: usize, k: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.random_range(i..n);
        ids.swap(i, j);
    }
    ids.truncate(k.min(n));
    ids.sort_unstable();
    ids
}

/// Planted dense subgraph: `S` uniform among `k`-subsets, internal pairs at
/// `p + delta`, all other pairs at `p`.
///
/// The background is the same `ER(n, p)` draw as [`generate_er`] with this
/// seed; each internal pair that is absent is then added with probability
/// `delta / (1 - p)`, which makes its marginal exactly `p + delta`.
pub fn generate_planted(n: usize, p: f64, delta: f64, k: usize, seed: u64) -> Result<PlantedGraphInstance> {
    check_probability(p, "p")?;
    check_probability(p + delta, "p+delta")?;
    if delta < 0.0 {
        return Err(domain(format!("delta={delta} must be non-negative")));
    }
    if k < 2 || k > n {
        return Err(domain(format!("k={k} must satisfy 2 <= k <= n={n}")));
    }
    let background = generate_er(n, p, seed)?;
    let planted = sample_support(n, k, &mut stream(seed, &[STREAM_SUPPORT]));
    let mut edges = background.edges.clone();
    if delta > 0.0 {
        let lift = if p < 1.0 { delta / (1.0 - p) } else { 0.0 };
        let mut rng = stream(seed, &[STREAM_INTERNAL]);
        for (i, &u) in planted.iter().enumerate() {
            for &v in &planted[i + 1..] {
                // Every pair consumes one draw so the stream layout is fixed.
                let r: f64 = rng.random();
                if r < lift && !background.has_edge(u, v) {
                    edges.push((u, v));
                }
            }
        }
        edges.sort_unstable();
    }
    Ok(PlantedGraphInstance {
        graph: Graph::from_sorted(n, edges),
        planted,
        params: PlantedParams { n, p, delta, k, seed },
        hypothesis: Hypothesis::Planted,
    })
}

/// Null instance: plain `ER(n, p)` with no planted set.
pub fn generate_null(n: usize, p: f64, seed: u64) -> Result<PlantedGraphInstance> {
    Ok(PlantedGraphInstance {
        graph: generate_er(n, p, seed)?,
        planted: Vec::new(),
        params: PlantedParams { n, p, delta: 0.0, k: 0, seed },
        hypothesis: Hypothesis::Null,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    Add,
    Drop,
    Rewire,
}

impl std::fmt::Display for PerturbMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Add => "add",
            Self::Drop => "drop",
            Self::Rewire => "rewire",
        })
    }
}

impl std::str::FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(Self::Add),
            "drop" => Ok(Self::Drop),
            "rewire" => Ok(Self::Rewire),
            other => Err(Error::Config(format!("unknown perturbation mode '{other}'"))),
        }
    }
}

/// Which edges the adversary removes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbTarget {
    /// Removals uniform over all edges.
    #[default]
    Uniform,
    /// Removals restricted to edges inside the given (sorted) set.
    Internal(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBudget {
    pub epsilon: f64,
    pub mode: PerturbMode,
    pub seed: u64,
    #[serde(default)]
    pub target: PerturbTarget,
}

impl PerturbationBudget {
    pub fn new(epsilon: f64, mode: PerturbMode, seed: u64) -> Self {
        Self { epsilon, mode, seed, target: PerturbTarget::Uniform }
    }

    /// `floor(epsilon * m)`.
    pub fn modified_edges(&self, m: usize) -> usize {
        (self.epsilon * m as f64).floor() as usize
    }
}

fn sample_non_edges(graph: &Graph, count: usize, rng: &mut StreamRng) -> Result<Vec<(usize, usize)>> {
    let available = graph.pair_count() - graph.m();
    if count > available {
        return Err(Error::Infeasible(format!("need {count} non-edges, only {available} exist")));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    // Rejection sampling is fast while non-edges are plentiful; otherwise
    // enumerate them.
    if available >= 4 * count && available * 2 >= graph.pair_count() / 8 {
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u = rng.random_range(0..graph.n);
            let v = rng.random_range(0..graph.n);
            if u == v {
                continue;
            }
            let pair = (u.min(v), u.max(v));
            if !graph.has_edge(pair.0, pair.1) && chosen.insert(pair) {
                out.push(pair);
            }
        }
        Ok(out)
    } else {
        let mut all = Vec::with_capacity(available);
        for u in 0..graph.n {
            for v in u + 1..graph.n {
                if !graph.has_edge(u, v) {
                    all.push((u, v));
                }
            }
        }
        Ok(index::sample(rng, all.len(), count).into_iter().map(|i| all[i]).collect())
    }
}

/// Applies an epsilon-fraction edge perturbation; exactly
/// `floor(epsilon |E|)` edges are removed, inserted, or both.
pub fn perturb(graph: &Graph, budget: &PerturbationBudget) -> Result<Graph> {
    if !(0.0..1.0).contains(&budget.epsilon) {
        return Err(domain(format!("epsilon={} must lie in [0,1)", budget.epsilon)));
    }
    let count = budget.modified_edges(graph.m());
    if budget.mode == PerturbMode::Rewire && graph.m() == 0 {
        return Err(domain("rewiring needs at least one edge"));
    }
    if count == 0 {
        return Ok(graph.clone());
    }
    let mut rng = stream(budget.seed, &[STREAM_PERTURB]);
    let removable: Vec<usize> = match &budget.target {
        PerturbTarget::Uniform => (0..graph.m()).collect(),
        PerturbTarget::Internal(set) => graph
            .edges
            .iter()
            .enumerate()
            .filter(|(_, (u, v))| set.binary_search(u).is_ok() && set.binary_search(v).is_ok())
            .map(|(i, _)| i)
            .collect(),
    };
    let removes = matches!(budget.mode, PerturbMode::Drop | PerturbMode::Rewire);
    let adds = matches!(budget.mode, PerturbMode::Add | PerturbMode::Rewire);
    let mut keep = vec![true; graph.m()];
    if removes {
        if count > removable.len() {
            return Err(Error::Infeasible(format!(
                "need {count} removable edges, only {} eligible",
                removable.len()
            )));
        }
        for i in index::sample(&mut rng, removable.len(), count) {
            keep[removable[i]] = false;
        }
    }
    let mut edges: Vec<(usize, usize)> =
        graph.edges.iter().zip(&keep).filter(|(_, &k)| k).map(|(&e, _)| e).collect();
    if adds {
        edges.extend(sample_non_edges(graph, count, &mut rng)?);
        edges.sort_unstable();
    }
    Ok(Graph::from_sorted(graph.n, edges))
}

/// Contents of a graph file: the graph and, for planted instances, `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphFile {
    pub graph: Graph,
    pub planted: Option<Vec<usize>>,
}

/// `n m` header, `m` sorted lines `u v`, optional trailer `S: v1 ... vk`.
pub fn format_graph(graph: &Graph, planted: Option<&[usize]>) -> String {
    let mut out = String::with_capacity(16 * (graph.m() + 1));
    writeln!(out, "{} {}", graph.n, graph.m()).unwrap();
    for &(u, v) in &graph.edges {
        writeln!(out, "{u} {v}").unwrap();
    }
    if let Some(set) = planted {
        out.push_str("S:");
        for v in set {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_graph<W: Write>(mut w: W, graph: &Graph, planted: Option<&[usize]>) -> Result<()> {
    w.write_all(format_graph(graph, planted).as_bytes())?;
    Ok(())
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse().map_err(|_| Error::Parse(format!("line {line}: expected integer, found '{tok}'")))
}

pub fn read_graph<R: BufRead>(r: R) -> Result<GraphFile> {
    let mut lines = r.lines().enumerate();
    let (n, m) = loop {
        let Some((no, line)) = lines.next() else {
            return Err(Error::Parse("missing header".into()));
        };
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Parse(format!("line {}: header must be 'n m'", no + 1)));
        };
        break (parse_usize(a, no + 1)?, parse_usize(b, no + 1)?);
    };
    let mut edges = Vec::with_capacity(m);
    let mut planted = None;
    for (no, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("S:") {
            let mut set = rest.split_whitespace().map(|t| parse_usize(t, no + 1)).collect::<Result<Vec<_>>>()?;
            set.sort_unstable();
            if set.iter().any(|&v| v >= n) {
                return Err(Error::Parse(format!("line {}: planted vertex out of range", no + 1)));
            }
            planted = Some(set);
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Parse(format!("line {}: expected 'u v'", no + 1)));
        };
        edges.push((parse_usize(a, no + 1)?, parse_usize(b, no + 1)?));
    }
    if edges.len() != m {
        return Err(Error::Parse(format!("header declares {m} edges, found {}", edges.len())));
    }
    let graph = Graph::from_edges(n, edges).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(GraphFile { graph, planted })
}
