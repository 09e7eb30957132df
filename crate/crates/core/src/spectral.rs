//! Non-backtracking spectral test for a planted dense subgraph.
//!
//! The operator acts on the `2m` directed edges of a simple graph:
//! `B[(u->v), (v->w)] = 1` iff `w != u`. It is never materialised; a product
//! `Bx` is one pass accumulating the outgoing mass at every vertex and a
//! second pass subtracting the backtracking term, so each iteration is O(m).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::graph_sim::{generate_er, Graph};
use crate::rng::{derive_seed, stream};

/// Directed-edge numbering: undirected edge `i = (u, v)` with `u < v` yields
/// ids `2i` for `u -> v` and `2i + 1` for `v -> u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedEdgeIndex {
    tail: Vec<usize>,
    head: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

impl DirectedEdgeIndex {
    pub fn new(graph: &Graph) -> Self {
        let mut tail = Vec::with_capacity(2 * graph.m());
        let mut head = Vec::with_capacity(2 * graph.m());
        for &(u, v) in graph.edges() {
            tail.extend([u, v]);
            head.extend([v, u]);
        }
        Self { tail, head, edges: graph.edges().to_vec() }
    }

    pub fn count(&self) -> usize {
        self.tail.len()
    }

    pub fn tail(&self, e: usize) -> usize {
        self.tail[e]
    }

    pub fn head(&self, e: usize) -> usize {
        self.head[e]
    }

    pub fn reverse(&self, e: usize) -> usize {
        e ^ 1
    }

    /// Id of `u -> v`, if that edge exists.
    pub fn id(&self, u: usize, v: usize) -> Option<usize> {
        let key = (u.min(v), u.max(v));
        let i = self.edges.binary_search(&key).ok()?;
        Some(if u < v { 2 * i } else { 2 * i + 1 })
    }
}

/// Matrix-free non-backtracking operator.
#[derive(Debug, Clone)]
pub struct NbOperator {
    index: DirectedEdgeIndex,
    n: usize,
    degrees: Vec<usize>,
}

/// Builds the operator; fails on a graph without edges.
pub fn build_nb_operator(graph: &Graph) -> Result<NbOperator> {
    if graph.m() == 0 {
        return Err(domain("non-backtracking operator needs at least one edge"));
    }
    Ok(NbOperator { index: DirectedEdgeIndex::new(graph), n: graph.n(), degrees: graph.degrees() })
}

impl NbOperator {
    pub fn index(&self) -> &DirectedEdgeIndex {
        &self.index
    }

    pub fn dim(&self) -> usize {
        self.index.count()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// `y = Bx`, reusing `scratch` (length `n`) for the vertex pass.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64], scratch: &mut [f64]) {
        scratch.iter_mut().for_each(|s| *s = 0.0);
        for (e, &xe) in x.iter().enumerate() {
            scratch[self.index.tail[e]] += xe;
        }
        for (e, ye) in y.iter_mut().enumerate() {
            *ye = scratch[self.index.head[e]] - x[e ^ 1];
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        let mut scratch = vec![0.0; self.n];
        self.apply_into(x, &mut y, &mut scratch);
        y
    }

    /// Sum of incoming edge mass at each vertex.
    pub fn vertex_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for (e, &xe) in x.iter().enumerate() {
            s[self.index.head[e]] += xe;
        }
        s
    }
}

/// Start vector for the power iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartVector {
    /// Seeded uniform random signs.
    #[default]
    RandomSigns,
    /// Mass `deg(head(e))` on every directed edge.
    Degree,
    /// Caller-supplied directed-edge vector (warm start).
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub prune: bool,
    /// Iterations run without pruning before the top-k restriction starts.
    pub warmup: usize,
    /// Divide vertex scores by `sqrt(max(deg, 1))`.
    pub degree_normalize: bool,
    pub start: StartVector,
    pub seed: u64,
}

impl PowerConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iters: 100,
            tol: 1e-8,
            prune: false,
            warmup: 5,
            degree_normalize: false,
            start: StartVector::RandomSigns,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    /// Unit-norm vertex scores.
    pub vertex_scores: Vec<f64>,
    /// Rayleigh quotient `<x, Bx> / <x, x>` of the final iterate.
    pub leading_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(x: &mut [f64]) -> f64 {
    let s = norm(x);
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v /= s);
    }
    s
}

/// Indices of the `k` largest-magnitude entries, ties to the lower index,
/// in decreasing order of magnitude.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].abs().total_cmp(&scores[*a].abs()).then(a.cmp(b));
    let k = k.min(scores.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

fn readout(op: &NbOperator, x: &[f64], degree_normalize: bool) -> Vec<f64> {
    let mut s = op.vertex_scores(x);
    if degree_normalize {
        for (v, sv) in s.iter_mut().enumerate() {
            *sv /= (op.degrees[v].max(1) as f64).sqrt();
        }
    }
    normalize(&mut s);
    s
}

/// Power iteration `x <- Bx / ||Bx||`, optionally restricting the mass after
/// each step to directed edges whose head lies in the current top-k vertex
/// set.
pub fn nb_power_iteration(op: &NbOperator, cfg: &PowerConfig) -> Result<PowerResult> {
    if cfg.k > op.n {
        return Err(domain(format!("k={} exceeds n={}", cfg.k, op.n)));
    }
    if cfg.max_iters == 0 || !(cfg.tol > 0.0) {
        return Err(domain("max_iters must be >= 1 and tol > 0"));
    }
    let dim = op.dim();
    let mut x = match &cfg.start {
        StartVector::RandomSigns => {
            let mut rng = stream(cfg.seed, &[0x5157]);
            (0..dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
        }
        StartVector::Degree => (0..dim).map(|e| op.degrees[op.index.head[e]] as f64).collect(),
        StartVector::Custom(v) => {
            if v.len() != dim {
                return Err(domain(format!("start vector has length {}, expected {dim}", v.len())));
            }
            v.clone()
        }
    };
    if normalize(&mut x) == 0.0 {
        return Err(domain("start vector is zero"));
    }
    let mut y = vec![0.0; dim];
    let mut scratch = vec![0.0; op.n];
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=cfg.max_iters {
        iterations = it;
        op.apply_into(&x, &mut y, &mut scratch);
        if normalize(&mut y) == 0.0 {
            // All mass died (forest-like graph): nothing left to iterate.
            x.iter_mut().for_each(|v| *v = 0.0);
            converged = true;
            break;
        }
        if cfg.prune && it > cfg.warmup {
            let scores = readout(op, &y, cfg.degree_normalize);
            let mut keep = vec![false; op.n];
            for v in top_k_indices(&scores, cfg.k) {
                keep[v] = true;
            }
            for (e, ye) in y.iter_mut().enumerate() {
                if !keep[op.index.head[e]] {
                    *ye = 0.0;
                }
            }
            if normalize(&mut y) == 0.0 {
                x.iter_mut().for_each(|v| *v = 0.0);
                converged = true;
                break;
            }
        }
        let diff = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        std::mem::swap(&mut x, &mut y);
        if diff <= cfg.tol {
            converged = true;
            break;
        }
    }
    op.apply_into(&x, &mut y, &mut scratch);
    let leading_value = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
    Ok(PowerResult { vertex_scores: readout(op, &x, cfg.degree_normalize), leading_value, iterations, converged })
}

/// `max { ||P_S u||^2 : |S| = k }`: the energy of the `k` largest-magnitude
/// scores.
pub fn localized_energy_statistic(scores: &[f64], k: usize) -> f64 {
    top_k_indices(scores, k).iter().map(|&v| scores[v] * scores[v]).sum()
}

/// Bethe–Hessian `H(r) = (r^2 - 1) I - r A + D`, applied matrix-free.
#[derive(Debug, Clone)]
pub struct BetheHessian<'a> {
    graph: &'a Graph,
    r: f64,
}

impl<'a> BetheHessian<'a> {
    pub fn new(graph: &'a Graph, r: f64) -> Self {
        Self { graph, r }
    }

    /// `r = sqrt(sum d(d-1) / sum d)`, the average branching; 1 without edges.
    pub fn default_r(graph: &Graph) -> f64 {
        let (num, den) = graph.degrees().iter().fold((0.0, 0.0), |(a, b), &d| {
            let d = d as f64;
            (a + d * (d - 1.0), b + d)
        });
        if den == 0.0 || num <= 0.0 {
            1.0
        } else {
            (num / den).sqrt()
        }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let shift = self.r * self.r - 1.0;
        for (v, yv) in y.iter_mut().enumerate() {
            let nb = self.graph.neighbors(v);
            let adj: f64 = nb.iter().map(|&w| x[w]).sum();
            *yv = (shift + nb.len() as f64) * x[v] - self.r * adj;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetheHessianResult {
    pub r: f64,
    pub eigenvalue: f64,
    /// Unit-norm magnitudes of the eigenvector entries.
    pub vertex_scores: Vec<f64>,
    pub converged: bool,
    pub matvecs: usize,
}

/// Smallest eigenpair of a symmetric operator by restarted Lanczos with full
/// reorthogonalisation. Returns `(eigenvalue, eigenvector, converged, matvecs)`.
pub fn lanczos_smallest<F>(n: usize, apply: F, seed: u64, krylov: usize, restarts: usize, tol: f64) -> (f64, Vec<f64>, bool, usize)
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut rng = stream(seed, &[0x1A2C]);
    let mut v0: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    normalize(&mut v0);
    let m_max = krylov.min(n).max(1);
    let mut w = vec![0.0; n];
    let mut matvecs = 0;
    let mut best = (f64::NAN, v0.clone());
    for _ in 0..=restarts {
        let mut basis: Vec<Vec<f64>> = vec![v0.clone()];
        let mut alpha = Vec::with_capacity(m_max);
        let mut beta: Vec<f64> = Vec::with_capacity(m_max);
        for j in 0..m_max {
            apply(&basis[j], &mut w);
            matvecs += 1;
            let a: f64 = w.iter().zip(&basis[j]).map(|(p, q)| p * q).sum();
            alpha.push(a);
            // Full reorthogonalisation, twice for stability.
            for _ in 0..2 {
                for b in &basis {
                    let c: f64 = w.iter().zip(b).map(|(p, q)| p * q).sum();
                    w.iter_mut().zip(b).for_each(|(p, q)| *p -= c * q);
                }
            }
            let bnorm = norm(&w);
            if j + 1 == m_max || bnorm < 1e-10 {
                break;
            }
            beta.push(bnorm);
            basis.push(w.iter().map(|p| p / bnorm).collect());
        }
        let m = alpha.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imin, &theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty tridiagonal");
        let mut y = vec![0.0; n];
        for (i, b) in basis.iter().enumerate().take(m) {
            let c = eig.eigenvectors[(i, imin)];
            y.iter_mut().zip(b).for_each(|(p, q)| *p += c * q);
        }
        normalize(&mut y);
        apply(&y, &mut w);
        matvecs += 1;
        let resid = w.iter().zip(&y).map(|(p, q)| (p - theta * q).powi(2)).sum::<f64>().sqrt();
        best = (theta, y.clone());
        if resid <= tol * theta.abs().max(1.0) {
            return (theta, y, true, matvecs);
        }
        v0 = y;
    }
    (best.0, best.1, false, matvecs)
}

/// Most negative eigenvalue of the Bethe–Hessian and the magnitudes of its
/// eigenvector, used as an alternative score source.
pub fn bethe_hessian_statistic(graph: &Graph, r: Option<f64>, seed: u64) -> Result<BetheHessianResult> {
    if graph.n() == 0 {
        return Err(domain("empty graph"));
    }
    let r = r.unwrap_or_else(|| BetheHessian::default_r(graph));
    if !(r.is_finite() && r > 0.0) {
        return Err(domain(format!("Bethe-Hessian parameter r={r} must be positive")));
    }
    let h = BetheHessian::new(graph, r);
    let (eigenvalue, vec, converged, matvecs) =
        lanczos_smallest(graph.n(), |x, y| h.apply_into(x, y), seed, 80, 40, 1e-8);
    let mut vertex_scores: Vec<f64> = vec.iter().map(|v| v.abs()).collect();
    normalize(&mut vertex_scores);
    Ok(BetheHessianResult { r, eigenvalue, vertex_scores, converged, matvecs })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMethod {
    #[default]
    Nb,
    Bethe,
}

impl std::str::FromStr for SpectralMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nb" => Ok(Self::Nb),
            "bethe" => Ok(Self::Bethe),
            other => Err(Error::Config(format!("unknown spectral method '{other}'"))),
        }
    }
}

/// Which number summarises a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// Localized energy without pruning, leading value with pruning. The
    /// pruned iterate lives on the candidate set, so its top-k energy is
    /// identically one.
    #[default]
    Auto,
    /// Top-k energy of the vertex scores.
    Energy,
    /// Rayleigh quotient of the final (possibly pruned) iterate.
    LeadingValue,
}

/// Detector settings shared by calibration and testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticDetectorConfig {
    pub method: SpectralMethod,
    pub prune: bool,
    pub degree_normalize: bool,
    pub max_iters: usize,
    pub tol: f64,
    pub warmup: usize,
    pub bethe_r: Option<f64>,
    pub statistic: StatisticKind,
}

impl StaticDetectorConfig {
    /// Pruned non-backtracking iteration scored by its leading value.
    pub fn pruned() -> Self {
        Self { prune: true, ..Self::default() }
    }

    pub fn resolved_statistic(&self) -> StatisticKind {
        match self.statistic {
            StatisticKind::Auto if self.prune && self.method == SpectralMethod::Nb => StatisticKind::LeadingValue,
            StatisticKind::Auto => StatisticKind::Energy,
            other => other,
        }
    }
}

impl Default for StaticDetectorConfig {
    fn default() -> Self {
        Self {
            method: SpectralMethod::Nb,
            prune: false,
            degree_normalize: false,
            max_iters: 100,
            tol: 1e-8,
            warmup: 5,
            bethe_r: None,
            statistic: StatisticKind::Auto,
        }
    }
}

/// Statistic and bookkeeping for one graph, before thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticScore {
    pub statistic: f64,
    pub candidate_set: Vec<usize>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Leading eigenvalue estimate (NB) or most negative eigenvalue (Bethe).
    pub spectral_value: f64,
}

/// Runs the configured score pipeline on `graph`. A graph without edges
/// has flat scores.
pub fn static_score(graph: &Graph, k: usize, cfg: &StaticDetectorConfig, seed: u64) -> Result<StaticScore> {
    if k == 0 || k > graph.n() {
        return Err(domain(format!("k={k} must satisfy 1 <= k <= n={}", graph.n())));
    }
    let (scores, iterations_used, converged, spectral_value) = match cfg.method {
        SpectralMethod::Nb => {
            if graph.m() == 0 {
                let flat = 1.0 / (graph.n() as f64).sqrt();
                (vec![flat; graph.n()], 0, true, 0.0)
            } else {
                let op = build_nb_operator(graph)?;
                let pc = PowerConfig {
                    k,
                    max_iters: cfg.max_iters,
                    tol: cfg.tol,
                    prune: cfg.prune,
                    warmup: cfg.warmup,
                    degree_normalize: cfg.degree_normalize,
                    start: StartVector::RandomSigns,
                    seed,
                };
                let res = nb_power_iteration(&op, &pc)?;
                (res.vertex_scores, res.iterations, res.converged, res.leading_value)
            }
        }
        SpectralMethod::Bethe => {
            let res = bethe_hessian_statistic(graph, cfg.bethe_r, seed)?;
            (res.vertex_scores, res.matvecs, res.converged, res.eigenvalue)
        }
    };
    let mut candidate_set = top_k_indices(&scores, k);
    let energy: f64 = candidate_set.iter().map(|&v| scores[v] * scores[v]).sum();
    let statistic = match cfg.resolved_statistic() {
        StatisticKind::LeadingValue => match cfg.method {
            SpectralMethod::Nb => spectral_value,
            // More negative means more structure.
            SpectralMethod::Bethe => -spectral_value,
        },
        _ => energy,
    };
    candidate_set.sort_unstable();
    Ok(StaticScore { statistic, candidate_set, iterations_used, converged, spectral_value })
}

/// Outcome of the static test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralVerdict {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
    pub candidate_set: Vec<usize>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Empirical null quantile of the statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullCalibration {
    pub threshold: f64,
    pub alpha: f64,
    pub replicates: usize,
    /// Fewer than `ceil(10 / alpha)` replicates were used.
    pub under_replicated: bool,
    pub null_statistics: Vec<f64>,
}

/// Order statistic `ceil((1 - alpha) R)` (1-based) of `values`.
pub fn upper_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let r = v.len();
    let rank = ((1.0 - alpha) * r as f64 - 1e-9).ceil().clamp(1.0, r as f64) as usize;
    v[rank - 1]
}

/// Seed of the `i`-th calibration replicate.
pub fn null_replicate_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, &[0xCA1, i as u64])
}

/// Threshold from `replicates` fresh `ER(n, p)` graphs.
pub fn calibrate_null(
    n: usize,
    p: f64,
    k: usize,
    alpha: f64,
    replicates: usize,
    seed: u64,
    cfg: &StaticDetectorConfig,
) -> Result<NullCalibration> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(domain(format!("alpha={alpha} must lie in (0,1)")));
    }
    if replicates == 0 {
        return Err(domain("calibration needs at least one replicate"));
    }
    let null_statistics = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let s = null_replicate_seed(seed, i);
            let g = generate_er(n, p, s)?;
            Ok(static_score(&g, k, cfg, s)?.statistic)
        })
        .collect::<Result<Vec<f64>>>()?;
    let threshold = upper_quantile(&null_statistics, alpha);
    Ok(NullCalibration {
        threshold,
        alpha,
        replicates,
        under_replicated: (replicates as f64) < (10.0 / alpha).ceil(),
        null_statistics,
    })
}

/// Full static test against a supplied threshold.
pub fn detect_static(graph: &Graph, k: usize, threshold: f64, cfg: &StaticDetectorConfig, seed: u64) -> Result<SpectralVerdict> {
    let s = static_score(graph, k, cfg, seed)?;
    Ok(SpectralVerdict {
        reject: s.statistic > threshold,
        statistic: s.statistic,
        threshold,
        candidate_set: s.candidate_set,
        iterations_used: s.iterations_used,
        converged: s.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn triangle() -> Graph {
        Graph::from_edges(3, vec![(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn edge_index_reverse_and_heads() {
        let g = triangle();
        let idx = DirectedEdgeIndex::new(&g);
        assert_eq!(idx.count(), 6);
        for e in 0..idx.count() {
            assert_eq!(idx.reverse(idx.reverse(e)), e);
            assert_eq!(idx.head(e), idx.tail(idx.reverse(e)));
            assert_eq!(idx.id(idx.tail(e), idx.head(e)), Some(e));
        }
        assert_eq!(idx.id(0, 0), None);
    }

    #[test]
    fn triangle_preserves_ones() {
        let op = build_nb_operator(&triangle()).unwrap();
        assert_eq!(op.apply(&[1.0; 6]), vec![1.0; 6]);
    }

    #[test]
    fn path_leaves_kill_mass() {
        let g = Graph::from_edges(3, vec![(0, 1), (1, 2)]).unwrap();
        let op = build_nb_operator(&g).unwrap();
        let y = op.apply(&[1.0; 4]);
        for (e, &v) in y.iter().enumerate() {
            assert_eq!(v, g.degree(op.index().head(e)) as f64 - 1.0);
        }
    }

    #[test]
    fn empty_graph_has_no_operator() {
        assert!(build_nb_operator(&Graph::empty(4)).is_err());
    }

    #[test]
    fn complete_graph_leading_value() {
        let edges = (0..6).flat_map(|u| (u + 1..6).map(move |v| (u, v))).collect();
        let g = Graph::from_edges(6, edges).unwrap();
        let op = build_nb_operator(&g).unwrap();
        let mut cfg = PowerConfig::new(3);
        cfg.max_iters = 2000;
        cfg.tol = 1e-12;
        let res = nb_power_iteration(&op, &cfg).unwrap();
        assert_relative_eq!(res.leading_value, 4.0, epsilon = 1e-6);
    }

    #[test]
    fn energy_statistic_examples() {
        let flat = vec![0.5; 4];
        assert_relative_eq!(localized_energy_statistic(&flat, 3), 0.75, epsilon = 1e-15);
        let mut one_hot = vec![0.0; 5];
        one_hot[3] = 1.0;
        assert_eq!(localized_energy_statistic(&one_hot, 2), 1.0);
        assert_relative_eq!(localized_energy_statistic(&[0.8, 0.6, 0.0], 1), 0.64, epsilon = 1e-15);
        assert_eq!(top_k_indices(&[0.5, -0.5, 0.5], 2), vec![0, 1]);
    }

    #[test]
    fn quantile_definition() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(upper_quantile(&v, 0.5), 5.0);
        assert_eq!(upper_quantile(&v, 0.05), 10.0);
        assert_eq!(upper_quantile(&v, 0.1), 9.0);
    }

    #[test]
    fn bethe_hessian_on_empty_graph() {
        let g = Graph::empty(5);
        let res = bethe_hessian_statistic(&g, Some(1.7), 3).unwrap();
        assert_relative_eq!(res.eigenvalue, 1.7 * 1.7 - 1.0, epsilon = 1e-10);
    }

    #[test]
    fn bethe_hessian_on_regular_graph() {
        // Petersen graph: 3-regular with adjacency spectrum {3, 1, -2}.
        let edges = vec![
            (0, 1), (1, 2), (2, 3), (3, 4), (0, 4),
            (5, 7), (7, 9), (6, 9), (6, 8), (5, 8),
            (0, 5), (1, 6), (2, 7), (3, 8), (4, 9),
        ];
        let g = Graph::from_edges(10, edges).unwrap();
        let r = BetheHessian::default_r(&g);
        assert_relative_eq!(r, 2f64.sqrt(), epsilon = 1e-12);
        let res = bethe_hessian_statistic(&g, None, 1).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.eigenvalue, (r * r - 1.0) - r * 3.0 + 3.0, epsilon = 1e-8);
    }
}
