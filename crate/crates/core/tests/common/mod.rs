//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use detect_lab::graph_sim::Graph;

/// Bernoulli chi-square as the two-outcome sum `sum (q - p)^2 / p`.
pub fn chi_square_definitional(p: f64, delta: f64) -> f64 {
    let q = p + delta;
    (q - p).powi(2) / p + ((1.0 - q) - (1.0 - p)).powi(2) / (1.0 - p)
}

fn ln_poisson_pmf(x: u64, lambda: f64) -> f64 {
    let ln_fact: f64 = (1..=x).map(|i| (i as f64).ln()).sum();
    x as f64 * lambda.ln() - lambda - ln_fact
}

/// `KL(Poi(mu + delta) || Poi(mu))` by summing the series over counts until
/// the remaining mass is negligible.
pub fn poisson_kl_series(mu: f64, delta: f64) -> f64 {
    let q = mu + delta;
    let upper = (q + 40.0 * q.sqrt() + 60.0) as u64;
    (0..=upper)
        .map(|x| {
            let lq = ln_poisson_pmf(x, q);
            let lp = ln_poisson_pmf(x, mu);
            lq.exp() * (lq - lp)
        })
        .sum()
}

pub fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// `E[(1 + chi2)^{C(|S cap S'|, 2)}] - 1` by enumerating every ordered pair
/// of supports.
pub fn mixture_chi_square_bruteforce(n: usize, k: usize, chi2: f64) -> f64 {
    let subsets = k_subsets(n, k);
    let mut total = 0.0;
    for a in &subsets {
        for b in &subsets {
            let r = a.iter().filter(|v| b.contains(v)).count();
            total += (1.0 + chi2).powi((r * r.saturating_sub(1) / 2) as i32);
        }
    }
    total / (subsets.len() * subsets.len()) as f64 - 1.0
}

/// Dense non-backtracking matrix on the directed edges `2i: u -> v`,
/// `2i + 1: v -> u` of the sorted edge list: `B[e][f] = 1` when `f` leaves
/// the head of `e` and does not return along `e`.
pub fn dense_nb_matrix(g: &Graph) -> Vec<Vec<f64>> {
    let mut dir = Vec::new();
    for &(u, v) in g.edges() {
        dir.push((u, v));
        dir.push((v, u));
    }
    let m2 = dir.len();
    let mut b = vec![vec![0.0; m2]; m2];
    for (e, &(a, c)) in dir.iter().enumerate() {
        for (f, &(x, y)) in dir.iter().enumerate() {
            if x == c && y != a {
                b[e][f] = 1.0;
            }
        }
    }
    b
}

pub fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// `max(0, max_s sum_{s..t} l)` for every `t`, optionally restricted to the
/// last `window` terms.
pub fn cusum_bruteforce(incs: &[f64], window: Option<usize>) -> Vec<f64> {
    (0..incs.len())
        .map(|t| {
            let first = window.map_or(0, |w| (t + 1).saturating_sub(w));
            let mut best: f64 = 0.0;
            let mut acc = 0.0;
            for s in (first..=t).rev() {
                acc += incs[s];
                best = best.max(acc);
            }
            best
        })
        .collect()
}

/// Circulant graph on `n` vertices joining each vertex to its `d/2` nearest
/// neighbours on each side.
pub fn circulant(n: usize, d: usize) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for s in 1..=d / 2 {
            let j = (i + s) % n;
            edges.push((i.min(j), i.max(j)));
        }
    }
    Graph::from_edges(n, edges).unwrap()
}

pub fn petersen() -> Graph {
    let mut edges = Vec::new();
    for i in 0..5 {
        edges.push((i, (i + 1) % 5));
        edges.push((i, i + 5));
        edges.push((5 + i, 5 + (i + 2) % 5));
    }
    Graph::from_edges(10, edges).unwrap()
}
