//! Event networks on ordered vertex pairs: independent Poisson processes or
//! exponential-kernel Hawkes processes, with an optional change time after
//! which the pairs internal to a planted set are elevated.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::graph_sim::sample_support;
use crate::info_metrics::{poisson_kl_rate, PoissonShift};
use crate::rng::{derive_seed, stream, StreamRng};

const STREAM_SUPPORT: u64 = 11;
const STREAM_PAIR: u64 = 12;
const STREAM_THIN: u64 = 13;
const STREAM_KL: u64 = 14;

/// Exponential excitation kernel `g(t) = a * beta * exp(-beta t)`, so that
/// `||g||_1 = a` is the branching ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HawkesKernel {
    pub a: f64,
    pub beta: f64,
}

impl HawkesKernel {
    pub fn new(a: f64, beta: f64) -> Result<Self> {
        if !(a >= 0.0) {
            return Err(domain(format!("branching ratio a={a} must be non-negative")));
        }
        if a >= 1.0 {
            return Err(Error::Stability(format!("branching ratio a={a} must be below 1")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(domain(format!("decay rate beta={beta} must be positive")));
        }
        Ok(Self { a, beta })
    }

    /// Checks that the kernel inflated by `1 + delta_h` is still stable.
    pub fn check_inflation(&self, delta_h: f64) -> Result<()> {
        if !(delta_h >= 0.0) {
            return Err(domain(format!("kernel lift delta_h={delta_h} must be non-negative")));
        }
        if (1.0 + delta_h) * self.a >= 1.0 {
            return Err(Error::Stability(format!(
                "inflated branching ratio (1+{delta_h})*{} = {} must be below 1",
                self.a,
                (1.0 + delta_h) * self.a
            )));
        }
        Ok(())
    }

    pub fn stationary_rate(&self, mu: f64, multiplier: f64) -> f64 {
        mu / (1.0 - multiplier * self.a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Poisson,
    Hawkes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamParams {
    pub kind: ProcessKind,
    pub mu: f64,
    /// Poisson rate lift (zero for Hawkes streams).
    pub delta: f64,
    pub kernel: Option<HawkesKernel>,
    /// Hawkes kernel lift (zero for Poisson streams).
    pub delta_h: f64,
    pub k: usize,
    pub seed: u64,
}

/// Sorted event times per ordered pair; pairs without events are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub n: usize,
    pub horizon: f64,
    pub change_time: Option<f64>,
    pub planted: Vec<usize>,
    pub events: BTreeMap<(usize, usize), Vec<f64>>,
    pub params: StreamParams,
}

impl EventStream {
    pub fn pair_events(&self, i: usize, j: usize) -> &[f64] {
        self.events.get(&(i, j)).map_or(&[], Vec::as_slice)
    }

    pub fn total_events(&self) -> usize {
        self.events.values().map(Vec::len).sum()
    }

    /// The `k(k-1)` ordered pairs inside the planted set.
    pub fn internal_pairs(&self) -> Vec<(usize, usize)> {
        ordered_pairs(&self.planted)
    }

    pub fn validate(&self) -> Result<()> {
        for (&(i, j), times) in &self.events {
            if i == j || i >= self.n || j >= self.n {
                return Err(domain(format!("invalid pair ({i},{j})")));
            }
            if times.windows(2).any(|w| w[0] > w[1]) {
                return Err(domain(format!("events of ({i},{j}) are not sorted")));
            }
            if times.iter().any(|&t| !(0.0..=self.horizon).contains(&t)) {
                return Err(domain(format!("event of ({i},{j}) outside [0, T]")));
            }
        }
        Ok(())
    }

    /// Independent thinning: each event survives with probability `1 - epsilon`.
    pub fn thinned(&self, epsilon: f64, seed: u64) -> Result<EventStream> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(domain(format!("epsilon={epsilon} must lie in [0,1)")));
        }
        let mut events = BTreeMap::new();
        for (&(i, j), times) in &self.events {
            let mut rng = stream(seed, &[STREAM_THIN, i as u64, j as u64]);
            let kept: Vec<f64> = times.iter().copied().filter(|_| rng.random::<f64>() >= epsilon).collect();
            if !kept.is_empty() {
                events.insert((i, j), kept);
            }
        }
        Ok(EventStream { events, ..self.clone() })
    }
}

/// All ordered pairs `(i, j)`, `i != j`, of a vertex set.
pub fn ordered_pairs(set: &[usize]) -> Vec<(usize, usize)> {
    set.iter()
        .flat_map(|&i| set.iter().filter(move |&&j| j != i).map(move |&j| (i, j)))
        .collect()
}

fn check_window(tau: f64, horizon: f64) -> Result<()> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(domain(format!("horizon T={horizon} must be non-negative")));
    }
    if !(0.0..=horizon).contains(&tau) {
        return Err(domain(format!("change time tau={tau} must lie in [0, T={horizon}]")));
    }
    Ok(())
}

/// Homogeneous Poisson arrivals on `[start, end]` by exponential gaps.
pub fn poisson_arrivals(rate: f64, start: f64, end: f64, rng: &mut StreamRng, out: &mut Vec<f64>) {
    if rate <= 0.0 || end <= start {
        return;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = start;
    loop {
        t += gap.sample(rng);
        if t > end {
            break;
        }
        out.push(t);
    }
}

fn pair_rng(seed: u64, i: usize, j: usize) -> StreamRng {
    stream(seed, &[STREAM_PAIR, i as u64, j as u64])
}

/// All pairs at rate `mu` on `[0, T]`; pairs inside `S` gain `delta` on
/// `[tau, T]`.
pub fn simulate_poisson_network(n: usize, mu: f64, delta: f64, k: usize, tau: f64, horizon: f64, seed: u64) -> Result<EventStream> {
    PoissonShift::new(mu, delta)?;
    check_window(tau, horizon)?;
    if k > n {
        return Err(domain(format!("k={k} exceeds n={n}")));
    }
    let planted = sample_support(n, k, &mut stream(seed, &[STREAM_SUPPORT]));
    let mut events = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut rng = pair_rng(seed, i, j);
            let mut times = Vec::new();
            poisson_arrivals(mu, 0.0, horizon, &mut rng, &mut times);
            if delta > 0.0 && planted.binary_search(&i).is_ok() && planted.binary_search(&j).is_ok() {
                poisson_arrivals(delta, tau, horizon, &mut rng, &mut times);
                times.sort_by(f64::total_cmp);
            }
            if !times.is_empty() {
                events.insert((i, j), times);
            }
        }
    }
    Ok(EventStream {
        n,
        horizon,
        change_time: if k >= 2 && delta > 0.0 { Some(tau) } else { None },
        planted,
        events,
        params: StreamParams { kind: ProcessKind::Poisson, mu, delta, kernel: None, delta_h: 0.0, k, seed },
    })
}

/// One univariate Hawkes path by Ogata thinning. From `boost_from` onwards
/// the kernel is multiplied by `1 + delta_h`.
pub fn simulate_hawkes_pair(
    mu: f64,
    kernel: HawkesKernel,
    delta_h: f64,
    boost_from: Option<f64>,
    horizon: f64,
    rng: &mut StreamRng,
) -> Vec<f64> {
    let boost = 1.0 + delta_h;
    let multiplier = |t: f64| match boost_from {
        Some(tau) if t >= tau => boost,
        _ => 1.0,
    };
    let mut out = Vec::new();
    let mut t = 0.0;
    // excitation = sum_i a beta exp(-beta (t - t_i)), non-increasing between events
    let mut excitation = 0.0;
    loop {
        let bound_mult = match boost_from {
            Some(tau) if t < tau => boost.max(1.0),
            _ => multiplier(t),
        };
        let bound = mu + bound_mult * excitation;
        let w = Exp::new(bound).expect("positive bound").sample(rng);
        let candidate = t + w;
        if candidate > horizon {
            break;
        }
        excitation *= (-kernel.beta * w).exp();
        let intensity = mu + multiplier(candidate) * excitation;
        let u: f64 = rng.random();
        if u * bound <= intensity {
            out.push(candidate);
            excitation += kernel.a * kernel.beta;
        }
        t = candidate;
    }
    out
}

/// Every ordered pair an independent Hawkes process with baseline `mu`;
/// pairs inside `S` switch to kernel `(1 + delta_h) g` at `tau`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_hawkes_network(
    n: usize,
    mu: f64,
    kernel: HawkesKernel,
    delta_h: f64,
    k: usize,
    tau: f64,
    horizon: f64,
    seed: u64,
) -> Result<EventStream> {
    if !(mu > 0.0) {
        return Err(domain(format!("baseline rate mu={mu} must be positive")));
    }
    let kernel = HawkesKernel::new(kernel.a, kernel.beta)?;
    kernel.check_inflation(delta_h)?;
    check_window(tau, horizon)?;
    if k > n {
        return Err(domain(format!("k={k} exceeds n={n}")));
    }
    let planted = sample_support(n, k, &mut stream(seed, &[STREAM_SUPPORT]));
    let mut events = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let internal = planted.binary_search(&i).is_ok() && planted.binary_search(&j).is_ok();
            let boost_from = (internal && delta_h > 0.0).then_some(tau);
            let times = simulate_hawkes_pair(mu, kernel, delta_h, boost_from, horizon, &mut pair_rng(seed, i, j));
            if !times.is_empty() {
                events.insert((i, j), times);
            }
        }
    }
    Ok(EventStream {
        n,
        horizon,
        change_time: if k >= 2 && delta_h > 0.0 { Some(tau) } else { None },
        planted,
        events,
        params: StreamParams { kind: ProcessKind::Hawkes, mu, delta: 0.0, kernel: Some(kernel), delta_h, k, seed },
    })
}

/// Left-limit intensities `lambda(t_i-)` at each event by the exponential
/// recursion, for a kernel scaled by `multiplier`.
pub fn hawkes_intensity_at_events(events: &[f64], mu: f64, kernel: HawkesKernel, multiplier: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(events.len());
    let mut excitation = 0.0;
    let mut last = 0.0;
    for &t in events {
        excitation *= (-kernel.beta * (t - last)).exp();
        out.push(mu + multiplier * excitation);
        excitation += kernel.a * kernel.beta;
        last = t;
    }
    out
}

/// Log-likelihood of a path on `[0, horizon]` under baseline `mu` and kernel
/// `multiplier * g`.
pub fn hawkes_log_likelihood(events: &[f64], mu: f64, kernel: HawkesKernel, multiplier: f64, horizon: f64) -> f64 {
    let log_sum: f64 = hawkes_intensity_at_events(events, mu, kernel, multiplier).iter().map(|l| l.ln()).sum();
    let compensator = mu * horizon
        + multiplier * kernel.a * events.iter().map(|&t| -(-kernel.beta * (horizon - t)).exp_m1()).sum::<f64>();
    log_sum - compensator
}

/// Model whose post-change KL rate is wanted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KlModel {
    /// `k(k-1)` Poisson pairs lifted from `mu` to `mu + delta`.
    Poisson { mu: f64, delta: f64, k: usize },
    /// `pairs` Hawkes pairs whose kernel is inflated by `1 + delta_h`.
    Hawkes { mu: f64, kernel: HawkesKernel, delta_h: f64, pairs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    /// Total KL rate over the affected pairs.
    pub rate: f64,
    /// Rate per affected pair.
    pub per_pair: f64,
    /// 95% normal half-width; zero for closed forms.
    pub half_width: f64,
    pub replicates: usize,
}

/// Aggregated per-time KL information. Closed form for Poisson; for Hawkes,
/// the mean of `(1/T) log(L1/L0)` over simulated post-change paths.
pub fn estimate_kl_rate(model: KlModel, horizon: f64, replicates: usize, seed: u64) -> Result<KlEstimate> {
    match model {
        KlModel::Poisson { mu, delta, k } => {
            let per_pair = poisson_kl_rate(PoissonShift::new(mu, delta)?);
            let pairs = (k * k.saturating_sub(1)) as f64;
            Ok(KlEstimate { rate: pairs * per_pair, per_pair, half_width: 0.0, replicates: 0 })
        }
        KlModel::Hawkes { mu, kernel, delta_h, pairs } => {
            if !(mu > 0.0) {
                return Err(domain(format!("baseline rate mu={mu} must be positive")));
            }
            let kernel = HawkesKernel::new(kernel.a, kernel.beta)?;
            kernel.check_inflation(delta_h)?;
            if !(horizon > 0.0) || replicates < 2 {
                return Err(domain("Hawkes KL estimate needs a positive horizon and >= 2 replicates"));
            }
            let boost = 1.0 + delta_h;
            let samples: Vec<f64> = (0..replicates)
                .map(|r| {
                    let mut rng = stream(seed, &[STREAM_KL, r as u64]);
                    let path = simulate_hawkes_pair(mu, kernel, delta_h, Some(0.0), horizon, &mut rng);
                    (hawkes_log_likelihood(&path, mu, kernel, boost, horizon)
                        - hawkes_log_likelihood(&path, mu, kernel, 1.0, horizon))
                        / horizon
                })
                .collect();
            let nr = replicates as f64;
            let mean = samples.iter().sum::<f64>() / nr;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (nr - 1.0);
            let p = pairs as f64;
            Ok(KlEstimate {
                rate: p * mean,
                per_pair: mean,
                half_width: p * 1.96 * (var / nr).sqrt(),
                replicates,
            })
        }
    }
}

/// Sidecar metadata written next to an event CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetadata {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub tau: Option<f64>,
    #[serde(rename = "S")]
    pub planted: Vec<usize>,
    pub params: StreamParams,
}

impl EventStream {
    pub fn metadata(&self) -> EventMetadata {
        EventMetadata {
            n: self.n,
            horizon: self.horizon,
            tau: self.change_time,
            planted: self.planted.clone(),
            params: self.params.clone(),
        }
    }

    /// All events as `(src, dst, t)`, sorted by time then pair.
    pub fn flat_events(&self) -> Vec<(usize, usize, f64)> {
        let mut rows: Vec<(usize, usize, f64)> = self
            .events
            .iter()
            .flat_map(|(&(i, j), ts)| ts.iter().map(move |&t| (i, j, t)))
            .collect();
        rows.sort_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        rows
    }

    pub fn from_parts(meta: EventMetadata, rows: &[(usize, usize, f64)]) -> Result<Self> {
        let mut events: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for &(i, j, t) in rows {
            events.entry((i, j)).or_default().push(t);
        }
        for ts in events.values_mut() {
            ts.sort_by(f64::total_cmp);
        }
        let s = EventStream {
            n: meta.n,
            horizon: meta.horizon,
            change_time: meta.tau,
            planted: meta.planted,
            events,
            params: meta.params,
        };
        s.validate().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(s)
    }
}

/// CSV with header `src,dst,t`, rows sorted by `t`.
pub fn write_events_csv<W: Write>(w: W, stream: &EventStream) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["src", "dst", "t"])?;
    for (i, j, t) in stream.flat_events() {
        wr.write_record([i.to_string(), j.to_string(), t.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_events_csv<R: Read>(r: R) -> Result<Vec<(usize, usize, f64)>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["src", "dst", "t"] {
        return Err(Error::Parse(format!("expected header src,dst,t, found {:?}", headers)));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse_err = |f: &str| Error::Parse(format!("bad field '{f}' in event row"));
        let i: usize = rec[0].parse().map_err(|_| parse_err(&rec[0]))?;
        let j: usize = rec[1].parse().map_err(|_| parse_err(&rec[1]))?;
        let t: f64 = rec[2].parse().map_err(|_| parse_err(&rec[2]))?;
        rows.push((i, j, t));
    }
    Ok(rows)
}

/// Seed for the `i`-th replicate of a temporal experiment.
pub fn replicate_seed(seed: u64, tag: u64, i: usize) -> u64 {
    derive_seed(seed, &[tag, i as u64])
}
