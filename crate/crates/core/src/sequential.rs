//! Likelihood-ratio CUSUM over binned edge streams.
//!
//! Events are counted in half-open bins of width `h`. Every tracked ordered
//! pair contributes a per-bin log-likelihood ratio between the elevated and
//! the baseline model. A scan combines the pairs into one statistic, and the
//! first bin where it reaches the threshold `b` raises the alarm.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::info_metrics::{poisson_kl_rate, PoissonShift};
use crate::rng::{derive_seed, stream};
use crate::temporal_sim::{ordered_pairs, poisson_arrivals, simulate_hawkes_pair, simulate_poisson_network, EventStream, HawkesKernel};

const STREAM_NULL: u64 = 21;
const STREAM_DELAY: u64 = 22;
const STREAM_FRESH: u64 = 23;

/// Event counts per ordered pair per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCounts {
    pub h: f64,
    pub bins: usize,
    /// Every ordered pair of `0..n`, in lexicographic order.
    pub pairs: Vec<(usize, usize)>,
    /// `counts[p][i]` is the number of events of `pairs[p]` in bin `i`.
    pub counts: Vec<Vec<u32>>,
}

impl BinnedCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().map(|&c| c as u64).sum()
    }

    pub fn pair_index(&self, i: usize, j: usize) -> Option<usize> {
        self.pairs.binary_search(&(i, j)).ok()
    }
}

/// Number of bins covering `[0, T]`.
pub fn bin_count(horizon: f64, h: f64) -> usize {
    (horizon / h).ceil() as usize
}

/// Bin index of time `t`; an event at exactly `T` goes to the last bin.
fn bin_of(t: f64, h: f64, bins: usize) -> usize {
    ((t / h).floor() as usize).min(bins.saturating_sub(1))
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(domain(format!("bin width h={h} must be positive")));
    }
    Ok(())
}

pub fn bin_events(stream: &EventStream, h: f64) -> Result<BinnedCounts> {
    check_h(h)?;
    let bins = bin_count(stream.horizon, h);
    let all: Vec<usize> = (0..stream.n).collect();
    let pairs = ordered_pairs(&all);
    let counts = pairs
        .iter()
        .map(|&(i, j)| {
            let mut c = vec![0u32; bins];
            for &t in stream.pair_events(i, j) {
                c[bin_of(t, h, bins)] += 1;
            }
            c
        })
        .collect();
    Ok(BinnedCounts { h, bins, pairs, counts })
}

/// Per-bin log-likelihood ratio of `Poisson((mu + delta) h)` against
/// `Poisson(mu h)` for an observed count `x`.
pub fn poisson_llr_increment(x: u32, mu: f64, delta: f64, h: f64) -> Result<f64> {
    PoissonShift::new(mu, delta)?;
    check_h(h)?;
    Ok(poisson_llr(x, mu, delta, h))
}

fn poisson_llr(x: u32, mu: f64, delta: f64, h: f64) -> f64 {
    if delta == 0.0 {
        return 0.0;
    }
    x as f64 * (delta / mu).ln_1p() - delta * h
}

/// Expected increment under the null, `mu h ln(1 + delta/mu) - delta h`.
pub fn null_drift(mu: f64, delta: f64, h: f64) -> f64 {
    mu * h * (delta / mu).ln_1p() - delta * h
}

/// Expected increment after the change, `h` times the per-edge KL rate.
pub fn alternative_drift(mu: f64, delta: f64, h: f64) -> Result<f64> {
    Ok(h * poisson_kl_rate(PoissonShift::new(mu, delta)?))
}

/// Per-pair likelihood-ratio model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LlrModel {
    Poisson { mu: f64, delta: f64 },
    /// Kernel multiplied by `1 + delta_h` after the change. With
    /// `poissonized` the stationary rates replace the exact intensity.
    Hawkes { mu: f64, kernel: HawkesKernel, delta_h: f64, poissonized: bool },
}

impl LlrModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LlrModel::Poisson { mu, delta } => PoissonShift::new(mu, delta).map(|_| ()),
            LlrModel::Hawkes { mu, kernel, delta_h, .. } => {
                if !(mu > 0.0) {
                    return Err(domain(format!("baseline rate mu={mu} must be positive")));
                }
                let kernel = HawkesKernel::new(kernel.a, kernel.beta)?;
                kernel.check_inflation(delta_h)
            }
        }
    }

    /// Equivalent Poisson pair `(rate0, rate1)` when the increment depends
    /// on counts only.
    fn count_rates(&self) -> Option<(f64, f64)> {
        match *self {
            LlrModel::Poisson { mu, delta } => Some((mu, mu + delta)),
            LlrModel::Hawkes { mu, kernel, delta_h, poissonized: true } => {
                Some((kernel.stationary_rate(mu, 1.0), kernel.stationary_rate(mu, 1.0 + delta_h)))
            }
            LlrModel::Hawkes { .. } => None,
        }
    }

    /// Per-bin increments for one pair's sorted event times.
    pub fn increments(&self, times: &[f64], bins: usize, h: f64) -> Vec<f64> {
        if let Some((r0, r1)) = self.count_rates() {
            let mut counts = vec![0u32; bins];
            for &t in times {
                counts[bin_of(t, h, bins)] += 1;
            }
            return counts.iter().map(|&x| poisson_llr(x, r0, r1 - r0, h)).collect();
        }
        let LlrModel::Hawkes { mu, kernel, delta_h, .. } = *self else { unreachable!() };
        hawkes_bin_llr(times, bins, h, mu, kernel, delta_h)
    }
}

/// Exact per-bin log-likelihood ratio between kernel `(1 + delta_h) g` and
/// `g` with the exponential excitation recursion. The intensities differ by
/// `delta_h E(t)`, so each bin is `sum ln(lambda1/lambda0)` at its events
/// minus `delta_h` times the integral of `E` over the bin.
fn hawkes_bin_llr(times: &[f64], bins: usize, h: f64, mu: f64, kernel: HawkesKernel, delta_h: f64) -> Vec<f64> {
    let beta = kernel.beta;
    let jump = kernel.a * beta;
    let mut out = vec![0.0; bins];
    let mut excitation = 0.0;
    let mut last = 0.0;
    let mut next = times.iter().peekable();
    for (i, slot) in out.iter_mut().enumerate() {
        let end = (i + 1) as f64 * h;
        let last_bin = i + 1 == bins;
        let mut integral = 0.0;
        let mut log_sum = 0.0;
        while let Some(&&t) = next.peek() {
            if t >= end && !last_bin {
                break;
            }
            let decay = (-beta * (t - last)).exp();
            integral += excitation * (1.0 - decay) / beta;
            excitation *= decay;
            log_sum += ((mu + (1.0 + delta_h) * excitation) / (mu + excitation)).ln();
            excitation += jump;
            last = t;
            next.next();
        }
        let stop = if last_bin { end.max(last) } else { end };
        let decay = (-beta * (stop - last)).exp();
        integral += excitation * (1.0 - decay) / beta;
        excitation *= decay;
        last = stop;
        *slot = log_sum - delta_h * integral;
    }
    out
}

/// One CUSUM track. Without a window this is Page's recursion
/// `g <- max(0, g + l)`; with window `W` it is `max(A_t - A_s)` over the
/// last `W` steps since the last reset, kept by a monotone deque.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumState {
    g: f64,
    cumulative: f64,
    steps: usize,
    last_reset: usize,
    window: Option<usize>,
    minima: VecDeque<(usize, f64)>,
}

impl CusumState {
    pub fn new(window: Option<usize>) -> Result<Self> {
        if window == Some(0) {
            return Err(domain("window must be at least one bin"));
        }
        let mut minima = VecDeque::new();
        if window.is_some() {
            minima.push_back((0, 0.0));
        }
        Ok(Self { g: 0.0, cumulative: 0.0, steps: 0, last_reset: 0, window, minima })
    }

    pub fn value(&self) -> f64 {
        self.g
    }

    /// Cumulative log-likelihood ratio `A(t)`.
    pub fn cumulative(&self) -> f64 {
        self.cumulative
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Last step at which the statistic was zero.
    pub fn last_reset(&self) -> usize {
        self.last_reset
    }

    pub fn window(&self) -> Option<usize> {
        self.window
    }

    pub fn update(&mut self, increment: f64) -> f64 {
        self.steps += 1;
        self.cumulative += increment;
        match self.window {
            None => self.g = (self.g + increment).max(0.0),
            Some(w) => {
                let (t, a) = (self.steps, self.cumulative);
                while self.minima.back().is_some_and(|&(_, v)| v >= a) {
                    self.minima.pop_back();
                }
                self.minima.push_back((t, a));
                while self.minima.front().is_some_and(|&(s, _)| s + w < t) {
                    self.minima.pop_front();
                }
                self.g = a - self.minima.front().expect("current step is present").1;
            }
        }
        if self.g == 0.0 {
            self.last_reset = self.steps;
        }
        self.g
    }

    /// Restart after an alarm: the statistic returns to zero.
    pub fn reset(&mut self) {
        self.g = 0.0;
        self.last_reset = self.steps;
        if self.window.is_some() {
            self.minima.clear();
            self.minima.push_back((self.steps, self.cumulative));
        }
    }
}

/// Statistic path of a single CUSUM track.
pub fn cusum_path(increments: &[f64], window: Option<usize>) -> Result<Vec<f64>> {
    let mut state = CusumState::new(window)?;
    Ok(increments.iter().map(|&l| state.update(l)).collect())
}

/// How pair-level tracks are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    /// One CUSUM on the summed increments of the true support's pairs.
    #[default]
    Oracle,
    /// Sum of the `m` largest per-pair CUSUM values.
    TopM,
    /// Maximum over every size-k support (small n only).
    Exact,
}

impl fmt::Display for ScanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanMode::Oracle => "oracle",
            ScanMode::TopM => "topm",
            ScanMode::Exact => "exact",
        })
    }
}

impl FromStr for ScanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" | "oracle_set" => Ok(ScanMode::Oracle),
            "topm" | "top_m" | "top_m_edges" => Ok(ScanMode::TopM),
            "exact" => Ok(ScanMode::Exact),
            _ => Err(Error::Parse(format!("unknown scan mode '{s}' (oracle|topm|exact)"))),
        }
    }
}

/// Largest `n` for which the exact support scan is offered.
pub const EXACT_SCAN_MAX_N: usize = 8;

/// Sum of the `m` largest values.
pub fn top_m_sum(values: &[f64], m: usize) -> f64 {
    if m >= values.len() {
        return values.iter().sum();
    }
    if m == 0 {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.select_nth_unstable_by(m - 1, |a, b| b.total_cmp(a));
    v[..m].iter().sum()
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else { break };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Reduce {
    Sum(usize),
    Max,
}

/// Combined scan over tracked pairs. Each unit owns a group of pair indices
/// and a CUSUM track on the group's summed increments.
#[derive(Debug, Clone)]
pub struct ScanEngine {
    groups: Vec<Vec<usize>>,
    states: Vec<CusumState>,
    reduce: Reduce,
    values: Vec<f64>,
}

impl ScanEngine {
    /// `pairs` fixes the order of increments passed to [`ScanEngine::step`].
    /// `planted` is needed by the oracle mode; `top_m` defaults to `k(k-1)`.
    pub fn new(
        mode: ScanMode,
        n: usize,
        pairs: &[(usize, usize)],
        k: usize,
        planted: Option<&[usize]>,
        top_m: Option<usize>,
        window: Option<usize>,
    ) -> Result<Self> {
        if k < 2 || k > n {
            return Err(domain(format!("scan size k={k} must lie in [2, n={n}]")));
        }
        let position = |p: (usize, usize)| pairs.iter().position(|&q| q == p);
        let support_group = |set: &[usize]| -> Result<Vec<usize>> {
            ordered_pairs(set)
                .into_iter()
                .map(|p| position(p).ok_or_else(|| domain(format!("pair {p:?} is not tracked"))))
                .collect()
        };
        let (groups, reduce) = match mode {
            ScanMode::Oracle => {
                let set = planted.filter(|s| !s.is_empty()).ok_or_else(|| domain("oracle scan needs the planted set"))?;
                (vec![support_group(set)?], Reduce::Max)
            }
            ScanMode::TopM => {
                let m = top_m.unwrap_or(k * (k - 1));
                if m == 0 {
                    return Err(domain("top-m scan needs m >= 1"));
                }
                ((0..pairs.len()).map(|p| vec![p]).collect(), Reduce::Sum(m))
            }
            ScanMode::Exact => {
                if n > EXACT_SCAN_MAX_N {
                    return Err(domain(format!("exact scan is limited to n <= {EXACT_SCAN_MAX_N}, got n={n}")));
                }
                let groups = k_subsets(n, k).iter().map(|s| support_group(s)).collect::<Result<_>>()?;
                (groups, Reduce::Max)
            }
        };
        let states = (0..groups.len()).map(|_| CusumState::new(window)).collect::<Result<_>>()?;
        let values = vec![0.0; groups.len()];
        Ok(Self { groups, states, reduce, values })
    }

    /// A single CUSUM on the first tracked pair.
    pub fn single(window: Option<usize>) -> Result<Self> {
        Ok(Self { groups: vec![vec![0]], states: vec![CusumState::new(window)?], reduce: Reduce::Max, values: vec![0.0] })
    }

    pub fn units(&self) -> usize {
        self.groups.len()
    }

    /// Advances one bin and returns the scan statistic.
    pub fn step(&mut self, pair_increments: &[f64]) -> f64 {
        for ((group, state), value) in self.groups.iter().zip(&mut self.states).zip(&mut self.values) {
            let inc: f64 = group.iter().map(|&p| pair_increments[p]).sum();
            *value = state.update(inc);
        }
        self.statistic()
    }

    pub fn statistic(&self) -> f64 {
        match self.reduce {
            Reduce::Sum(m) => top_m_sum(&self.values, m),
            Reduce::Max => self.values.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn unit_values(&self) -> &[f64] {
        &self.values
    }

    pub fn reset(&mut self) {
        self.states.iter_mut().for_each(CusumState::reset);
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Alarm rule: the statistic reaches `b` (ties fire) and is positive, so a
/// zero threshold alarms at the first positive value rather than at once.
pub fn crosses(statistic: f64, threshold: f64) -> bool {
    statistic >= threshold && statistic > 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalDetectorConfig {
    pub model: LlrModel,
    pub h: f64,
    pub threshold: f64,
    pub window: Option<usize>,
    pub mode: ScanMode,
    pub k: usize,
    pub top_m: Option<usize>,
    /// Keep the full statistic path and continue past the alarm.
    pub record_path: bool,
}

impl TemporalDetectorConfig {
    pub fn poisson(mu: f64, delta: f64, k: usize, threshold: f64) -> Self {
        Self {
            model: LlrModel::Poisson { mu, delta },
            h: 1.0 / mu,
            threshold,
            window: None,
            mode: ScanMode::Oracle,
            k,
            top_m: None,
            record_path: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmReport {
    pub mode: ScanMode,
    pub threshold: f64,
    pub h: f64,
    /// One-based bin at which the statistic first reached the threshold.
    pub alarm_bin: Option<usize>,
    /// End of the alarm bin, `alarm_bin * h`.
    pub alarm_time: Option<f64>,
    pub change_time: Option<f64>,
    pub delay: Option<f64>,
    pub false_alarm: bool,
    pub bins_processed: usize,
    pub max_statistic: f64,
    pub final_statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<Vec<f64>>,
}

/// Per-bin increments of every tracked pair, laid out `[bin][pair]`.
fn stream_increments(stream: &EventStream, model: &LlrModel, pairs: &[(usize, usize)], bins: usize, h: f64) -> Vec<f64> {
    let mut flat = vec![0.0; bins * pairs.len()];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        for (b, inc) in model.increments(stream.pair_events(i, j), bins, h).into_iter().enumerate() {
            flat[b * pairs.len() + p] = inc;
        }
    }
    flat
}

fn tracked_pairs(mode: ScanMode, n: usize, planted: &[usize]) -> Vec<(usize, usize)> {
    match mode {
        ScanMode::Oracle => {
            let mut p = ordered_pairs(planted);
            p.sort_unstable();
            p
        }
        ScanMode::TopM | ScanMode::Exact => ordered_pairs(&(0..n).collect::<Vec<_>>()),
    }
}

/// Bins the stream, runs the scan and reports the first crossing.
pub fn detect_temporal(stream: &EventStream, cfg: &TemporalDetectorConfig) -> Result<AlarmReport> {
    check_h(cfg.h)?;
    cfg.model.validate()?;
    stream.validate()?;
    if !(cfg.threshold >= 0.0) {
        return Err(domain(format!("threshold b={} must be non-negative", cfg.threshold)));
    }
    let pairs = tracked_pairs(cfg.mode, stream.n, &stream.planted);
    let mut engine = ScanEngine::new(cfg.mode, stream.n, &pairs, cfg.k, Some(&stream.planted), cfg.top_m, cfg.window)?;
    let bins = bin_count(stream.horizon, cfg.h);
    let incs = stream_increments(stream, &cfg.model, &pairs, bins, cfg.h);
    let mut path = cfg.record_path.then(|| Vec::with_capacity(bins));
    let mut alarm_bin = None;
    let mut max_statistic: f64 = 0.0;
    let mut last = 0.0;
    let mut processed = 0;
    for b in 0..bins {
        let g = engine.step(&incs[b * pairs.len()..(b + 1) * pairs.len()]);
        processed = b + 1;
        max_statistic = max_statistic.max(g);
        last = g;
        if let Some(p) = path.as_mut() {
            p.push(g);
        }
        if alarm_bin.is_none() && crosses(g, cfg.threshold) {
            alarm_bin = Some(b + 1);
            if path.is_none() {
                break;
            }
        }
    }
    let alarm_time = alarm_bin.map(|b| b as f64 * cfg.h);
    let (delay, false_alarm) = match (alarm_time, stream.change_time) {
        (Some(t), Some(tau)) if t >= tau => (Some(t - tau), false),
        (Some(_), _) => (None, true),
        (None, _) => (None, false),
    };
    Ok(AlarmReport {
        mode: cfg.mode,
        threshold: cfg.threshold,
        h: cfg.h,
        alarm_bin,
        alarm_time,
        change_time: stream.change_time,
        delay,
        false_alarm,
        bins_processed: processed,
        max_statistic,
        final_statistic: last,
        path,
    })
}

/// Writes a statistic path as `bin,G` rows.
pub fn write_path_csv<W: std::io::Write>(w: W, path: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin", "G"])?;
    for (i, g) in path.iter().enumerate() {
        out.write_record([(i + 1).to_string(), format!("{g}")])?;
    }
    out.flush()?;
    Ok(())
}

/// Largest number of supports the fixed-horizon scan will enumerate.
pub const FIXED_SCAN_MAX_SUPPORTS: f64 = 5e6;

/// Exact fixed-horizon scan on `[0, T]`: the largest log-likelihood ratio
/// `sum N_ij ln(1 + delta/mu) - delta T k(k-1)` over all size-k supports.
pub fn fixed_horizon_scan(stream: &EventStream, k: usize, mu: f64, delta: f64) -> Result<f64> {
    PoissonShift::new(mu, delta)?;
    let n = stream.n;
    if k < 2 || k > n {
        return Err(domain(format!("scan size k={k} must lie in [2, n={n}]")));
    }
    let supports = statrs::function::factorial::ln_binomial(n as u64, k as u64).exp();
    if supports > FIXED_SCAN_MAX_SUPPORTS {
        return Err(domain(format!("C({n},{k}) supports exceed the exact-scan limit")));
    }
    // Symmetrised counts: an unordered pair carries both directions.
    let mut w = vec![0u64; n * n];
    for (&(i, j), times) in &stream.events {
        w[i.min(j) * n + i.max(j)] += times.len() as u64;
    }
    let mut best = 0u64;
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        let mut total = 0u64;
        for a in 0..k {
            for b in a + 1..k {
                total += w[cur[a] * n + cur[b]];
            }
        }
        best = best.max(total);
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else { break };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
    let pairs = (k * (k - 1)) as f64;
    Ok(best as f64 * (delta / mu).ln_1p() - delta * stream.horizon * pairs)
}

/// Pre-change law used to simulate calibration streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NullModel {
    Poisson { mu: f64 },
    Hawkes { mu: f64, kernel: HawkesKernel },
}

impl NullModel {
    /// Null law matching a detector model.
    pub fn for_model(model: &LlrModel) -> Self {
        match *model {
            LlrModel::Poisson { mu, .. } => NullModel::Poisson { mu },
            LlrModel::Hawkes { mu, kernel, .. } => NullModel::Hawkes { mu, kernel },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub null: NullModel,
    pub model: LlrModel,
    pub h: f64,
    /// Target mean run length in bins.
    pub target_arl: f64,
    pub mode: ScanMode,
    /// Vertices simulated (oracle mode only needs `k`).
    pub n: usize,
    pub k: usize,
    pub top_m: Option<usize>,
    pub window: Option<usize>,
    /// Track the single pair `(0, 1)` instead of a scan.
    pub single_pair: bool,
    pub replicates: usize,
    /// Bins per replicate; at least ten times the target.
    pub horizon_bins: Option<usize>,
    pub seed: u64,
    /// Relative bisection tolerance on `b`.
    pub tolerance: f64,
    /// Require the lower 95% bound of the ARL, not the point estimate, to
    /// reach the target.
    pub conservative: bool,
}

impl CalibrationConfig {
    pub fn new(model: LlrModel, h: f64, target_arl: f64, mode: ScanMode, n: usize, k: usize, seed: u64) -> Self {
        Self {
            null: NullModel::for_model(&model),
            model,
            h,
            target_arl,
            mode,
            n,
            k,
            top_m: None,
            window: None,
            single_pair: false,
            replicates: 200,
            horizon_bins: None,
            seed,
            tolerance: 1e-4,
            conservative: true,
        }
    }

    fn sim_n(&self) -> usize {
        match self.mode {
            ScanMode::Oracle => self.k,
            _ => self.n,
        }
    }

    fn horizon(&self) -> usize {
        let min = (10.0 * self.target_arl).ceil() as usize;
        self.horizon_bins.unwrap_or(min).max(min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArlPoint {
    pub threshold: f64,
    pub arl: f64,
    pub alarms: u64,
}

impl ArlPoint {
    /// Normal-approximation 95% interval; the alarm count of a renewal
    /// process with near-exponential gaps is close to Poisson.
    pub fn ci(&self) -> (f64, f64) {
        if self.alarms == 0 {
            return (f64::INFINITY, f64::INFINITY);
        }
        let z = 1.96 / (self.alarms as f64).sqrt();
        (self.arl * (-z).exp(), self.arl * z.exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArlCalibration {
    pub threshold: f64,
    pub target_arl: f64,
    pub achieved_arl: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alarms: u64,
    pub bins_simulated: u64,
    pub replicates: usize,
    /// Every evaluated threshold, in evaluation order.
    pub trace: Vec<ArlPoint>,
}

/// Simulated null replicates, kept as counts when the increment depends on
/// counts only.
enum NullCache {
    Counts { rates: (f64, f64), data: Vec<Vec<u16>> },
    Increments(Vec<Vec<f64>>),
}

/// Null increments for one replicate, `[bin][pair]`.
fn null_replicate(cfg: &CalibrationConfig, pairs: &[(usize, usize)], bins: usize, seed: u64) -> Result<Vec<f64>> {
    let mut flat = vec![0.0; bins * pairs.len()];
    let horizon = bins as f64 * cfg.h;
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let mut rng = stream(seed, &[STREAM_NULL, i as u64, j as u64]);
        let incs = match cfg.null {
            NullModel::Poisson { mu } => {
                let mut times = Vec::new();
                poisson_arrivals(mu, 0.0, horizon, &mut rng, &mut times);
                cfg.model.increments(&times, bins, cfg.h)
            }
            NullModel::Hawkes { mu, kernel } => {
                let times = simulate_hawkes_pair(mu, kernel, 0.0, None, horizon, &mut rng);
                cfg.model.increments(&times, bins, cfg.h)
            }
        };
        for (b, v) in incs.into_iter().enumerate() {
            flat[b * pairs.len() + p] = v;
        }
    }
    Ok(flat)
}

fn null_counts(mu: f64, h: f64, pairs: &[(usize, usize)], bins: usize, seed: u64) -> Result<Vec<u16>> {
    let dist = Poisson::new(mu * h).map_err(|e| domain(e.to_string()))?;
    let mut flat = vec![0u16; bins * pairs.len()];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let mut rng = stream(seed, &[STREAM_NULL, i as u64, j as u64]);
        for b in 0..bins {
            flat[b * pairs.len() + p] = (dist.sample(&mut rng) as u64).min(u16::MAX as u64) as u16;
        }
    }
    Ok(flat)
}

/// Common-random-number harness for the ARL of a threshold: every
/// evaluation replays the same null replicates.
pub struct ArlEvaluator {
    cfg: CalibrationConfig,
    pairs: Vec<(usize, usize)>,
    engine: ScanEngine,
    bins: usize,
    cache: NullCache,
}

impl ArlEvaluator {
    pub fn new(cfg: &CalibrationConfig) -> Result<Self> {
        check_h(cfg.h)?;
        cfg.model.validate()?;
        if !(cfg.target_arl >= 10.0) {
            return Err(domain(format!("target ARL {} must be at least 10 bins", cfg.target_arl)));
        }
        if cfg.replicates < 100 {
            return Err(domain(format!("calibration needs at least 100 replicates, got {}", cfg.replicates)));
        }
        let n = cfg.sim_n();
        let planted: Vec<usize> = (0..cfg.k).collect();
        let (pairs, engine) = if cfg.single_pair {
            (vec![(0, 1)], ScanEngine::single(cfg.window)?)
        } else {
            let pairs = tracked_pairs(cfg.mode, n, &planted);
            let engine = ScanEngine::new(cfg.mode, n, &pairs, cfg.k, Some(&planted), cfg.top_m, cfg.window)?;
            (pairs, engine)
        };
        let bins = cfg.horizon();
        let seeds = (0..cfg.replicates).map(|r| derive_seed(cfg.seed, &[STREAM_NULL, r as u64]));
        let cache = match (cfg.null, cfg.model.count_rates()) {
            (NullModel::Poisson { mu }, Some(rates)) => NullCache::Counts {
                rates,
                data: seeds.map(|s| null_counts(mu, cfg.h, &pairs, bins, s)).collect::<Result<_>>()?,
            },
            _ => NullCache::Increments(seeds.map(|s| null_replicate(cfg, &pairs, bins, s)).collect::<Result<_>>()?),
        };
        Ok(Self { cfg: cfg.clone(), pairs, engine, bins, cache })
    }

    pub fn bins_per_replicate(&self) -> usize {
        self.bins
    }

    /// Runs every replicate with restart after each alarm and returns the
    /// inter-alarm gaps plus the censored tail of each replicate.
    pub fn run(&mut self, threshold: f64) -> (Vec<usize>, u64) {
        let width = self.pairs.len();
        let mut gaps = Vec::new();
        let mut total = 0u64;
        let mut row = vec![0.0; width];
        for r in 0..self.cfg.replicates {
            self.engine.reset();
            let mut since = 0;
            for b in 0..self.bins {
                let slice = b * width..(b + 1) * width;
                let g = match &self.cache {
                    NullCache::Counts { rates: (r0, r1), data } => {
                        for (dst, &c) in row.iter_mut().zip(&data[r][slice]) {
                            *dst = poisson_llr(c as u32, *r0, r1 - r0, self.cfg.h);
                        }
                        self.engine.step(&row)
                    }
                    NullCache::Increments(data) => self.engine.step(&data[r][slice]),
                };
                since += 1;
                if crosses(g, threshold) {
                    gaps.push(since);
                    since = 0;
                    self.engine.reset();
                }
            }
            total += self.bins as u64;
        }
        (gaps, total)
    }

    /// Renewal estimate `total bins / alarms`.
    pub fn arl(&mut self, threshold: f64) -> ArlPoint {
        let (gaps, total) = self.run(threshold);
        let alarms = gaps.len() as u64;
        let arl = if alarms == 0 { f64::INFINITY } else { total as f64 / alarms as f64 };
        ArlPoint { threshold, arl, alarms }
    }
}

/// Smallest evaluated threshold whose null ARL reaches the target, by
/// bracketing and bisection on common random numbers.
pub fn calibrate_arl(cfg: &CalibrationConfig) -> Result<ArlCalibration> {
    if !(cfg.tolerance > 0.0) {
        return Err(domain("tolerance must be positive"));
    }
    let mut eval = ArlEvaluator::new(cfg)?;
    let target = cfg.target_arl;
    let conservative = cfg.conservative;
    let meets = move |p: &ArlPoint| if conservative { p.ci().0 >= target } else { p.arl >= target };
    let mut trace = Vec::new();
    let mut probe = |b: f64, trace: &mut Vec<ArlPoint>| {
        let p = eval.arl(b);
        trace.push(p);
        p
    };
    let zero = probe(0.0, &mut trace);
    let mut best = zero;
    if !meets(&zero) {
        let mut lo = 0.0;
        let mut hi = 1.0;
        loop {
            let p = probe(hi, &mut trace);
            if meets(&p) {
                best = p;
                break;
            }
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::Infeasible(format!("no threshold up to 1e6 reaches ARL {target}")));
            }
        }
        while hi - lo > cfg.tolerance * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            let p = probe(mid, &mut trace);
            if meets(&p) {
                hi = mid;
                best = p;
            } else {
                lo = mid;
            }
        }
    }
    if best.alarms < 10 {
        return Err(Error::Infeasible(format!(
            "only {} null alarms at the calibrated threshold; increase replicates or horizon",
            best.alarms
        )));
    }
    let (ci_low, ci_high) = best.ci();
    Ok(ArlCalibration {
        threshold: best.threshold,
        target_arl: target,
        achieved_arl: best.arl,
        ci_low,
        ci_high,
        alarms: best.alarms,
        bins_simulated: eval.bins_per_replicate() as u64 * cfg.replicates as u64,
        replicates: cfg.replicates,
        trace,
    })
}

/// First-alarm bins of independent fresh null runs (no restarts), censored
/// at `max_bins`.
pub fn null_run_lengths(cfg: &CalibrationConfig, threshold: f64, runs: usize, max_bins: usize, seed: u64) -> Result<Vec<Option<usize>>> {
    let fresh = CalibrationConfig {
        replicates: runs.max(100),
        horizon_bins: Some(max_bins),
        target_arl: (max_bins as f64 / 10.0).max(10.0),
        seed: derive_seed(seed, &[STREAM_FRESH]),
        ..cfg.clone()
    };
    let mut eval = ArlEvaluator::new(&fresh)?;
    eval.bins = max_bins;
    let width = eval.pairs.len();
    let mut row = vec![0.0; width];
    let mut out = Vec::with_capacity(runs);
    for r in 0..runs {
        eval.engine.reset();
        let mut hit = None;
        for b in 0..max_bins {
            let slice = b * width..(b + 1) * width;
            let g = match &eval.cache {
                NullCache::Counts { rates: (r0, r1), data } => {
                    for (dst, &c) in row.iter_mut().zip(&data[r][slice]) {
                        *dst = poisson_llr(c as u32, *r0, r1 - r0, fresh.h);
                    }
                    eval.engine.step(&row)
                }
                NullCache::Increments(data) => eval.engine.step(&data[r][slice]),
            };
            if crosses(g, threshold) {
                hit = Some(b + 1);
                break;
            }
        }
        out.push(hit);
    }
    Ok(out)
}

/// Per-pair lift `delta` giving a total KL rate `info_rate` over the
/// `pairs` internal ordered pairs at baseline `mu`.
pub fn delta_for_info_rate(info_rate: f64, mu: f64, pairs: usize) -> Result<f64> {
    if !(info_rate > 0.0) || !(mu > 0.0) || pairs == 0 {
        return Err(domain(format!("need positive rate, mu and pairs (I={info_rate}, mu={mu}, pairs={pairs})")));
    }
    let target = info_rate / pairs as f64;
    let kl = |d: f64| poisson_kl_rate(PoissonShift::new(mu, d).expect("validated rates"));
    let mut hi = mu;
    while kl(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kl(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayCurveConfig {
    /// Total information rates over the planted pairs.
    pub info_rates: Vec<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: u64,
    pub mu: f64,
    pub k: usize,
    pub h: f64,
    pub calibration_replicates: usize,
    pub mode: ScanMode,
}

impl DelayCurveConfig {
    pub fn new(info_rates: Vec<f64>, alpha: f64, replicates: usize, seed: u64) -> Self {
        Self { info_rates, alpha, replicates, seed, mu: 1.0, k: 2, h: 1.0, calibration_replicates: 200, mode: ScanMode::Oracle }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayPoint {
    pub info_rate: f64,
    pub delta: f64,
    pub predicted: f64,
    pub threshold: f64,
    pub achieved_arl: f64,
    pub mean_delay: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ratio: f64,
    pub replicates: usize,
    pub censored: usize,
}

/// Mean and normal 95% half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Calibrates `b` for ARL `1/alpha` at each information rate, then measures
/// the detection delay of post-change streams starting at `tau = 0`.
pub fn delay_curve(cfg: &DelayCurveConfig) -> Result<Vec<DelayPoint>> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(domain(format!("alpha={} must lie in (0,1)", cfg.alpha)));
    }
    if cfg.replicates == 0 || cfg.info_rates.is_empty() {
        return Err(domain("delay curve needs replicates and a non-empty grid"));
    }
    let pairs = cfg.k * cfg.k.saturating_sub(1);
    let mut out = Vec::with_capacity(cfg.info_rates.len());
    for (gi, &info) in cfg.info_rates.iter().enumerate() {
        let predicted = crate::info_metrics::expected_delay(cfg.alpha, info)?;
        let delta = delta_for_info_rate(info, cfg.mu, pairs)?;
        let model = LlrModel::Poisson { mu: cfg.mu, delta };
        let mut cal = CalibrationConfig::new(
            model,
            cfg.h,
            (1.0 / cfg.alpha).max(10.0),
            cfg.mode,
            cfg.k,
            cfg.k,
            derive_seed(cfg.seed, &[STREAM_DELAY, gi as u64, 0]),
        );
        cal.replicates = cfg.calibration_replicates;
        let calibration = calibrate_arl(&cal)?;
        let det = TemporalDetectorConfig {
            model,
            h: cfg.h,
            threshold: calibration.threshold,
            window: None,
            mode: cfg.mode,
            k: cfg.k,
            top_m: None,
            record_path: false,
        };
        let horizon = (20.0 * predicted).max(50.0 * cfg.h).ceil();
        let mut delays = Vec::with_capacity(cfg.replicates);
        let mut censored = 0;
        for r in 0..cfg.replicates {
            let s = derive_seed(cfg.seed, &[STREAM_DELAY, gi as u64, 1, r as u64]);
            let stream = simulate_poisson_network(cfg.k, cfg.mu, delta, cfg.k, 0.0, horizon, s)?;
            match detect_temporal(&stream, &det)?.delay {
                Some(d) => delays.push(d),
                None => censored += 1,
            }
        }
        let (mean, half) = mean_ci(&delays);
        out.push(DelayPoint {
            info_rate: info,
            delta,
            predicted,
            threshold: calibration.threshold,
            achieved_arl: calibration.achieved_arl,
            mean_delay: mean,
            ci_low: mean - half,
            ci_high: mean + half,
            ratio: mean / predicted,
            replicates: cfg.replicates,
            censored,
        });
    }
    Ok(out)
}
