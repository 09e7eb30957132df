//! Experiment orchestration: run configuration, parameter sweeps, the worked
//! example, and CSV/JSON artifacts.
//!
//! Analytic grids run at large `n`; Monte Carlo overlays run at desk scale
//! (static `n <= 2000`, temporal `n <= 50`) and say so in their metadata.
//! Every artifact is a pure function of the configuration and seed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::graph_sim::{generate_planted, perturb, PerturbMode, PerturbationBudget};
use crate::info_metrics::{
    aggregate_poisson_rate, chi_square_bernoulli, delta_min, expected_delay, info_budget_temporal, mixture_chi_square,
    poisson_kl_rate, required_horizon, sparse_lift_threshold, BernoulliShift, MixtureBound, PoissonShift,
};
use crate::rng::derive_seed;
use crate::sequential::{
    calibrate_arl, delay_curve, detect_temporal, fixed_horizon_scan, mean_ci, CalibrationConfig, DelayCurveConfig, DelayPoint,
    LlrModel, ScanMode, TemporalDetectorConfig,
};
use crate::spectral::{calibrate_null, detect_static, upper_quantile, StaticDetectorConfig};
use crate::temporal_sim::simulate_poisson_network;

/// First line of every CSV artifact.
pub const SCHEMA_LINE: &str = "# detect-lab schema v1";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

const CONTOUR_NOTE: &str = "contour uses Delta_min = sqrt(p(1-p) ln n)/k; an alternative Delta_min ~ ln n / k scaling disagrees with it and is not used";

// Seed domains for the experiments.
const SEED_HEATMAP: u64 = 31;
const SEED_TEMPORAL: u64 = 32;
const SEED_ROBUST_STATIC: u64 = 33;
const SEED_ROBUST_TEMPORAL: u64 = 34;
const SEED_DELAY: u64 = 35;

fn default_static_detector() -> StaticDetectorConfig {
    StaticDetectorConfig::pruned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapConfig {
    pub n: u64,
    pub p: f64,
    pub k_grid: Vec<u64>,
    pub delta_grid: Vec<f64>,
    /// Add an empirical power overlay at desk scale.
    pub overlay: bool,
    pub overlay_n: usize,
    pub overlay_p: f64,
    pub overlay_k: usize,
    /// Overlay points as multiples of `ln n` for `k^2 chi^2`.
    pub overlay_mults: Vec<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub null_replicates: usize,
    pub detector: StaticDetectorConfig,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            n: 100_000,
            p: 0.01,
            k_grid: vec![100, 200, 300, 500, 700, 1000, 1500, 2000],
            delta_grid: vec![1e-4, 2e-4, 3e-4, 5e-4, 6.75e-4, 1e-3, 2e-3, 3e-3, 5e-3, 1e-2],
            overlay: false,
            overlay_n: 2000,
            overlay_p: 0.005,
            overlay_k: 60,
            overlay_mults: vec![0.2, 1.0, 10.0, 100.0, 300.0, 1000.0],
            alpha: 0.05,
            replicates: 200,
            null_replicates: 400,
            detector: default_static_detector(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalSweepConfig {
    pub n_grid: Vec<u64>,
    pub info_rates: Vec<f64>,
    pub overlay: bool,
    pub overlay_n: usize,
    pub mu: f64,
    pub delta: f64,
    pub k: usize,
    /// Overlay horizons as multiples of `ln n / I`.
    pub horizon_mults: Vec<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub null_replicates: usize,
}

impl Default for TemporalSweepConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![1_000, 3_000, 10_000, 30_000, 100_000, 300_000, 1_000_000],
            info_rates: vec![0.1],
            overlay: false,
            overlay_n: 50,
            mu: 1.0,
            delta: 1.0,
            k: 3,
            horizon_mults: vec![0.2, 0.5, 1.0, 2.0],
            alpha: 0.05,
            replicates: 300,
            null_replicates: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelaySweepConfig {
    pub info_rates: Vec<f64>,
    pub alpha: f64,
    pub mu: f64,
    pub k: usize,
    pub h: f64,
    pub replicates: usize,
    pub calibration_replicates: usize,
}

impl Default for DelaySweepConfig {
    fn default() -> Self {
        Self { info_rates: vec![0.25, 0.5, 1.0, 2.0], alpha: 1e-4, mu: 1.0, k: 2, h: 1.0, replicates: 200, calibration_replicates: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub epsilons: Vec<f64>,
    pub static_part: bool,
    pub temporal_part: bool,
    pub n: usize,
    pub p: f64,
    pub k: usize,
    /// Power-curve points as multiples of `ln n` for `k^2 chi^2`.
    pub mults: Vec<f64>,
    pub mode: PerturbMode,
    pub alpha: f64,
    pub replicates: usize,
    pub null_replicates: usize,
    pub detector: StaticDetectorConfig,
    pub mu: f64,
    pub delta: f64,
    pub temporal_k: usize,
    pub temporal_alpha: f64,
    pub temporal_replicates: usize,
    pub calibration_replicates: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.0, 0.05, 0.1, 0.2],
            static_part: true,
            temporal_part: true,
            n: 2000,
            p: 0.005,
            k: 60,
            mults: vec![100.0, 150.0, 220.0, 330.0, 500.0, 750.0, 1100.0],
            mode: PerturbMode::Rewire,
            alpha: 0.05,
            replicates: 100,
            null_replicates: 400,
            detector: default_static_detector(),
            mu: 1.0,
            delta: 0.5,
            temporal_k: 2,
            temporal_alpha: 1e-3,
            temporal_replicates: 500,
            calibration_replicates: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseStudyConfig {
    pub n: u64,
    pub p: f64,
    pub k: u64,
    pub k_mults: Vec<u64>,
    pub info_rate: f64,
    pub horizon_mults: Vec<f64>,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        Self { n: 100_000, p: 0.01, k: 500, k_mults: vec![1, 2, 4], info_rate: 0.1, horizon_mults: vec![0.5, 1.0, 2.0, 4.0] }
    }
}

/// Everything an experiment needs. Parsed from `key = value` text with
/// `[section]` headers, or from the equivalent JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub seed: u64,
    /// Recorded in artifact metadata verbatim; never read from the clock.
    pub timestamp: String,
    pub out: Option<PathBuf>,
    pub heatmap: HeatmapConfig,
    pub temporal: TemporalSweepConfig,
    pub delay: DelaySweepConfig,
    pub robustness: RobustnessConfig,
    pub case_study: CaseStudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: "default".into(),
            seed: 0,
            timestamp: "unset".into(),
            out: None,
            heatmap: HeatmapConfig::default(),
            temporal: TemporalSweepConfig::default(),
            delay: DelaySweepConfig::default(),
            robustness: RobustnessConfig::default(),
            case_study: CaseStudyConfig::default(),
        }
    }
}

impl RunConfig {
    /// JSON when the text starts with `{`, key-value text otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// One CSV field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Num(f64),
    Text(String),
    Empty,
}

impl Cell {
    pub fn num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v}"),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn parse(field: &str) -> Self {
        if field.is_empty() {
            Cell::Empty
        } else if let Ok(v) = field.parse::<f64>() {
            Cell::Num(v)
        } else {
            Cell::Text(field.to_string())
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        if v.is_nan() {
            Cell::Empty
        } else {
            Cell::Num(v)
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Num(v as f64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Num(v as f64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::from)
    }
}

/// Tabular sweep result with its metadata. Axes are stored as metadata
/// entries `axis.<name>`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepGrid {
    pub metadata: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl SweepGrid {
    pub fn new(experiment: &str, columns: &[&str], seed: u64, timestamp: &str) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("experiment".into(), experiment.into());
        metadata.insert("seed".into(), seed.to_string());
        metadata.insert("timestamp".into(), timestamp.into());
        metadata.insert("code_version".into(), CODE_VERSION.into());
        Self { metadata, columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let v = value.to_string().replace(['\n', '\r'], " ");
        self.metadata.insert(key.to_string(), v);
    }

    pub fn set_axis(&mut self, name: &str, values: &[f64]) {
        let v: Vec<String> = values.iter().map(|x| format!("{x}")).collect();
        self.set_meta(&format!("axis.{name}"), v.join(" "));
    }

    pub fn axes(&self) -> Vec<(String, Vec<f64>)> {
        self.metadata
            .iter()
            .filter_map(|(k, v)| {
                let name = k.strip_prefix("axis.")?;
                Some((name.to_string(), v.split_whitespace().filter_map(|x| x.parse().ok()).collect()))
            })
            .collect()
    }

    /// Row count equals the product of the axis lengths.
    pub fn is_rectangular(&self) -> bool {
        let axes = self.axes();
        !axes.is_empty() && axes.iter().map(|(_, v)| v.len()).product::<usize>() == self.rows.len()
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(domain(format!("row has {} fields, expected {}", row.len(), self.columns.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<Cell>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    pub fn numeric_column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        Some(self.column(name)?.iter().map(Cell::num).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{SCHEMA_LINE}")?;
        for (k, v) in &self.metadata {
            writeln!(w, "# {k}: {v}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for row in &self.rows {
            out.write_record(row.iter().map(Cell::render))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != SCHEMA_LINE {
            return Err(Error::Parse(format!("missing schema line, found '{}'", line.trim_end())));
        }
        let mut metadata = BTreeMap::new();
        let mut body = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            match line.strip_prefix("# ") {
                Some(meta) => {
                    let (k, v) = meta
                        .trim_end_matches(['\n', '\r'])
                        .split_once(": ")
                        .ok_or_else(|| Error::Parse(format!("bad metadata line '{}'", line.trim_end())))?;
                    metadata.insert(k.to_string(), v.to_string());
                }
                None => {
                    body.push_str(&line);
                    reader.read_to_string(&mut body)?;
                    break;
                }
            }
        }
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let columns = rdr.headers()?.iter().map(String::from).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(Cell::parse).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { metadata, columns, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(fs::File::open(path)?)
    }
}

/// Empirical rejection rate with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub power: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub rejections: usize,
    pub replicates: usize,
}

impl PowerEstimate {
    pub fn from_counts(rejections: usize, replicates: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(rejections, replicates);
        let power = if replicates == 0 { f64::NAN } else { rejections as f64 / replicates as f64 };
        Self { power, ci_low, ci_high, rejections, replicates }
    }
}

pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let nf = n as f64;
    let ph = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (ph + z * z / (2.0 * nf)) / denom;
    let half = z * (ph * (1.0 - ph) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Lift `delta` putting `k^2 chi^2` at `mult * ln n`.
pub fn delta_for_static_mult(n: usize, p: f64, k: usize, mult: f64) -> f64 {
    let chi2 = mult * (n as f64).ln() / (k * k) as f64;
    (chi2 * p * (1.0 - p)).sqrt()
}

/// Power of the static test at one planted configuration.
#[allow(clippy::too_many_arguments)]
pub fn static_power(
    n: usize,
    p: f64,
    k: usize,
    delta: f64,
    threshold: f64,
    replicates: usize,
    seed: u64,
    detector: &StaticDetectorConfig,
    perturbation: Option<(f64, PerturbMode)>,
) -> Result<PowerEstimate> {
    let outcomes: Vec<bool> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, &[r as u64]);
            let inst = generate_planted(n, p, delta, k, s)?;
            let graph = match perturbation {
                Some((eps, mode)) if eps > 0.0 => perturb(&inst.graph, &PerturbationBudget::new(eps, mode, derive_seed(s, &[1])))?,
                _ => inst.graph,
            };
            Ok(detect_static(&graph, k, threshold, detector, s)?.reject)
        })
        .collect::<Result<_>>()?;
    Ok(PowerEstimate::from_counts(outcomes.iter().filter(|&&b| b).count(), replicates))
}

/// Analytic detectability heatmap, plus the desk-scale power overlay when
/// enabled.
pub fn sweep_static_heatmap(cfg: &RunConfig) -> Result<(SweepGrid, Option<SweepGrid>)> {
    let h = &cfg.heatmap;
    let ln_n = (h.n as f64).ln();
    let columns = ["k", "delta", "chi2", "margin", "power", "ci_low", "ci_high", "replicates", "status"];
    let mut grid = SweepGrid::new("heatmap", &columns, cfg.seed, &cfg.timestamp);
    grid.set_meta("n", h.n);
    grid.set_meta("p", h.p);
    grid.set_meta("ln_n", ln_n);
    grid.set_meta("contour_note", CONTOUR_NOTE);
    grid.set_meta("scale", "analytic at the stated n; power columns empty (exact values, replicates = 0)");
    grid.set_axis("k", &h.k_grid.iter().map(|&k| k as f64).collect::<Vec<_>>());
    grid.set_axis("delta", &h.delta_grid);
    if !(h.p > 0.0 && h.p < 1.0) {
        return Err(domain(format!("p={} must lie in (0,1)", h.p)));
    }
    for &k in &h.k_grid {
        for &delta in &h.delta_grid {
            let row = match BernoulliShift::new(h.p, delta) {
                Ok(shift) => {
                    let chi2 = chi_square_bernoulli(shift);
                    let margin = (k * k) as f64 * chi2 - ln_n;
                    vec![k.into(), delta.into(), chi2.into(), margin.into(), Cell::Empty, Cell::Empty, Cell::Empty, 0usize.into(), "ok".into()]
                }
                Err(_) => vec![
                    k.into(),
                    delta.into(),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    0usize.into(),
                    "infeasible".into(),
                ],
            };
            grid.push(row)?;
        }
    }
    let overlay = if h.overlay { Some(static_overlay(cfg)?) } else { None };
    Ok((grid, overlay))
}

fn static_overlay(cfg: &RunConfig) -> Result<SweepGrid> {
    let h = &cfg.heatmap;
    let (n, p, k) = (h.overlay_n, h.overlay_p, h.overlay_k);
    let columns = ["k", "delta", "chi2", "margin", "power", "ci_low", "ci_high", "replicates", "status"];
    let mut grid = SweepGrid::new("heatmap_overlay", &columns, cfg.seed, &cfg.timestamp);
    let seed = derive_seed(cfg.seed, &[SEED_HEATMAP]);
    let null = calibrate_null(n, p, k, h.alpha, h.null_replicates, derive_seed(seed, &[0]), &h.detector)?;
    grid.set_meta("n", n);
    grid.set_meta("p", p);
    grid.set_meta("alpha", h.alpha);
    grid.set_meta("threshold", null.threshold);
    grid.set_meta("null_replicates", h.null_replicates);
    grid.set_meta("detector", serde_json::to_string(&h.detector)?);
    grid.set_meta("scale", format!("desk-scale Monte Carlo at n={n}, not the analytic n={}", h.n));
    grid.set_axis("k", &[k as f64]);
    let deltas: Vec<f64> = h.overlay_mults.iter().map(|&m| delta_for_static_mult(n, p, k, m)).collect();
    grid.set_axis("delta", &deltas);
    let ln_n = (n as f64).ln();
    for (i, &delta) in deltas.iter().enumerate() {
        let row = match BernoulliShift::new(p, delta) {
            Ok(shift) => {
                let chi2 = chi_square_bernoulli(shift);
                let est = static_power(n, p, k, delta, null.threshold, h.replicates, derive_seed(seed, &[1, i as u64]), &h.detector, None)?;
                vec![
                    k.into(),
                    delta.into(),
                    chi2.into(),
                    ((k * k) as f64 * chi2 - ln_n).into(),
                    est.power.into(),
                    est.ci_low.into(),
                    est.ci_high.into(),
                    est.replicates.into(),
                    "ok".into(),
                ]
            }
            Err(_) => {
                let mut r = vec![k.into(), delta.into()];
                r.extend(std::iter::repeat_n(Cell::Empty, 5));
                r.extend([0usize.into(), "infeasible".into()]);
                r
            }
        };
        grid.push(row)?;
    }
    Ok(grid)
}

/// Fixed-horizon power of the exact support scan on Poisson streams.
#[allow(clippy::too_many_arguments)]
pub fn temporal_fixed_horizon_power(
    n: usize,
    mu: f64,
    delta: f64,
    k: usize,
    horizon: f64,
    alpha: f64,
    replicates: usize,
    null_replicates: usize,
    seed: u64,
) -> Result<(f64, PowerEstimate)> {
    let stat = |d: f64, tag: u64, r: usize| -> Result<f64> {
        let s = derive_seed(seed, &[tag, r as u64]);
        let stream = simulate_poisson_network(n, mu, d, k, 0.0, horizon, s)?;
        fixed_horizon_scan(&stream, k, mu, delta)
    };
    let null: Vec<f64> = (0..null_replicates).into_par_iter().map(|r| stat(0.0, 0, r)).collect::<Result<_>>()?;
    let threshold = upper_quantile(&null, alpha);
    let alt: Vec<f64> = (0..replicates).into_par_iter().map(|r| stat(delta, 1, r)).collect::<Result<_>>()?;
    let rejections = alt.iter().filter(|&&v| v > threshold).count();
    Ok((threshold, PowerEstimate::from_counts(rejections, replicates)))
}

/// Required horizon `ln n / I` over the `n` grid, plus the desk-scale
/// fixed-horizon power overlay when enabled.
pub fn sweep_temporal_threshold(cfg: &RunConfig) -> Result<(SweepGrid, Option<SweepGrid>)> {
    let t = &cfg.temporal;
    let mut grid = SweepGrid::new("temporal_threshold", &["n", "info_rate", "ln_n", "required_horizon", "replicates"], cfg.seed, &cfg.timestamp);
    grid.set_meta("scale", "analytic; exact values, replicates = 0");
    grid.set_axis("n", &t.n_grid.iter().map(|&n| n as f64).collect::<Vec<_>>());
    grid.set_axis("info_rate", &t.info_rates);
    for &n in &t.n_grid {
        for &rate in &t.info_rates {
            let horizon = required_horizon(n, rate)?;
            grid.push(vec![n.into(), rate.into(), (n as f64).ln().into(), horizon.into(), 0usize.into()])?;
        }
    }
    if !t.overlay {
        return Ok((grid, None));
    }
    let pairs = (t.k * t.k.saturating_sub(1)) as u64;
    let info = aggregate_poisson_rate(PoissonShift::new(t.mu, t.delta)?, pairs);
    let ln_n = (t.overlay_n as f64).ln();
    let columns = ["horizon_mult", "horizon", "info_rate", "threshold", "power", "ci_low", "ci_high", "replicates"];
    let mut overlay = SweepGrid::new("temporal_overlay", &columns, cfg.seed, &cfg.timestamp);
    overlay.set_meta("n", t.overlay_n);
    overlay.set_meta("mu", t.mu);
    overlay.set_meta("delta", t.delta);
    overlay.set_meta("k", t.k);
    overlay.set_meta("alpha", t.alpha);
    overlay.set_meta("null_replicates", t.null_replicates);
    overlay.set_meta("statistic", "exact fixed-horizon support scan, max over |S| = k of the summed pair log-likelihood ratios");
    overlay.set_meta("scale", format!("desk-scale Monte Carlo at n={}", t.overlay_n));
    overlay.set_axis("horizon_mult", &t.horizon_mults);
    let seed = derive_seed(cfg.seed, &[SEED_TEMPORAL]);
    for (i, &m) in t.horizon_mults.iter().enumerate() {
        let horizon = m * ln_n / info;
        let (threshold, est) = temporal_fixed_horizon_power(
            t.overlay_n,
            t.mu,
            t.delta,
            t.k,
            horizon,
            t.alpha,
            t.replicates,
            t.null_replicates,
            derive_seed(seed, &[i as u64]),
        )?;
        overlay.push(vec![
            m.into(),
            horizon.into(),
            info.into(),
            threshold.into(),
            est.power.into(),
            est.ci_low.into(),
            est.ci_high.into(),
            est.replicates.into(),
        ])?;
    }
    Ok((grid, Some(overlay)))
}

pub fn delay_grid(points: &[DelayPoint], cfg: &RunConfig) -> Result<SweepGrid> {
    let d = &cfg.delay;
    let columns =
        ["info_rate", "delta", "predicted", "threshold", "achieved_arl", "mean_delay", "ci_low", "ci_high", "ratio", "replicates", "censored"];
    let mut grid = SweepGrid::new("delay", &columns, cfg.seed, &cfg.timestamp);
    grid.set_meta("alpha", d.alpha);
    grid.set_meta("mu", d.mu);
    grid.set_meta("k", d.k);
    grid.set_meta("h", d.h);
    grid.set_meta("mode", ScanMode::Oracle);
    grid.set_meta("calibration_replicates", d.calibration_replicates);
    grid.set_meta("scale", "delays in time units; per-pair lift chosen so the planted pairs carry the total rate I");
    grid.set_axis("info_rate", &d.info_rates);
    for p in points {
        grid.push(vec![
            p.info_rate.into(),
            p.delta.into(),
            p.predicted.into(),
            p.threshold.into(),
            p.achieved_arl.into(),
            p.mean_delay.into(),
            p.ci_low.into(),
            p.ci_high.into(),
            p.ratio.into(),
            p.replicates.into(),
            p.censored.into(),
        ])?;
    }
    Ok(grid)
}

/// Measured CUSUM delay against `|ln alpha| / I`.
pub fn sweep_delay(cfg: &RunConfig) -> Result<SweepGrid> {
    let d = &cfg.delay;
    let dc = DelayCurveConfig {
        info_rates: d.info_rates.clone(),
        alpha: d.alpha,
        replicates: d.replicates,
        seed: derive_seed(cfg.seed, &[SEED_DELAY]),
        mu: d.mu,
        k: d.k,
        h: d.h,
        calibration_replicates: d.calibration_replicates,
        mode: ScanMode::Oracle,
    };
    delay_grid(&delay_curve(&dc)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticMarginRow {
    pub k: u64,
    pub delta: f64,
    pub chi2: f64,
    pub k2_chi2: f64,
    pub margin: f64,
    pub delta_min_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalMarginRow {
    pub horizon: f64,
    pub info_rate: f64,
    pub accumulated: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyReport {
    pub n: u64,
    pub p: f64,
    pub k: u64,
    pub ln_n: f64,
    pub delta_min: f64,
    pub delta_min_clamped: bool,
    pub lifted_p: f64,
    pub relative_lift: f64,
    pub chi2: f64,
    pub k2_chi2: f64,
    pub required_horizon: f64,
    pub static_margins: Vec<StaticMarginRow>,
    pub temporal_margins: Vec<TemporalMarginRow>,
    pub metadata: BTreeMap<String, String>,
}

/// The worked example at `(n, p, k)`: the minimal lift, and how larger `k`
/// or longer horizons move the margin.
pub fn case_study(cfg: &RunConfig) -> Result<CaseStudyReport> {
    let c = &cfg.case_study;
    let dm = delta_min(c.n, c.p, c.k)?;
    let ln_n = (c.n as f64).ln();
    let chi2 = chi_square_bernoulli(BernoulliShift::new(c.p, dm.value)?);
    let mut static_margins = Vec::new();
    for &m in &c.k_mults {
        let k = c.k * m;
        let k2 = (k * k) as f64 * chi2;
        static_margins.push(StaticMarginRow {
            k,
            delta: dm.value,
            chi2,
            k2_chi2: k2,
            margin: k2 - ln_n,
            delta_min_at_k: delta_min(c.n, c.p, k)?.value,
        });
    }
    let t_req = required_horizon(c.n, c.info_rate)?;
    let mut temporal_margins = Vec::new();
    for &m in &c.horizon_mults {
        let b = info_budget_temporal(c.n, m * t_req, c.info_rate)?;
        temporal_margins.push(TemporalMarginRow { horizon: m * t_req, info_rate: c.info_rate, accumulated: b.accumulated, margin: b.margin });
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("seed".into(), cfg.seed.to_string());
    metadata.insert("timestamp".into(), cfg.timestamp.clone());
    metadata.insert("code_version".into(), CODE_VERSION.into());
    metadata.insert("contour_note".into(), CONTOUR_NOTE.into());
    Ok(CaseStudyReport {
        n: c.n,
        p: c.p,
        k: c.k,
        ln_n,
        delta_min: dm.value,
        delta_min_clamped: dm.clamped,
        lifted_p: c.p + dm.value,
        relative_lift: dm.value / c.p,
        chi2,
        k2_chi2: (c.k * c.k) as f64 * chi2,
        required_horizon: t_req,
        static_margins,
        temporal_margins,
        metadata,
    })
}

/// Point on a log-scaled `x` axis where `y` first reaches `level`, by
/// linear interpolation in `ln x`. `None` when the curve never gets there.
pub fn crossing_point(xs: &[f64], ys: &[f64], level: f64) -> Option<f64> {
    if ys.first().is_some_and(|&y| y >= level) {
        return xs.first().copied();
    }
    for i in 1..xs.len() {
        if ys[i] >= level && ys[i - 1] < level {
            let (l0, l1) = (xs[i - 1].ln(), xs[i].ln());
            let w = (level - ys[i - 1]) / (ys[i] - ys[i - 1]);
            return Some((l0 + w * (l1 - l0)).exp());
        }
    }
    None
}

/// Inflation factor `rho(eps)` with its interval, from where the power
/// curve and its confidence bands reach one half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    pub epsilon: f64,
    /// `k^2 chi^2 / ln n` at which the power reaches 0.5.
    pub crossing: Option<f64>,
    pub rho: Option<f64>,
    pub rho_low: Option<f64>,
    pub rho_high: Option<f64>,
}

/// Monotonicity of `rho` over increasing `eps`: inversions, and how many of
/// them fall outside the confidence intervals.
pub fn rho_inversions(rhos: &[RhoEstimate]) -> (usize, usize) {
    let mut total = 0;
    let mut significant = 0;
    for w in rhos.windows(2) {
        if let (Some(a), Some(b)) = (w[0].rho, w[1].rho) {
            if b < a {
                total += 1;
                let overlap = match (w[0].rho_low, w[1].rho_high) {
                    (Some(lo), Some(hi)) => hi >= lo,
                    _ => true,
                };
                if !overlap {
                    significant += 1;
                }
            }
        }
    }
    (total, significant)
}

/// Smallest `C` with `rho(eps) <= 1 + C eps` on the grid.
pub fn fitted_inflation_constant(rhos: &[RhoEstimate]) -> Option<f64> {
    rhos.iter()
        .filter(|r| r.epsilon > 0.0)
        .map(|r| r.rho.map(|v| (v - 1.0) / r.epsilon))
        .collect::<Option<Vec<_>>>()
        .map(|v| v.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessResult {
    pub static_curve: Option<SweepGrid>,
    pub rho: Option<SweepGrid>,
    pub rho_estimates: Vec<RhoEstimate>,
    pub temporal: Option<SweepGrid>,
}

fn static_robustness(cfg: &RunConfig) -> Result<(SweepGrid, SweepGrid, Vec<RhoEstimate>)> {
    let r = &cfg.robustness;
    let seed = derive_seed(cfg.seed, &[SEED_ROBUST_STATIC]);
    let null = calibrate_null(r.n, r.p, r.k, r.alpha, r.null_replicates, derive_seed(seed, &[0]), &r.detector)?;
    let columns = ["epsilon", "mult", "k2chi2", "delta", "power", "ci_low", "ci_high", "replicates"];
    let mut curve = SweepGrid::new("robustness_static", &columns, cfg.seed, &cfg.timestamp);
    curve.set_meta("n", r.n);
    curve.set_meta("p", r.p);
    curve.set_meta("k", r.k);
    curve.set_meta("alpha", r.alpha);
    curve.set_meta("mode", r.mode);
    curve.set_meta("threshold", null.threshold);
    curve.set_meta("null_replicates", r.null_replicates);
    curve.set_meta("detector", serde_json::to_string(&r.detector)?);
    curve.set_meta("scale", format!("desk-scale Monte Carlo at n={}", r.n));
    curve.set_axis("epsilon", &r.epsilons);
    curve.set_axis("mult", &r.mults);
    let ln_n = (r.n as f64).ln();
    let mut curves = Vec::new();
    for &eps in &r.epsilons {
        let mut est = Vec::new();
        for (mi, &m) in r.mults.iter().enumerate() {
            let delta = delta_for_static_mult(r.n, r.p, r.k, m);
            // Common planted instances across epsilon; perturbations differ.
            let e = static_power(r.n, r.p, r.k, delta, null.threshold, r.replicates, derive_seed(seed, &[1, mi as u64]), &r.detector, Some((eps, r.mode)))?;
            curve.push(vec![
                eps.into(),
                m.into(),
                (m * ln_n).into(),
                delta.into(),
                e.power.into(),
                e.ci_low.into(),
                e.ci_high.into(),
                e.replicates.into(),
            ])?;
            est.push(e);
        }
        curves.push(est);
    }
    let cross = |est: &[PowerEstimate], f: fn(&PowerEstimate) -> f64| {
        let ys: Vec<f64> = est.iter().map(f).collect();
        crossing_point(&r.mults, &ys, 0.5)
    };
    let base = curves.first().and_then(|c| cross(c, |e| e.power));
    let mut rhos = Vec::new();
    for (&eps, est) in r.epsilons.iter().zip(&curves) {
        let c = cross(est, |e| e.power);
        let ratio = |x: Option<f64>| match (x, base) {
            (Some(x), Some(b)) => Some(x / b),
            _ => None,
        };
        let rho = if eps == 0.0 && c.is_some() { Some(1.0) } else { ratio(c) };
        rhos.push(RhoEstimate {
            epsilon: eps,
            crossing: c,
            rho,
            // The upper power band reaches 0.5 first.
            rho_low: ratio(cross(est, |e| e.ci_high)),
            rho_high: ratio(cross(est, |e| e.ci_low)),
        });
    }
    let mut summary = SweepGrid::new("robustness_rho", &["epsilon", "crossing_mult", "rho", "rho_low", "rho_high", "replicates"], cfg.seed, &cfg.timestamp);
    summary.set_axis("epsilon", &r.epsilons);
    let (inv, sig) = rho_inversions(&rhos);
    summary.set_meta("inversions", inv);
    summary.set_meta("significant_inversions", sig);
    summary.set_meta("fitted_c", fitted_inflation_constant(&rhos).map_or("undefined".into(), |c| c.to_string()));
    summary.set_meta("definition", "rho(eps) = k^2 chi^2 at power 0.5 under perturbation eps over the same at eps = 0");
    for rho in &rhos {
        summary.push(vec![
            rho.epsilon.into(),
            rho.crossing.into(),
            rho.rho.into(),
            rho.rho_low.into(),
            rho.rho_high.into(),
            (r.replicates * r.mults.len()).into(),
        ])?;
    }
    Ok((curve, summary, rhos))
}

/// Temporal part: each replicate stream is thinned at every `eps`, the
/// detector is matched to the thinned rates and recalibrated, and the mean
/// delay is compared with `1/(1 - eps)` times the unthinned delay.
fn temporal_robustness(cfg: &RunConfig) -> Result<SweepGrid> {
    let r = &cfg.robustness;
    let k = r.temporal_k;
    let pairs = (k * k.saturating_sub(1)) as u64;
    let info = aggregate_poisson_rate(PoissonShift::new(r.mu, r.delta)?, pairs);
    let predicted = expected_delay(r.temporal_alpha, info)?;
    let seed = derive_seed(cfg.seed, &[SEED_ROBUST_TEMPORAL]);
    let horizon = (30.0 * predicted / (1.0 - r.epsilons.iter().copied().fold(0.0, f64::max))).max(50.0).ceil();
    let columns = ["epsilon", "threshold", "achieved_arl", "mean_delay", "ci_low", "ci_high", "inflation", "predicted_inflation", "replicates", "censored"];
    let mut grid = SweepGrid::new("robustness_temporal", &columns, cfg.seed, &cfg.timestamp);
    grid.set_meta("mu", r.mu);
    grid.set_meta("delta", r.delta);
    grid.set_meta("k", k);
    grid.set_meta("alpha", r.temporal_alpha);
    grid.set_meta("info_rate", info);
    grid.set_meta("detector", "oracle-set CUSUM with rates scaled by (1 - eps), threshold recalibrated at ARL 1/alpha");
    grid.set_axis("epsilon", &r.epsilons);
    let streams = (0..r.temporal_replicates)
        .into_par_iter()
        .map(|i| simulate_poisson_network(k, r.mu, r.delta, k, 0.0, horizon, derive_seed(seed, &[1, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let mut base_delay = None;
    for (ei, &eps) in r.epsilons.iter().enumerate() {
        let model = LlrModel::Poisson { mu: (1.0 - eps) * r.mu, delta: (1.0 - eps) * r.delta };
        let h = 1.0 / r.mu;
        let mut cal = CalibrationConfig::new(model, h, 1.0 / r.temporal_alpha, ScanMode::Oracle, k, k, derive_seed(seed, &[0, ei as u64]));
        cal.replicates = r.calibration_replicates;
        let calibration = calibrate_arl(&cal)?;
        let det = TemporalDetectorConfig {
            model,
            h,
            threshold: calibration.threshold,
            window: None,
            mode: ScanMode::Oracle,
            k,
            top_m: None,
            record_path: false,
        };
        let outcomes = streams
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let thinned = s.thinned(eps, derive_seed(seed, &[2, i as u64]))?;
                Ok(detect_temporal(&thinned, &det)?.delay)
            })
            .collect::<Result<Vec<_>>>()?;
        let delays: Vec<f64> = outcomes.iter().flatten().copied().collect();
        let censored = outcomes.len() - delays.len();
        let (mean, half) = mean_ci(&delays);
        let base = *base_delay.get_or_insert(mean);
        grid.push(vec![
            eps.into(),
            calibration.threshold.into(),
            calibration.achieved_arl.into(),
            mean.into(),
            (mean - half).into(),
            (mean + half).into(),
            (mean / base).into(),
            (1.0 / (1.0 - eps)).into(),
            delays.len().into(),
            censored.into(),
        ])?;
    }
    Ok(grid)
}

/// Static power under edge perturbation and temporal delay under event
/// thinning across the epsilon grid.
pub fn robustness_experiment(cfg: &RunConfig) -> Result<RobustnessResult> {
    let r = &cfg.robustness;
    if r.epsilons.iter().any(|&e| !(0.0..=0.3).contains(&e)) {
        return Err(domain("robustness epsilons must lie in [0, 0.3]"));
    }
    let mut out = RobustnessResult { static_curve: None, rho: None, rho_estimates: Vec::new(), temporal: None };
    if r.static_part {
        let (curve, summary, rhos) = static_robustness(cfg)?;
        out.static_curve = Some(curve);
        out.rho = Some(summary);
        out.rho_estimates = rhos;
    }
    if r.temporal_part {
        out.temporal = Some(temporal_robustness(cfg)?);
    }
    Ok(out)
}

/// Closed-form quantities for the `threshold` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub n: u64,
    pub ln_n: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub static_part: Option<StaticThreshold>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temporal_part: Option<TemporalThreshold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticThreshold {
    pub p: f64,
    pub k: u64,
    pub delta_min: f64,
    pub delta_min_clamped: bool,
    pub sparse_lift: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureBound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalThreshold {
    pub info_rate: f64,
    pub required_horizon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_delay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThresholdQuery {
    pub n: u64,
    pub p: Option<f64>,
    pub k: Option<u64>,
    pub delta: Option<f64>,
    /// Temporal rate given directly, or via a Poisson lift on `pairs` pairs.
    pub info_rate: Option<f64>,
    pub mu: Option<f64>,
    pub delta_rate: Option<f64>,
    pub horizon: Option<f64>,
    pub alpha: Option<f64>,
}

pub fn threshold_report(q: &ThresholdQuery) -> Result<ThresholdReport> {
    if q.n < 2 {
        return Err(domain(format!("n={} must be at least 2", q.n)));
    }
    let ln_n = (q.n as f64).ln();
    let static_part = match (q.p, q.k) {
        (Some(p), Some(k)) => {
            let dm = delta_min(q.n, p, k)?;
            let c = q.n as f64 * p;
            let (chi2, margin, mixture) = match q.delta {
                Some(d) => {
                    let chi2 = chi_square_bernoulli(BernoulliShift::new(p, d)?);
                    (Some(chi2), Some((k * k) as f64 * chi2 - ln_n), Some(mixture_chi_square(q.n, k, chi2)?))
                }
                None => (None, None, None),
            };
            Some(StaticThreshold {
                p,
                k,
                delta_min: dm.value,
                delta_min_clamped: dm.clamped,
                sparse_lift: sparse_lift_threshold(q.n, c, k)?,
                delta: q.delta,
                chi2,
                margin,
                mixture,
            })
        }
        (None, None) => None,
        _ => return Err(Error::Config("static thresholds need both p and k".into())),
    };
    let rate = match (q.info_rate, q.mu, q.delta_rate) {
        (Some(i), _, _) => Some(i),
        (None, Some(mu), Some(d)) => {
            let pairs = q.k.map_or(1, |k| k * k.saturating_sub(1)).max(1);
            Some(poisson_kl_rate(PoissonShift::new(mu, d)?) * pairs as f64)
        }
        _ => None,
    };
    let temporal_part = match rate {
        Some(i) => Some(TemporalThreshold {
            info_rate: i,
            required_horizon: required_horizon(q.n, i)?,
            expected_delay: q.alpha.map(|a| expected_delay(a, i)).transpose()?,
            margin: q.horizon.map(|t| info_budget_temporal(q.n, t, i).map(|b| b.margin)).transpose()?,
        }),
        None => None,
    };
    if static_part.is_none() && temporal_part.is_none() {
        return Err(Error::Config("nothing to compute: give p and k, or a temporal rate".into()));
    }
    Ok(ThresholdReport { n: q.n, ln_n, static_part, temporal_part })
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::from)
}
