use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use detect_lab::graph_sim::{generate_null, generate_planted, perturb, read_graph, write_graph, PerturbMode, PerturbationBudget};
use detect_lab::harness::{
    case_study, ensure_dir, robustness_experiment, sweep_delay, sweep_static_heatmap, sweep_temporal_threshold, threshold_report,
    write_json, RunConfig, ThresholdQuery,
};
use detect_lab::sequential::{
    calibrate_arl, detect_temporal, write_path_csv, CalibrationConfig, LlrModel, ScanMode, TemporalDetectorConfig,
};
use detect_lab::spectral::{calibrate_null, detect_static, SpectralMethod, StaticDetectorConfig};
use detect_lab::temporal_sim::{
    read_events_csv, simulate_hawkes_network, simulate_poisson_network, write_events_csv, EventMetadata, EventStream, HawkesKernel,
};
use detect_lab::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "detect-lab", version, about = "Detectability thresholds and detectors for planted network anomalies")]
struct Cli {
    /// Run configuration (`key = value` text with sections, or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form thresholds: minimal lift, margins, horizons, delays.
    Threshold(ThresholdArgs),
    /// Sample a planted (or null) graph and write it as an edge list.
    SimulateStatic(SimulateStaticArgs),
    /// Calibrate and run the spectral test on a graph file.
    DetectStatic(DetectStaticArgs),
    /// Simulate a Poisson or Hawkes event network.
    SimulateTemporal(SimulateTemporalArgs),
    /// Run the CUSUM detector on an event file.
    DetectTemporal(DetectTemporalArgs),
    /// Calibrate a CUSUM threshold to a target average run length.
    Calibrate(CalibrateArgs),
    /// Parameter sweeps.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
    /// The worked example and its margin tables.
    CaseStudy,
}

#[derive(Subcommand, Debug)]
enum SweepKind {
    /// Static detectability heatmap over (k, delta).
    Heatmap {
        /// Add the desk-scale empirical power overlay.
        #[arg(long)]
        overlay: bool,
    },
    /// Required horizon over n.
    Temporal {
        #[arg(long)]
        overlay: bool,
    },
    /// Measured CUSUM delay against the first-order law.
    Delay,
    /// Perturbation and thinning experiments.
    Robustness,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    k: Option<u64>,
    /// Edge-probability lift for margin and mixture bound.
    #[arg(long)]
    delta: Option<f64>,
    /// Total information rate.
    #[arg(long)]
    info_rate: Option<f64>,
    /// Poisson baseline rate (with --delta-rate instead of --info-rate).
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    delta_rate: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateStaticArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Sample from the null model (no planted set).
    #[arg(long)]
    null: bool,
    /// Fraction of edges to perturb after sampling.
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    #[arg(long, default_value = "rewire")]
    perturb_mode: PerturbMode,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "graph.txt")]
    file: String,
}

#[derive(Args, Debug)]
struct DetectStaticArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "nb")]
    method: SpectralMethod,
    #[arg(long)]
    prune: bool,
    #[arg(long)]
    degree_normalize: bool,
    #[arg(long, default_value_t = 200)]
    calib_replicates: usize,
    /// Null edge probability; estimated from the graph when absent.
    #[arg(long)]
    p: Option<f64>,
    /// Use this threshold and skip calibration.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateTemporalArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    k: usize,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long)]
    horizon: f64,
    /// Hawkes kernel `a,beta,delta_h`; replaces the Poisson lift.
    #[arg(long)]
    hawkes: Option<String>,
    #[arg(long, default_value = "events.csv")]
    file: String,
}

#[derive(Args, Debug)]
struct DetectTemporalArgs {
    #[arg(long)]
    events: PathBuf,
    /// Metadata sidecar; defaults to `<events>.meta.json`.
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    mu: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long)]
    hawkes: Option<String>,
    /// Poisson-ized Hawkes increments from stationary rates.
    #[arg(long)]
    poissonized: bool,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value = "oracle")]
    mode: ScanMode,
    /// Scan size; defaults to the planted size in the metadata.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 200)]
    calib_replicates: usize,
    /// Also write the statistic path as `bin,G`.
    #[arg(long)]
    dump_path: bool,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    target_arl: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long)]
    hawkes: Option<String>,
    #[arg(long)]
    poissonized: bool,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, default_value = "oracle")]
    mode: ScanMode,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    window: Option<usize>,
    /// Track one ordered pair instead of a scan.
    #[arg(long)]
    single_pair: bool,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    /// Use the point estimate instead of the lower confidence bound.
    #[arg(long)]
    point_estimate: bool,
}

struct Ctx {
    config: RunConfig,
    out: PathBuf,
}

fn parse_hawkes(spec: &str) -> Result<(HawkesKernel, f64)> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad --hawkes value '{spec}' (expected a,beta,delta_h)"))))
        .collect::<Result<_>>()?;
    let [a, beta, delta_h] = parts[..] else {
        return Err(Error::Config(format!("--hawkes needs three values a,beta,delta_h, got '{spec}'")));
    };
    let kernel = HawkesKernel::new(a, beta)?;
    kernel.check_inflation(delta_h)?;
    Ok((kernel, delta_h))
}

fn llr_model(mu: f64, delta: f64, hawkes: Option<&str>, poissonized: bool) -> Result<LlrModel> {
    let model = match hawkes {
        Some(spec) => {
            let (kernel, delta_h) = parse_hawkes(spec)?;
            LlrModel::Hawkes { mu, kernel, delta_h, poissonized }
        }
        None => LlrModel::Poisson { mu, delta },
    };
    model.validate()?;
    Ok(model)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    // a closed pipe (e.g. `| head`) is not an error for the caller
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn emit_json<T: Serialize>(ctx: &Ctx, name: &str, value: &T) -> Result<()> {
    ensure_dir(&ctx.out)?;
    write_json(&ctx.out.join(name), value)?;
    print_json(value)
}

fn save_grid(ctx: &Ctx, name: &str, grid: &detect_lab::harness::SweepGrid) -> Result<()> {
    ensure_dir(&ctx.out)?;
    let path = ctx.out.join(name);
    grid.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn threshold(ctx: &Ctx, a: &ThresholdArgs) -> Result<()> {
    let q = ThresholdQuery {
        n: a.n,
        p: a.p,
        k: a.k,
        delta: a.delta,
        info_rate: a.info_rate,
        mu: a.mu,
        delta_rate: a.delta_rate,
        horizon: a.horizon,
        alpha: a.alpha,
    };
    emit_json(ctx, "threshold.json", &threshold_report(&q)?)
}

fn simulate_static(ctx: &Ctx, a: &SimulateStaticArgs) -> Result<()> {
    let seed = ctx.config.seed;
    let inst = if a.null { generate_null(a.n, a.p, seed)? } else { generate_planted(a.n, a.p, a.delta, a.k, seed)? };
    let graph = if a.perturb > 0.0 {
        perturb(&inst.graph, &PerturbationBudget::new(a.perturb, a.perturb_mode, detect_lab::rng::derive_seed(seed, &[0x9e7])))?
    } else {
        inst.graph
    };
    ensure_dir(&ctx.out)?;
    let path = ctx.out.join(&a.file);
    let planted = (!a.null).then_some(inst.planted.as_slice());
    write_graph(std::io::BufWriter::new(fs::File::create(&path)?), &graph, planted)?;
    println!("wrote {} (n={}, m={})", path.display(), graph.n(), graph.m());
    Ok(())
}

#[derive(Serialize)]
struct StaticVerdictOut {
    statistic: f64,
    threshold: f64,
    reject: bool,
    candidate_set: Vec<usize>,
    iterations_used: usize,
    converged: bool,
    p_null: f64,
    calibration_replicates: usize,
}

fn detect_static_cmd(ctx: &Ctx, a: &DetectStaticArgs) -> Result<()> {
    let file = read_graph(BufReader::new(fs::File::open(&a.graph)?))?;
    let g = file.graph;
    let cfg = StaticDetectorConfig { method: a.method, prune: a.prune, degree_normalize: a.degree_normalize, ..Default::default() };
    let pairs = g.pair_count().max(1) as f64;
    let p = a.p.unwrap_or(g.m() as f64 / pairs);
    let seed = ctx.config.seed;
    let (threshold, reps) = match a.threshold {
        Some(t) => (t, 0),
        None => (calibrate_null(g.n(), p, a.k, a.alpha, a.calib_replicates, seed, &cfg)?.threshold, a.calib_replicates),
    };
    let v = detect_static(&g, a.k, threshold, &cfg, seed)?;
    let out = StaticVerdictOut {
        statistic: v.statistic,
        threshold: v.threshold,
        reject: v.reject,
        candidate_set: v.candidate_set,
        iterations_used: v.iterations_used,
        converged: v.converged,
        p_null: p,
        calibration_replicates: reps,
    };
    emit_json(ctx, "verdict.json", &out)
}

fn meta_path(events: &Path) -> PathBuf {
    let mut s = events.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn simulate_temporal(ctx: &Ctx, a: &SimulateTemporalArgs) -> Result<()> {
    let seed = ctx.config.seed;
    let stream = match &a.hawkes {
        Some(spec) => {
            let (kernel, delta_h) = parse_hawkes(spec)?;
            simulate_hawkes_network(a.n, a.mu, kernel, delta_h, a.k, a.tau, a.horizon, seed)?
        }
        None => simulate_poisson_network(a.n, a.mu, a.delta, a.k, a.tau, a.horizon, seed)?,
    };
    ensure_dir(&ctx.out)?;
    let path = ctx.out.join(&a.file);
    write_events_csv(std::io::BufWriter::new(fs::File::create(&path)?), &stream)?;
    write_json(&meta_path(&path), &stream.metadata())?;
    println!("wrote {} ({} events)", path.display(), stream.total_events());
    Ok(())
}

fn load_stream(events: &Path, meta: Option<&Path>) -> Result<EventStream> {
    let meta_file = meta.map(Path::to_path_buf).unwrap_or_else(|| meta_path(events));
    let text = fs::read_to_string(&meta_file).map_err(|e| Error::Config(format!("cannot read {}: {e}", meta_file.display())))?;
    let meta: EventMetadata = serde_json::from_str(&text)?;
    let rows = read_events_csv(fs::File::open(events)?)?;
    EventStream::from_parts(meta, &rows)
}

fn detect_temporal_cmd(ctx: &Ctx, a: &DetectTemporalArgs) -> Result<()> {
    let stream = load_stream(&a.events, a.meta.as_deref())?;
    let model = llr_model(a.mu, a.delta, a.hawkes.as_deref(), a.poissonized)?;
    let h = a.h.unwrap_or(1.0 / a.mu);
    let k = a.k.unwrap_or(stream.planted.len());
    let threshold = match a.threshold {
        Some(b) => b,
        None => {
            let mut cal = CalibrationConfig::new(model, h, 1.0 / a.alpha, a.mode, stream.n, k, ctx.config.seed);
            cal.window = a.window;
            cal.replicates = a.calib_replicates;
            calibrate_arl(&cal)?.threshold
        }
    };
    let cfg = TemporalDetectorConfig { model, h, threshold, window: a.window, mode: a.mode, k, top_m: None, record_path: a.dump_path };
    let mut report = detect_temporal(&stream, &cfg)?;
    if let Some(path) = report.path.take() {
        ensure_dir(&ctx.out)?;
        write_path_csv(std::io::BufWriter::new(fs::File::create(ctx.out.join("path.csv"))?), &path)?;
    }
    emit_json(ctx, "alarm.json", &report)
}

fn calibrate_cmd(ctx: &Ctx, a: &CalibrateArgs) -> Result<()> {
    let model = llr_model(a.mu, a.delta, a.hawkes.as_deref(), a.poissonized)?;
    let h = a.h.unwrap_or(1.0 / a.mu);
    let mut cal = CalibrationConfig::new(model, h, a.target_arl, a.mode, a.n, a.k, ctx.config.seed);
    cal.window = a.window;
    cal.single_pair = a.single_pair;
    cal.replicates = a.replicates;
    cal.conservative = !a.point_estimate;
    let res = calibrate_arl(&cal)?;
    ensure_dir(&ctx.out)?;
    write_json(&ctx.out.join("calibration.json"), &res)?;
    println!("b = {}", res.threshold);
    println!("achieved ARL = {} bins (95% CI {} to {}, {} alarms)", res.achieved_arl, res.ci_low, res.ci_high, res.alarms);
    Ok(())
}

fn sweep(ctx: &Ctx, kind: &SweepKind) -> Result<()> {
    let mut cfg = ctx.config.clone();
    match kind {
        SweepKind::Heatmap { overlay } => {
            cfg.heatmap.overlay |= *overlay;
            let (grid, ov) = sweep_static_heatmap(&cfg)?;
            save_grid(ctx, "heatmap.csv", &grid)?;
            if let Some(ov) = ov {
                save_grid(ctx, "heatmap_overlay.csv", &ov)?;
            }
        }
        SweepKind::Temporal { overlay } => {
            cfg.temporal.overlay |= *overlay;
            let (grid, ov) = sweep_temporal_threshold(&cfg)?;
            save_grid(ctx, "temporal_threshold.csv", &grid)?;
            if let Some(ov) = ov {
                save_grid(ctx, "temporal_overlay.csv", &ov)?;
            }
        }
        SweepKind::Delay => save_grid(ctx, "delay.csv", &sweep_delay(&cfg)?)?,
        SweepKind::Robustness => {
            let r = robustness_experiment(&cfg)?;
            if let Some(g) = &r.static_curve {
                save_grid(ctx, "robustness_static.csv", g)?;
            }
            if let Some(g) = &r.rho {
                save_grid(ctx, "robustness_rho.csv", g)?;
            }
            if let Some(g) = &r.temporal {
                save_grid(ctx, "robustness_temporal.csv", g)?;
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Ctx { config, out };
    match &cli.command {
        Command::Threshold(a) => threshold(&ctx, a),
        Command::SimulateStatic(a) => simulate_static(&ctx, a),
        Command::DetectStatic(a) => detect_static_cmd(&ctx, a),
        Command::SimulateTemporal(a) => simulate_temporal(&ctx, a),
        Command::DetectTemporal(a) => detect_temporal_cmd(&ctx, a),
        Command::Calibrate(a) => calibrate_cmd(&ctx, a),
        Command::Sweep { kind } => sweep(&ctx, kind),
        Command::CaseStudy => emit_json(&ctx, "case_study.json", &case_study(&ctx.config)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
