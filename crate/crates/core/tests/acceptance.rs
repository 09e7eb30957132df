//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use detect_lab::graph_sim::generate_er;
use detect_lab::harness::{delta_for_static_mult, robustness_experiment, static_power, RunConfig, SweepGrid};
use detect_lab::info_metrics::*;
use detect_lab::rng::stream;
use detect_lab::sequential::*;
use detect_lab::spectral::*;
use detect_lab::temporal_sim::simulate_poisson_network;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within_time(start: Instant, limit: Duration, checks: &mut Vec<String>) -> bool {
    let took = start.elapsed();
    let ok = took <= limit;
    if !ok {
        checks.push(format!("runtime {:.1}s exceeds {:.0}s", took.as_secs_f64(), limit.as_secs_f64()));
    }
    ok
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_detect-lab"))
}

// 1. Worked example through the CLI.
fn case_study() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = cli().args(["case-study", "--out"]).arg(dir.path()).output().unwrap();
    let mut notes = Vec::new();
    let timely = within_time(start, Duration::from_secs(1), &mut notes);
    if !out.status.success() {
        return outcome(false, format!("exit {:?}", out.status.code()));
    }
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("case_study.json")).unwrap()).unwrap();
    let ln_n = v["ln_n"].as_f64().unwrap();
    let dmin = v["delta_min"].as_f64().unwrap();
    let lift = v["relative_lift"].as_f64().unwrap();
    let ok_ln = format!("{ln_n:.4}") == "11.5129";
    let ok_d = (dmin - 6.74e-4).abs() / 6.74e-4 <= 0.01;
    let ok_lift = (lift * 100.0 - 6.7).abs() <= 0.1;
    outcome(
        ok_ln && ok_d && ok_lift && timely,
        format!("ln n = {ln_n:.4}, delta_min = {dmin:.4e}, lift = {:.3}% {}", lift * 100.0, notes.join("; ")),
    )
}

// 2. Horizon and delay anchors.
fn anchors() -> Outcome {
    let start = Instant::now();
    let t = required_horizon(1_000_000, 0.1).unwrap();
    let d = expected_delay(1e-4, 1.0).unwrap();
    let mut notes = Vec::new();
    let timely = within_time(start, Duration::from_secs(1), &mut notes);
    let pass = (138.0..=138.2).contains(&t) && (9.21..=9.22).contains(&d) && timely;
    outcome(pass, format!("required_horizon = {t:.4}, expected_delay = {d:.4} {}", notes.join("; ")))
}

// 3. Closed forms against definitional sums.
fn exact_formulas() -> Outcome {
    let start = Instant::now();
    let mut rng = stream(3, &[1]);
    let mut worst_chi = 0.0f64;
    for _ in 0..10_000 {
        let p: f64 = rng.random_range(1e-4..0.9999);
        let delta = rng.random::<f64>() * (1.0 - p);
        let got = chi_square_bernoulli(BernoulliShift::new(p, delta).unwrap());
        let want = common::chi_square_definitional(p, delta);
        worst_chi = worst_chi.max((got - want).abs() / want.max(1.0));
    }
    let mut worst_kl = 0.0f64;
    for _ in 0..400 {
        let mu: f64 = rng.random_range(0.01..50.0);
        let delta = rng.random_range(0.0..2.0) * mu;
        let got = poisson_kl_rate(PoissonShift::new(mu, delta).unwrap());
        let want = common::poisson_kl_series(mu, delta);
        worst_kl = worst_kl.max((got - want).abs() / want.max(1.0));
    }
    let mut ratio_lo = f64::INFINITY;
    let mut ratio_hi = 0.0f64;
    for mu in [0.1, 1.0, 7.5, 50.0] {
        for frac in [1e-6, 1e-4, 1e-3, 0.005, 0.01, 0.02] {
            let delta = frac * mu;
            let r = poisson_kl_rate(PoissonShift::new(mu, delta).unwrap()) / (delta * delta / (2.0 * mu));
            ratio_lo = ratio_lo.min(r);
            ratio_hi = ratio_hi.max(r);
        }
    }
    let mut notes = Vec::new();
    let timely = within_time(start, Duration::from_secs(10), &mut notes);
    let pass = worst_chi <= 1e-12 && worst_kl <= 1e-9 && ratio_lo >= 0.99 && ratio_hi <= 1.01 && timely;
    outcome(
        pass,
        format!(
            "chi2 max rel err {worst_chi:.1e}, KL max err {worst_kl:.1e}, small-delta ratio in [{ratio_lo:.4}, {ratio_hi:.4}] {}",
            notes.join("; ")
        ),
    )
}

// 4. Mixture second moment against enumeration.
fn mixture_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in 2..=10usize {
        for k in 2..=n.min(4) {
            for chi2 in [0.0, 0.05, 0.5] {
                let got = mixture_chi_square(n as u64, k as u64, chi2).unwrap().chi2_mixture;
                let want = common::mixture_chi_square_bruteforce(n, k, chi2);
                worst = worst.max((got - want).abs());
                cases += 1;
            }
        }
    }
    let special = mixture_chi_square(4, 2, 0.1).unwrap().chi2_mixture;
    let mut notes = Vec::new();
    let timely = within_time(start, Duration::from_secs(30), &mut notes);
    let pass = worst <= 1e-12 && (special - 1.0 / 60.0).abs() <= 1e-12 && timely;
    outcome(pass, format!("{cases} cases, max abs err {worst:.1e}, (4,2,0.1) -> {special:.15} {}", notes.join("; ")))
}

// 5. Non-backtracking operator.
fn nb_operator() -> Outcome {
    let mut worst = 0.0f64;
    let mut rowsum_ok = true;
    let mut instances = 0;
    let mut seed = 0u64;
    while instances < 50 {
        seed += 1;
        let n = 4 + (seed as usize % 27);
        let g = generate_er(n, 0.2, 1000 + seed).unwrap();
        if g.m() == 0 {
            continue;
        }
        instances += 1;
        let op = build_nb_operator(&g).unwrap();
        let dense = common::dense_nb_matrix(&g);
        let mut rng = stream(seed, &[5]);
        let x: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = common::mat_vec(&dense, &x);
        for (a, b) in op.apply(&x).iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        let ones = op.apply(&vec![1.0; op.dim()]);
        let idx = op.index();
        rowsum_ok &= ones.iter().enumerate().all(|(e, &v)| v == (g.degree(idx.head(e)) - 1) as f64);
    }
    let mut regular_err = 0.0f64;
    for (g, d) in [(common::petersen(), 3usize), (common::circulant(13, 4), 4), (common::circulant(15, 6), 6)] {
        let op = build_nb_operator(&g).unwrap();
        let mut cfg = PowerConfig::new(g.n());
        cfg.max_iters = 5000;
        cfg.tol = 1e-13;
        let res = nb_power_iteration(&op, &cfg).unwrap();
        regular_err = regular_err.max((res.leading_value - (d - 1) as f64).abs());
    }
    let pass = worst <= 1e-12 && rowsum_ok && regular_err <= 1e-6;
    outcome(pass, format!("{instances} graphs, max abs err {worst:.1e}, row sums exact: {rowsum_ok}, regular |lambda-(d-1)| <= {regular_err:.1e}"))
}

// 6. Static phase transition at desk scale.
fn static_transition() -> Outcome {
    let start = Instant::now();
    let (n, p, k, alpha, reps) = (2000usize, 0.005, 60usize, 0.05, 200usize);
    let det = StaticDetectorConfig::pruned();
    let null = calibrate_null(n, p, k, alpha, 400, 61, &det).unwrap();
    let mults = [0.2, 1.0, 10.0, 100.0, 300.0, 1000.0];
    let mut est = Vec::new();
    for (i, &m) in mults.iter().enumerate() {
        let delta = delta_for_static_mult(n, p, k, m);
        est.push(static_power(n, p, k, delta, null.threshold, reps, 6000 + i as u64, &det, None).unwrap());
    }
    let inversions = est.windows(2).filter(|w| w[1].ci_high < w[0].ci_low).count();
    let low = est[0].power;
    let high = est[2].power;
    let mut notes = Vec::new();
    let timely = within_time(start, Duration::from_secs(20 * 60), &mut notes);
    let curve: Vec<String> = mults.iter().zip(&est).map(|(m, e)| format!("{m}:{:.3}", e.power)).collect();
    let pass = low <= 0.15 && high >= 0.90 && inversions <= 1 && timely;
    outcome(
        pass,
        format!(
            "power at 0.2 ln n = {low:.3} (<= 0.15), at 10 ln n = {high:.3} (>= 0.90), CI inversions {inversions}; curve (mult:power) {} {}",
            curve.join(" "),
            notes.join("; ")
        ),
    )
}

// 7. CUSUM recursion and post-change drift.
fn cusum_exactness() -> Outcome {
    let mut rng = stream(7, &[1]);
    let incs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-1.0..0.98)).collect();
    let page = cusum_path(&incs, None).unwrap();
    let brute = common::cusum_bruteforce(&incs, None);
    let worst = page.iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let (mu, delta, h) = (1.0, 1.0, 1.0);
    let stream_h1 = simulate_poisson_network(2, mu, delta, 2, 0.0, 50_000.0, 17).unwrap();
    let model = LlrModel::Poisson { mu, delta };
    let bins = bin_count(stream_h1.horizon, h);
    let mut all = Vec::with_capacity(2 * bins);
    for (i, j) in [(0, 1), (1, 0)] {
        all.extend(model.increments(stream_h1.pair_events(i, j), bins, h));
    }
    let count = all.len() as f64;
    let mean = all.iter().sum::<f64>() / count;
    let sd = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1.0)).sqrt();
    let expect = alternative_drift(mu, delta, h).unwrap();
    let z = (mean - expect) / (sd / count.sqrt());
    let pass = worst <= 1e-12 && z.abs() <= 3.0;
    outcome(pass, format!("recursion max err {worst:.1e}; mean increment {mean:.5} vs h*KL {expect:.5} over {count} bins (z = {z:.2})"))
}

// 8. Detection delay against the first-order law.
fn delay_law() -> Outcome {
    let start = Instant::now();
    let deltas = [0.5, 1.0, 2.0];
    let rates: Vec<f64> = deltas.iter().map(|&d| 2.0 * poisson_kl_rate(PoissonShift::new(1.0, d).unwrap())).collect();
    let mut cfg = DelayCurveConfig::new(rates, 1e-2, 500, 88);
    cfg.mode = ScanMode::Oracle;
    let points = delay_curve(&cfg).unwrap();
    let main = &points[1];
    let mut by_pred: Vec<&DelayPoint> = points.iter().collect();
    by_pred.sort_by(|a, b| a.predicted.total_cmp(&b.predicted));
    let decreasing = by_pred.windows(2).all(|w| w[1].ratio < w[0].ratio);
    let mut notes = Vec::new();
    let timely = within_time(start, Duration::from_secs(600), &mut notes);
    let table: Vec<String> = points.iter().map(|p| format!("I={:.4}: pred {:.2}, ratio {:.3}", p.info_rate, p.predicted, p.ratio)).collect();
    let pass = (0.7..=1.6).contains(&main.ratio) && decreasing && timely;
    outcome(pass, format!("delta=1 ratio {:.3} in [0.7, 1.6]; ratio falls as predicted delay grows: {decreasing}; {} {}", main.ratio, table.join("; "), notes.join("; ")))
}

// 9. Average run length calibration.
fn arl_calibration() -> Outcome {
    let model = LlrModel::Poisson { mu: 1.0, delta: 1.0 };
    let cfg = CalibrationConfig::new(model, 1.0, 100.0, ScanMode::Oracle, 2, 2, 99);
    let cal = calibrate_arl(&cfg).unwrap();
    let max_bins = 20_000;
    let runs = null_run_lengths(&cfg, cal.threshold, 400, max_bins, 990).unwrap();
    let censored = runs.iter().filter(|r| r.is_none()).count();
    let mean = runs.iter().map(|r| r.unwrap_or(max_bins) as f64).sum::<f64>() / runs.len() as f64;
    let mut eval = ArlEvaluator::new(&cfg).unwrap();
    let grid: Vec<f64> = (0..=20).map(|i| cal.threshold * 2.0 * i as f64 / 20.0).collect();
    let arls: Vec<f64> = grid.iter().map(|&b| eval.arl(b).arl).collect();
    let monotone = arls.windows(2).all(|w| w[1] >= w[0]);
    let pass = (100.0..=200.0).contains(&mean) && monotone && censored == 0;
    outcome(
        pass,
        format!(
            "b = {:.4}, calibrated ARL {:.1}; fresh mean run length {mean:.1} over 400 runs ({censored} censored); ARL monotone over 21 thresholds: {monotone}",
            cal.threshold, cal.achieved_arl
        ),
    )
}

// 10. Robustness to perturbation and thinning.
fn robustness() -> Outcome {
    let res = robustness_experiment(&RunConfig::default()).unwrap();
    let rhos = &res.rho_estimates;
    let rho0 = rhos[0].rho;
    let (inv, sig) = detect_lab::harness::rho_inversions(rhos);
    let c = detect_lab::harness::fitted_inflation_constant(rhos);
    let temporal = res.temporal.unwrap();
    let col = |g: &SweepGrid, name: &str| -> Vec<f64> { g.numeric_column(name).unwrap().into_iter().map(|v| v.unwrap()).collect() };
    let eps = col(&temporal, "epsilon");
    let infl = col(&temporal, "inflation");
    let pred = col(&temporal, "predicted_inflation");
    let within = infl.iter().zip(&pred).all(|(a, b)| (a / b - 1.0).abs() <= 0.2);
    let rho_text: Vec<String> = rhos.iter().map(|r| format!("{}:{}", r.epsilon, r.rho.map_or("none".into(), |v| format!("{v:.3}")))).collect();
    let infl_text: Vec<String> = eps.iter().zip(infl.iter().zip(&pred)).map(|(e, (a, b))| format!("{e}:{a:.3}/{b:.3}")).collect();
    let all_defined = rhos.iter().all(|r| r.rho.is_some());
    let pass = rho0 == Some(1.0) && all_defined && sig <= 1 && within;
    outcome(
        pass,
        format!(
            "rho {} ({inv} inversions, {sig} beyond CI), fitted C {}; thinning inflation measured/predicted {}",
            rho_text.join(" "),
            c.map_or("undefined".into(), |v| format!("{v:.2}")),
            infl_text.join(" ")
        ),
    )
}

const REPRO_CONFIG: &str = r#"
experiment = "repro"
seed = 11

[heatmap]
overlay_n = 300
overlay_p = 0.03
overlay_k = 15
overlay_mults = [1.0, 100.0]
replicates = 20
null_replicates = 40

[temporal]
overlay_n = 8
horizon_mults = [0.5, 2.0]
replicates = 30
null_replicates = 30

[delay]
info_rates = [1.0, 2.0]
alpha = 0.01
replicates = 30
calibration_replicates = 100

[robustness]
n = 300
p = 0.03
k = 15
mults = [50.0, 200.0]
epsilons = [0.0, 0.1]
replicates = 20
null_replicates = 40
temporal_replicates = 40
temporal_alpha = 0.01
calibration_replicates = 100
"#;

fn invocations(work: &Path) -> Vec<Vec<String>> {
    let graph = work.join("graph.txt");
    let events = work.join("events.csv");
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        s(&["threshold", "--n", "100000", "--p", "0.01", "--k", "500", "--delta", "0.001", "--info-rate", "0.1", "--alpha", "0.01"]),
        s(&["simulate-static", "--n", "300", "--p", "0.03", "--k", "15", "--delta", "0.3"]),
        s(&["simulate-static", "--n", "300", "--p", "0.03", "--null", "--perturb", "0.1", "--file", "null.txt"]),
        s(&["detect-static", "--graph", graph.to_str().unwrap(), "--k", "15", "--prune", "--calib-replicates", "40"]),
        s(&["simulate-temporal", "--n", "5", "--mu", "1", "--delta", "2", "--k", "2", "--tau", "30", "--horizon", "120"]),
        s(&["simulate-temporal", "--n", "3", "--k", "2", "--tau", "30", "--horizon", "80", "--hawkes", "0.3,1.5,0.8", "--file", "hawkes.csv"]),
        s(&["detect-temporal", "--events", events.to_str().unwrap(), "--mu", "1", "--delta", "2", "--alpha", "0.01", "--calib-replicates", "100", "--dump-path"]),
        s(&["calibrate", "--target-arl", "100"]),
        s(&["sweep", "heatmap", "--overlay"]),
        s(&["sweep", "temporal", "--overlay"]),
        s(&["sweep", "delay"]),
        s(&["sweep", "robustness"]),
        s(&["case-study"]),
    ]
}

fn run_all(out: &Path, config: &Path) -> Result<(), String> {
    std::fs::create_dir_all(out).unwrap();
    for args in invocations(out) {
        let o = cli().arg("--config").arg(config).arg("--seed").arg("12345").arg("--out").arg(out).args(&args).output().unwrap();
        if !o.status.success() {
            return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)));
        }
    }
    Ok(())
}

// 11. Byte-identical artifacts across runs.
fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("repro.toml");
    std::fs::write(&config, REPRO_CONFIG).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if let Err(e) = run_all(&a, &config).and_then(|_| run_all(&b, &config)) {
        return outcome(false, e);
    }
    let mut names: Vec<String> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    let differing: Vec<&String> = names.iter().filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok()).collect();
    let pass = differing.is_empty() && names.len() >= 15;
    outcome(pass, format!("{} files compared, {} differ {:?}", names.len(), differing.len(), differing))
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "case study", case_study),
        (2, "horizon and delay anchors", anchors),
        (3, "exact formulas", exact_formulas),
        (4, "mixture oracle", mixture_oracle),
        (5, "non-backtracking operator", nb_operator),
        (6, "static phase transition", static_transition),
        (7, "CUSUM exactness and drift", cusum_exactness),
        (8, "delay law", delay_law),
        (9, "ARL calibration", arl_calibration),
        (10, "robustness", robustness),
        (11, "reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    println!("\nacceptance criteria");
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let tag = if res.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {tag} {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), res.detail.trim_end());
        if !res.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
