//! Acceptance criteria, one PASS/FAIL/SKIP line each.
//!
//! MNIST criteria read the IDX files from `WPM_MNIST_DIR` (default
//! `<workspace>/data/mnist`) and are skipped when they are missing. The
//! process exits non-zero on any non-passing criterion only when
//! `WPM_ACCEPTANCE_STRICT=1`; otherwise the lines and the closing tally are
//! the result.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wpm_cli::config::RunConfig;
use wpm_cli::{cmd_run, cmd_verify, trace_csv, VerifyOptions};
use wpm_core::data::{partition, synthesize_blobs, PartitionMode};
use wpm_core::learners::{centralized_reference, lipschitz_estimate, ConvexModelSpec, ModelKind};
use wpm_core::power::{estimator_argmin_oracle, mirror_step, Grid, PowerConfig};
use wpm_core::simulator::reference::linear_consensus_sgd;
use wpm_core::simulator::{
    analyze_lemma1, analyze_regret, convergence_speed, run_wpm, ExperimentConfig, MetricsTrace,
    Problem, TraceRow,
};
use wpm_core::topology::{
    generate_sequence, mixing_analysis, mixing_constants, verify_assumption1, MixingMode,
};

const VERIFY_BUDGET: Duration = Duration::from_secs(120);
const LINEAR_TOL: f64 = 1e-14;
const ARGMIN_GRID: f64 = 1e-4;
const DIAGNOSTICS_BUDGET: Duration = Duration::from_secs(60);
const SPEEDUP_MIN: f64 = 0.20;
const SPEEDUP_TARGET: f64 = 0.85;
const SPEEDUP_BUDGET: Duration = Duration::from_secs(15 * 60);
const ACCURACY_MIN: f64 = 0.87;
const CONSENSUS_SLACK: f64 = 0.10;
const CONSENSUS_CHECKPOINTS: [usize; 5] = [100, 200, 300, 400, 500];

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn blobs_problem_data(m: usize, seed: u64) -> (wpm_core::data::Dataset, wpm_core::data::Dataset, wpm_core::data::Partition) {
    let all = synthesize_blobs(1200, 5, 3, 0.15, seed).unwrap();
    let train = all.subset(&(0..1000).collect::<Vec<_>>());
    let test = all.subset(&(1000..1200).collect::<Vec<_>>());
    let part = partition(&train, m, PartitionMode::Iid, seed).unwrap();
    (train, test, part)
}

fn criterion_verify() -> Outcome {
    let start = Instant::now();
    let report = cmd_verify(&VerifyOptions::default());
    let elapsed = start.elapsed();
    let failing: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    verdict(
        report.passed() && elapsed < VERIFY_BUDGET,
        format!("{} checks, failing {failing:?}, {:.1}s", report.checks.len(), elapsed.as_secs_f64()),
    )
}

fn criterion_linear() -> Outcome {
    let (train, test, part) = blobs_problem_data(10, 1);
    let spec = ConvexModelSpec::for_dataset(ModelKind::LogisticRegression, &train);
    let problem = Problem { spec, train: &train, test: &test, partition: &part };
    let cfg = ExperimentConfig {
        p: 1,
        eta0: 0.5,
        devices: 10,
        density: 0.3,
        iterations: 100,
        batch_size: 16,
        seed: 1,
        record_diagnostics: true,
        ..Default::default()
    };
    let topo = generate_sequence(10, 0.3, 100, 1, 1).unwrap();
    let diag = run_wpm(&cfg, &topo, &problem).unwrap().diagnostics.unwrap();
    let oracle = linear_consensus_sgd(&cfg, &topo, &problem).unwrap();
    let worst = diag
        .updated
        .iter()
        .zip(&oracle)
        .flat_map(|(a, b)| a.iter().zip(b))
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max);
    verdict(worst <= LINEAR_TOL, format!("max per-coordinate deviation {worst:e} (tol {LINEAR_TOL:e})"))
}

fn criterion_argmin() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = Grid { lo: -2.0, hi: 2.0, step: ARGMIN_GRID };
    let mut worst = 0.0_f64;
    for p in [1, 3, 5, 9, 15] {
        for _ in 0..50 {
            let y = rng.random_range(0.2..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let g = rng.random_range(-1.0..1.0);
            let cfg = PowerConfig::new(p, rng.random_range(0.1..0.9)).unwrap();
            let closed = mirror_step(&[y], &[g], &cfg).unwrap()[0];
            worst = worst.max((closed - estimator_argmin_oracle(y, g, &cfg, grid)).abs());
        }
    }
    verdict(worst <= ARGMIN_GRID, format!("5 x 50 instances, max gap {worst:e} (grid {ARGMIN_GRID:e})"))
}

fn criterion_mixing() -> Outcome {
    let mut violations = 0;
    let mut sequences = 0;
    let mut pairs = 0;
    for m in [5, 10] {
        for window in [1, 2] {
            for seed in 0..5 {
                let seq = generate_sequence(m, 0.5, 50, window, 100 + seed).unwrap();
                let zeta = verify_assumption1(&seq).min_positive_entry;
                let r = mixing_analysis(&seq, zeta, MixingMode::Full);
                violations += r.violations;
                pairs += r.pairs_checked;
                sequences += 1;
            }
        }
    }
    verdict(violations == 0, format!("{sequences} sequences, {pairs} (t, tau) pairs, {violations} violations"))
}

fn criterion_diagnostics() -> Outcome {
    let start = Instant::now();
    let (m, p, t_len) = (5, 3, 100);
    let (train, test, part) = blobs_problem_data(m, 5);
    let spec = ConvexModelSpec::for_dataset(ModelKind::LogisticRegression, &train);
    let problem = Problem { spec, train: &train, test: &test, partition: &part };
    let cfg = ExperimentConfig {
        p,
        eta0: 0.5,
        devices: m,
        density: 0.5,
        iterations: t_len,
        batch_size: 16,
        seed: 5,
        record_diagnostics: true,
        ..Default::default()
    };
    let topo = generate_sequence(m, 0.5, t_len, 1, 5).unwrap();
    let diag = run_wpm(&cfg, &topo, &problem).unwrap().diagnostics.unwrap();
    let zeta = verify_assumption1(&topo).min_positive_entry;
    let (vartheta, kappa) = mixing_constants(zeta, m, topo.window());
    let g = lipschitz_estimate(&spec, &train);
    let lemma = analyze_lemma1(&diag, vartheta, kappa, g);
    let x_star = centralized_reference(&spec, &train, 0.5, 500, 0).unwrap();
    let regret = analyze_regret(&diag, &spec, &train, &x_star, vartheta, kappa, g).unwrap();
    let elapsed = start.elapsed();
    verdict(
        lemma.violations == 0 && regret.holds() && elapsed < DIAGNOSTICS_BUDGET,
        format!(
            "lemma violations {}, regret lhs {:.4} <= rhs {:.4}, {:.1}s",
            lemma.violations,
            regret.lhs,
            regret.rhs,
            elapsed.as_secs_f64()
        ),
    )
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("WPM_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn mnist_present(dir: &Path) -> bool {
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .iter()
        .all(|f| dir.join(f).is_file())
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Runs the desk-scale MNIST setup for each `p` and returns the traces.
fn mnist_sweep(name: &str, partition: &str, ps: &str) -> Result<(Vec<(u32, MetricsTrace)>, Duration), String> {
    let dir = mnist_dir();
    let text = format!(
        "dataset=mnist\ndata_dir={}\ntrain_limit=10000\ntest_limit=2000\nmodel=lr\n\
         devices=10\ndensity=0.3\niterations=500\nbatch_size=128\neta0=0.01\nseed=0\n\
         partition={partition}\np={ps}\ntarget_accuracy={SPEEDUP_TARGET}\n",
        dir.display()
    );
    let cfg = RunConfig::parse(&text, Path::new(".")).map_err(|e| e.to_string())?;
    let out = scratch(name);
    let start = Instant::now();
    cmd_run(&cfg, &out).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let mut traces = Vec::new();
    for &p in &cfg.p_values {
        let sub = if cfg.p_values.len() > 1 { out.join(format!("p{p}")) } else { out.clone() };
        let rows = trace_csv::from_csv(&fs::read_to_string(sub.join("trace.csv")).unwrap())?;
        traces.push((p, MetricsTrace { rows, final_models: Vec::new(), config: cfg.experiment.clone() }));
    }
    Ok((traces, elapsed))
}

fn fmt_iter(t: Option<usize>) -> String {
    t.map_or_else(|| "never".to_string(), |t| t.to_string())
}

fn criterion_speedup() -> Outcome {
    if !mnist_present(&mnist_dir()) {
        return Outcome::Skip(format!("MNIST not found in {}", mnist_dir().display()));
    }
    let (traces, elapsed) = match mnist_sweep("speedup", "non-iid", "1,15") {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let t1 = convergence_speed(&traces[0].1, SPEEDUP_TARGET);
    let t15 = convergence_speed(&traces[1].1, SPEEDUP_TARGET);
    let final_acc = |k: usize| traces[k].1.rows.last().map_or(f64::NAN, |r| r.mean_accuracy);
    // A run that never reaches the target needs more than T iterations, so
    // T is a lower bound for its count.
    let horizon = traces[0].1.rows.len();
    let ok = match (t15, t1) {
        (Some(a), Some(b)) => (a as f64) <= (1.0 - SPEEDUP_MIN) * b as f64,
        (Some(a), None) => (a as f64) <= (1.0 - SPEEDUP_MIN) * horizon as f64,
        (None, _) => false,
    };
    verdict(
        ok && elapsed < SPEEDUP_BUDGET,
        format!(
            "iterations to {SPEEDUP_TARGET}: p=15 {}, p=1 {} (final {:.4} / {:.4}), {:.0}s",
            fmt_iter(t15),
            fmt_iter(t1),
            final_acc(1),
            final_acc(0),
            elapsed.as_secs_f64()
        ),
    )
}

fn checkpoint(rows: &[TraceRow], t: usize) -> f64 {
    // Row t-1 holds the models after t updates.
    rows[t - 1].consensus_distance
}

fn criteria_iid() -> (Outcome, Outcome) {
    if !mnist_present(&mnist_dir()) {
        let why = format!("MNIST not found in {}", mnist_dir().display());
        return (Outcome::Skip(why.clone()), Outcome::Skip(why));
    }
    let (traces, _) = match mnist_sweep("iid", "iid", "3,15") {
        Ok(r) => r,
        Err(e) => return (Outcome::Fail(e.clone()), Outcome::Fail(e)),
    };
    let acc = traces[1].1.rows.last().map_or(f64::NAN, |r| r.mean_accuracy);
    let accuracy = verdict(acc >= ACCURACY_MIN, format!("p=15 final mean accuracy {acc:.4} (min {ACCURACY_MIN})"));

    let rows = &traces[0].1.rows;
    let values: Vec<f64> = CONSENSUS_CHECKPOINTS.iter().map(|&t| checkpoint(rows, t)).collect();
    let ok = values.windows(2).all(|w| w[1] <= w[0] * (1.0 + CONSENSUS_SLACK));
    let shown: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    let consensus = verdict(ok, format!("p=3 consensus at t=100..500: {}", shown.join(" -> ")));
    (accuracy, consensus)
}

fn criterion_determinism() -> Outcome {
    let dir = scratch("determinism");
    let cfg = dir.join("config.txt");
    fs::write(&cfg, "p=3\ndevices=5\ndensity=0.5\niterations=40\nbatch_size=16\neta0=0.5\nseed=11\n").unwrap();
    let mut traces = Vec::new();
    for name in ["first", "second"] {
        let out = dir.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_wpm"))
            .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap()
            .status;
        if !status.success() {
            return Outcome::Fail(format!("run exited with {status}"));
        }
        traces.push(fs::read(out.join("trace.csv")).unwrap());
    }
    verdict(traces[0] == traces[1], format!("two runs, {} bytes each, identical: {}", traces[0].len(), traces[0] == traces[1]))
}

fn main() {
    // `cargo test -- --list` and name filters come through as arguments.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let strict = std::env::var("WPM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {n}. {name}: {detail}");
        results.push((n, name, outcome));
    };

    report(1, "property suite", criterion_verify());
    report(2, "linear special case", criterion_linear());
    report(3, "mirror step argmin", criterion_argmin());
    report(4, "mixing bound", criterion_mixing());
    report(5, "consensus and regret bounds", criterion_diagnostics());
    report(6, "non-iid convergence speedup", criterion_speedup());
    let (accuracy, consensus) = criteria_iid();
    report(7, "iid accuracy", accuracy);
    report(8, "consensus distance trend", consensus);
    report(9, "determinism", criterion_determinism());

    let passed = results.iter().filter(|r| matches!(r.2, Outcome::Pass(_))).count();
    println!("acceptance: {passed} of {} criteria passed", results.len());
    if strict && passed != results.len() {
        std::process::exit(1);
    }
}
