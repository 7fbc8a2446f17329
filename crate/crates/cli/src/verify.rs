//! Numerical self-checks of the power maps, weight rule, mixing bound,
//! gradients and the linear special case.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wpm_core::data::{partition, synthesize_blobs, Dataset, PartitionMode};
use wpm_core::learners::{batch_loss, loss_and_grad, ConvexModelSpec, ModelKind};
use wpm_core::power::{
    bregman_divergence, estimator_argmin_oracle, mirror_step, signed_pow_int, signed_root,
    verify_power_inequalities, Grid, PowerConfig,
};
use wpm_core::simulator::reference::linear_consensus_sgd;
use wpm_core::simulator::{run_wpm, ExperimentConfig, Init, Problem};
use wpm_core::topology::{
    generate_sequence, mixing_analysis, verify_assumption1, verify_assumption1_with,
    weights_from_graph, Graph, MixingMode, WeightMatrix,
};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub p_values: Vec<u32>,
    pub seed: u64,
    /// Samples per exponent for the sampled inequality checks.
    pub samples: usize,
    pub graphs: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            p_values: vec![1, 2, 3, 5, 9, 15],
            seed: 0,
            samples: 10_000,
            graphs: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<28} {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const INEQUALITY_TOL: f64 = -1e-10;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const STOCHASTICITY_TOL: f64 = 1e-12;
pub const LINEAR_TOL: f64 = 1e-14;
pub const ARGMIN_GRID: f64 = 1e-4;

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn round_trips(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0_f64;
    for &p in &opts.p_values {
        for _ in 0..opts.samples {
            let x: f64 = rng.random_range(-10.0..10.0);
            if x.abs() < 1e-6 {
                continue;
            }
            let back = signed_root(signed_pow_int(x, p), p);
            worst = worst.max((back - x).abs() / x.abs());
        }
    }
    check("signed-power round trip", worst <= 1e-12, format!("max relative error {worst:e}"))
}

fn inequalities(opts: &VerifyOptions) -> CheckResult {
    let mut worst1 = f64::INFINITY;
    let mut worst2 = f64::INFINITY;
    let mut error = None;
    for &p in &opts.p_values {
        match verify_power_inequalities(p, opts.samples, 1.0, opts.seed ^ u64::from(p)) {
            Ok(r) => {
                worst1 = worst1.min(r.min_margin_lower_bound);
                worst2 = worst2.min(r.min_margin_strong_convexity);
            }
            Err(e) => error = Some(format!("p={p}: {e}")),
        }
    }
    match error {
        Some(e) => check("power inequalities", false, e),
        None => check(
            "power inequalities",
            worst1 >= INEQUALITY_TOL && worst2 >= INEQUALITY_TOL,
            format!("min margins {worst1:e} (power gap), {worst2:e} (strong convexity)"),
        ),
    }
}

fn bregman(opts: &VerifyOptions, rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = f64::INFINITY;
    for &p in &opts.p_values {
        for _ in 0..opts.samples {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            worst = worst.min(bregman_divergence(&x, &y, p).unwrap_or(f64::NEG_INFINITY));
        }
    }
    check("bregman nonnegativity", worst >= 0.0, format!("min divergence {worst:e}"))
}

fn random_graph(rng: &mut ChaCha8Rng) -> Graph {
    let m = rng.random_range(2..=20);
    let prob: f64 = rng.random();
    let mut g = Graph::empty(m);
    for i in 0..m {
        for j in i + 1..m {
            if rng.random_bool(prob) {
                g.add_edge(i, j);
            }
        }
    }
    g
}

fn weight_rule(opts: &VerifyOptions, rng: &mut ChaCha8Rng, rule: &dyn Fn(&Graph) -> WeightMatrix) -> CheckResult {
    let mut worst = 0.0_f64;
    let mut failures = 0;
    for _ in 0..opts.graphs {
        let g = random_graph(rng);
        let w = rule(&g);
        worst = worst.max(w.stochasticity_error());
        let floor = 1.0 / (g.max_degree() as f64 + 1.0);
        let nonneg = w.entries().iter().all(|&a| a >= 0.0);
        if w.stochasticity_error() > STOCHASTICITY_TOL || !w.is_symmetric(0.0) || !nonneg || w.min_positive() < floor * (1.0 - 1e-12) {
            failures += 1;
        }
    }
    let mut seq_failures = 0;
    for seed in 0..10 {
        let seq = generate_sequence(8, 0.3, 30, 2, opts.seed.wrapping_add(seed)).expect("feasible parameters");
        if !verify_assumption1_with(&seq, rule).passes(STOCHASTICITY_TOL) {
            seq_failures += 1;
        }
    }
    check(
        "doubly stochastic weights",
        failures == 0 && seq_failures == 0,
        format!(
            "{} graphs, {failures} failing, max row/column error {worst:e}; {seq_failures}/10 sequences failing",
            opts.graphs
        ),
    )
}

fn mixing(opts: &VerifyOptions) -> CheckResult {
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut runs = 0;
    for m in [5, 10] {
        for window in [1, 2] {
            for k in 0..5 {
                let seq = generate_sequence(m, 0.5, 50, window, opts.seed.wrapping_add(k)).expect("feasible parameters");
                let zeta = verify_assumption1(&seq).min_positive_entry;
                let r = mixing_analysis(&seq, zeta, MixingMode::Full);
                violations += r.violations;
                worst = worst.max(r.max_violation);
                runs += 1;
            }
        }
    }
    check(
        "geometric mixing bound",
        violations == 0,
        format!("{runs} sequences, {violations} violations, max excess {worst:e}"),
    )
}

fn random_problem(rng: &mut ChaCha8Rng, kind: ModelKind) -> (ConvexModelSpec, Dataset, Vec<f64>) {
    let d = rng.random_range(1..6);
    let c = rng.random_range(2..5);
    let n = rng.random_range(1..6);
    let x: Vec<f32> = (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<u32> = (0..n).map(|_| rng.random_range(0..c as u32)).collect();
    let data = Dataset::new("check", x, d, y, c).expect("consistent shapes");
    let spec = ConvexModelSpec::new(kind, d, c).with_l2(rng.random_range(0.0..0.1));
    let w = (0..spec.param_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    (spec, data, w)
}

fn gradients(rng: &mut ChaCha8Rng) -> CheckResult {
    let h = 1e-6;
    let gap = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1.0);
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for k in 0..200 {
        let kind = if k % 2 == 0 { ModelKind::LogisticRegression } else { ModelKind::LinearSvm };
        let (spec, data, w) = random_problem(rng, kind);
        let batch: Vec<usize> = (0..data.len()).collect();
        let (_, g) = loss_and_grad(&spec, &w, &data, &batch).expect("valid problem");
        for c in 0..w.len() {
            let at = |delta: f64| {
                let mut v = w.clone();
                v[c] += delta;
                batch_loss(&spec, &v, &data, &batch).expect("valid problem")
            };
            let (lo, mid, hi) = (at(-h), at(0.0), at(h));
            if gap((hi - mid) / h, (mid - lo) / h) >= 1e-7 {
                continue;
            }
            worst = worst.max(gap((hi - lo) / (2.0 * h), g[c]));
            checked += 1;
        }
    }
    check(
        "gradient finite differences",
        worst <= GRADIENT_TOL && checked > 0,
        format!("{checked} coordinates, max relative error {worst:e}"),
    )
}

fn linear_case(opts: &VerifyOptions) -> CheckResult {
    let all = synthesize_blobs(1200, 5, 3, 0.15, opts.seed).expect("valid blobs");
    let train = all.subset(&(0..1000).collect::<Vec<_>>());
    let test = all.subset(&(1000..1200).collect::<Vec<_>>());
    let part = partition(&train, 10, PartitionMode::Iid, opts.seed).expect("enough samples");
    let spec = ConvexModelSpec::for_dataset(ModelKind::LogisticRegression, &train);
    let problem = Problem { spec, train: &train, test: &test, partition: &part };
    let cfg = ExperimentConfig {
        p: 1,
        eta0: 0.5,
        devices: 10,
        density: 0.3,
        iterations: 100,
        batch_size: 16,
        seed: opts.seed,
        init: Init::Gaussian { sigma: 0.01 },
        record_diagnostics: true,
        ..Default::default()
    };
    let topo = generate_sequence(10, 0.3, 100, 1, opts.seed).expect("feasible parameters");
    let ours = run_wpm(&cfg, &topo, &problem).map(|o| o.diagnostics.expect("recording enabled"));
    let theirs = linear_consensus_sgd(&cfg, &topo, &problem);
    match (ours, theirs) {
        (Ok(d), Ok(reference)) => {
            let worst = d
                .updated
                .iter()
                .zip(&reference)
                .flat_map(|(a, b)| a.iter().zip(b))
                .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
                .fold(0.0, f64::max);
            check(
                "linear special case",
                worst <= LINEAR_TOL,
                format!("100 iterations x 10 devices, max deviation {worst:e}"),
            )
        }
        (Err(e), _) | (_, Err(e)) => check("linear special case", false, e.to_string()),
    }
}

fn argmin(rng: &mut ChaCha8Rng) -> CheckResult {
    let grid = Grid { lo: -2.0, hi: 2.0, step: ARGMIN_GRID };
    let mut worst = 0.0_f64;
    let mut count = 0;
    for p in [1, 3, 5, 9, 15] {
        for _ in 0..50 {
            let y = rng.random_range(0.2..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let g = rng.random_range(-1.0..1.0);
            let cfg = PowerConfig::new(p, rng.random_range(0.1..0.9)).expect("valid config");
            let closed = mirror_step(&[y], &[g], &cfg).expect("finite inputs")[0];
            worst = worst.max((closed - estimator_argmin_oracle(y, g, &cfg, grid)).abs());
            count += 1;
        }
    }
    check(
        "mirror step argmin",
        worst <= ARGMIN_GRID,
        format!("{count} instances, max gap {worst:e} (grid {ARGMIN_GRID:e})"),
    )
}

/// Runs every check with the standard weight rule.
pub fn cmd_verify(opts: &VerifyOptions) -> VerifyReport {
    verify_with_rule(opts, &weights_from_graph)
}

/// Runs every check, building weight matrices with `rule`.
pub fn verify_with_rule(opts: &VerifyOptions, rule: &dyn Fn(&Graph) -> WeightMatrix) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    VerifyReport {
        checks: vec![
            round_trips(opts, &mut rng),
            inequalities(opts),
            bregman(opts, &mut rng),
            weight_rule(opts, &mut rng, rule),
            mixing(opts),
            gradients(&mut rng),
            linear_case(opts),
            argmin(&mut rng),
        ],
    }
}
