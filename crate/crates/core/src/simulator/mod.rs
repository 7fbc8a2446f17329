//! Synchronous decentralized training over a time-varying topology.
//!
//! Each iteration reads only the time-`t` models and writes a fresh buffer,
//! so devices never observe each other's `t+1` state. Per-device work runs on
//! the rayon pool; results are gathered in device order, which keeps traces
//! bit-identical regardless of worker count.

mod diagnostics;
pub mod reference;

pub use diagnostics::{
    analyze_lemma1, analyze_regret, network_mean, read_sidecar, write_sidecar, Diagnostics,
    Lemma1Report, Lemma1Row, RegretReport, SIDECAR_MAGIC, SIDECAR_VERSION,
};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{Dataset, Partition};
use crate::error::{PowerError, SimError};
use crate::learners::{evaluate, loss_and_grad_into, ConvexModelSpec, Evaluation};
use crate::power::{
    accumulate_dual, dual_to_primal, mirror_step_dual, signed_pow_int, ModelVector,
    PowerConfig,
};
use crate::topology::{weights_from_graph, TopologySequence};

const BATCH_STREAM_SALT: u64 = 0x6261_7463_6873_3031;
const INIT_STREAM_SALT: u64 = 0x696e_6974_6961_6c30;
const PAIR_STREAM_SALT: u64 = 0x7061_6972_7331_3233;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Wpm,
    SwarmSgd,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wpm" => Ok(Self::Wpm),
            "swarm-sgd" | "swarmsgd" | "swarm" => Ok(Self::SwarmSgd),
            other => Err(format!("unknown method {other:?} (expected wpm or swarm-sgd)")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Wpm => "wpm",
            Self::SwarmSgd => "swarm-sgd",
        })
    }
}

/// Where the local gradient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientPoint {
    /// At the aggregated point `ybar_i`.
    #[default]
    Aggregated,
    /// At the device's own model before aggregation.
    PreAggregation,
}

impl FromStr for GradientPoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aggregated" => Ok(Self::Aggregated),
            "pre-aggregation" | "pre" => Ok(Self::PreAggregation),
            other => Err(format!(
                "unknown gradient point {other:?} (expected aggregated or pre-aggregation)"
            )),
        }
    }
}

impl fmt::Display for GradientPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Aggregated => "aggregated",
            Self::PreAggregation => "pre-aggregation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Init {
    /// Every device starts from the zero vector.
    #[default]
    Zero,
    /// Independent `N(0, sigma^2)` entries per device.
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub p: u32,
    pub eta0: f64,
    /// Explicit step size; `None` derives `eta0^(1 + p/2)`.
    pub eta: Option<f64>,
    pub devices: usize,
    pub density: f64,
    pub iterations: usize,
    pub window: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gradient_point: GradientPoint,
    pub init: Init,
    pub record_diagnostics: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Wpm,
            p: 1,
            eta0: 0.01,
            eta: None,
            devices: 10,
            density: 0.3,
            iterations: 500,
            window: 1,
            batch_size: 128,
            seed: 0,
            gradient_point: GradientPoint::Aggregated,
            init: Init::Zero,
            record_diagnostics: false,
        }
    }
}

impl ExperimentConfig {
    /// Exponent and step size. SwarmSGD averages linearly, so it always
    /// derives its step with `p = 1`.
    pub fn power_config(&self) -> Result<PowerConfig, SimError> {
        let p = match self.method {
            Method::Wpm => self.p,
            Method::SwarmSgd => 1,
        };
        let cfg = PowerConfig::new(p, self.eta0)?;
        Ok(match self.eta {
            Some(eta) => cfg.with_eta(eta)?,
            None => cfg,
        })
    }
}

/// The learning problem shared by all devices.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub spec: ConvexModelSpec,
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub partition: &'a Partition,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub mean_loss: f64,
    pub mean_accuracy: f64,
    pub consensus_distance: f64,
}

/// One row per iteration, holding test metrics of the models produced by
/// that iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTrace {
    pub rows: Vec<TraceRow>,
    pub final_models: Vec<ModelVector>,
    pub config: ExperimentConfig,
}

impl MetricsTrace {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.rows.last().map(|r| r.mean_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: MetricsTrace,
    pub diagnostics: Option<Diagnostics>,
}

/// `(1/m) sum_i ||w_i - mean(w)||_2`.
pub fn consensus_distance<M: AsRef<[f64]>>(models: &[M]) -> f64 {
    if models.is_empty() {
        return 0.0;
    }
    let m = models.len() as f64;
    let dim = models[0].as_ref().len();
    let mut mean = vec![0.0; dim];
    for w in models {
        for (a, v) in mean.iter_mut().zip(w.as_ref()) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= m;
    }
    models
        .iter()
        .map(|w| {
            w.as_ref()
                .iter()
                .zip(&mean)
                .map(|(v, a)| (v - a) * (v - a))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / m
}

/// First iteration whose mean accuracy reaches `target`.
pub fn convergence_speed(trace: &MetricsTrace, target: f64) -> Option<usize> {
    trace
        .rows
        .iter()
        .find(|r| r.mean_accuracy >= target)
        .map(|r| r.t)
}

/// Batch-sampling RNG of device `i`.
pub fn device_rng(seed: u64, device: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BATCH_STREAM_SALT);
    rng.set_stream(device as u64);
    rng
}

/// Uniform sampling with replacement from `pool`.
pub fn sample_batch<R: Rng>(rng: &mut R, pool: &[usize], size: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..size).map(|_| pool[rng.random_range(0..pool.len())]));
}

/// Starting models of every device.
pub fn initial_models(init: Init, devices: usize, dim: usize, seed: u64) -> Vec<ModelVector> {
    match init {
        Init::Zero => vec![ModelVector::zeros(dim); devices],
        Init::Gaussian { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("sigma must be finite and >= 0");
            (0..devices)
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM_SALT);
                    rng.set_stream(i as u64);
                    (0..dim).map(|_| normal.sample(&mut rng)).collect()
                })
                .collect()
        }
    }
}

fn validate(cfg: &ExperimentConfig, topology: &TopologySequence, problem: &Problem) -> Result<(), SimError> {
    if cfg.devices == 0 {
        return Err(SimError::Config("need at least one device".into()));
    }
    if topology.num_nodes() != cfg.devices {
        return Err(SimError::Config(format!(
            "topology has {} devices, config has {}",
            topology.num_nodes(),
            cfg.devices
        )));
    }
    if topology.len() < cfg.iterations {
        return Err(SimError::Config(format!(
            "topology has {} snapshots, config needs {}",
            topology.len(),
            cfg.iterations
        )));
    }
    if problem.partition.num_devices() != cfg.devices {
        return Err(SimError::Config(format!(
            "partition covers {} devices, config has {}",
            problem.partition.num_devices(),
            cfg.devices
        )));
    }
    if let Some(i) = (0..cfg.devices).find(|&i| problem.partition.device(i).is_empty()) {
        return Err(SimError::Config(format!("device {i} holds no training data")));
    }
    if cfg.batch_size == 0 {
        return Err(SimError::Config("batch size must be >= 1".into()));
    }
    if cfg.method == Method::Wpm && cfg.p == 0 {
        return Err(SimError::Config("p must be >= 1".into()));
    }
    if problem.test.is_empty() {
        return Err(SimError::Config("test set is empty".into()));
    }
    Ok(())
}

fn evaluate_all(
    problem: &Problem,
    models: &[ModelVector],
    t: usize,
) -> Result<Vec<Evaluation>, SimError> {
    models
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            evaluate(&problem.spec, w, problem.test).map_err(|source| SimError::Learner {
                iteration: t,
                device: i,
                source,
            })
        })
        .collect()
}

fn trace_row(t: usize, evals: &[Evaluation], models: &[ModelVector]) -> TraceRow {
    let m = evals.len() as f64;
    TraceRow {
        t,
        mean_loss: evals.iter().map(|e| e.mean_loss).sum::<f64>() / m,
        mean_accuracy: evals.iter().map(|e| e.accuracy).sum::<f64>() / m,
        consensus_distance: consensus_distance(models),
    }
}

struct DeviceStep {
    model: ModelVector,
    aggregated: Option<ModelVector>,
    batch: Option<Vec<usize>>,
}

/// Weighted power-p mean aggregation followed by a mirror-descent step, for
/// every device and iteration.
///
/// Per iteration `t` and device `i`: weights come from snapshot `t`,
/// `ybar_i = (sum_j a_ij w_j^p)^(1/p)`, the local gradient `d_i` is taken at
/// `ybar_i` (or at `w_i` in pre-aggregation mode) on a fresh batch, and
/// `w_i <- (ybar_i^p - eta d_i)^(1/p)`.
pub fn run_wpm(
    cfg: &ExperimentConfig,
    topology: &TopologySequence,
    problem: &Problem,
) -> Result<RunOutput, SimError> {
    validate(cfg, topology, problem)?;
    let power = cfg.power_config()?;
    let (p, eta) = (power.p(), power.eta());
    let m = cfg.devices;
    let dim = problem.spec.param_len();

    let mut models = initial_models(cfg.init, m, dim, cfg.seed);
    let mut rngs: Vec<ChaCha8Rng> = (0..m).map(|i| device_rng(cfg.seed, i)).collect();
    let mut rows = Vec::with_capacity(cfg.iterations);
    let mut diag = cfg
        .record_diagnostics
        .then(|| Diagnostics::new(p, eta, models.clone()));

    for t in 0..cfg.iterations {
        let weights = weights_from_graph(topology.snapshot(t));
        let duals: Vec<Vec<f64>> = models
            .par_iter()
            .map(|w| w.iter().map(|&v| signed_pow_int(v, p)).collect())
            .collect();

        let steps: Vec<DeviceStep> = rngs
            .par_iter_mut()
            .enumerate()
            .map(|(i, rng)| {
                let mut agg = vec![0.0; dim];
                for (j, &a) in weights.row(i).iter().enumerate() {
                    if a > 0.0 {
                        accumulate_dual(&mut agg, &duals[j], a, 1);
                    }
                }
                if let Some(k) = agg.iter().position(|v| !v.is_finite()) {
                    return Err(SimError::Numeric {
                        iteration: t,
                        device: i,
                        source: PowerError::Overflow { index: k },
                    });
                }
                let mut ybar = agg.clone();
                dual_to_primal(&mut ybar, p);

                let mut batch = Vec::with_capacity(cfg.batch_size);
                sample_batch(rng, problem.partition.device(i), cfg.batch_size, &mut batch);
                let point: &[f64] = match cfg.gradient_point {
                    GradientPoint::Aggregated => &ybar,
                    GradientPoint::PreAggregation => &models[i],
                };
                let mut grad = vec![0.0; dim];
                loss_and_grad_into(&problem.spec, point, problem.train, &batch, &mut grad)
                    .map_err(|source| SimError::Learner {
                        iteration: t,
                        device: i,
                        source,
                    })?;
                mirror_step_dual(&mut agg, &grad, eta, p).map_err(|source| SimError::Numeric {
                    iteration: t,
                    device: i,
                    source,
                })?;
                Ok(DeviceStep {
                    model: ModelVector::new(agg),
                    aggregated: cfg.record_diagnostics.then(|| ModelVector::new(ybar)),
                    batch: cfg.record_diagnostics.then_some(batch),
                })
            })
            .collect::<Result<_, SimError>>()?;

        let mut next = Vec::with_capacity(m);
        let mut aggregated = Vec::new();
        let mut batches = Vec::new();
        for s in steps {
            next.push(s.model);
            aggregated.extend(s.aggregated);
            batches.extend(s.batch);
        }
        models = next;
        if let Some(d) = diag.as_mut() {
            d.push(aggregated, models.clone(), batches);
        }

        let evals = evaluate_all(problem, &models, t)?;
        rows.push(trace_row(t, &evals, &models));
    }

    Ok(RunOutput {
        trace: MetricsTrace {
            rows,
            final_models: models,
            config: cfg.clone(),
        },
        diagnostics: diag,
    })
}

/// Pairwise gossip baseline: each iteration one uniformly chosen edge of the
/// current snapshot is activated; both endpoints take one local SGD step and
/// then replace their models by the pair average. Other devices idle.
pub fn run_swarm_sgd(
    cfg: &ExperimentConfig,
    topology: &TopologySequence,
    problem: &Problem,
) -> Result<RunOutput, SimError> {
    validate(cfg, topology, problem)?;
    let eta = cfg.power_config()?.eta();
    let m = cfg.devices;
    let dim = problem.spec.param_len();

    let mut models = initial_models(cfg.init, m, dim, cfg.seed);
    let mut rngs: Vec<ChaCha8Rng> = (0..m).map(|i| device_rng(cfg.seed, i)).collect();
    let mut pair_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PAIR_STREAM_SALT);
    let mut evals = evaluate_all(problem, &models, 0)?;
    let mut rows = Vec::with_capacity(cfg.iterations);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut grad = vec![0.0; dim];

    for t in 0..cfg.iterations {
        let edges = topology.snapshot(t).edges();
        if !edges.is_empty() {
            let (a, b) = edges[pair_rng.random_range(0..edges.len())];
            let mut stepped = [ModelVector::default(), ModelVector::default()];
            for (slot, &i) in [a, b].iter().enumerate() {
                sample_batch(&mut rngs[i], problem.partition.device(i), cfg.batch_size, &mut batch);
                loss_and_grad_into(&problem.spec, &models[i], problem.train, &batch, &mut grad)
                    .map_err(|source| SimError::Learner {
                        iteration: t,
                        device: i,
                        source,
                    })?;
                let mut w = models[i].clone();
                for (v, g) in w.iter_mut().zip(&grad) {
                    *v -= eta * g;
                }
                if let Some(k) = w.first_non_finite() {
                    return Err(SimError::Numeric {
                        iteration: t,
                        device: i,
                        source: PowerError::Overflow { index: k },
                    });
                }
                stepped[slot] = w;
            }
            let avg: ModelVector = stepped[0]
                .iter()
                .zip(stepped[1].iter())
                .map(|(x, y)| 0.5 * (x + y))
                .collect();
            models[a] = avg.clone();
            models[b] = avg;
            let fresh = evaluate_all(problem, &models[a..=a], t)?[0];
            evals[a] = fresh;
            evals[b] = fresh;
        }
        rows.push(trace_row(t, &evals, &models));
    }

    Ok(RunOutput {
        trace: MetricsTrace {
            rows,
            final_models: models,
            config: cfg.clone(),
        },
        diagnostics: None,
    })
}

/// Dispatches on `cfg.method`.
pub fn run(
    cfg: &ExperimentConfig,
    topology: &TopologySequence,
    problem: &Problem,
) -> Result<RunOutput, SimError> {
    match cfg.method {
        Method::Wpm => run_wpm(cfg, topology, problem),
        Method::SwarmSgd => run_swarm_sgd(cfg, topology, problem),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition, synthesize_blobs, PartitionMode};
    use crate::learners::ModelKind;
    use crate::topology::{generate_sequence, Graph};

    fn blobs_setup(m: usize) -> (Dataset, Dataset, Partition) {
        let train = synthesize_blobs(300, 4, 3, 0.1, 1).unwrap();
        let test = synthesize_blobs(90, 4, 3, 0.1, 1).unwrap();
        let part = partition(&train, m, PartitionMode::Iid, 2).unwrap();
        (train, test, part)
    }

    #[test]
    fn consensus_distance_examples() {
        assert_eq!(consensus_distance(&vec![vec![1.0, 2.0]; 3]), 0.0);
        assert_eq!(consensus_distance(&[vec![0.0], vec![2.0]]), 1.0);
        assert_eq!(consensus_distance::<Vec<f64>>(&[]), 0.0);
    }

    #[test]
    fn trace_has_one_row_per_iteration() {
        let (train, test, part) = blobs_setup(4);
        let spec = ConvexModelSpec::for_dataset(ModelKind::LogisticRegression, &train);
        let problem = Problem { spec, train: &train, test: &test, partition: &part };
        let cfg = ExperimentConfig {
            p: 3,
            eta0: 0.5,
            devices: 4,
            density: 0.5,
            iterations: 12,
            batch_size: 8,
            ..Default::default()
        };
        let topo = generate_sequence(4, 0.5, 12, 1, 0).unwrap();
        let out = run_wpm(&cfg, &topo, &problem).unwrap();
        assert_eq!(out.trace.rows.len(), 12);
        assert!(out.trace.rows.iter().enumerate().all(|(k, r)| r.t == k));
        assert!(out.diagnostics.is_none());
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let (train, test, part) = blobs_setup(4);
        let spec = ConvexModelSpec::for_dataset(ModelKind::LogisticRegression, &train);
        let problem = Problem { spec, train: &train, test: &test, partition: &part };
        let cfg = ExperimentConfig { devices: 4, iterations: 20, ..Default::default() };
        let short = generate_sequence(4, 0.5, 10, 1, 0).unwrap();
        assert!(matches!(run_wpm(&cfg, &short, &problem), Err(SimError::Config(_))));
        let wrong_m = generate_sequence(5, 0.5, 20, 1, 0).unwrap();
        assert!(matches!(run_wpm(&cfg, &wrong_m, &problem), Err(SimError::Config(_))));
    }

    #[test]
    fn overflow_aborts_with_context() {
        let (train, test, part) = blobs_setup(2);
        let spec = ConvexModelSpec::for_dataset(ModelKind::LogisticRegression, &train);
        let problem = Problem { spec, train: &train, test: &test, partition: &part };
        // 1e30^15 does not fit in an f64.
        let cfg = ExperimentConfig {
            p: 15,
            devices: 2,
            iterations: 5,
            batch_size: 4,
            init: Init::Gaussian { sigma: 1e30 },
            ..Default::default()
        };
        let topo = TopologySequence::constant(Graph::complete(2), 5, 1).unwrap();
        match run_wpm(&cfg, &topo, &problem) {
            Err(SimError::Numeric { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn swarm_without_edges_stays_put() {
        let (train, test, part) = blobs_setup(3);
        let spec = ConvexModelSpec::for_dataset(ModelKind::LogisticRegression, &train);
        let problem = Problem { spec, train: &train, test: &test, partition: &part };
        let cfg = ExperimentConfig {
            method: Method::SwarmSgd,
            devices: 3,
            iterations: 6,
            batch_size: 4,
            init: Init::Gaussian { sigma: 0.01 },
            ..Default::default()
        };
        let topo = TopologySequence::constant(Graph::empty(3), 6, 1).unwrap();
        let out = run_swarm_sgd(&cfg, &topo, &problem).unwrap();
        assert_eq!(out.trace.final_models, initial_models(cfg.init, 3, spec.param_len(), 0));
        assert_eq!(out.trace.rows.len(), 6);
    }

    #[test]
    fn swarm_touches_only_one_pair() {
        let (train, test, part) = blobs_setup(4);
        let spec = ConvexModelSpec::for_dataset(ModelKind::LogisticRegression, &train);
        let problem = Problem { spec, train: &train, test: &test, partition: &part };
        let cfg = ExperimentConfig {
            method: Method::SwarmSgd,
            devices: 4,
            iterations: 1,
            batch_size: 4,
            ..Default::default()
        };
        let topo = TopologySequence::constant(Graph::from_edges(4, &[(1, 3)]), 1, 1).unwrap();
        let out = run_swarm_sgd(&cfg, &topo, &problem).unwrap();
        let f = &out.trace.final_models;
        assert_eq!(f[1], f[3]);
        assert!(f[1].iter().any(|&v| v != 0.0));
        assert!(f[0].iter().all(|&v| v == 0.0));
        assert!(f[2].iter().all(|&v| v == 0.0));
    }
}
