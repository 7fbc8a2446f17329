//! Plain decentralized SGD with linear averaging,
//! `w_i(t+1) = sum_j a_ij(t) w_j(t) - eta d_i(t)`.
//!
//! Kept deliberately naive (weights rebuilt from adjacency here, no dual
//! buffers, no parallelism) so it can serve as an independent check of
//! [`super::run_wpm`] at `p = 1`.

use crate::error::SimError;
use crate::learners::loss_and_grad;
use crate::topology::{Graph, TopologySequence};

use super::{device_rng, initial_models, sample_batch, ExperimentConfig, GradientPoint, Problem};

fn linear_weights(g: &Graph) -> Vec<Vec<f64>> {
    let m = g.num_nodes();
    let e: Vec<f64> = (0..m)
        .map(|i| 1.0 / ((0..m).filter(|&j| g.has_edge(i, j)).count() as f64 + 1.0))
        .collect();
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..m {
        let mut off = 0.0;
        for j in 0..m {
            if j != i && g.has_edge(i, j) {
                a[i][j] = e[i].min(e[j]);
                off += a[i][j];
            }
        }
        a[i][i] = 1.0 - off;
    }
    a
}

/// Models of every device after each iteration, indexed `[t][device]`.
pub fn linear_consensus_sgd(
    cfg: &ExperimentConfig,
    topology: &TopologySequence,
    problem: &Problem,
) -> Result<Vec<Vec<Vec<f64>>>, SimError> {
    let m = cfg.devices;
    let dim = problem.spec.param_len();
    let eta = match cfg.eta {
        Some(eta) => eta,
        None => cfg.eta0.powf(1.5),
    };
    let mut w: Vec<Vec<f64>> = initial_models(cfg.init, m, dim, cfg.seed)
        .into_iter()
        .map(|v| v.into_inner())
        .collect();
    let mut rngs: Vec<_> = (0..m).map(|i| device_rng(cfg.seed, i)).collect();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut batch = Vec::new();

    for t in 0..cfg.iterations {
        let a = linear_weights(topology.snapshot(t));
        let mut next = Vec::with_capacity(m);
        for i in 0..m {
            let mut mixed = vec![0.0; dim];
            for j in 0..m {
                if a[i][j] > 0.0 {
                    for k in 0..dim {
                        mixed[k] += a[i][j] * w[j][k];
                    }
                }
            }
            sample_batch(&mut rngs[i], problem.partition.device(i), cfg.batch_size, &mut batch);
            let at = match cfg.gradient_point {
                GradientPoint::Aggregated => &mixed,
                GradientPoint::PreAggregation => &w[i],
            };
            let (_, d) = loss_and_grad(&problem.spec, at, problem.train, &batch).map_err(|source| {
                SimError::Learner {
                    iteration: t,
                    device: i,
                    source,
                }
            })?;
            for k in 0..dim {
                mixed[k] -= eta * d[k];
            }
            next.push(mixed);
        }
        w = next;
        history.push(w.clone());
    }
    Ok(history)
}
