//! Checks of the network assumptions and of the geometric mixing bound
//! `|P(t,tau)_ij - 1/m| <= vartheta * kappa^(t - tau)`.

use rayon::prelude::*;

use super::{graphs_connected, weights_from_graph, TopologySequence, WeightMatrix};

/// Result of checking a sequence against the network assumptions.
#[derive(Debug, Clone, PartialEq)]
pub struct Assumption1Report {
    /// Smallest positive weight over every snapshot.
    pub min_positive_entry: f64,
    /// Largest row- or column-sum error over every snapshot.
    pub max_stochasticity_error: f64,
    /// Every snapshot is symmetric with an empty diagonal.
    pub symmetric: bool,
    /// Every positive weight is at least `1/(max degree + 1)` of its snapshot.
    pub degree_bound_holds: bool,
    /// Connectivity of each window union, in window order.
    pub window_connected: Vec<bool>,
}

impl Assumption1Report {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_stochasticity_error <= tol
            && self.symmetric
            && self.degree_bound_holds
            && self.window_connected.iter().all(|&c| c)
    }

    pub fn disconnected_windows(&self) -> Vec<usize> {
        self.window_connected
            .iter()
            .enumerate()
            .filter(|(_, c)| !**c)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Checks double stochasticity, the weight floor and windowed connectivity.
pub fn verify_assumption1(seq: &TopologySequence) -> Assumption1Report {
    verify_assumption1_with(seq, weights_from_graph)
}

/// Same as [`verify_assumption1`] with a custom weight rule.
pub fn verify_assumption1_with<F>(seq: &TopologySequence, rule: F) -> Assumption1Report
where
    F: Fn(&super::Graph) -> WeightMatrix,
{
    let mut min_positive = f64::INFINITY;
    let mut max_err = 0.0_f64;
    let mut symmetric = true;
    let mut degree_ok = true;
    for g in seq.snapshots() {
        let w = rule(g);
        min_positive = min_positive.min(w.min_positive());
        max_err = max_err.max(w.stochasticity_error());
        symmetric &= g.is_symmetric() && g.has_empty_diagonal() && w.is_symmetric(1e-15);
        let floor = 1.0 / (g.max_degree() as f64 + 1.0);
        degree_ok &= w.min_positive() >= floor * (1.0 - 1e-12);
    }
    let window_connected = seq
        .windows()
        .map(|r| graphs_connected(seq.num_nodes(), &seq.snapshots()[r]))
        .collect();
    Assumption1Report {
        min_positive_entry: min_positive,
        max_stochasticity_error: max_err,
        symmetric,
        degree_bound_holds: degree_ok,
        window_connected,
    }
}

/// `(vartheta, kappa)` for a weight floor `zeta`, `m` devices and window `B`:
/// `vartheta = (1 - zeta/4m^2)^-2`, `kappa = (1 - zeta/4m^2)^(1/B)`.
pub fn mixing_constants(zeta: f64, m: usize, window: usize) -> (f64, f64) {
    let base = 1.0 - zeta / (4.0 * (m * m) as f64);
    (base.powi(-2), base.powf(1.0 / window as f64))
}

/// Which `(t, tau)` pairs [`mixing_analysis`] examines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixingMode {
    /// Every `tau <= t`; quadratic in the sequence length.
    Full,
    /// `tau` in `{0, t-1, t-B, t-10B}` for each `t`.
    #[default]
    Capped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingReport {
    pub zeta: f64,
    pub vartheta: f64,
    pub kappa: f64,
    /// Largest `|P(t,tau)_ij - 1/m|` seen.
    pub max_deviation: f64,
    /// Largest `|P(t,tau)_ij - 1/m| - vartheta * kappa^(t-tau)`; the bound
    /// holds when this is `<= 0`.
    pub max_violation: f64,
    /// Number of `(t, tau)` pairs where the bound failed.
    pub violations: usize,
    pub pairs_checked: usize,
    /// Largest row/column-sum error among the products.
    pub product_stochasticity_error: f64,
}

#[derive(Clone, Copy, Default)]
struct PairStats {
    max_deviation: f64,
    max_violation: f64,
    violations: usize,
    pairs: usize,
    stochasticity: f64,
}

impl PairStats {
    fn empty() -> Self {
        Self {
            max_violation: f64::NEG_INFINITY,
            ..Default::default()
        }
    }

    fn record(&mut self, product: &WeightMatrix, bound: f64) {
        let dev = product.deviation_from_uniform();
        self.max_deviation = self.max_deviation.max(dev);
        self.max_violation = self.max_violation.max(dev - bound);
        if dev > bound {
            self.violations += 1;
        }
        self.pairs += 1;
        self.stochasticity = self.stochasticity.max(product.stochasticity_error());
    }

    fn merge(mut self, other: Self) -> Self {
        self.max_deviation = self.max_deviation.max(other.max_deviation);
        self.max_violation = self.max_violation.max(other.max_violation);
        self.violations += other.violations;
        self.pairs += other.pairs;
        self.stochasticity = self.stochasticity.max(other.stochasticity);
        self
    }
}

/// Compares the backward products `P(t,tau) = P(t)...P(tau)` of the
/// sequence's weight matrices against the geometric mixing bound.
pub fn mixing_analysis(seq: &TopologySequence, zeta: f64, mode: MixingMode) -> MixingReport {
    let mats = seq.weight_matrices();
    let m = seq.num_nodes();
    let (vartheta, kappa) = mixing_constants(zeta, m, seq.window());
    let bound = |gap: usize| vartheta * kappa.powi(gap as i32);

    let stats = match mode {
        MixingMode::Full => (0..mats.len())
            .into_par_iter()
            .map(|tau| {
                let mut stats = PairStats::empty();
                let mut prod = mats[tau].clone();
                stats.record(&prod, bound(0));
                for t in tau + 1..mats.len() {
                    prod = mats[t].matmul(&prod);
                    stats.record(&prod, bound(t - tau));
                }
                stats
            })
            .collect::<Vec<_>>(),
        MixingMode::Capped => {
            let b = seq.window();
            let mut from_start = Vec::with_capacity(mats.len());
            let mut acc = WeightMatrix::identity(m);
            for mat in &mats {
                acc = mat.matmul(&acc);
                from_start.push(acc.clone());
            }
            (0..mats.len())
                .into_par_iter()
                .map(|t| {
                    let mut stats = PairStats::empty();
                    stats.record(&from_start[t], bound(t));
                    let mut taus: Vec<usize> = [1, b, 10 * b]
                        .iter()
                        .filter_map(|&lag| t.checked_sub(lag))
                        .filter(|&tau| tau > 0)
                        .collect();
                    taus.sort_unstable();
                    taus.dedup();
                    for tau in taus {
                        let mut prod = mats[tau].clone();
                        for mat in &mats[tau + 1..=t] {
                            prod = mat.matmul(&prod);
                        }
                        stats.record(&prod, bound(t - tau));
                    }
                    stats
                })
                .collect::<Vec<_>>()
        }
    };
    let total = stats.into_iter().fold(PairStats::empty(), PairStats::merge);
    MixingReport {
        zeta,
        vartheta,
        kappa,
        max_deviation: total.max_deviation,
        max_violation: total.max_violation,
        violations: total.violations,
        pairs_checked: total.pairs,
        product_stochasticity_error: total.stochasticity,
    }
}
