//! Recorded run internals and the consensus / regret bound checks replayed
//! from them.
//!
//! Sidecar layout, little-endian, same header convention as topology files:
//!
//! ```text
//! "WPMS" | version u16 | m u16 | T u32 | dim u32 | p u16 | batch u32 | eta f64
//! initial models: m x dim f64
//! per t, per device: aggregated dim f64 | updated dim f64 | batch x u32
//! ```

use std::io::{Read, Write};

use crate::data::Dataset;
use crate::error::SimError;
use crate::learners::{batch_loss, ConvexModelSpec};
use crate::power::{
    bregman_divergence, dual_to_primal, lp_norm, sigma_p, signed_pow_int, ModelVector,
};

pub const SIDECAR_MAGIC: &[u8; 4] = b"WPMS";
pub const SIDECAR_VERSION: u16 = 1;

/// Per-iteration state of a WPM run, indexed `[t][device]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub p: u32,
    pub eta: f64,
    pub initial: Vec<ModelVector>,
    /// Aggregated points `y_{i,t}` at which iteration `t` took its step.
    pub aggregated: Vec<Vec<ModelVector>>,
    /// Models after iteration `t`.
    pub updated: Vec<Vec<ModelVector>>,
    pub batches: Vec<Vec<Vec<usize>>>,
}

impl Diagnostics {
    pub fn new(p: u32, eta: f64, initial: Vec<ModelVector>) -> Self {
        Self {
            p,
            eta,
            initial,
            aggregated: Vec::new(),
            updated: Vec::new(),
            batches: Vec::new(),
        }
    }

    pub(crate) fn push(
        &mut self,
        aggregated: Vec<ModelVector>,
        updated: Vec<ModelVector>,
        batches: Vec<Vec<usize>>,
    ) {
        self.aggregated.push(aggregated);
        self.updated.push(updated);
        self.batches.push(batches);
    }

    pub fn iterations(&self) -> usize {
        self.aggregated.len()
    }

    pub fn devices(&self) -> usize {
        self.initial.len()
    }
}

/// Power-p network mean: `(1/m) sum_i y_i^p`, mapped back with the signed root.
pub fn network_mean(models: &[ModelVector], p: u32) -> ModelVector {
    let dim = models.first().map_or(0, |w| w.len());
    let inv = 1.0 / models.len() as f64;
    let mut acc = vec![0.0; dim];
    for w in models {
        for (a, &v) in acc.iter_mut().zip(w.iter()) {
            *a += inv * signed_pow_int(v, p);
        }
    }
    dual_to_primal(&mut acc, p);
    ModelVector::new(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Row {
    pub t: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    pub rows: Vec<Lemma1Row>,
    pub violations: usize,
}

impl Lemma1Report {
    pub fn max_ratio(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| if r.rhs > 0.0 { r.lhs / r.rhs } else if r.lhs > 0.0 { f64::INFINITY } else { 0.0 })
            .fold(0.0, f64::max)
    }
}

/// `sum_k ||grad w(y_{k,0})||_1`.
fn initial_dual_mass(diag: &Diagnostics) -> f64 {
    diag.aggregated
        .first()
        .map(|ys| {
            ys.iter()
                .flat_map(|y| y.iter())
                .map(|&v| signed_pow_int(v, diag.p).abs())
                .sum()
        })
        .unwrap_or(0.0)
}

/// The consensus bound
/// `((2^(p-1)) (vartheta kappa^t S + m eta G / (1 - kappa)))^(1/p)`.
fn consensus_bound(diag: &Diagnostics, vartheta: f64, kappa: f64, lipschitz: f64, t: usize) -> f64 {
    let p = diag.p;
    let m = diag.devices() as f64;
    let s = initial_dual_mass(diag);
    let inner = vartheta * kappa.powi(t as i32) * s + m * diag.eta * lipschitz / (1.0 - kappa);
    (2f64.powi(p as i32 - 1) * inner).powf(1.0 / f64::from(p))
}

/// Compares `max_i ||y_{i,t} - ybar_t||_p` against the consensus bound for
/// every recorded iteration.
pub fn analyze_lemma1(diag: &Diagnostics, vartheta: f64, kappa: f64, lipschitz: f64) -> Lemma1Report {
    let p = diag.p;
    let rows: Vec<Lemma1Row> = diag
        .aggregated
        .iter()
        .enumerate()
        .map(|(t, ys)| {
            let mean = network_mean(ys, p);
            let lhs = ys
                .iter()
                .map(|y| {
                    let diff: Vec<f64> = y.iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
                    lp_norm(&diff, p)
                })
                .fold(0.0, f64::max);
            Lemma1Row {
                t,
                lhs,
                rhs: consensus_bound(diag, vartheta, kappa, lipschitz, t),
            }
        })
        .collect();
    // NaN on either side counts as a violation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    let violations = rows.iter().filter(|r| !(r.lhs <= r.rhs)).count();
    Lemma1Report { rows, violations }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretReport {
    /// `(1/T) sum_t sum_i [f_{i,t}(ybar_t) - f_{i,t}(x*)]`.
    pub lhs: f64,
    pub rhs: f64,
    /// `(m / (T eta)) D_w(x*, ybar_0)`.
    pub divergence_term: f64,
    /// `2 m G (p/(p+1)) (eta G / sigma_p)^(1/p)`.
    pub step_term: f64,
    /// `2 G m` times the consensus bound at `t = 0`.
    pub consensus_term: f64,
}

impl RegretReport {
    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs
    }

    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Empirical average regret against `x_star` and the matching upper bound.
pub fn analyze_regret(
    diag: &Diagnostics,
    spec: &ConvexModelSpec,
    train: &Dataset,
    x_star: &[f64],
    vartheta: f64,
    kappa: f64,
    lipschitz: f64,
) -> Result<RegretReport, SimError> {
    let t_len = diag.iterations();
    if t_len == 0 {
        return Err(SimError::Config("no recorded iterations".into()));
    }
    let p = diag.p;
    let m = diag.devices() as f64;
    let mut total = 0.0;
    for (t, (ys, batches)) in diag.aggregated.iter().zip(&diag.batches).enumerate() {
        let mean = network_mean(ys, p);
        for (i, batch) in batches.iter().enumerate() {
            let ctx = |source| SimError::Learner {
                iteration: t,
                device: i,
                source,
            };
            total += batch_loss(spec, &mean, train, batch).map_err(ctx)?
                - batch_loss(spec, x_star, train, batch).map_err(ctx)?;
        }
    }
    let lhs = total / t_len as f64;

    let ybar0 = network_mean(&diag.aggregated[0], p);
    let divergence_term = m / (t_len as f64 * diag.eta) * bregman_divergence(x_star, &ybar0, p)?;
    let pf = f64::from(p);
    let step_term = 2.0
        * m
        * lipschitz
        * (pf / (pf + 1.0))
        * (diag.eta * lipschitz / sigma_p(p)).powf(1.0 / pf);
    let consensus_term = 2.0 * lipschitz * m * consensus_bound(diag, vartheta, kappa, lipschitz, 0);
    Ok(RegretReport {
        lhs,
        rhs: divergence_term + step_term + consensus_term,
        divergence_term,
        step_term,
        consensus_term,
    })
}

fn format_err(offset: usize, message: impl Into<String>) -> SimError {
    SimError::Format {
        offset,
        message: message.into(),
    }
}

pub fn write_sidecar<W: Write>(diag: &Diagnostics, mut out: W) -> Result<(), SimError> {
    let m = u16::try_from(diag.devices()).map_err(|_| SimError::Config("too many devices".into()))?;
    let t = u32::try_from(diag.iterations()).map_err(|_| SimError::Config("too many iterations".into()))?;
    let dim = diag.initial.first().map_or(0, |w| w.len());
    let batch = diag
        .batches
        .first()
        .and_then(|b| b.first())
        .map_or(0, Vec::len);
    if diag.batches.iter().flatten().any(|b| b.len() != batch) {
        return Err(SimError::Config("sidecar needs a constant batch size".into()));
    }
    let p = u16::try_from(diag.p).map_err(|_| SimError::Config("p does not fit in u16".into()))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(SIDECAR_MAGIC);
    buf.extend_from_slice(&SIDECAR_VERSION.to_le_bytes());
    buf.extend_from_slice(&m.to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&p.to_le_bytes());
    buf.extend_from_slice(&(batch as u32).to_le_bytes());
    buf.extend_from_slice(&diag.eta.to_le_bytes());
    let put = |buf: &mut Vec<u8>, w: &ModelVector| {
        for v in w.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    for w in &diag.initial {
        put(&mut buf, w);
    }
    for s in 0..diag.iterations() {
        for i in 0..diag.devices() {
            put(&mut buf, &diag.aggregated[s][i]);
            put(&mut buf, &diag.updated[s][i]);
            for &k in &diag.batches[s][i] {
                let k = u32::try_from(k).map_err(|_| SimError::Config("sample index exceeds u32".into()))?;
                buf.extend_from_slice(&k.to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], SimError> {
        if self.pos + n > self.bytes.len() {
            return Err(format_err(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, SimError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, SimError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn model(&mut self, dim: usize, what: &str) -> Result<ModelVector, SimError> {
        Ok(self
            .take(dim * 8, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn read_sidecar<R: Read>(mut input: R) -> Result<Diagnostics, SimError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4, "magic")? != SIDECAR_MAGIC {
        return Err(format_err(0, "bad magic, expected \"WPMS\""));
    }
    let version = r.u16("version")?;
    if version != SIDECAR_VERSION {
        return Err(format_err(4, format!("unsupported version {version}")));
    }
    let m = usize::from(r.u16("m")?);
    let t = r.u32("T")? as usize;
    let dim = r.u32("dim")? as usize;
    let p = u32::from(r.u16("p")?);
    let batch = r.u32("batch")? as usize;
    let eta = f64::from_le_bytes(r.take(8, "eta")?.try_into().unwrap());
    if p == 0 {
        return Err(format_err(16, "p must be >= 1"));
    }

    let initial = (0..m)
        .map(|_| r.model(dim, "initial model"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut diag = Diagnostics::new(p, eta, initial);
    for _ in 0..t {
        let mut aggregated = Vec::with_capacity(m);
        let mut updated = Vec::with_capacity(m);
        let mut batches = Vec::with_capacity(m);
        for _ in 0..m {
            aggregated.push(r.model(dim, "aggregated model")?);
            updated.push(r.model(dim, "updated model")?);
            batches.push(
                r.take(batch * 4, "batch indices")?
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
                    .collect(),
            );
        }
        diag.push(aggregated, updated, batches);
    }
    if r.pos != bytes.len() {
        return Err(format_err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(diag)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Diagnostics {
        let mut d = Diagnostics::new(3, 0.25, vec![ModelVector::new(vec![0.5, -1.0]); 2]);
        d.push(
            vec![ModelVector::new(vec![1.0, 2.0]), ModelVector::new(vec![-1.0, 0.0])],
            vec![ModelVector::new(vec![0.9, 1.5]), ModelVector::new(vec![-0.5, 0.25])],
            vec![vec![0, 3], vec![7, 1]],
        );
        d
    }

    #[test]
    fn sidecar_round_trip() {
        let d = tiny();
        let mut buf = Vec::new();
        write_sidecar(&d, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"WPMS");
        // header 30 bytes, initial 2x2 f64, one iteration of 2 x (2 + 2 f64 + 2 u32)
        assert_eq!(buf.len(), 30 + 32 + 2 * (32 + 8));
        assert_eq!(read_sidecar(&buf[..]).unwrap(), d);

        assert!(read_sidecar(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[1] = b'X';
        assert!(matches!(read_sidecar(&bad[..]), Err(SimError::Format { offset: 0, .. })));
    }

    #[test]
    fn network_mean_of_opposites_is_zero() {
        let ys = vec![ModelVector::new(vec![2.0, -3.0]), ModelVector::new(vec![-2.0, 3.0])];
        assert_eq!(&*network_mean(&ys, 3), &[0.0, 0.0]);
        let same = vec![ModelVector::new(vec![0.7]); 4];
        assert!((network_mean(&same, 5)[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn single_device_has_zero_spread() {
        let mut d = Diagnostics::new(3, 0.1, vec![ModelVector::new(vec![0.3, 0.4])]);
        for _ in 0..5 {
            d.push(vec![ModelVector::new(vec![0.3, -0.4])], vec![ModelVector::new(vec![0.2, 0.1])], vec![vec![0]]);
        }
        let r = analyze_lemma1(&d, 1.2, 0.9, 1.0);
        assert!(r.rows.iter().all(|row| row.lhs == 0.0 && row.rhs > 0.0));
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn bound_by_hand() {
        // p = 3, m = 2, S = 1 + 8 + 1 + 0 = 10, eta = 0.25, G = 1
        let d = tiny();
        let (vartheta, kappa) = (1.5, 0.5);
        let r = analyze_lemma1(&d, vartheta, kappa, 1.0);
        let expected = (4.0_f64 * (1.5 * 10.0 + 2.0 * 0.25 / 0.5)).cbrt();
        assert!((r.rows[0].rhs - expected).abs() < 1e-12);
    }
}
