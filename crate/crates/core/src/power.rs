//! Signed power maps, weighted power-p means and the mirror step they induce.
//!
//! Every map here works elementwise on the odd extension `x -> sgn(x)|x|^c`,
//! which is the gradient of the potential `w(x) = ||x||_{p+1}^{p+1} / (p+1)`
//! when `c = p`. Even `p` uses the same signed map, so the dual map stays a
//! bijection for every positive integer `p`.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::PowerError;

/// Magnitudes below this are flushed to `+0.0` after a signed power.
pub const UNDERFLOW_FLUSH: f64 = 1e-300;

/// Tolerance on `sum(weights) == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A dense, flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the first NaN or infinite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl Deref for ModelVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for ModelVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ModelVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl FromIterator<f64> for ModelVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Power exponent and step size of the mirror-descent update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerConfig {
    p: u32,
    eta0: f64,
    eta: f64,
}

impl PowerConfig {
    /// Derives the step size as `eta0^(1 + p/2)`.
    pub fn new(p: u32, eta0: f64) -> Result<Self, PowerError> {
        if p == 0 {
            return Err(PowerError::InvalidExponent(0.0));
        }
        if !(eta0.is_finite() && eta0 > 0.0) {
            return Err(PowerError::InvalidStepSize(eta0));
        }
        let eta = derived_eta(p, eta0);
        Ok(Self { p, eta0, eta })
    }

    /// Replaces the derived step size with an explicit one.
    pub fn with_eta(mut self, eta: f64) -> Result<Self, PowerError> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(PowerError::InvalidStepSize(eta));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn eta0(&self) -> f64 {
        self.eta0
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

/// `eta0^(1 + p/2)`.
pub fn derived_eta(p: u32, eta0: f64) -> f64 {
    eta0.powf(1.0 + 0.5 * f64::from(p))
}

#[inline]
fn flush(v: f64) -> f64 {
    if v.abs() < UNDERFLOW_FLUSH {
        0.0
    } else {
        v
    }
}

/// `sgn(x)|x|^p` for a positive integer `p`.
#[inline]
pub fn signed_pow_int(x: f64, p: u32) -> f64 {
    if p == 1 {
        return x;
    }
    let mag = x.abs().powi(p as i32);
    flush(mag.copysign(x))
}

/// Inverse of [`signed_pow_int`]: `sgn(x)|x|^(1/p)`.
#[inline]
pub fn signed_root(x: f64, p: u32) -> f64 {
    match p {
        1 => x,
        2 => flush(x.abs().sqrt().copysign(x)),
        3 => flush(x.cbrt()),
        _ => flush(x.abs().powf(1.0 / f64::from(p)).copysign(x)),
    }
}

/// `sgn(x)|x|^c` for any positive real `c`.
#[inline]
pub fn signed_pow_scalar(x: f64, c: f64) -> f64 {
    if c == 1.0 {
        return x;
    }
    flush(x.abs().powf(c).copysign(x))
}

/// Elementwise `sgn(v)|v|^c`.
pub fn signed_pow(v: &[f64], c: f64) -> Result<ModelVector, PowerError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(PowerError::InvalidExponent(c));
    }
    check_finite(v)?;
    let out: ModelVector = v.iter().map(|&x| signed_pow_scalar(x, c)).collect();
    if let Some(index) = out.first_non_finite() {
        return Err(PowerError::Overflow { index });
    }
    Ok(out)
}

pub(crate) fn check_finite(v: &[f64]) -> Result<(), PowerError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(PowerError::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<(), PowerError> {
    if expected != found {
        return Err(PowerError::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Validates a weight vector: nonnegative, finite, summing to one.
pub fn check_weights(weights: &[f64]) -> Result<(), PowerError> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(PowerError::InvalidWeights {
            sum: weights.iter().sum(),
        });
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(PowerError::InvalidWeights { sum });
    }
    Ok(())
}

/// Adds `weight * sgn(x)|x|^p` into `acc`.
#[inline]
pub(crate) fn accumulate_dual(acc: &mut [f64], x: &[f64], weight: f64, p: u32) {
    if p == 1 {
        for (a, &v) in acc.iter_mut().zip(x) {
            *a += weight * v;
        }
    } else {
        for (a, &v) in acc.iter_mut().zip(x) {
            *a += weight * signed_pow_int(v, p);
        }
    }
}

/// Maps a dual-space vector back to the primal space in place.
#[inline]
pub(crate) fn dual_to_primal(v: &mut [f64], p: u32) {
    if p != 1 {
        for x in v.iter_mut() {
            *x = signed_root(*x, p);
        }
    }
}

/// Weighted power-p mean: `(sum_j weights[j] * models[j]^p)^(1/p)` with signed
/// elementwise powers.
pub fn wpm_aggregate<M: AsRef<[f64]>>(
    models: &[M],
    weights: &[f64],
    p: u32,
) -> Result<ModelVector, PowerError> {
    if p == 0 {
        return Err(PowerError::InvalidExponent(0.0));
    }
    if models.is_empty() {
        return Err(PowerError::Empty);
    }
    check_dims(models.len(), weights.len())?;
    check_weights(weights)?;
    let dim = models[0].as_ref().len();
    for m in models {
        check_dims(dim, m.as_ref().len())?;
        check_finite(m.as_ref())?;
    }

    let mut acc = vec![0.0; dim];
    for (m, &w) in models.iter().zip(weights) {
        if w > 0.0 {
            accumulate_dual(&mut acc, m.as_ref(), w, p);
        }
    }
    dual_to_primal(&mut acc, p);
    let out = ModelVector::new(acc);
    if let Some(index) = out.first_non_finite() {
        return Err(PowerError::Overflow { index });
    }
    Ok(out)
}

/// One mirror-descent step in the potential `||x||_{p+1}^{p+1}/(p+1)`:
/// `(y^p - eta * grad)^(1/p)`.
pub fn mirror_step(
    y: &[f64],
    grad: &[f64],
    cfg: &PowerConfig,
) -> Result<ModelVector, PowerError> {
    check_dims(y.len(), grad.len())?;
    check_finite(y)?;
    let p = cfg.p();
    let mut dual: Vec<f64> = y.iter().map(|&v| signed_pow_int(v, p)).collect();
    mirror_step_dual(&mut dual, grad, cfg.eta(), p)?;
    Ok(ModelVector::new(dual))
}

/// Applies `dual <- (dual - eta * grad)^(1/p)` in place; `dual` must already
/// hold `y^p`.
pub(crate) fn mirror_step_dual(
    dual: &mut [f64],
    grad: &[f64],
    eta: f64,
    p: u32,
) -> Result<(), PowerError> {
    for (k, (d, &g)) in dual.iter_mut().zip(grad).enumerate() {
        let shifted = *d - eta * g;
        let v = signed_root(shifted, p);
        if !v.is_finite() {
            return Err(PowerError::Overflow { index: k });
        }
        *d = v;
    }
    Ok(())
}

/// The mirror potential `w(x) = ||x||_{p+1}^{p+1} / (p+1)`.
pub fn potential(x: &[f64], p: u32) -> f64 {
    let q = p as i32 + 1;
    x.iter().map(|v| v.abs().powi(q)).sum::<f64>() / f64::from(q)
}

/// Bregman divergence of the potential [`potential`].
///
/// The potential is separable, so the divergence is a sum of per-coordinate
/// divergences that are each nonnegative; each term is clamped at zero to
/// absorb rounding.
pub fn bregman_divergence(x: &[f64], y: &[f64], p: u32) -> Result<f64, PowerError> {
    check_dims(x.len(), y.len())?;
    Ok(x.iter()
        .zip(y)
        .map(|(&a, &b)| bregman_term(a, b, p))
        .sum())
}

#[inline]
pub(crate) fn bregman_term(a: f64, b: f64, p: u32) -> f64 {
    let q = p as i32 + 1;
    let qf = f64::from(q);
    let term = a.abs().powi(q) / qf - b.abs().powi(q) / qf - signed_pow_int(b, p) * (a - b);
    term.max(0.0)
}

/// `||v||_q`.
pub fn lp_norm(v: &[f64], q: u32) -> f64 {
    match q {
        1 => v.iter().map(|x| x.abs()).sum(),
        2 => l2_norm(v),
        _ => {
            // Scale by the max magnitude so |x|^15 does not underflow.
            let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            if scale == 0.0 {
                return 0.0;
            }
            let s: f64 = v.iter().map(|x| (x.abs() / scale).powi(q as i32)).sum();
            scale * s.powf(1.0 / f64::from(q))
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Smallest observed margins of the two power inequalities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityReport {
    pub p: u32,
    pub samples: usize,
    /// `min |x^p - y^p| - |x - y|^p / 2^(p-1)` over sampled scalar pairs.
    pub min_margin_lower_bound: f64,
    /// `min D_w(a,b) - sigma_p/(p+1) ||a-b||_{p+1}^{p+1}` over sampled vectors.
    pub min_margin_strong_convexity: f64,
}

impl InequalityReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.min_margin_lower_bound >= -tol && self.min_margin_strong_convexity >= -tol
    }
}

/// `1 / 2^(p-1)`.
pub fn sigma_p(p: u32) -> f64 {
    0.5_f64.powi(p as i32 - 1)
}

/// Scalar lower-bound margin `|x^p - y^p| - |x-y|^p / 2^(p-1)`.
pub fn lower_bound_margin(x: f64, y: f64, p: u32) -> f64 {
    let lhs = (signed_pow_int(x, p) - signed_pow_int(y, p)).abs();
    let rhs = sigma_p(p) * (x - y).abs().powi(p as i32);
    lhs - rhs
}

/// Strong-convexity margin `D_w(a,b) - sigma_p/(p+1) ||a-b||_{p+1}^{p+1}`.
pub fn strong_convexity_margin(a: &[f64], b: &[f64], p: u32) -> Result<f64, PowerError> {
    check_dims(a.len(), b.len())?;
    let q = p as i32 + 1;
    let scale = sigma_p(p) / f64::from(q);
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| bregman_term(x, y, p) - scale * (x - y).abs().powi(q))
        .sum())
}

/// Dimension of the vector pairs drawn by [`verify_power_inequalities`].
pub const INEQUALITY_VECTOR_DIM: usize = 3;

/// Samples pairs uniformly from `[-range, range]` and reports the smallest
/// margin of both power inequalities.
pub fn verify_power_inequalities(
    p: u32,
    samples: usize,
    range: f64,
    seed: u64,
) -> Result<InequalityReport, PowerError> {
    if p == 0 {
        return Err(PowerError::InvalidExponent(0.0));
    }
    if samples == 0 {
        return Err(PowerError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min1 = f64::INFINITY;
    let mut min2 = f64::INFINITY;
    let mut a = [0.0; INEQUALITY_VECTOR_DIM];
    let mut b = [0.0; INEQUALITY_VECTOR_DIM];
    for _ in 0..samples {
        let x = rng.random_range(-range..=range);
        let y = rng.random_range(-range..=range);
        let m1 = lower_bound_margin(x, y, p);
        if !m1.is_finite() {
            return Err(PowerError::Overflow { index: 0 });
        }
        min1 = min1.min(m1);

        for k in 0..INEQUALITY_VECTOR_DIM {
            a[k] = rng.random_range(-range..=range);
            b[k] = rng.random_range(-range..=range);
        }
        let m2 = strong_convexity_margin(&a, &b, p)?;
        if !m2.is_finite() {
            return Err(PowerError::Overflow { index: 0 });
        }
        min2 = min2.min(m2);
    }
    Ok(InequalityReport {
        p,
        samples,
        min_margin_lower_bound: min1,
        min_margin_strong_convexity: min2,
    })
}

/// Search interval for [`estimator_argmin_oracle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

/// Brute-force minimizer of the 1-D mirror-descent estimator
/// `f(y) + eta * grad * (x - y) + D_w(x, y)` over a uniform grid.
///
/// `f(y)` is constant in `x` and therefore omitted. Ties keep the lowest `x`.
pub fn estimator_argmin_oracle(y: f64, grad_at_y: f64, cfg: &PowerConfig, grid: Grid) -> f64 {
    let p = cfg.p();
    let eta = cfg.eta();
    let steps = ((grid.hi - grid.lo) / grid.step).round() as usize;
    let mut best_x = grid.lo;
    let mut best_val = f64::INFINITY;
    for k in 0..=steps {
        let x = grid.lo + k as f64 * grid.step;
        let val = eta * grad_at_y * (x - y) + bregman_term(x, y, p);
        if val < best_val {
            best_val = val;
            best_x = x;
        }
    }
    best_x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn signed_pow_examples() {
        assert_eq!(signed_pow(&[-2.0, 3.0], 3.0).unwrap().to_vec(), vec![-8.0, 27.0]);
        assert_eq!(signed_pow(&[4.0], 0.5).unwrap().to_vec(), vec![2.0]);
        let r = signed_pow(&[-8.0, 0.001], 1.0 / 3.0).unwrap();
        assert!(close(r[0], -2.0, 1e-12));
        assert!(close(r[1], 0.1, 1e-12));
    }

    #[test]
    fn signed_pow_rejects_non_finite() {
        assert_eq!(
            signed_pow(&[1.0, f64::NAN], 2.0),
            Err(PowerError::NonFinite { index: 1 })
        );
        assert_eq!(
            signed_pow(&[f64::INFINITY], 2.0),
            Err(PowerError::NonFinite { index: 0 })
        );
        assert!(matches!(
            signed_pow(&[1.0], 0.0),
            Err(PowerError::InvalidExponent(_))
        ));
    }

    #[test]
    fn signed_pow_reports_overflow() {
        assert_eq!(
            signed_pow(&[1.0, 1e200], 3.0),
            Err(PowerError::Overflow { index: 1 })
        );
    }

    #[test]
    fn underflow_is_flushed_to_positive_zero() {
        let r = signed_pow_int(-1e-25, 15);
        assert_eq!(r, 0.0);
        assert!(r.is_sign_positive());
    }

    #[test]
    fn even_powers_stay_odd() {
        assert_eq!(signed_pow_int(-3.0, 2), -9.0);
        assert_eq!(signed_root(-9.0, 2), -3.0);
    }

    #[test]
    fn wpm_examples() {
        let r = wpm_aggregate(&[vec![1.0], vec![2.0]], &[0.5, 0.5], 3).unwrap();
        // (0.5 * 1 + 0.5 * 8)^(1/3) = 4.5^(1/3)
        assert!(close(r[0], 1.650_963_624_447_313, 1e-12));
        let r = wpm_aggregate(&[vec![1.0], vec![2.0]], &[0.5, 0.5], 1).unwrap();
        assert_eq!(r[0], 1.5);
        let m = vec![0.3, -1.2, 0.0];
        for p in [1, 2, 3, 15] {
            let r = wpm_aggregate(&[m.clone(), m.clone(), m.clone()], &[0.2, 0.3, 0.5], p)
                .unwrap();
            for (a, b) in r.iter().zip(&m) {
                assert!(close(*a, *b, 1e-12 * (1.0 + b.abs())), "p={p}");
            }
        }
    }

    #[test]
    fn wpm_errors() {
        assert!(matches!(
            wpm_aggregate(&[vec![1.0], vec![2.0]], &[0.5, 0.6], 3),
            Err(PowerError::InvalidWeights { .. })
        ));
        assert!(matches!(
            wpm_aggregate(&[vec![1.0], vec![2.0]], &[1.5, -0.5], 3),
            Err(PowerError::InvalidWeights { .. })
        ));
        assert_eq!(
            wpm_aggregate(&[vec![1.0], vec![2.0, 3.0]], &[0.5, 0.5], 3),
            Err(PowerError::DimensionMismatch {
                expected: 1,
                found: 2
            })
        );
        assert_eq!(
            wpm_aggregate::<Vec<f64>>(&[], &[], 3),
            Err(PowerError::Empty)
        );
    }

    #[test]
    fn mirror_step_examples() {
        let cfg = PowerConfig::new(1, 0.1).unwrap().with_eta(0.1).unwrap();
        let r = mirror_step(&[1.0], &[0.5], &cfg).unwrap();
        assert!(close(r[0], 0.95, 1e-15));

        let cfg = PowerConfig::new(3, 0.1).unwrap().with_eta(0.5).unwrap();
        let r = mirror_step(&[1.0], &[1.0], &cfg).unwrap();
        assert!(close(r[0], 0.5_f64.cbrt(), 1e-15));
        assert!(close(r[0], 0.793_700_525_984_1, 1e-12));

        for p in [1, 2, 3, 9, 15] {
            let cfg = PowerConfig::new(p, 0.3).unwrap();
            let y = [0.4, -0.7, 0.0];
            let r = mirror_step(&y, &[0.0; 3], &cfg).unwrap();
            for (a, b) in r.iter().zip(&y) {
                assert!(close(*a, *b, 1e-12), "p={p}");
            }
        }
    }

    #[test]
    fn mirror_step_overflow_names_index() {
        let cfg = PowerConfig::new(3, 0.5).unwrap().with_eta(1.0).unwrap();
        assert_eq!(
            mirror_step(&[0.0, 0.0], &[0.0, f64::NEG_INFINITY], &cfg),
            Err(PowerError::Overflow { index: 1 })
        );
    }

    #[test]
    fn derived_step_size() {
        let cfg = PowerConfig::new(15, 0.01).unwrap();
        assert!(close(cfg.eta(), 0.01_f64.powf(8.5), 1e-30));
        let cfg = PowerConfig::new(1, 0.01).unwrap();
        assert!(close(cfg.eta(), 1e-3, 1e-15));
        assert!(PowerConfig::new(0, 0.01).is_err());
        assert!(PowerConfig::new(1, 0.0).is_err());
        assert_eq!(cfg.with_eta(0.25).unwrap().eta(), 0.25);
    }

    #[test]
    fn bregman_examples() {
        assert!(close(bregman_divergence(&[1.0, 0.0], &[0.0, 0.0], 1).unwrap(), 0.5, 1e-15));
        for p in [1, 3, 15] {
            assert_eq!(bregman_divergence(&[0.3, -2.0], &[0.3, -2.0], p).unwrap(), 0.0);
        }
        assert!(close(bregman_divergence(&[1.0], &[0.0], 3).unwrap(), 0.25, 1e-15));
        assert!(bregman_divergence(&[1.0], &[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn inequality_hand_checks() {
        // 27 - 1 = 26 against 2^3 / 4 = 2.
        assert_eq!(lower_bound_margin(3.0, 1.0, 3), 24.0);
        assert_eq!(lower_bound_margin(2.5, 2.5, 7), 0.0);
        assert_eq!(strong_convexity_margin(&[1.5, -2.0], &[1.5, -2.0], 5).unwrap(), 0.0);
    }

    #[test]
    fn argmin_oracle_examples() {
        let cfg = PowerConfig::new(1, 0.1).unwrap().with_eta(0.1).unwrap();
        let grid = Grid { lo: 0.0, hi: 2.0, step: 1e-4 };
        assert!(close(estimator_argmin_oracle(1.0, 2.0, &cfg, grid), 0.8, 1e-4));

        for p in [1, 3, 9] {
            let cfg = PowerConfig::new(p, 0.2).unwrap();
            assert!(close(estimator_argmin_oracle(1.0, 0.0, &cfg, grid), 1.0, 1e-4));
        }

        let cfg = PowerConfig::new(3, 0.1).unwrap().with_eta(0.5).unwrap();
        let x = estimator_argmin_oracle(1.0, 1.0, &cfg, grid);
        assert!(close(x, 0.7937, 1e-4));
    }

    #[test]
    fn lp_norm_handles_tiny_values() {
        let v = [1e-30, -1e-30];
        let n = lp_norm(&v, 15);
        assert!(close(n, 1e-30 * 2f64.powf(1.0 / 15.0), 1e-42));
        assert_eq!(lp_norm(&[3.0, -4.0], 2), 5.0);
        assert_eq!(lp_norm(&[3.0, -4.0], 1), 7.0);
    }
}
