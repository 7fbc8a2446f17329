//! Convex local objectives: multinomial logistic regression and one-vs-rest
//! linear SVM over flattened `(weights, bias)` parameter vectors.
//!
//! Parameters are laid out class-major: class `c` owns
//! `w[c*(d+1) .. c*(d+1)+d]` followed by its bias at `w[c*(d+1)+d]`.

use std::fmt;
use std::str::FromStr;

use crate::data::Dataset;
use crate::error::LearnerError;
use crate::power::ModelVector;

/// Consecutive loss increases that count as divergence.
pub const DIVERGENCE_STREAK: usize = 50;

/// Safety factor applied to the analytic per-sample gradient bound.
pub const LIPSCHITZ_SAFETY: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LogisticRegression,
    LinearSvm,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lr" | "logistic-regression" => Ok(Self::LogisticRegression),
            "svm" | "linear-svm" => Ok(Self::LinearSvm),
            other => Err(format!("unknown model {other:?} (expected lr or svm)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LogisticRegression => "lr",
            Self::LinearSvm => "svm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Coefficient of `(l2/2) ||w||^2`, applied to biases too.
    pub l2: f64,
}

impl ConvexModelSpec {
    pub fn new(kind: ModelKind, feature_dim: usize, num_classes: usize) -> Self {
        Self {
            kind,
            feature_dim,
            num_classes,
            l2: 0.0,
        }
    }

    pub fn for_dataset(kind: ModelKind, data: &Dataset) -> Self {
        Self::new(kind, data.dim(), data.num_classes())
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = l2;
        self
    }

    pub fn param_len(&self) -> usize {
        self.num_classes * (self.feature_dim + 1)
    }

    fn check(&self, w: &[f64], data: &Dataset) -> Result<(), LearnerError> {
        if w.len() != self.param_len() {
            return Err(LearnerError::ParameterLength {
                expected: self.param_len(),
                found: w.len(),
            });
        }
        if data.dim() != self.feature_dim {
            return Err(LearnerError::FeatureDimension {
                expected: self.feature_dim,
                found: data.dim(),
            });
        }
        Ok(())
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct Scratch {
    x: Vec<f64>,
    scores: Vec<f64>,
}

impl Scratch {
    fn new(spec: &ConvexModelSpec) -> Self {
        Self {
            x: vec![0.0; spec.feature_dim],
            scores: vec![0.0; spec.num_classes],
        }
    }

    fn load(&mut self, features: &[f32]) {
        for (d, s) in self.x.iter_mut().zip(features) {
            *d = f64::from(*s);
        }
    }
}

fn compute_scores(spec: &ConvexModelSpec, w: &[f64], x: &[f64], scores: &mut [f64]) {
    let stride = spec.feature_dim + 1;
    for (c, s) in scores.iter_mut().enumerate() {
        let block = &w[c * stride..(c + 1) * stride];
        *s = dot(&block[..spec.feature_dim], x) + block[spec.feature_dim];
    }
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// Unregularized loss of one sample given its class scores.
fn sample_loss(kind: ModelKind, scores: &[f64], label: usize) -> f64 {
    match kind {
        ModelKind::LogisticRegression => log_sum_exp(scores) - scores[label],
        ModelKind::LinearSvm => scores
            .iter()
            .enumerate()
            .map(|(c, &s)| {
                let y = if c == label { 1.0 } else { -1.0 };
                (1.0 - y * s).max(0.0)
            })
            .sum(),
    }
}

/// Lowest index among the maximal scores.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

fn check_label(spec: &ConvexModelSpec, label: usize) -> Result<(), LearnerError> {
    if label >= spec.num_classes {
        return Err(LearnerError::LabelOutOfRange {
            label,
            num_classes: spec.num_classes,
        });
    }
    Ok(())
}

fn l2_penalty(spec: &ConvexModelSpec, w: &[f64]) -> f64 {
    if spec.l2 == 0.0 {
        0.0
    } else {
        0.5 * spec.l2 * w.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Mean regularized loss over `batch` and its (sub)gradient, written into
/// `grad`.
///
/// Logistic regression uses softmax cross-entropy. The SVM sums one-vs-rest
/// hinge losses `max(0, 1 - y_c s_c)` over classes and takes the zero
/// subgradient at the kink.
pub fn loss_and_grad_into(
    spec: &ConvexModelSpec,
    w: &[f64],
    data: &Dataset,
    batch: &[usize],
    grad: &mut [f64],
) -> Result<f64, LearnerError> {
    spec.check(w, data)?;
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    if grad.len() != w.len() {
        return Err(LearnerError::ParameterLength {
            expected: w.len(),
            found: grad.len(),
        });
    }
    grad.fill(0.0);
    let d = spec.feature_dim;
    let stride = d + 1;
    let mut scratch = Scratch::new(spec);
    let mut total = 0.0;
    for &i in batch {
        let label = data.label(i);
        check_label(spec, label)?;
        scratch.load(data.features(i));
        compute_scores(spec, w, &scratch.x, &mut scratch.scores);
        total += sample_loss(spec.kind, &scratch.scores, label);
        match spec.kind {
            ModelKind::LogisticRegression => {
                let lse = log_sum_exp(&scratch.scores);
                for c in 0..spec.num_classes {
                    let prob = (scratch.scores[c] - lse).exp();
                    let coef = prob - if c == label { 1.0 } else { 0.0 };
                    let block = &mut grad[c * stride..(c + 1) * stride];
                    axpy(coef, &scratch.x, &mut block[..d]);
                    block[d] += coef;
                }
            }
            ModelKind::LinearSvm => {
                for c in 0..spec.num_classes {
                    let y = if c == label { 1.0 } else { -1.0 };
                    if 1.0 - y * scratch.scores[c] > 0.0 {
                        let block = &mut grad[c * stride..(c + 1) * stride];
                        axpy(-y, &scratch.x, &mut block[..d]);
                        block[d] -= y;
                    }
                }
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for g in grad.iter_mut() {
        *g *= inv;
    }
    if spec.l2 != 0.0 {
        axpy(spec.l2, w, grad);
    }
    Ok(total * inv + l2_penalty(spec, w))
}

/// Allocating form of [`loss_and_grad_into`].
pub fn loss_and_grad(
    spec: &ConvexModelSpec,
    w: &[f64],
    data: &Dataset,
    batch: &[usize],
) -> Result<(f64, ModelVector), LearnerError> {
    let mut grad = vec![0.0; w.len()];
    let loss = loss_and_grad_into(spec, w, data, batch, &mut grad)?;
    Ok((loss, ModelVector::new(grad)))
}

/// Mean regularized loss over `batch` without the gradient.
pub fn batch_loss(
    spec: &ConvexModelSpec,
    w: &[f64],
    data: &Dataset,
    batch: &[usize],
) -> Result<f64, LearnerError> {
    spec.check(w, data)?;
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let mut scratch = Scratch::new(spec);
    let mut total = 0.0;
    for &i in batch {
        let label = data.label(i);
        check_label(spec, label)?;
        scratch.load(data.features(i));
        compute_scores(spec, w, &scratch.x, &mut scratch.scores);
        total += sample_loss(spec.kind, &scratch.scores, label);
    }
    Ok(total / batch.len() as f64 + l2_penalty(spec, w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Fraction of samples whose argmax class matches the label.
    pub accuracy: f64,
    /// Mean unregularized loss.
    pub mean_loss: f64,
}

/// Accuracy and mean unregularized loss over the whole dataset.
pub fn evaluate(
    spec: &ConvexModelSpec,
    w: &[f64],
    data: &Dataset,
) -> Result<Evaluation, LearnerError> {
    spec.check(w, data)?;
    if data.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let mut scratch = Scratch::new(spec);
    let mut correct = 0usize;
    let mut total = 0.0;
    for i in 0..data.len() {
        let label = data.label(i);
        check_label(spec, label)?;
        scratch.load(data.features(i));
        compute_scores(spec, w, &scratch.x, &mut scratch.scores);
        total += sample_loss(spec.kind, &scratch.scores, label);
        if argmax(&scratch.scores) == label {
            correct += 1;
        }
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loss: total / n,
    })
}

/// A differentiable objective over a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn loss_and_grad(&self, w: &[f64], grad: &mut [f64]) -> Result<f64, LearnerError>;
}

/// Mean loss of a model over a fixed set of samples.
pub struct FullBatch<'a> {
    pub spec: &'a ConvexModelSpec,
    pub data: &'a Dataset,
    pub indices: Vec<usize>,
}

impl<'a> FullBatch<'a> {
    pub fn new(spec: &'a ConvexModelSpec, data: &'a Dataset) -> Self {
        Self {
            spec,
            data,
            indices: (0..data.len()).collect(),
        }
    }
}

impl Objective for FullBatch<'_> {
    fn dim(&self) -> usize {
        self.spec.param_len()
    }

    fn loss_and_grad(&self, w: &[f64], grad: &mut [f64]) -> Result<f64, LearnerError> {
        loss_and_grad_into(self.spec, w, self.data, &self.indices, grad)
    }
}

/// Plain gradient descent from `init`, returning the last iterate.
///
/// Fails with [`LearnerError::Diverged`] once the loss has grown for
/// [`DIVERGENCE_STREAK`] consecutive steps.
pub fn gradient_descent<O: Objective + ?Sized>(
    objective: &O,
    init: ModelVector,
    eta: f64,
    iters: usize,
) -> Result<ModelVector, LearnerError> {
    let mut w = init;
    let mut grad = vec![0.0; objective.dim()];
    let mut prev = f64::INFINITY;
    let mut streak = 0;
    for it in 0..iters {
        let loss = objective.loss_and_grad(&w, &mut grad)?;
        if loss > prev || !loss.is_finite() {
            streak += 1;
            if streak >= DIVERGENCE_STREAK || !loss.is_finite() {
                return Err(LearnerError::Diverged {
                    iteration: it,
                    streak,
                });
            }
        } else {
            streak = 0;
        }
        prev = loss;
        axpy(-eta, &grad, &mut w);
    }
    Ok(w)
}

/// Full-batch gradient descent from zero over the whole dataset; the result
/// stands in for the optimum when measuring regret.
///
/// Full-batch descent is deterministic, so `_seed` does not influence the
/// result; it is accepted for interface symmetry with the stochastic runs.
pub fn centralized_reference(
    spec: &ConvexModelSpec,
    data: &Dataset,
    eta: f64,
    iters: usize,
    _seed: u64,
) -> Result<ModelVector, LearnerError> {
    let objective = FullBatch::new(spec, data);
    gradient_descent(&objective, ModelVector::zeros(spec.param_len()), eta, iters)
}

/// Upper estimate of the per-sample gradient norm, valid for every `w` when
/// `l2 = 0` (and for `||w|| <= 1` otherwise).
///
/// A single sample's gradient factors as a class-coefficient vector times
/// `(x, 1)`: the coefficients have norm at most `sqrt(2)` for softmax and at
/// most `sqrt(C)` for the one-vs-rest hinge. The maximum over the dataset is
/// multiplied by [`LIPSCHITZ_SAFETY`]. Batch means inherit the bound.
pub fn lipschitz_estimate(spec: &ConvexModelSpec, data: &Dataset) -> f64 {
    let coef = match spec.kind {
        ModelKind::LogisticRegression => 2f64.sqrt(),
        ModelKind::LinearSvm => (spec.num_classes as f64).sqrt(),
    };
    let max_aug_norm = (0..data.len())
        .map(|i| {
            let sq: f64 = data.features(i).iter().map(|&v| f64::from(v).powi(2)).sum();
            (sq + 1.0).sqrt()
        })
        .fold(0.0, f64::max);
    LIPSCHITZ_SAFETY * coef * max_aug_norm + spec.l2
}
