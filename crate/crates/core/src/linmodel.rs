//! Bias-augmented linear logistic classifier: scoring, loss, gradients, SGD
//! steps, and batch pretraining with hard-negative mining.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Errors from model and feature operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    DimMismatch { expected: usize, got: usize },
    NonFinite,
    /// Empty positive or negative set where training needs both.
    Degenerate,
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::DimMismatch { expected, got } => {
                write!(f, "feature dimension {got} does not match model dimension {expected}")
            }
            ModelError::NonFinite => write!(f, "non-finite value produced"),
            ModelError::Degenerate => write!(f, "training set has an empty class"),
        }
    }
}

impl core::error::Error for ModelError {}

/// A dense feature vector. Entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVec {
    values: Vec<f64>,
}

impl FeatureVec {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(FeatureVec { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    /// Scales to unit L2 norm. The zero vector is left as zero.
    pub fn l2_normalized(mut self) -> FeatureVec {
        let n = self.norm();
        if n > 0.0 {
            for v in &mut self.values {
                *v /= n;
            }
        }
        self
    }
}

/// Binary label for logistic training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Pos,
    Neg,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Pos => 1.0,
            Label::Neg => -1.0,
        }
    }
}

// Probabilities are kept strictly inside (0, 1) so log-likelihoods and
// likelihood products stay finite.
const PROB_FLOOR: f64 = 1e-300;
const PROB_CEIL: f64 = 1.0 - 1e-16;

fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    };
    p.clamp(PROB_FLOOR, PROB_CEIL)
}

/// A linear classifier over bias-augmented features.
///
/// `weights` has `dim + 1` entries; the last one multiplies a constant 1
/// appended to every feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "feature dimension must be at least 1");
        LinearModel { weights: vec![0.0; dim + 1] }
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.len() < 2 {
            return Err(ModelError::DimMismatch { expected: 2, got: weights.len() });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(LinearModel { weights })
    }

    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    /// Full weight vector including the trailing bias coordinate.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        *self.weights.last().unwrap()
    }

    fn check_dim(&self, feature: &FeatureVec) -> Result<(), ModelError> {
        if feature.dim() != self.dim() {
            return Err(ModelError::DimMismatch { expected: self.dim(), got: feature.dim() });
        }
        Ok(())
    }

    /// Raw decision value `w . phi + b`.
    pub fn decision(&self, feature: &FeatureVec) -> Result<f64, ModelError> {
        self.check_dim(feature)?;
        let dot: f64 = self
            .weights
            .iter()
            .zip(feature.values())
            .map(|(w, x)| w * x)
            .sum();
        Ok(dot + self.bias())
    }

    /// Probability that the window contains the object: the sigmoid of the
    /// decision value, strictly inside `(0, 1)`.
    pub fn predict_prob(&self, feature: &FeatureVec) -> Result<f64, ModelError> {
        Ok(sigmoid(self.decision(feature)?))
    }

    /// Logistic loss `log(1 + exp(-y (w . phi + b)))`, computed in a form
    /// stable for large margins.
    pub fn logistic_loss(&self, feature: &FeatureVec, label: Label) -> Result<f64, ModelError> {
        let margin = label.sign() * self.decision(feature)?;
        Ok(if margin >= 0.0 {
            libm::log1p(libm::exp(-margin))
        } else {
            -margin + libm::log1p(libm::exp(margin))
        })
    }

    /// Gradient of the logistic loss with respect to the weights, including
    /// the bias coordinate: `-y sigmoid(-y (w . phi + b)) [phi; 1]`.
    pub fn loss_gradient(&self, feature: &FeatureVec, label: Label) -> Result<Vec<f64>, ModelError> {
        let y = label.sign();
        let margin = y * self.decision(feature)?;
        let scale = -y * raw_sigmoid(-margin);
        let mut grad = Vec::with_capacity(self.weights.len());
        grad.extend(feature.values().iter().map(|x| scale * x));
        grad.push(scale);
        Ok(grad)
    }

    /// One gradient-descent step `w <- w - eta * grad`.
    pub fn sgd_step(&self, grad: &[f64], eta: f64) -> Result<LinearModel, ModelError> {
        debug_assert!(eta > 0.0);
        if grad.len() != self.weights.len() {
            return Err(ModelError::DimMismatch { expected: self.weights.len(), got: grad.len() });
        }
        let weights: Vec<f64> = self
            .weights
            .iter()
            .zip(grad)
            .map(|(w, g)| w - eta * g)
            .collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(LinearModel { weights })
    }
}

// Unclamped sigmoid for gradient scales, where exact saturation to 0 is the
// correct limit.
fn raw_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Minimum decision-probability for a pool negative to count as a hard false
/// positive during mining.
pub const HARD_NEGATIVE_PROB: f64 = 0.3;
/// Per mining round, at most this multiple of the current negative count is
/// added.
pub const MINING_GROWTH: usize = 2;

const BATCH_MAX_ITERS: usize = 500;
const BATCH_GRAD_TOL: f64 = 1e-6;

/// Offline pretraining: L2-regularized logistic regression by full-batch
/// gradient descent with backtracking line search, plus `rounds` of
/// hard-negative mining over `neg_pool`.
///
/// Mining keeps an active negative set (seeded with the head of the pool) and
/// per round adds the highest-scoring unused pool entries with probability
/// above [`HARD_NEGATIVE_PROB`], up to [`MINING_GROWTH`] times the current
/// negative count, stopping early once no candidates remain.
pub fn batch_train(
    pos: &[FeatureVec],
    neg_pool: &[FeatureVec],
    l2: f64,
    rounds: usize,
) -> Result<LinearModel, ModelError> {
    if pos.is_empty() || neg_pool.is_empty() {
        return Err(ModelError::Degenerate);
    }
    let dim = pos[0].dim();
    for f in pos.iter().chain(neg_pool) {
        if f.dim() != dim {
            return Err(ModelError::DimMismatch { expected: dim, got: f.dim() });
        }
    }

    let initial = pos.len().max(16).min(neg_pool.len());
    let mut active: Vec<usize> = (0..initial).collect();
    let mut in_active = vec![false; neg_pool.len()];
    for &i in &active {
        in_active[i] = true;
    }

    let mut model = LinearModel::zeros(dim);
    model = minimize(model, pos, neg_pool, &active, l2)?;

    for _ in 0..rounds {
        let mut candidates: Vec<(usize, f64)> = Vec::new();
        for (i, f) in neg_pool.iter().enumerate() {
            if !in_active[i] {
                let p = model.predict_prob(f)?;
                if p > HARD_NEGATIVE_PROB {
                    candidates.push((i, p));
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        candidates.truncate(MINING_GROWTH * active.len());
        for (i, _) in candidates {
            in_active[i] = true;
            active.push(i);
        }
        model = minimize(model, pos, neg_pool, &active, l2)?;
    }
    Ok(model)
}

// Full-batch objective: mean logistic loss over pos + active negatives plus
// (l2/2)|w|^2 over the non-bias coordinates.
fn batch_objective(
    model: &LinearModel,
    pos: &[FeatureVec],
    neg_pool: &[FeatureVec],
    active: &[usize],
    l2: f64,
) -> Result<f64, ModelError> {
    let n = (pos.len() + active.len()) as f64;
    let mut total = 0.0;
    for f in pos {
        total += model.logistic_loss(f, Label::Pos)?;
    }
    for &i in active {
        total += model.logistic_loss(&neg_pool[i], Label::Neg)?;
    }
    let dim = model.dim();
    let reg: f64 = model.weights()[..dim].iter().map(|w| w * w).sum();
    Ok(total / n + 0.5 * l2 * reg)
}

fn batch_gradient(
    model: &LinearModel,
    pos: &[FeatureVec],
    neg_pool: &[FeatureVec],
    active: &[usize],
    l2: f64,
) -> Result<Vec<f64>, ModelError> {
    let n = (pos.len() + active.len()) as f64;
    let mut grad = vec![0.0; model.dim() + 1];
    let mut add = |g: Vec<f64>| {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    };
    for f in pos {
        add(model.loss_gradient(f, Label::Pos)?);
    }
    for &i in active {
        add(model.loss_gradient(&neg_pool[i], Label::Neg)?);
    }
    for g in grad.iter_mut() {
        *g /= n;
    }
    let dim = model.dim();
    for (g, w) in grad[..dim].iter_mut().zip(model.weights()) {
        *g += l2 * w;
    }
    Ok(grad)
}

fn minimize(
    mut model: LinearModel,
    pos: &[FeatureVec],
    neg_pool: &[FeatureVec],
    active: &[usize],
    l2: f64,
) -> Result<LinearModel, ModelError> {
    let mut value = batch_objective(&model, pos, neg_pool, active, l2)?;
    for _ in 0..BATCH_MAX_ITERS {
        let grad = batch_gradient(&model, pos, neg_pool, active, l2)?;
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if libm::sqrt(gnorm2) < BATCH_GRAD_TOL {
            break;
        }
        // Armijo backtracking from a unit step.
        let mut step = 1.0;
        loop {
            match model.sgd_step(&grad, step) {
                Ok(trial) => {
                    let trial_value = batch_objective(&trial, pos, neg_pool, active, l2)?;
                    if trial_value <= value - 1e-4 * step * gnorm2 {
                        model = trial;
                        value = trial_value;
                        break;
                    }
                }
                Err(ModelError::NonFinite) => {}
                Err(e) => return Err(e),
            }
            step *= 0.5;
            if step < 1e-14 {
                return Ok(model);
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, Stream};
    use rand::Rng;

    fn fv(values: &[f64]) -> FeatureVec {
        FeatureVec::new(values.to_vec()).unwrap()
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = LinearModel::zeros(3);
        let p = m.predict_prob(&fv(&[0.4, -2.0, 7.0])).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn prob_at_log3_margin() {
        // w . phi + b = ln 3  ->  p = 3/4
        let m = LinearModel::from_weights(vec![libm::log(3.0), 0.0]).unwrap();
        let p = m.predict_prob(&fv(&[1.0])).unwrap();
        assert!((p - 0.75).abs() < 1e-15);
    }

    #[test]
    fn prob_strictly_inside_unit_interval() {
        let m = LinearModel::from_weights(vec![1000.0, 0.0]).unwrap();
        let hi = m.predict_prob(&fv(&[1.0])).unwrap();
        let lo = m.predict_prob(&fv(&[-1.0])).unwrap();
        assert!(hi < 1.0 && hi > 0.999);
        assert!(lo > 0.0 && lo < 1e-10);
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let m = LinearModel::zeros(3);
        assert_eq!(
            m.predict_prob(&fv(&[1.0, 2.0])),
            Err(ModelError::DimMismatch { expected: 3, got: 2 })
        );
    }

    #[test]
    fn loss_at_zero_margin_is_ln2() {
        let m = LinearModel::zeros(2);
        let l = m.logistic_loss(&fv(&[1.0, 1.0]), Label::Pos).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_saturates_for_large_margin() {
        let m = LinearModel::from_weights(vec![20.0, 0.0]).unwrap();
        let l = m.logistic_loss(&fv(&[1.0]), Label::Pos).unwrap();
        assert!(l < 1e-8);
    }

    #[test]
    fn loss_closed_form_at_log3() {
        let m = LinearModel::from_weights(vec![libm::log(3.0), 0.0]).unwrap();
        let l = m.logistic_loss(&fv(&[1.0]), Label::Pos).unwrap();
        assert!((l - libm::log(4.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn gradient_at_zero_margin() {
        let m = LinearModel::zeros(2);
        let g = m.loss_gradient(&fv(&[3.0, -1.0]), Label::Pos).unwrap();
        assert_eq!(g, vec![-1.5, 0.5, -0.5]);
    }

    #[test]
    fn gradient_vanishes_when_saturated() {
        let m = LinearModel::from_weights(vec![30.0, 0.0]).unwrap();
        let g = m.loss_gradient(&fv(&[1.0]), Label::Pos).unwrap();
        let norm: f64 = libm::sqrt(g.iter().map(|v| v * v).sum());
        assert!(norm < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = derive_rng(11, Stream::SampleOrder, &[0]);
        for case in 0..100 {
            let dim = 1 + (case % 7);
            let weights: Vec<f64> = (0..=dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = LinearModel::from_weights(weights).unwrap();
            let feat = fv(&(0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
            let label = if rng.gen_bool(0.5) { Label::Pos } else { Label::Neg };

            let analytic = m.loss_gradient(&feat, label).unwrap();
            let mut numeric = Vec::new();
            let h = 1e-6;
            for j in 0..=dim {
                let mut wp = m.weights().to_vec();
                let mut wm = wp.clone();
                wp[j] += h;
                wm[j] -= h;
                let lp = LinearModel::from_weights(wp).unwrap().logistic_loss(&feat, label).unwrap();
                let lm = LinearModel::from_weights(wm).unwrap().logistic_loss(&feat, label).unwrap();
                numeric.push((lp - lm) / (2.0 * h));
            }
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff / (scale + 1e-12) < 1e-5, "case {case}: rel err {}", diff / scale);
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let m = LinearModel::from_weights(vec![1.0, 1.0]).unwrap();
        let stepped = m.sgd_step(&[2.0, -2.0], 0.5).unwrap();
        assert_eq!(stepped.weights(), &[0.0, 2.0]);
    }

    #[test]
    fn sgd_zero_gradient_is_identity() {
        let m = LinearModel::from_weights(vec![0.3, -0.7, 2.0]).unwrap();
        let stepped = m.sgd_step(&[0.0, 0.0, 0.0], 1e-5).unwrap();
        assert_eq!(stepped, m);
    }

    #[test]
    fn sgd_step_inverse() {
        let m = LinearModel::from_weights(vec![0.5, -1.5, 0.25]).unwrap();
        let g = [0.1, 0.2, -0.3];
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let back = m.sgd_step(&g, 0.7).unwrap().sgd_step(&neg, 0.7).unwrap();
        for (a, b) in back.weights().iter().zip(m.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_symmetry() {
        let m = LinearModel::from_weights(vec![0.8, -0.4, 0.9]).unwrap();
        let neg = LinearModel::from_weights(m.weights().iter().map(|w| -w).collect()).unwrap();
        let feat = fv(&[0.3, 1.7]);
        let p = m.predict_prob(&feat).unwrap();
        let q = neg.predict_prob(&feat).unwrap();
        assert!((p + q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_train_separable_toy() {
        // Two 2-D clusters separable by x0.
        let pos: Vec<FeatureVec> = (0..20)
            .map(|i| fv(&[1.0 + 0.01 * i as f64, 0.5 - 0.02 * i as f64]))
            .collect();
        let neg: Vec<FeatureVec> = (0..20)
            .map(|i| fv(&[-1.0 - 0.01 * i as f64, 0.4 + 0.02 * i as f64]))
            .collect();
        let m = batch_train(&pos, &neg, 1e-4, 3).unwrap();
        let correct = pos
            .iter()
            .filter(|f| m.predict_prob(f).unwrap() > 0.5)
            .count()
            + neg.iter().filter(|f| m.predict_prob(f).unwrap() < 0.5).count();
        assert_eq!(correct, 40);
    }

    #[test]
    fn batch_train_identical_distributions_is_chance() {
        for seed in 0..5u64 {
            let mut rng = derive_rng(seed, Stream::PretrainData, &[1]);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                fv(&(0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
            };
            let pos: Vec<FeatureVec> = (0..600).map(|_| draw(&mut rng)).collect();
            let neg: Vec<FeatureVec> = (0..600).map(|_| draw(&mut rng)).collect();
            let m = batch_train(&pos[..300], &neg[..300], 1e-2, 2).unwrap();

            // Rank-based AUC on held-out samples.
            let spos: Vec<f64> = pos[300..].iter().map(|f| m.predict_prob(f).unwrap()).collect();
            let sneg: Vec<f64> = neg[300..].iter().map(|f| m.predict_prob(f).unwrap()).collect();
            let mut wins = 0.0;
            for p in &spos {
                for n in &sneg {
                    if p > n {
                        wins += 1.0;
                    } else if p == n {
                        wins += 0.5;
                    }
                }
            }
            let auc = wins / (spos.len() * sneg.len()) as f64;
            assert!((auc - 0.5).abs() < 0.05, "seed {seed}: auc {auc}");
            let mean_score = spos.iter().chain(&sneg).sum::<f64>() / 600.0;
            assert!((mean_score - 0.5).abs() < 0.1, "seed {seed}: mean score {mean_score}");
        }
    }

    #[test]
    fn batch_train_zero_rounds_is_plain_regression() {
        let pos = vec![fv(&[1.0, 0.0]), fv(&[0.9, 0.1])];
        let neg = vec![fv(&[-1.0, 0.0]), fv(&[-0.9, -0.1])];
        let m = batch_train(&pos, &neg, 1e-3, 0).unwrap();
        assert!(m.predict_prob(&pos[0]).unwrap() > 0.5);
        assert!(m.predict_prob(&neg[0]).unwrap() < 0.5);
    }

    #[test]
    fn batch_train_rejects_empty_class() {
        let pos = vec![fv(&[1.0])];
        assert_eq!(batch_train(&pos, &[], 1e-3, 1), Err(ModelError::Degenerate));
        assert_eq!(batch_train(&[], &pos, 1e-3, 1), Err(ModelError::Degenerate));
    }

    #[test]
    fn normalization_leaves_zero_vector() {
        let z = fv(&[0.0, 0.0]).l2_normalized();
        assert_eq!(z.values(), &[0.0, 0.0]);
        let u = fv(&[3.0, 4.0]).l2_normalized();
        assert!((u.norm() - 1.0).abs() < 1e-15);
    }
}
