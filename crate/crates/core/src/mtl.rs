//! Category-to-instance adaptation and back: warm-starting of per-target
//! models, per-frame sample mining, the jointly regularized multi-task
//! objective, its SGD optimization, and the running-mean update of the
//! category-level detector.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::{iou, BBox, TrackId};
use crate::linmodel::{FeatureVec, Label, LinearModel, ModelError};
use crate::rng::{derive_rng, Stream};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MtlError {
    Model(ModelError),
    /// No proposal overlaps the predicted box, so no positive can be chosen.
    NoPositive,
    /// No proposal falls below the negative-overlap threshold; the target
    /// skips this frame's update.
    NoNegatives,
    /// A sampled target is missing from the model bank.
    UnknownTarget(TrackId),
    /// The SGD update produced non-finite weights; the frame's update is
    /// aborted and previous models kept.
    NonFinite,
}

impl fmt::Display for MtlError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MtlError::Model(e) => write!(f, "{e}"),
            MtlError::NoPositive => write!(f, "no proposal overlaps the predicted box"),
            MtlError::NoNegatives => write!(f, "no proposal qualifies as a negative sample"),
            MtlError::UnknownTarget(id) => write!(f, "sampled target {id} is not in the bank"),
            MtlError::NonFinite => write!(f, "target update diverged to non-finite weights"),
        }
    }
}

impl core::error::Error for MtlError {}

impl From<ModelError> for MtlError {
    fn from(e: ModelError) -> Self {
        MtlError::Model(e)
    }
}

/// The stacked per-target models, keyed by track id. All models share one
/// feature dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelBank {
    models: BTreeMap<TrackId, LinearModel>,
}

impl ModelBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: TrackId, model: LinearModel) {
        if let Some(existing) = self.models.values().next() {
            debug_assert_eq!(existing.dim(), model.dim());
        }
        self.models.insert(id, model);
    }

    pub fn remove(&mut self, id: TrackId) -> Option<LinearModel> {
        self.models.remove(&id)
    }

    pub fn get(&self, id: TrackId) -> Option<&LinearModel> {
        self.models.get(&id)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TrackId, &LinearModel)> {
        self.models.iter().map(|(id, m)| (*id, m))
    }
}

impl FromIterator<(TrackId, LinearModel)> for ModelBank {
    fn from_iter<T: IntoIterator<Item = (TrackId, LinearModel)>>(iter: T) -> Self {
        ModelBank { models: iter.into_iter().collect() }
    }
}

/// Count-weighted running mean of all instance-model snapshots. Serves as
/// the scene-adapted category-level detector.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningMean {
    mean: LinearModel,
    count: f64,
}

impl RunningMean {
    /// Starts the mean at the pretrained detector. `pseudo_count` weights
    /// that initial model in later averaging (zero reproduces the plain
    /// snapshot average).
    pub fn new(initial: LinearModel, pseudo_count: f64) -> Self {
        debug_assert!(pseudo_count >= 0.0);
        RunningMean { mean: initial, count: pseudo_count }
    }

    pub fn mean(&self) -> &LinearModel {
        &self.mean
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    /// Initial model for a newly created target: an exact copy of the
    /// current category-level detector.
    pub fn warm_start(&self) -> LinearModel {
        self.mean.clone()
    }
}

/// Folds one frame's updated instance models into the running mean:
/// `mean' = (count * mean + sum_i w_i) / (count + n)`. An empty bank leaves
/// the mean untouched.
pub fn update_running_mean(rm: &RunningMean, bank: &ModelBank) -> RunningMean {
    if bank.is_empty() {
        return rm.clone();
    }
    let n = bank.len() as f64;
    let dim = rm.mean.weights().len();
    let mut acc = Vec::with_capacity(dim);
    acc.extend(rm.mean.weights().iter().map(|w| w * rm.count));
    for (_, model) in bank.iter() {
        debug_assert_eq!(model.weights().len(), dim);
        for (a, w) in acc.iter_mut().zip(model.weights()) {
            *a += w;
        }
    }
    let total = rm.count + n;
    for a in acc.iter_mut() {
        *a /= total;
    }
    RunningMean {
        mean: LinearModel::from_weights(acc).expect("mean of finite models is finite"),
        count: total,
    }
}

/// One frame's training samples for one target: exactly one positive plus
/// the mined hard negatives.
#[derive(Debug, Clone)]
pub struct TargetSamples {
    positive: FeatureVec,
    negatives: Vec<FeatureVec>,
}

impl TargetSamples {
    pub fn new(positive: FeatureVec, negatives: Vec<FeatureVec>) -> Result<Self, MtlError> {
        if negatives.is_empty() {
            return Err(MtlError::NoNegatives);
        }
        Ok(TargetSamples { positive, negatives })
    }

    pub fn len(&self) -> usize {
        1 + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FeatureVec, Label)> {
        core::iter::once((&self.positive, Label::Pos))
            .chain(self.negatives.iter().map(|f| (f, Label::Neg)))
    }
}

/// Per-target sample sets mined in one frame.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    by_target: BTreeMap<TrackId, TargetSamples>,
}

impl SampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: TrackId, samples: TargetSamples) {
        self.by_target.insert(id, samples);
    }

    pub fn len(&self) -> usize {
        self.by_target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_target.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TrackId, &TargetSamples)> {
        self.by_target.iter().map(|(id, s)| (*id, s))
    }
}

/// Knobs of the per-frame multi-task update.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlConfig {
    /// Weight of the pull toward the running mean.
    pub lambda: f64,
    /// Constant SGD learning rate.
    pub eta: f64,
    /// Passes over the frame's samples per update.
    pub epochs: usize,
    /// Hard negatives mined per target per frame.
    pub n_neg: usize,
    /// Maximum overlap of a negative proposal with the predicted box.
    pub tau_neg: f64,
}

impl Default for MtlConfig {
    fn default() -> Self {
        MtlConfig { lambda: 1.0, eta: 1e-5, epochs: 1, n_neg: 10, tau_neg: 0.3 }
    }
}

/// Picks the training samples for one target: the positive is the feature of
/// the proposal best overlapping the predicted box; negatives are the up to
/// `n_neg` highest-scoring proposals (under the target's current model) with
/// overlap below `tau_neg`. Ties keep proposal order.
pub fn mine_samples(
    predicted: &BBox,
    proposals: &[BBox],
    features: &[FeatureVec],
    model: &LinearModel,
    cfg: &MtlConfig,
) -> Result<TargetSamples, MtlError> {
    debug_assert_eq!(proposals.len(), features.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in proposals.iter().enumerate() {
        let v = iou(b, predicted);
        if v > 0.0 && best.map_or(true, |(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    let (pos_idx, _) = best.ok_or(MtlError::NoPositive)?;
    mine_samples_with_positive(features[pos_idx].clone(), predicted, proposals, features, model, cfg)
}

/// Variant for providers that can extract features at the predicted box
/// itself; only the negatives are mined from the proposals.
pub fn mine_samples_with_positive(
    positive: FeatureVec,
    predicted: &BBox,
    proposals: &[BBox],
    features: &[FeatureVec],
    model: &LinearModel,
    cfg: &MtlConfig,
) -> Result<TargetSamples, MtlError> {
    debug_assert_eq!(proposals.len(), features.len());
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for (i, b) in proposals.iter().enumerate() {
        if iou(b, predicted) < cfg.tau_neg {
            scored.push((i, model.predict_prob(&features[i])?));
        }
    }
    if scored.is_empty() {
        return Err(MtlError::NoNegatives);
    }
    // Stable sort keeps proposal order on score ties.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    scored.truncate(cfg.n_neg.max(1));
    let negatives = scored.into_iter().map(|(i, _)| features[i].clone()).collect();
    TargetSamples::new(positive, negatives)
}

/// The joint objective over the sampled targets: mean per-target empirical
/// logistic risk plus `lambda/(2 N)` times the summed squared distances of
/// the instance models from the running mean.
pub fn mtl_objective(
    bank: &ModelBank,
    samples: &SampleSet,
    rm: &RunningMean,
    lambda: f64,
) -> Result<f64, MtlError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let n_targets = samples.len() as f64;
    let mut data = 0.0;
    let mut reg = 0.0;
    for (id, target_samples) in samples.iter() {
        let model = bank.get(id).ok_or(MtlError::UnknownTarget(id))?;
        let mut risk = 0.0;
        for (feature, label) in target_samples.iter() {
            risk += model.logistic_loss(feature, label)?;
        }
        data += risk / target_samples.len() as f64;
        reg += model
            .weights()
            .iter()
            .zip(rm.mean().weights())
            .map(|(w, m)| (w - m) * (w - m))
            .sum::<f64>();
    }
    Ok(data / n_targets + lambda * reg / (2.0 * n_targets))
}

/// Exact gradient of [`mtl_objective`] with respect to each sampled target's
/// weights, treating the running mean as a constant.
pub fn mtl_gradient(
    bank: &ModelBank,
    samples: &SampleSet,
    rm: &RunningMean,
    lambda: f64,
) -> Result<BTreeMap<TrackId, Vec<f64>>, MtlError> {
    let n_targets = samples.len() as f64;
    let mut out = BTreeMap::new();
    for (id, target_samples) in samples.iter() {
        let model = bank.get(id).ok_or(MtlError::UnknownTarget(id))?;
        let n_i = target_samples.len() as f64;
        let mut grad = alloc::vec![0.0; model.weights().len()];
        for (feature, label) in target_samples.iter() {
            for (g, v) in grad.iter_mut().zip(model.loss_gradient(feature, label)?) {
                *g += v;
            }
        }
        for ((g, w), m) in grad.iter_mut().zip(model.weights()).zip(rm.mean().weights()) {
            *g = *g / (n_targets * n_i) + lambda / n_targets * (w - m);
        }
        out.insert(id, grad);
    }
    Ok(out)
}

/// Runs `epochs` passes of per-sample SGD over the frame's samples, visiting
/// them in a seeded random order within each epoch.
///
/// Each visit steps the owning target by the gradient of that sample's
/// regularized loss, `grad(l) + lambda (w_i - mean)`. Targets decouple in the
/// joint objective, so this follows the same descent directions as
/// [`mtl_gradient`]; the shared `1/(N n_i)` normalization only rescales the
/// constant learning rate.
///
/// Returns the updated bank, or [`MtlError::NonFinite`] (callers keep the
/// previous models) when any weight diverges. Targets without samples are
/// copied unchanged.
pub fn update_targets(
    bank: &ModelBank,
    samples: &SampleSet,
    rm: &RunningMean,
    cfg: &MtlConfig,
    seed: u64,
) -> Result<ModelBank, MtlError> {
    let mut updated: BTreeMap<TrackId, LinearModel> =
        bank.iter().map(|(id, m)| (id, m.clone())).collect();

    let mut visits: Vec<(TrackId, usize)> = Vec::new();
    for (id, target_samples) in samples.iter() {
        if !updated.contains_key(&id) {
            return Err(MtlError::UnknownTarget(id));
        }
        for k in 0..target_samples.len() {
            visits.push((id, k));
        }
    }

    let mean = rm.mean().weights();
    let mut rng = derive_rng(seed, Stream::SampleOrder, &[]);
    for _ in 0..cfg.epochs {
        visits.shuffle(&mut rng);
        for &(id, k) in &visits {
            let model = updated.get_mut(&id).expect("checked above");
            let (feature, label) = samples
                .by_target
                .get(&id)
                .expect("checked above")
                .iter()
                .nth(k)
                .expect("index within sample count");
            let mut grad = model.loss_gradient(feature, label)?;
            for (g, (w, m)) in grad.iter_mut().zip(model.weights().iter().zip(mean)) {
                *g += cfg.lambda * (w - m);
            }
            match model.sgd_step(&grad, cfg.eta) {
                Ok(next) => *model = next,
                Err(ModelError::NonFinite) => return Err(MtlError::NonFinite),
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(ModelBank { models: updated })
}
