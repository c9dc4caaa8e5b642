//! The causal frame loop: per-target motion updates, detection of new
//! targets with the category-level model, overlap-based track merging, lost
//! handling with reinitialization, joint per-target appearance updates, and
//! the category-model running mean, in that order every frame.

use alloc::collections::BTreeMap;
use alloc::collections::VecDeque;
use alloc::str::FromStr;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::geom::{clip_to_frame, iou, min_area_overlap, BBox, Detection, TrackId};
use crate::linmodel::{FeatureVec, LinearModel, ModelError};
use crate::metrics::{AnnotatedSequence, GtBox};
use crate::mtl::{
    mine_samples_with_positive, update_running_mean, update_targets, ModelBank, MtlConfig,
    MtlError, RunningMean, SampleSet,
};
use crate::providers::{FeatureSource, FrameBundle};
use crate::rng::{derive_rng, Stream};
use crate::smc::{
    effective_sample_size, estimate, init_particles, likelihood, propagate, reweight, resample,
    velocity, NoiseSchedule, ParticleSet, SmcError,
};

/// Proposals within this overlap of the predicted box take part in the
/// appearance-based lost test.
pub const LOST_CHECK_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrackerError {
    /// Frames must be presented in strictly increasing order.
    OutOfOrderFrame { got: usize, last: usize },
    Model(ModelError),
}

impl fmt::Display for TrackerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrackerError::OutOfOrderFrame { got, last } => {
                write!(f, "frame {got} arrived after frame {last}")
            }
            TrackerError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TrackerError {}

impl From<ModelError> for TrackerError {
    fn from(e: ModelError) -> Self {
        TrackerError::Model(e)
    }
}

/// Adaptation mode: the full method and its two ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Warm-started targets, joint regularization, category model adapted
    /// online.
    Odamot,
    /// Warm-started targets, independent updates, frozen category model.
    Cit,
    /// Targets learned from scratch on their first frame, independent
    /// updates, frozen category model.
    Cft,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Odamot => "odamot",
            Mode::Cit => "cit",
            Mode::Cft => "cft",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "odamot" => Ok(Mode::Odamot),
            "cit" => Ok(Mode::Cit),
            "cft" => Ok(Mode::Cft),
            other => Err(alloc::format!("unknown mode `{other}` (odamot|cit|cft)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Overlap measure for the track-merge test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapMetric {
    Iou,
    /// Intersection over the smaller box.
    MinArea,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Lost/merge persistence in frames (the short interval `T`).
    pub persistence: u32,
    /// Two tracks overlapping by more than this for more than `persistence`
    /// consecutive frames are merged.
    pub overlap_merge: f64,
    pub overlap_metric: OverlapMetric,
    /// Detection probability threshold for new targets.
    pub tau_detect: f64,
    /// Appearance probability threshold below which a target is lost, and
    /// at or above which a lost target reinitializes.
    pub tau_lost: f64,
    pub nms_iou: f64,
    /// New detections overlapping an existing track's last estimate by at
    /// least this much are dropped.
    pub gate_iou: f64,
    pub mode: Mode,
    pub n_particles: usize,
    /// Initial relative transition-noise std.
    pub sigma0: f64,
    /// Resample every frame instead of only when ESS drops below half the
    /// particle count.
    pub resample_every_frame: bool,
    /// Use the adapted running mean (rather than the original pretrained
    /// model) as the category factor of the observation likelihood.
    pub category_obs_adapted: bool,
    pub mtl: MtlConfig,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            persistence: 3,
            overlap_merge: 0.3,
            overlap_metric: OverlapMetric::Iou,
            tau_detect: 0.5,
            tau_lost: 0.5,
            nms_iou: 0.5,
            gate_iou: 0.5,
            mode: Mode::Odamot,
            n_particles: 100,
            sigma0: 0.05,
            resample_every_frame: false,
            category_obs_adapted: true,
            mtl: MtlConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Active,
    /// Lost for `k` consecutive frames, `1 <= k <= persistence`.
    Lost(u32),
}

/// One tracked target.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: TrackId,
    pub model: LinearModel,
    pub particles: ParticleSet,
    pub status: TrackStatus,
    pub noise: NoiseSchedule,
    pub last_estimate: BBox,
    pub birth_frame: usize,
    score_window: VecDeque<f64>,
}

impl Track {
    /// Mean observation likelihood over the last `persistence` frames.
    pub fn score(&self) -> f64 {
        if self.score_window.is_empty() {
            return 0.0;
        }
        self.score_window.iter().sum::<f64>() / self.score_window.len() as f64
    }

    fn push_score(&mut self, value: f64, window: usize) {
        self.score_window.push_back(value);
        while self.score_window.len() > window {
            self.score_window.pop_front();
        }
    }
}

/// Output record for one active track in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRecord {
    pub id: TrackId,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameOutput {
    pub frame: usize,
    pub records: Vec<TrackRecord>,
}

/// Scores all proposals with the category-level model, keeps those at or
/// above the detection threshold, applies greedy non-maximum suppression,
/// and drops detections overlapping any existing track's last estimate.
pub fn detect_new_targets(
    category: &LinearModel,
    proposals: &[BBox],
    features: &[FeatureVec],
    existing: &[BBox],
    cfg: &TrackerConfig,
) -> Result<Vec<Detection>, ModelError> {
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for (i, f) in features.iter().enumerate() {
        let p = category.predict_prob(f)?;
        if p >= cfg.tau_detect {
            scored.push((i, p));
        }
    }
    // Stable sort keeps proposal order on ties.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut kept: Vec<Detection> = Vec::new();
    'candidates: for (i, p) in scored {
        let bbox = proposals[i];
        for k in &kept {
            if iou(&k.bbox, &bbox) >= cfg.nms_iou {
                continue 'candidates;
            }
        }
        for e in existing {
            if iou(e, &bbox) >= cfg.gate_iou {
                continue 'candidates;
            }
        }
        kept.push(Detection::new(bbox, p));
    }
    Ok(kept)
}

/// Advances the per-pair consecutive-overlap counters and returns the ids of
/// tracks to terminate: in any pair overlapping for more than `persistence`
/// consecutive frames, the lower-score track dies (ties kill the younger
/// id).
pub(crate) fn update_merge_streaks(
    streaks: &mut BTreeMap<(u64, u64), u32>,
    active: &[(u64, BBox, f64)],
    cfg: &TrackerConfig,
) -> Vec<u64> {
    let mut seen: BTreeMap<(u64, u64), u32> = BTreeMap::new();
    for (i, (id_a, box_a, _)) in active.iter().enumerate() {
        for (id_b, box_b, _) in active.iter().skip(i + 1) {
            let key = if id_a < id_b { (*id_a, *id_b) } else { (*id_b, *id_a) };
            let overlap = match cfg.overlap_metric {
                OverlapMetric::Iou => iou(box_a, box_b),
                OverlapMetric::MinArea => min_area_overlap(box_a, box_b),
            };
            if overlap > cfg.overlap_merge {
                let count = streaks.get(&key).copied().unwrap_or(0) + 1;
                seen.insert(key, count);
            }
        }
    }
    // Streaks are strictly consecutive: any pair not overlapping this frame
    // resets by dropping out.
    *streaks = seen;

    let mut doomed: Vec<u64> = Vec::new();
    for (&(a, b), &count) in streaks.iter() {
        if count > cfg.persistence {
            let score_a = active.iter().find(|(id, _, _)| *id == a).map(|(_, _, s)| *s);
            let score_b = active.iter().find(|(id, _, _)| *id == b).map(|(_, _, s)| *s);
            if let (Some(sa), Some(sb)) = (score_a, score_b) {
                let loser = if sa < sb {
                    a
                } else if sb < sa {
                    b
                } else {
                    a.max(b)
                };
                if !doomed.contains(&loser) {
                    doomed.push(loser);
                }
            }
        }
    }
    doomed
}

/// The tracker state machine. Feed frames in order through [`Tracker::step`].
pub struct Tracker {
    cfg: TrackerConfig,
    pretrained: LinearModel,
    rm: RunningMean,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
    merge_streaks: BTreeMap<(u64, u64), u32>,
    history: Vec<FrameOutput>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, pretrained: LinearModel) -> Self {
        let rm = RunningMean::new(pretrained.clone(), 0.0);
        Tracker {
            cfg,
            pretrained,
            rm,
            tracks: Vec::new(),
            next_id: 0,
            last_frame: None,
            merge_streaks: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn cfg(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// The adapted category-level detector (the running mean).
    pub fn running_mean(&self) -> &RunningMean {
        &self.rm
    }

    pub fn pretrained(&self) -> &LinearModel {
        &self.pretrained
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn history(&self) -> &[FrameOutput] {
        &self.history
    }

    /// Converts the emitted history into an annotated sequence of `class`
    /// boxes spanning `n_frames`, scores preserved.
    pub fn history_sequence(&self, n_frames: usize, class: &str) -> AnnotatedSequence {
        let mut seq = AnnotatedSequence::new(n_frames);
        for out in &self.history {
            for r in &out.records {
                seq.push(out.frame, GtBox::new(r.id.0 as i64, class, r.bbox).with_score(r.score));
            }
        }
        seq
    }

    fn effective_lambda(&self) -> f64 {
        match self.cfg.mode {
            Mode::Odamot => self.cfg.mtl.lambda,
            Mode::Cit | Mode::Cft => 0.0,
        }
    }

    /// Runs one frame of the loop and returns the records emitted for it.
    pub fn step(
        &mut self,
        bundle: &FrameBundle,
        features: &dyn FeatureSource,
    ) -> Result<FrameOutput, TrackerError> {
        let frame = bundle.frame;
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(TrackerError::OutOfOrderFrame { got: frame, last });
            }
        }
        self.last_frame = Some(frame);
        debug_assert_eq!(bundle.proposals.len(), bundle.features.len());

        // 1. Motion updates for active targets; appearance lost test.
        let mut lost_this_frame: Vec<TrackId> = Vec::new();
        let category_obs = if self.cfg.category_obs_adapted {
            self.rm.mean().clone()
        } else {
            self.pretrained.clone()
        };
        for track in &mut self.tracks {
            if track.status != TrackStatus::Active {
                continue;
            }
            let v = velocity(&bundle.flow, &track.last_estimate).unwrap_or((0.0, 0.0));
            let mut noise_rng =
                derive_rng(self.cfg.seed, Stream::ParticleNoise, &[frame as u64, track.id.0]);
            let moved = propagate(&track.particles, v, &track.noise, &mut noise_rng);

            let mut likelihoods = Vec::with_capacity(moved.len());
            for p in moved.iter() {
                let value = match features.feature_at(frame, &p.bbox) {
                    Ok(f) => likelihood(&track.model, &category_obs, &f)?,
                    Err(_) => 0.0,
                };
                likelihoods.push(value);
            }
            // Mean observation likelihood under the predictive distribution;
            // this is the track score entry for the frame.
            let evidence: f64 =
                moved.iter().zip(&likelihoods).map(|(p, l)| p.weight * l).sum();

            let weighted = match reweight(&moved, &likelihoods) {
                Ok(w) => w,
                Err(SmcError::AllZeroWeights) => {
                    track.status = TrackStatus::Lost(1);
                    track.particles = moved;
                    lost_this_frame.push(track.id);
                    continue;
                }
                Err(_) => unreachable!("likelihoods are finite and non-negative"),
            };
            let est = estimate(&weighted);
            let clipped = match clip_to_frame(&est, bundle.width, bundle.height) {
                Ok(b) => b,
                Err(_) => {
                    track.status = TrackStatus::Lost(1);
                    track.particles = weighted;
                    lost_this_frame.push(track.id);
                    continue;
                }
            };

            // Appearance check: the target's own detector must still fire
            // near the predicted location.
            let mut best_nearby: Option<f64> = None;
            for (i, p) in bundle.proposals.iter().enumerate() {
                if iou(p, &clipped) >= LOST_CHECK_IOU {
                    let prob = track.model.predict_prob(&bundle.features[i])?;
                    if best_nearby.map_or(true, |b| prob > b) {
                        best_nearby = Some(prob);
                    }
                }
            }
            if best_nearby.map_or(true, |b| b < self.cfg.tau_lost) {
                track.status = TrackStatus::Lost(1);
                track.particles = weighted;
                lost_this_frame.push(track.id);
                continue;
            }

            let final_particles = if self.cfg.resample_every_frame
                || effective_sample_size(&weighted) < weighted.len() as f64 / 2.0
            {
                let mut resample_rng =
                    derive_rng(self.cfg.seed, Stream::Resample, &[frame as u64, track.id.0]);
                resample(&weighted, &mut resample_rng)
            } else {
                weighted
            };
            track.particles = final_particles;
            track.last_estimate = clipped;
            track.push_score(evidence, self.cfg.persistence as usize);
        }

        // 2. Lost targets scan all proposals with their own detector and
        // either reinitialize or run down the persistence budget. Targets
        // that became lost in this frame start scanning next frame.
        // Proposals already claimed by an active track are excluded, the
        // same suppression the detection gate applies.
        let active_boxes: Vec<BBox> = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active)
            .map(|t| t.last_estimate)
            .collect();
        let mut removed: Vec<TrackId> = Vec::new();
        for track in &mut self.tracks {
            let TrackStatus::Lost(k) = track.status else { continue };
            if lost_this_frame.contains(&track.id) {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (i, f) in bundle.features.iter().enumerate() {
                if active_boxes
                    .iter()
                    .any(|b| iou(b, &bundle.proposals[i]) >= self.cfg.gate_iou)
                {
                    continue;
                }
                let prob = track.model.predict_prob(f)?;
                if best.map_or(true, |(_, bp)| prob > bp) {
                    best = Some((i, prob));
                }
            }
            match best {
                Some((i, prob)) if prob >= self.cfg.tau_lost => {
                    let hit = bundle.proposals[i];
                    let mut rng = derive_rng(
                        self.cfg.seed,
                        Stream::ParticleInit,
                        &[frame as u64, track.id.0],
                    );
                    track.particles = init_particles(
                        &Detection::new(hit, prob),
                        track.noise.sigma(),
                        self.cfg.n_particles,
                        &mut rng,
                    );
                    track.status = TrackStatus::Active;
                    track.last_estimate = hit;
                    let f = &bundle.features[i];
                    let like = likelihood(&track.model, &category_obs, f)?;
                    track.push_score(like, self.cfg.persistence as usize);
                }
                _ => {
                    if k + 1 > self.cfg.persistence {
                        removed.push(track.id);
                    } else {
                        track.status = TrackStatus::Lost(k + 1);
                    }
                }
            }
        }
        self.tracks.retain(|t| !removed.contains(&t.id));

        // 3. Detect new targets with the category-level detector.
        let existing: Vec<BBox> = self.tracks.iter().map(|t| t.last_estimate).collect();
        let detections = detect_new_targets(
            self.rm.mean(),
            &bundle.proposals,
            &bundle.features,
            &existing,
            &self.cfg,
        )?;
        let mut born: Vec<TrackId> = Vec::new();
        for det in detections {
            let id = TrackId(self.next_id);
            self.next_id += 1;
            let model = match self.cfg.mode {
                Mode::Cft => LinearModel::zeros(self.rm.mean().dim()),
                Mode::Odamot | Mode::Cit => self.rm.warm_start(),
            };
            let mut rng = derive_rng(self.cfg.seed, Stream::ParticleInit, &[frame as u64, id.0]);
            let particles =
                init_particles(&det, self.cfg.sigma0, self.cfg.n_particles, &mut rng);
            let mut track = Track {
                id,
                model,
                particles,
                status: TrackStatus::Active,
                // The initial detection counts as the first success.
                noise: NoiseSchedule { sigma0: self.cfg.sigma0, successes: 1 },
                last_estimate: det.bbox,
                birth_frame: frame,
                score_window: VecDeque::new(),
            };
            track.push_score(det.score, self.cfg.persistence as usize);
            self.tracks.push(track);
            born.push(id);
        }

        // 4. Merge overlapping tracks.
        let active_info: Vec<(u64, BBox, f64)> = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active)
            .map(|t| (t.id.0, t.last_estimate, t.score()))
            .collect();
        let doomed = update_merge_streaks(&mut self.merge_streaks, &active_info, &self.cfg);
        if !doomed.is_empty() {
            self.tracks.retain(|t| !doomed.contains(&t.id.0));
            self.merge_streaks
                .retain(|(a, b), _| !doomed.contains(a) && !doomed.contains(b));
        }

        // 5. Joint appearance update of all active targets.
        let lambda = self.effective_lambda();
        let mtl_cfg = MtlConfig { lambda, ..self.cfg.mtl.clone() };
        let mut samples = SampleSet::new();
        let mut bank = ModelBank::new();
        // Claims cover lost targets too: a lost object usually sits near
        // its stale estimate and must not be suppressed while unobserved.
        let claimed: Vec<(TrackId, BBox)> =
            self.tracks.iter().map(|t| (t.id, t.last_estimate)).collect();
        for track in self.tracks.iter().filter(|t| t.status == TrackStatus::Active) {
            let Ok(positive) = features.feature_at(frame, &track.last_estimate) else {
                continue;
            };
            // Windows claimed by other active targets are positives of the
            // shared category, not background; they never enter this
            // target's negative pool.
            let mut cand_boxes: Vec<BBox> = Vec::new();
            let mut cand_features: Vec<FeatureVec> = Vec::new();
            'proposals: for (i, p) in bundle.proposals.iter().enumerate() {
                for (other_id, other_box) in &claimed {
                    if *other_id != track.id && iou(p, other_box) >= mtl_cfg.tau_neg {
                        continue 'proposals;
                    }
                }
                cand_boxes.push(*p);
                cand_features.push(bundle.features[i].clone());
            }
            match mine_samples_with_positive(
                positive,
                &track.last_estimate,
                &cand_boxes,
                &cand_features,
                &track.model,
                &mtl_cfg,
            ) {
                Ok(target_samples) => {
                    samples.insert(track.id, target_samples);
                    bank.insert(track.id, track.model.clone());
                }
                Err(MtlError::NoNegatives) => {}
                Err(MtlError::Model(e)) => return Err(e.into()),
                Err(_) => {}
            }
        }
        if !samples.is_empty() {
            let update_seed = derive_update_seed(self.cfg.seed, frame);
            match update_targets(&bank, &samples, &self.rm, &mtl_cfg, update_seed) {
                Ok(updated) => {
                    for track in &mut self.tracks {
                        if let Some(m) = updated.get(track.id) {
                            track.model = m.clone();
                            if !born.contains(&track.id) {
                                track.noise.successes += 1;
                            }
                        }
                    }
                }
                // A diverged update aborts the frame's learning; previous
                // models stay in place.
                Err(MtlError::NonFinite) => {}
                Err(MtlError::Model(e)) => return Err(e.into()),
                Err(_) => {}
            }
        }

        // 6. Running-mean update of the category detector (adaptive mode
        // only): every active target contributes its current model once.
        if self.cfg.mode == Mode::Odamot {
            let contrib: ModelBank = self
                .tracks
                .iter()
                .filter(|t| t.status == TrackStatus::Active)
                .map(|t| (t.id, t.model.clone()))
                .collect();
            self.rm = update_running_mean(&self.rm, &contrib);
        }

        // 7. Emit records for active tracks.
        let mut records: Vec<TrackRecord> = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active)
            .map(|t| TrackRecord { id: t.id, bbox: t.last_estimate, score: t.score() })
            .collect();
        records.sort_by_key(|r| r.id);
        let output = FrameOutput { frame, records };
        self.history.push(output.clone());
        Ok(output)
    }
}

fn derive_update_seed(seed: u64, frame: usize) -> u64 {
    use rand::RngCore;
    derive_rng(seed, Stream::SampleOrder, &[frame as u64]).next_u64()
}
