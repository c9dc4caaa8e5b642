//! CLEAR MOT evaluation (MOTA, MOTP, MT, ML, recall, precision, FAR, ID
//! switches, fragmentations) and the KITTI tracking text format.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;

use crate::geom::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    FrameRangeMismatch { gt: usize, hyp: usize },
    MalformedRow { line: usize, reason: String },
    NonMonotoneFrames { line: usize },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::FrameRangeMismatch { gt, hyp } => {
                write!(f, "ground truth spans {gt} frames but hypotheses span {hyp}")
            }
            MetricsError::MalformedRow { line, reason } => {
                write!(f, "malformed row at line {line}: {reason}")
            }
            MetricsError::NonMonotoneFrames { line } => {
                write!(f, "frame indices decrease at line {line}")
            }
        }
    }
}

impl core::error::Error for MetricsError {}

/// Opaque per-row annotation fields passed through unchanged on write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowMeta {
    pub truncated: String,
    pub occluded: String,
    pub alpha: String,
    /// The 3D fields (and optional score) after the 2D box.
    pub extras: Vec<String>,
}

impl Default for RowMeta {
    fn default() -> Self {
        RowMeta {
            truncated: "0".into(),
            occluded: "0".into(),
            alpha: "-10".into(),
            extras: ["-1", "-1", "-1", "-1000", "-1000", "-1000", "-10"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// One annotated box of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GtBox {
    pub id: i64,
    pub class: String,
    pub bbox: BBox,
    pub meta: RowMeta,
}

impl GtBox {
    pub fn new(id: i64, class: &str, bbox: BBox) -> Self {
        GtBox { id, class: class.into(), bbox, meta: RowMeta::default() }
    }

    /// Appends a detection score to the pass-through fields, as result rows
    /// carry one more column than ground truth.
    pub fn with_score(mut self, score: f64) -> Self {
        self.meta.extras.push(format!("{score}"));
        self
    }
}

/// Per-frame lists of annotated boxes with ids consistent across frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotatedSequence {
    frames: Vec<Vec<GtBox>>,
}

impl AnnotatedSequence {
    pub fn new(n_frames: usize) -> Self {
        AnnotatedSequence { frames: vec![Vec::new(); n_frames] }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, t: usize) -> &[GtBox] {
        &self.frames[t]
    }

    /// Adds a box, growing the frame range as needed.
    pub fn push(&mut self, frame: usize, gt_box: GtBox) {
        if frame >= self.frames.len() {
            self.frames.resize(frame + 1, Vec::new());
        }
        self.frames[frame].push(gt_box);
    }

    pub fn total_boxes(&self) -> usize {
        self.frames.iter().map(|f| f.len()).sum()
    }

    /// Keeps only boxes of the given class.
    pub fn filter_class(&self, class: &str) -> AnnotatedSequence {
        AnnotatedSequence {
            frames: self
                .frames
                .iter()
                .map(|f| f.iter().filter(|b| b.class == class).cloned().collect())
                .collect(),
        }
    }

    /// Extends (never truncates) the frame range to exactly `n` frames.
    pub fn with_frame_count(mut self, n: usize) -> Result<AnnotatedSequence, MetricsError> {
        if n < self.frames.len() {
            return Err(MetricsError::FrameRangeMismatch { gt: n, hyp: self.frames.len() });
        }
        self.frames.resize(n, Vec::new());
        Ok(self)
    }
}

/// CLEAR MOT summary. Ratio metrics are fractions in `[0, 1]`; FAR is false
/// positives per frame times 100.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mota: f64,
    pub motp: f64,
    pub mostly_tracked: f64,
    pub mostly_lost: f64,
    pub recall: f64,
    pub precision: f64,
    pub far: f64,
    pub id_switches: u64,
    pub fragmentations: u64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub misses: u64,
    pub gt_total: u64,
    pub n_frames: u64,
    /// False when there were no hypotheses at all (precision reported as 0).
    pub precision_defined: bool,
}

/// Trajectory coverage thresholds for the mostly-tracked / mostly-lost
/// ratios (benchmark convention).
pub const MOSTLY_TRACKED_COVERAGE: f64 = 0.8;
pub const MOSTLY_LOST_COVERAGE: f64 = 0.2;

#[derive(Default)]
struct TrajectoryStat {
    present: u64,
    matched: u64,
    /// Hypothesis id of the last matched frame (persists across gaps); drives
    /// the identity-switch count.
    last_hyp: Option<i64>,
    /// Assignment at the previous frame in which this trajectory was present;
    /// a new covered segment starts whenever the assignment changes.
    prev_assignment: Option<i64>,
    segments: u64,
}

/// CLEAR MOT evaluation of a hypothesis sequence against ground truth.
///
/// Per frame, matches from the previous frame that still overlap at least
/// `iou_thr` are kept; the remaining boxes are matched by a min-cost
/// assignment on `1 - IoU` restricted to pairs with `IoU >= iou_thr`.
///
/// Conventions (also stated in the report header): MOTA = 1 - (FN + FP +
/// IDS) / GT; MOTP = mean IoU over matches; FAR = 100 * FP / frames; a
/// fragmentation is counted whenever a trajectory's covering hypothesis is
/// interrupted, by a coverage gap or by an identity change; MT/ML use
/// coverage thresholds 80% / 20%.
pub fn clear_mot(
    gt: &AnnotatedSequence,
    hyp: &AnnotatedSequence,
    iou_thr: f64,
) -> Result<MetricsReport, MetricsError> {
    if gt.n_frames() != hyp.n_frames() {
        return Err(MetricsError::FrameRangeMismatch { gt: gt.n_frames(), hyp: hyp.n_frames() });
    }
    let n_frames = gt.n_frames();

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut misses = 0u64;
    let mut ids = 0u64;
    let mut motp_sum = 0.0;
    let mut hyp_total = 0u64;
    let mut trajectories: BTreeMap<i64, TrajectoryStat> = BTreeMap::new();
    let mut prev_match: BTreeMap<i64, i64> = BTreeMap::new();

    for t in 0..n_frames {
        let gts = gt.frame(t);
        let hyps = hyp.frame(t);
        hyp_total += hyps.len() as u64;

        let mut used = vec![false; hyps.len()];
        let mut assignment: Vec<Option<usize>> = vec![None; gts.len()];

        // Keep surviving matches from the previous frame first.
        for (gi, g) in gts.iter().enumerate() {
            if let Some(&h_id) = prev_match.get(&g.id) {
                let mut best: Option<(usize, f64)> = None;
                for (hi, h) in hyps.iter().enumerate() {
                    if !used[hi] && h.id == h_id {
                        let v = iou(&h.bbox, &g.bbox);
                        if v >= iou_thr && best.map_or(true, |(_, bv)| v > bv) {
                            best = Some((hi, v));
                        }
                    }
                }
                if let Some((hi, _)) = best {
                    used[hi] = true;
                    assignment[gi] = Some(hi);
                }
            }
        }

        // Optimal assignment over the remainder.
        let free_g: Vec<usize> =
            (0..gts.len()).filter(|&gi| assignment[gi].is_none()).collect();
        let free_h: Vec<usize> = (0..hyps.len()).filter(|&hi| !used[hi]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            let cost: Vec<Vec<f64>> = free_g
                .iter()
                .map(|&gi| {
                    free_h
                        .iter()
                        .map(|&hi| {
                            let v = iou(&hyps[hi].bbox, &gts[gi].bbox);
                            if v >= iou_thr {
                                1.0 - v
                            } else {
                                assign::FORBIDDEN
                            }
                        })
                        .collect()
                })
                .collect();
            for (row, col) in assign::min_cost_matching(&cost) {
                assignment[free_g[row]] = Some(free_h[col]);
                used[free_h[col]] = true;
            }
        }

        // Book-keeping.
        let mut matched_here = 0u64;
        let mut next_prev_match = BTreeMap::new();
        for (gi, g) in gts.iter().enumerate() {
            let stat = trajectories.entry(g.id).or_default();
            stat.present += 1;
            let assigned_id = assignment[gi].map(|hi| hyps[hi].id);
            match assignment[gi] {
                Some(hi) => {
                    let h_id = hyps[hi].id;
                    tp += 1;
                    matched_here += 1;
                    motp_sum += iou(&hyps[hi].bbox, &g.bbox);
                    stat.matched += 1;
                    if let Some(last) = stat.last_hyp {
                        if last != h_id {
                            ids += 1;
                        }
                    }
                    stat.last_hyp = Some(h_id);
                    next_prev_match.insert(g.id, h_id);
                }
                None => misses += 1,
            }
            if let Some(h_id) = assigned_id {
                if stat.prev_assignment != Some(h_id) {
                    stat.segments += 1;
                }
            }
            stat.prev_assignment = assigned_id;
        }
        fp += hyps.len() as u64 - matched_here;
        prev_match = next_prev_match;
    }

    let gt_total = gt.total_boxes() as u64;
    let frg: u64 = trajectories.values().map(|s| s.segments.saturating_sub(1)).sum();
    let n_traj = trajectories.len().max(1) as f64;
    let mostly_tracked = trajectories
        .values()
        .filter(|s| s.matched as f64 >= MOSTLY_TRACKED_COVERAGE * s.present as f64)
        .count() as f64
        / n_traj;
    let mostly_lost = trajectories
        .values()
        .filter(|s| s.matched as f64 <= MOSTLY_LOST_COVERAGE * s.present as f64)
        .count() as f64
        / n_traj;

    let denom = gt_total.max(1) as f64;
    Ok(MetricsReport {
        mota: 1.0 - (misses + fp + ids) as f64 / denom,
        motp: if tp > 0 { motp_sum / tp as f64 } else { 0.0 },
        mostly_tracked,
        mostly_lost,
        recall: tp as f64 / denom,
        precision: if hyp_total > 0 { tp as f64 / hyp_total as f64 } else { 0.0 },
        far: if n_frames > 0 { 100.0 * fp as f64 / n_frames as f64 } else { 0.0 },
        id_switches: ids,
        fragmentations: frg,
        true_positives: tp,
        false_positives: fp,
        misses,
        gt_total,
        n_frames: n_frames as u64,
        precision_defined: hyp_total > 0,
    })
}

/// Minimum-cost assignment on small dense matrices.
pub(crate) mod assign {
    use alloc::vec;
    use alloc::vec::Vec;

    /// Cost marking a pair that must never be matched.
    pub const FORBIDDEN: f64 = 1e6;
    // Dummy padding cost: above every real pair cost, far below FORBIDDEN,
    // so match count is maximized first and summed cost second.
    const DUMMY: f64 = 4.0;

    /// Returns the `(row, col)` pairs of an optimal assignment, excluding
    /// pairs at or above the dummy cost.
    pub fn min_cost_matching(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
        let rows = cost.len();
        if rows == 0 {
            return Vec::new();
        }
        let cols = cost[0].len();
        if cols == 0 {
            return Vec::new();
        }
        let n = rows.max(cols);
        let padded: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i < rows {
                            if j < cols {
                                cost[i][j]
                            } else {
                                DUMMY
                            }
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let row_to_col = hungarian(&padded);
        let mut out = Vec::new();
        for (i, j) in row_to_col.into_iter().enumerate() {
            if i < rows && j < cols && padded[i][j] < DUMMY {
                out.push((i, j));
            }
        }
        out
    }

    // Classic O(n^3) Hungarian algorithm with potentials on a square
    // matrix; returns the assigned column of each row.
    fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
        let n = cost.len();
        let mut u = vec![0.0f64; n + 1];
        let mut v = vec![0.0f64; n + 1];
        let mut p = vec![0usize; n + 1]; // column -> assigned row (1-based)
        let mut way = vec![0usize; n + 1];
        for i in 1..=n {
            p[0] = i;
            let mut j0 = 0usize;
            let mut minv = vec![f64::INFINITY; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let i0 = p[j0];
                let mut delta = f64::INFINITY;
                let mut j1 = 0usize;
                for j in 1..=n {
                    if !used[j] {
                        let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                        if cur < minv[j] {
                            minv[j] = cur;
                            way[j] = j0;
                        }
                        if minv[j] < delta {
                            delta = minv[j];
                            j1 = j;
                        }
                    }
                }
                for j in 0..=n {
                    if used[j] {
                        u[p[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if p[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        let mut row_to_col = vec![0usize; n];
        for j in 1..=n {
            if p[j] > 0 {
                row_to_col[p[j] - 1] = j - 1;
            }
        }
        row_to_col
    }
}

// ---------------------------------------------------------------------------
// KITTI tracking text format
// ---------------------------------------------------------------------------

/// Parses KITTI tracking rows: `frame id type truncated occluded alpha left
/// top right bottom <3D fields> [score]`, whitespace separated. The 2D
/// fields are validated; everything after the box is preserved verbatim.
pub fn parse_kitti_str(text: &str) -> Result<AnnotatedSequence, MetricsError> {
    let mut seq = AnnotatedSequence::default();
    let mut prev_frame: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 10 {
            return Err(MetricsError::MalformedRow {
                line: line_no,
                reason: format!("expected at least 10 fields, found {}", tokens.len()),
            });
        }
        let malformed = |reason: String| MetricsError::MalformedRow { line: line_no, reason };
        let frame: usize = tokens[0]
            .parse()
            .map_err(|_| malformed(format!("bad frame index `{}`", tokens[0])))?;
        if let Some(prev) = prev_frame {
            if frame < prev {
                return Err(MetricsError::NonMonotoneFrames { line: line_no });
            }
        }
        prev_frame = Some(frame);
        let id: i64 =
            tokens[1].parse().map_err(|_| malformed(format!("bad track id `{}`", tokens[1])))?;
        let nums: Vec<f64> = tokens[6..10]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| malformed(format!("bad box field `{t}`"))))
            .collect::<Result<_, _>>()?;
        let (left, top, right, bottom) = (nums[0], nums[1], nums[2], nums[3]);
        if !(right > left && bottom > top) {
            return Err(malformed(format!(
                "degenerate box ({left}, {top}, {right}, {bottom})"
            )));
        }
        let bbox = BBox::new(left, top, right - left, bottom - top)
            .map_err(|e| malformed(format!("{e}")))?;
        seq.push(
            frame,
            GtBox {
                id,
                class: tokens[2].into(),
                bbox,
                meta: RowMeta {
                    truncated: tokens[3].into(),
                    occluded: tokens[4].into(),
                    alpha: tokens[5].into(),
                    extras: tokens[10..].iter().map(|t| t.to_string()).collect(),
                },
            },
        );
    }
    Ok(seq)
}

/// Renders a sequence in the KITTI tracking text format. Floats use Rust's
/// shortest round-trip formatting, so `parse . write` is the identity on the
/// parsed fields.
pub fn write_kitti_string(seq: &AnnotatedSequence) -> String {
    let mut out = String::new();
    for t in 0..seq.n_frames() {
        for b in seq.frame(t) {
            let _ = write!(
                out,
                "{t} {} {} {} {} {} {} {} {} {}",
                b.id,
                b.class,
                b.meta.truncated,
                b.meta.occluded,
                b.meta.alpha,
                b.bbox.x,
                b.bbox.y,
                b.bbox.right(),
                b.bbox.bottom(),
            );
            for extra in &b.meta.extras {
                let _ = write!(out, " {extra}");
            }
            out.push('\n');
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

/// CSV header matching the benchmark table column order.
pub const REPORT_CSV_HEADER: &str = "method,MOTA,MOTP,MT,ML,Rec,Prec,FAR,IDS,FRG";

/// One CSV row; ratio metrics are written as percentages.
pub fn report_csv_row(method: &str, r: &MetricsReport) -> String {
    format!(
        "{method},{},{},{},{},{},{},{},{},{}",
        100.0 * r.mota,
        100.0 * r.motp,
        100.0 * r.mostly_tracked,
        100.0 * r.mostly_lost,
        100.0 * r.recall,
        100.0 * r.precision,
        r.far,
        r.id_switches,
        r.fragmentations,
    )
}

/// Aligned text table over named reports, one row per method.
pub fn report_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# MOTA = 1-(FN+FP+IDS)/GT; MOTP = mean matched IoU; FAR = 100*FP/frames;"
    );
    let _ = writeln!(
        out,
        "# FRG counts interruptions of a trajectory's covering hypothesis (gaps or id changes); MT/ML at 80%/20% coverage."
    );
    let _ = writeln!(
        out,
        "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}",
        "method", "MOTA", "MOTP", "MT", "ML", "Rec", "Prec", "FAR", "IDS", "FRG"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>7.2}% {:>7.2}% {:>7.2}% {:>7.2}% {:>7.2}% {:>7.2}% {:>7.2}% {:>6} {:>6}",
            name,
            100.0 * r.mota,
            100.0 * r.motp,
            100.0 * r.mostly_tracked,
            100.0 * r.mostly_lost,
            100.0 * r.recall,
            100.0 * r.precision,
            r.far,
            r.id_switches,
            r.fragmentations,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn seq(entries: &[(usize, i64, BBox)]) -> AnnotatedSequence {
        let mut s = AnnotatedSequence::default();
        for &(frame, id, bbox) in entries {
            s.push(frame, GtBox::new(id, "Car", bbox));
        }
        s
    }

    #[test]
    fn perfect_tracking_is_perfect_report() {
        let gt = seq(&[
            (0, 1, bx(0.0, 0.0, 10.0, 10.0)),
            (0, 2, bx(50.0, 0.0, 10.0, 10.0)),
            (1, 1, bx(2.0, 0.0, 10.0, 10.0)),
            (1, 2, bx(52.0, 0.0, 10.0, 10.0)),
        ]);
        let r = clear_mot(&gt, &gt, 0.5).unwrap();
        assert_eq!(r.mota, 1.0);
        assert_eq!(r.motp, 1.0);
        assert_eq!(r.id_switches, 0);
        assert_eq!(r.fragmentations, 0);
        assert_eq!(r.mostly_tracked, 1.0);
        assert_eq!(r.mostly_lost, 0.0);
    }

    #[test]
    fn empty_hypotheses_all_misses() {
        let gt = seq(&[(0, 1, bx(0.0, 0.0, 10.0, 10.0)), (1, 1, bx(0.0, 0.0, 10.0, 10.0))]);
        let hyp = AnnotatedSequence::new(2);
        let r = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!(r.mota, 0.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.precision, 0.0);
        assert!(!r.precision_defined);
        assert_eq!(r.far, 0.0);
    }

    #[test]
    fn id_flip_costs_one_switch_and_one_fragmentation() {
        // Two frames, one object, hypothesis id changes; boxes exact.
        let gt = seq(&[(0, 7, bx(0.0, 0.0, 10.0, 10.0)), (1, 7, bx(0.0, 0.0, 10.0, 10.0))]);
        let hyp = seq(&[(0, 1, bx(0.0, 0.0, 10.0, 10.0)), (1, 2, bx(0.0, 0.0, 10.0, 10.0))]);
        let r = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!(r.id_switches, 1);
        assert_eq!(r.fragmentations, 1);
        assert_eq!(r.mota, 0.5);
        assert_eq!(r.motp, 1.0);
    }

    #[test]
    fn coverage_gap_fragmentation_counts_on_resume() {
        // Matched, gap, matched again with the same id: one fragmentation,
        // no identity switch.
        let gt = seq(&[
            (0, 1, bx(0.0, 0.0, 10.0, 10.0)),
            (1, 1, bx(0.0, 0.0, 10.0, 10.0)),
            (2, 1, bx(0.0, 0.0, 10.0, 10.0)),
        ]);
        let hyp = seq(&[(0, 5, bx(0.0, 0.0, 10.0, 10.0)), (2, 5, bx(0.0, 0.0, 10.0, 10.0))]);
        let r = clear_mot(&gt, &hyp, 0.5).unwrap();
        assert_eq!(r.id_switches, 0);
        assert_eq!(r.fragmentations, 1);
        assert_eq!(r.misses, 1);
    }

    #[test]
    fn continuation_preferred_over_greedy_swap() {
        // At frame 1 a new hypothesis overlaps the object slightly better,
        // but the frame-0 match still satisfies the threshold and is kept.
        let gt = seq(&[(0, 1, bx(0.0, 0.0, 10.0, 10.0)), (1, 1, bx(0.0, 0.0, 10.0, 10.0))]);
        let mut hyp = seq(&[(0, 10, bx(1.0, 0.0, 10.0, 10.0))]);
        hyp.push(1, GtBox::new(10, "Car", bx(1.0, 0.0, 10.0, 10.0)));
        hyp.push(1, GtBox::new(11, "Car", bx(0.0, 0.0, 10.0, 10.0)));
        let r = clear_mot(&gt, &hyp, 0.3).unwrap();
        assert_eq!(r.id_switches, 0);
        // The better-overlapping id 11 box becomes a false positive.
        assert_eq!(r.false_positives, 1);
    }

    #[test]
    fn removing_true_positive_never_raises_recall() {
        let gt = seq(&[
            (0, 1, bx(0.0, 0.0, 10.0, 10.0)),
            (0, 2, bx(30.0, 0.0, 10.0, 10.0)),
            (1, 1, bx(0.0, 0.0, 10.0, 10.0)),
        ]);
        let hyp_full = seq(&[
            (0, 1, bx(0.0, 0.0, 10.0, 10.0)),
            (0, 2, bx(30.0, 0.0, 10.0, 10.0)),
            (1, 1, bx(0.0, 0.0, 10.0, 10.0)),
        ]);
        let hyp_less = seq(&[(0, 1, bx(0.0, 0.0, 10.0, 10.0)), (1, 1, bx(0.0, 0.0, 10.0, 10.0))]);
        let full = clear_mot(&gt, &hyp_full, 0.5).unwrap();
        let less = clear_mot(&gt, &hyp_less, 0.5).unwrap();
        assert!(less.recall <= full.recall);
    }

    #[test]
    fn hypothesis_id_relabeling_is_invariant() {
        let gt = seq(&[
            (0, 1, bx(0.0, 0.0, 10.0, 10.0)),
            (1, 1, bx(3.0, 0.0, 10.0, 10.0)),
            (2, 1, bx(6.0, 0.0, 10.0, 10.0)),
        ]);
        let hyp_a = seq(&[
            (0, 42, bx(0.0, 0.0, 10.0, 10.0)),
            (1, 42, bx(3.0, 0.0, 10.0, 10.0)),
            (2, 42, bx(6.0, 0.0, 10.0, 10.0)),
        ]);
        let hyp_b = seq(&[
            (0, 7, bx(0.0, 0.0, 10.0, 10.0)),
            (1, 7, bx(3.0, 0.0, 10.0, 10.0)),
            (2, 7, bx(6.0, 0.0, 10.0, 10.0)),
        ]);
        assert_eq!(clear_mot(&gt, &hyp_a, 0.5).unwrap(), clear_mot(&gt, &hyp_b, 0.5).unwrap());
    }

    #[test]
    fn frame_range_mismatch_is_reported() {
        let gt = AnnotatedSequence::new(3);
        let hyp = AnnotatedSequence::new(2);
        assert!(matches!(
            clear_mot(&gt, &hyp, 0.5),
            Err(MetricsError::FrameRangeMismatch { gt: 3, hyp: 2 })
        ));
    }

    #[test]
    fn kitti_row_parses_box() {
        let text = "0 1 Car 0 0 -10 100 50 180 120 -1 -1 -1 -1000 -1000 -1000 -10\n";
        let seq = parse_kitti_str(text).unwrap();
        assert_eq!(seq.n_frames(), 1);
        let b = &seq.frame(0)[0];
        assert_eq!(b.id, 1);
        assert_eq!(b.class, "Car");
        assert_eq!(b.bbox, bx(100.0, 50.0, 80.0, 70.0));
    }

    #[test]
    fn kitti_rejects_inverted_box() {
        let text = "0 1 Car 0 0 -10 180 50 100 120 -1 -1 -1 -1000 -1000 -1000 -10\n";
        assert!(matches!(parse_kitti_str(text), Err(MetricsError::MalformedRow { line: 1, .. })));
    }

    #[test]
    fn kitti_rejects_decreasing_frames() {
        let text = "1 1 Car 0 0 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10\n\
                    0 1 Car 0 0 -10 0 0 10 10 -1 -1 -1 -1000 -1000 -1000 -10\n";
        assert!(matches!(parse_kitti_str(text), Err(MetricsError::NonMonotoneFrames { line: 2 })));
    }

    #[test]
    fn kitti_round_trip_identity() {
        let mut s = AnnotatedSequence::default();
        s.push(0, GtBox::new(3, "Car", bx(10.25, 20.5, 30.125, 40.0)));
        s.push(0, GtBox::new(4, "Pedestrian", bx(0.1, 0.2, 0.3, 0.4)));
        s.push(2, GtBox::new(3, "Car", bx(11.0, 21.0, 30.0, 40.0)).with_score(0.875));
        let text = write_kitti_string(&s);
        let parsed = parse_kitti_str(&text).unwrap();
        let text2 = write_kitti_string(&parsed);
        assert_eq!(text, text2);
        assert_eq!(parsed.total_boxes(), 3);
        assert_eq!(parsed.frame(2)[0].meta.extras.last().unwrap(), "0.875");
    }

    #[test]
    fn csv_row_has_table_column_order() {
        let gt = seq(&[(0, 1, bx(0.0, 0.0, 10.0, 10.0))]);
        let r = clear_mot(&gt, &gt, 0.5).unwrap();
        let row = report_csv_row("odamot", &r);
        assert!(row.starts_with("odamot,100,100,"));
        assert_eq!(row.split(',').count(), REPORT_CSV_HEADER.split(',').count());
    }

    mod assignment {
        use super::super::assign::{min_cost_matching, FORBIDDEN};
        use crate::rng::{derive_rng, Stream};
        use alloc::vec;
        use alloc::vec::Vec;
        use rand::Rng;

        // Exhaustive minimum over all injective row->col maps, maximizing
        // match count first and minimizing cost second.
        fn brute_force(cost: &[Vec<f64>]) -> (usize, f64) {
            fn recurse(
                cost: &[Vec<f64>],
                row: usize,
                used: &mut Vec<bool>,
                count: usize,
                total: f64,
                best: &mut (usize, f64),
            ) {
                if row == cost.len() {
                    if count > best.0 || (count == best.0 && total < best.1) {
                        *best = (count, total);
                    }
                    return;
                }
                // Leave this row unmatched.
                recurse(cost, row + 1, used, count, total, best);
                for col in 0..cost[row].len() {
                    if !used[col] && cost[row][col] < FORBIDDEN {
                        used[col] = true;
                        recurse(cost, row + 1, used, count + 1, total + cost[row][col], best);
                        used[col] = false;
                    }
                }
            }
            let cols = cost.first().map_or(0, |r| r.len());
            let mut best = (0, f64::INFINITY);
            recurse(cost, 0, &mut vec![false; cols], 0, 0.0, &mut best);
            if best.0 == 0 {
                best.1 = 0.0;
            }
            (best.0, best.1)
        }

        #[test]
        fn matches_brute_force_on_random_matrices() {
            let mut rng = derive_rng(99, Stream::SceneProposals, &[5]);
            for case in 0..300 {
                let rows = rng.gen_range(1..6);
                let cols = rng.gen_range(1..6);
                let cost: Vec<Vec<f64>> = (0..rows)
                    .map(|_| {
                        (0..cols)
                            .map(|_| {
                                if rng.gen_bool(0.3) {
                                    FORBIDDEN
                                } else {
                                    rng.gen_range(0.0..1.0)
                                }
                            })
                            .collect()
                    })
                    .collect();
                let got = min_cost_matching(&cost);
                let got_total: f64 = got.iter().map(|&(i, j)| cost[i][j]).sum();
                let (best_count, best_total) = brute_force(&cost);
                assert_eq!(got.len(), best_count, "case {case}: match count");
                assert!(
                    (got_total - best_total).abs() < 1e-9,
                    "case {case}: total {got_total} vs {best_total}"
                );
            }
        }
    }
}
