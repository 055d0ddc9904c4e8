//! Scoring: per-frame counting error, detection average precision, identity
//! switches and full-trajectory accounting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::assignment::{solve, CostMatrix, FORBIDDEN};
use crate::geometry::{iou, BBox, Point};
use crate::stitcher::Trajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("count series lengths differ: manual has {manual} frames, predicted has {predicted}")]
    LengthMismatch { manual: usize, predicted: usize },
    #[error("count series must cover at least one frame")]
    EmptySeries,
}

/// Per-frame object counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSeries(Vec<u32>);

impl CountSeries {
    pub fn new(counts: Vec<u32>) -> Result<Self, MetricsError> {
        if counts.is_empty() {
            return Err(MetricsError::EmptySeries);
        }
        Ok(CountSeries(counts))
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Counting error `(1/F) * sum_i sqrt((M_i - P_i)^2)`.
///
/// Called MSE in the droplet-counting literature this toolkit follows; since
/// `sqrt(x^2) = |x|` it is numerically the mean absolute count error.
pub fn counting_error(manual: &CountSeries, predicted: &CountSeries) -> Result<f64, MetricsError> {
    if manual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { manual: manual.len(), predicted: predicted.len() });
    }
    let sum: f64 = manual
        .0
        .iter()
        .zip(&predicted.0)
        .map(|(&m, &p)| {
            let d = m as f64 - p as f64;
            (d * d).sqrt()
        })
        .sum();
    Ok(sum / manual.len() as f64)
}

/// Greedy matching of detections against ground truth in descending
/// confidence order. Returns the true-positive flags in that order together
/// with the confidences.
pub fn match_detections(dets: &[(BBox, f64)], gt: &[BBox], iou_thr: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // stable sort keeps input order among equal confidences
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1));
    let mut taken = vec![false; gt.len()];
    order
        .into_iter()
        .map(|d| {
            let (bbox, conf) = dets[d];
            let best = gt
                .iter()
                .enumerate()
                .filter(|(g, _)| !taken[*g])
                .map(|(g, b)| (g, iou(&bbox, b)))
                .fold(None::<(usize, f64)>, |acc, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            match best {
                Some((g, o)) if o >= iou_thr => {
                    taken[g] = true;
                    (conf, true)
                }
                _ => (conf, false),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub confidence: f64,
}

/// Precision/recall after each detection, in descending-confidence order.
pub fn pr_curve(flags: &[(f64, bool)], n_gt: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    flags
        .iter()
        .enumerate()
        .map(|(k, &(confidence, hit))| {
            tp += usize::from(hit);
            PrPoint {
                recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
                precision: tp as f64 / (k + 1) as f64,
                confidence,
            }
        })
        .collect()
}

/// All-point interpolated average precision for flags sorted by descending confidence.
///
/// With no ground truth, AP is 1 for an empty detection list and 0 otherwise.
pub fn average_precision(flags: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if flags.is_empty() { 1.0 } else { 0.0 };
    }
    let curve = pr_curve(flags, n_gt);
    // precision envelope, right to left
    let mut env: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, e) in curve.iter().zip(&env) {
        ap += (p.recall - prev_recall) * e;
        prev_recall = p.recall;
    }
    ap
}

/// Scored detections and ground-truth boxes of one frame.
pub type FrameBoxes = (Vec<(BBox, f64)>, Vec<BBox>);

/// Pools per-frame detections and ground truth into one single-class AP.
pub fn average_precision_frames(frames: &[FrameBoxes], iou_thr: f64) -> f64 {
    let mut flags = Vec::new();
    let mut n_gt = 0;
    for (dets, gt) in frames {
        flags.extend(match_detections(dets, gt, iou_thr));
        n_gt += gt.len();
    }
    flags.sort_by(|a, b| b.0.total_cmp(&a.0));
    average_precision(&flags, n_gt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackingScore {
    pub id_switches: usize,
    pub full_trajectories: usize,
    pub gt_total: usize,
    pub fragments: usize,
}

/// Half the mean ground-truth box size, the default center-distance gate.
pub fn default_dist_threshold(gt_boxes: impl IntoIterator<Item = BBox>) -> f64 {
    let (sum, n) = gt_boxes.into_iter().fold((0.0, 0usize), |(s, n), b| (s + 0.5 * (b.w() + b.h()), n + 1));
    if n == 0 { 1.0 } else { 0.5 * sum / n as f64 }
}

fn by_frame(trajs: &[Trajectory]) -> BTreeMap<u32, Vec<(i64, Point)>> {
    let mut m: BTreeMap<u32, Vec<(i64, Point)>> = BTreeMap::new();
    for t in trajs {
        for &(f, p) in &t.samples {
            m.entry(f).or_default().push((t.id, p));
        }
    }
    // order by position so the per-frame matching does not depend on id labels
    for v in m.values_mut() {
        v.sort_by(|a, b| a.1.cx.total_cmp(&b.1.cx).then(a.1.cy.total_cmp(&b.1.cy)).then(a.0.cmp(&b.0)));
    }
    m
}

/// Identity accounting of predicted trajectories against ground truth.
///
/// Per frame, predicted and true centers are matched optimally on Euclidean
/// distance, pairs farther apart than `dist_thr` being disallowed. An id
/// switch is a change of the predicted id matched to a true id between two of
/// its matched frames; a fragment is a maximal run of frames in which a true
/// id stays matched to one predicted id. A true trajectory is full when every
/// one of its samples is matched to the same predicted id.
pub fn tracking_score(pred: &[Trajectory], gt: &[Trajectory], dist_thr: f64) -> TrackingScore {
    let pred_frames = by_frame(pred);
    let gt_frames = by_frame(gt);
    // per gt id: matched predicted id per gt sample (None when unmatched)
    let mut cover: BTreeMap<i64, Vec<Option<i64>>> = BTreeMap::new();
    let empty = Vec::new();
    for (f, gts) in &gt_frames {
        let preds = pred_frames.get(f).unwrap_or(&empty);
        let costs = CostMatrix::from_fn(gts.len(), preds.len(), |g, p| {
            let d = gts[g].1.distance(&preds[p].1);
            if d <= dist_thr { d } else { FORBIDDEN }
        })
        .expect("distances are finite");
        let a = solve(&costs);
        let mut matched = vec![None; gts.len()];
        for (g, p) in a.pairs {
            matched[g] = Some(preds[p].0);
        }
        for (g, m) in gts.iter().zip(matched) {
            cover.entry(g.0).or_default().push(m);
        }
    }
    let mut score = TrackingScore { id_switches: 0, full_trajectories: 0, gt_total: cover.len(), fragments: 0 };
    for seq in cover.values() {
        let mut last: Option<i64> = None;
        let mut run_open = false;
        for m in seq {
            match m {
                Some(id) => {
                    if let Some(prev) = last {
                        if prev != *id {
                            score.id_switches += 1;
                        }
                    }
                    if !run_open || last != Some(*id) {
                        score.fragments += 1;
                    }
                    run_open = true;
                    last = Some(*id);
                }
                None => run_open = false,
            }
        }
        let ids: BTreeSet<_> = seq.iter().collect();
        if ids.len() == 1 && seq[0].is_some() {
            score.full_trajectories += 1;
        }
    }
    score
}

/// Score report with the keys the CLI emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mse: f64,
    pub ap: f64,
    pub id_switches: usize,
    pub full_trajectories: usize,
    pub gt_total: usize,
    pub fragments: usize,
}

impl ScoreReport {
    pub fn new(mse: f64, ap: f64, t: TrackingScore) -> Self {
        ScoreReport {
            mse,
            ap,
            id_switches: t.id_switches,
            full_trajectories: t.full_trajectories,
            gt_total: t.gt_total,
            fragments: t.fragments,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let rows = [
            ("mse", format!("{:.6}", self.mse)),
            ("ap", format!("{:.6}", self.ap)),
            ("id_switches", self.id_switches.to_string()),
            ("full_trajectories", self.full_trajectories.to_string()),
            ("gt_total", self.gt_total.to_string()),
            ("fragments", self.fragments.to_string()),
        ];
        let kw = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("metric".len());
        let vw = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max("value".len());
        let mut out = format!("{:<kw$}  {:>vw$}\n{}  {}\n", "metric", "value", "-".repeat(kw), "-".repeat(vw));
        for (k, v) in rows {
            out.push_str(&format!("{k:<kw$}  {v:>vw$}\n"));
        }
        out
    }
}
