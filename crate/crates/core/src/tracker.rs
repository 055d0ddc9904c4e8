//! Frame-by-frame identity management.
//!
//! Each frame, live tracks are predicted with the Kalman filter and matched to
//! detections by a single global assignment on a blended IoU/appearance cost.
//! Matched tracks are corrected; unmatched tracks coast until `max_age` frames
//! pass without a match; unmatched detections open tentative tracks.
//!
//! A track's history keeps every box it was matched to, including the frames
//! before confirmation. When a coasting track is re-acquired, the predicted
//! boxes of the frames it coasted through are written into its history, so
//! trajectories of confirmed tracks have no holes for short dropouts.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::assignment::{solve, CostMatrix};
use crate::geometry::{iou, BBox};
use crate::geometry::Point;
use crate::kalman::{self, KalmanError, KalmanState, NoiseConfig, CHI2_95_4DOF};
use crate::raster::{Image, RasterError};
use crate::stitcher::Trajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrackerError {
    #[error("frame index {got} is not after the previous frame {previous}")]
    NonMonotoneFrame { previous: u32, got: u32 },
    #[error("detection confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("invalid tracker config: {0}")]
    Config(String),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackState {
    Tentative,
    Confirmed,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub n_init: u32,
    pub max_age: u32,
    /// Misses a tentative track survives; unset means `max_age`, 0 deletes it on its first miss.
    pub tentative_max_age: Option<u32>,
    pub iou_gate: f64,
    pub appearance_weight: f64,
    pub descriptor_budget: usize,
    pub gating_threshold: f64,
    /// Write predicted boxes for coasted frames into a track's history when it is re-acquired.
    pub fill_gaps: bool,
    pub kalman: NoiseConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            n_init: 3,
            max_age: 30,
            tentative_max_age: None,
            iou_gate: 0.1,
            appearance_weight: 0.3,
            descriptor_budget: 50,
            gating_threshold: CHI2_95_4DOF,
            fill_gaps: true,
            kalman: NoiseConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let fail = |m: &str| Err(TrackerError::Config(m.to_string()));
        if self.n_init < 1 {
            return fail("n_init must be at least 1");
        }
        if self.max_age < 1 {
            return fail("max_age must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.appearance_weight) {
            return fail("appearance_weight must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.iou_gate) {
            return fail("iou_gate must lie in [0, 1]");
        }
        if self.descriptor_budget == 0 {
            return fail("descriptor_budget must be at least 1");
        }
        if !(self.gating_threshold > 0.0) {
            return fail("gating_threshold must be positive");
        }
        self.kalman.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub descriptor: Option<Vec<f64>>,
}

impl Detection {
    pub fn new(bbox: BBox, confidence: f64) -> Result<Self, TrackerError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(TrackerError::Confidence(confidence));
        }
        Ok(Detection { bbox, confidence, descriptor: None })
    }

    pub fn with_descriptor(mut self, d: Vec<f64>) -> Self {
        self.descriptor = Some(d);
        self
    }
}

/// Appearance embedding of an image patch.
pub trait DescriptorExtractor {
    fn describe(&self, patch: &Image) -> Result<Vec<f64>, RasterError>;
}

/// 8x8x8 RGB histogram, L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct ColorHistogram;

pub const HISTOGRAM_BINS: usize = 512;

impl DescriptorExtractor for ColorHistogram {
    fn describe(&self, patch: &Image) -> Result<Vec<f64>, RasterError> {
        appearance_descriptor(patch)
    }
}

pub fn appearance_descriptor(patch: &Image) -> Result<Vec<f64>, RasterError> {
    if patch.is_empty() {
        return Err(RasterError::EmptyCrop);
    }
    let mut h = vec![0.0f64; HISTOGRAM_BINS];
    for [r, g, b] in patch.pixels() {
        let bin = (r as usize >> 5) * 64 + (g as usize >> 5) * 8 + (b as usize >> 5);
        h[bin] += 1.0;
    }
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.iter_mut().for_each(|v| *v /= norm);
    Ok(h)
}

/// `1 - cos(a, b)`; 1 when either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    pub kalman: KalmanState,
    pub hits: u32,
    pub age: u32,
    pub time_since_update: u32,
    pub descriptor_history: VecDeque<Vec<f64>>,
    pub history: Vec<(u32, BBox)>,
    pending: Vec<(u32, BBox)>,
    ever_confirmed: bool,
}

impl Track {
    pub fn predicted_box(&self) -> BBox {
        // Kalman preserves positive h and aspect for valid measurement streams;
        // a degenerate prediction falls back to the last matched box.
        self.kalman.bbox().unwrap_or_else(|_| self.history[self.history.len() - 1].1)
    }

    /// Running mean of the stored descriptors.
    pub fn mean_descriptor(&self) -> Option<Vec<f64>> {
        let first = self.descriptor_history.front()?;
        let mut m = vec![0.0; first.len()];
        for d in &self.descriptor_history {
            for (acc, v) in m.iter_mut().zip(d) {
                *acc += v;
            }
        }
        let n = self.descriptor_history.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        Some(m)
    }

    pub fn ever_confirmed(&self) -> bool {
        self.ever_confirmed
    }
}

/// One emitted box for a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub track_id: u64,
    pub bbox: BBox,
    pub state: TrackState,
}

/// Association cost of every live track against every detection.
pub fn build_cost(tracks: &[Track], detections: &[Detection], cfg: &TrackerConfig) -> CostMatrix {
    let mut c = CostMatrix::forbidden(tracks.len(), detections.len());
    for (t, track) in tracks.iter().enumerate() {
        let predicted = track.predicted_box();
        let mean_desc = track.mean_descriptor();
        for (d, det) in detections.iter().enumerate() {
            let overlap = iou(&predicted, &det.bbox);
            if overlap < cfg.iou_gate {
                continue;
            }
            match kalman::gating_distance(&track.kalman, &det.bbox.to_measurement(), &cfg.kalman) {
                Ok(g) if g <= cfg.gating_threshold => {}
                _ => continue,
            }
            let cost = match (&mean_desc, &det.descriptor) {
                (Some(a), Some(b)) => {
                    let lambda = cfg.appearance_weight;
                    (1.0 - lambda) * (1.0 - overlap) + lambda * cosine_distance(a, b)
                }
                _ => 1.0 - overlap,
            };
            c.set(t, d, cost);
        }
    }
    c
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    finished: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Tracker { cfg, tracks: Vec::new(), finished: Vec::new(), next_id: 1, last_frame: None })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Live (not deleted) tracks.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Processes one frame and returns the confirmed tracks matched in it.
    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> Result<Vec<TrackOutput>, TrackerError> {
        if let Some(prev) = self.last_frame {
            if frame <= prev {
                return Err(TrackerError::NonMonotoneFrame { previous: prev, got: frame });
            }
        }
        for d in detections {
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(TrackerError::Confidence(d.confidence));
            }
        }
        let skipped = self.last_frame.map_or(0, |p| frame - p - 1);
        self.last_frame = Some(frame);

        let cfg = self.cfg.clone();
        for t in &mut self.tracks {
            // frames with no call at all count as missed frames
            for k in 0..=skipped {
                t.kalman = kalman::predict(&t.kalman, &cfg.kalman);
                t.age += 1;
                if k < skipped {
                    t.time_since_update += 1;
                    let b = t.predicted_box();
                    t.pending.push((frame - skipped + k, b));
                }
            }
        }

        let costs = build_cost(&self.tracks, detections, &cfg);
        let assignment = solve(&costs);

        for &(ti, di) in &assignment.pairs {
            let det = &detections[di];
            let t = &mut self.tracks[ti];
            t.kalman = kalman::update(&t.kalman, &det.bbox.to_measurement(), &cfg.kalman)?;
            t.hits += 1;
            if cfg.fill_gaps {
                t.history.append(&mut t.pending);
            } else {
                t.pending.clear();
            }
            t.history.push((frame, det.bbox));
            t.time_since_update = 0;
            if let Some(desc) = &det.descriptor {
                t.descriptor_history.push_back(desc.clone());
                while t.descriptor_history.len() > cfg.descriptor_budget {
                    t.descriptor_history.pop_front();
                }
            }
            if t.state == TrackState::Tentative && t.hits >= cfg.n_init {
                t.state = TrackState::Confirmed;
                t.ever_confirmed = true;
            }
        }

        for &ti in &assignment.unmatched_rows {
            let t = &mut self.tracks[ti];
            t.time_since_update += 1;
            let b = t.predicted_box();
            t.pending.push((frame, b));
            let limit = if t.state == TrackState::Tentative { cfg.tentative_max_age.unwrap_or(cfg.max_age).min(cfg.max_age) } else { cfg.max_age };
            if t.time_since_update > limit {
                t.state = TrackState::Deleted;
            }
        }

        let mut output: Vec<TrackOutput> = self
            .tracks
            .iter()
            .filter(|t| t.state == TrackState::Confirmed && t.time_since_update == 0)
            .map(|t| TrackOutput { track_id: t.id, bbox: t.history[t.history.len() - 1].1, state: t.state })
            .collect();

        let (dead, live): (Vec<Track>, Vec<Track>) =
            std::mem::take(&mut self.tracks).into_iter().partition(|t| t.state == TrackState::Deleted);
        self.tracks = live;
        self.finished.extend(dead.into_iter().filter(|t| t.ever_confirmed));

        for &di in &assignment.unmatched_cols {
            let det = &detections[di];
            let kalman = kalman::initiate(&det.bbox.to_measurement(), &cfg.kalman)?;
            let confirmed = cfg.n_init <= 1;
            let track = Track {
                id: self.next_id,
                state: if confirmed { TrackState::Confirmed } else { TrackState::Tentative },
                kalman,
                hits: 1,
                age: 1,
                time_since_update: 0,
                descriptor_history: det.descriptor.iter().cloned().collect(),
                history: vec![(frame, det.bbox)],
                pending: Vec::new(),
                ever_confirmed: confirmed,
            };
            if confirmed {
                output.push(TrackOutput { track_id: track.id, bbox: det.bbox, state: track.state });
            }
            self.next_id += 1;
            self.tracks.push(track);
        }
        output.sort_by_key(|o| o.track_id);
        Ok(output)
    }

    /// One trajectory of box centers per track that was ever confirmed, ordered by id.
    pub fn extract_trajectories(&self) -> Vec<Trajectory> {
        let mut all: Vec<&Track> = self.finished.iter().chain(self.tracks.iter()).filter(|t| t.ever_confirmed).collect();
        all.sort_by_key(|t| t.id);
        all.into_iter()
            .map(|t| Trajectory {
                id: t.id as i64,
                samples: t.history.iter().map(|(f, b)| (*f, b.center())).collect::<Vec<(u32, Point)>>(),
                source_ids: vec![t.id as i64],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::FORBIDDEN;

    fn det(x: f64, y: f64) -> Detection {
        Detection::new(BBox::new(x, y, 20.0, 20.0).unwrap(), 0.9).unwrap()
    }

    #[test]
    fn histogram_of_uniform_patch() {
        let p = Image::filled(5, 4, [10, 200, 90]);
        let h = appearance_descriptor(&p).unwrap();
        assert_eq!(h.len(), 512);
        assert_eq!(h.iter().filter(|&&v| v != 0.0).count(), 1);
        assert!((h.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(cosine_distance(&h, &h).abs() < 1e-12);
        // hand-built histogram for a different bin
        let q = appearance_descriptor(&Image::filled(3, 3, [250, 0, 0])).unwrap();
        let mut expected = vec![0.0; 512];
        expected[7 * 64] = 1.0;
        assert_eq!(q, expected);
        assert!((cosine_distance(&h, &q) - 1.0).abs() < 1e-12);
        assert!(appearance_descriptor(&Image::filled(0, 3, [0, 0, 0])).is_err());
        assert_eq!(ColorHistogram.describe(&p).unwrap(), h);
    }

    #[test]
    fn cost_examples() {
        let cfg = TrackerConfig::default();
        let mut tr = Tracker::new(cfg.clone()).unwrap();
        let d = det(10.0, 10.0).with_descriptor(vec![1.0, 0.0]);
        tr.step(1, &[d.clone()]).unwrap();
        // the track's prediction for frame 2 sits where it was
        let mut tracks = tr.tracks.clone();
        for t in &mut tracks {
            t.kalman = kalman::predict(&t.kalman, &cfg.kalman);
        }
        let c = build_cost(&tracks, &[d.clone()], &cfg);
        assert!(c.get(0, 0).abs() < 1e-12);
        let far = det(100.0, 100.0);
        assert_eq!(build_cost(&tracks, &[far], &cfg).get(0, 0), FORBIDDEN);

        // lambda = 0 and IoU 0.5 -> cost 0.5 (gating relaxed for the half-shifted box)
        let loose = TrackerConfig { appearance_weight: 0.0, gating_threshold: 1e9, ..cfg };
        let half = Detection::new(BBox::new(10.0 + 20.0 / 3.0, 10.0, 20.0, 20.0).unwrap(), 0.9).unwrap();
        let cost = build_cost(&tracks, &[half], &loose).get(0, 0);
        assert!((cost - 0.5).abs() < 1e-9, "{cost}");
    }

    #[test]
    fn empty_frames_emit_nothing() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        assert!(tr.step(1, &[]).unwrap().is_empty());
        assert!(tr.extract_trajectories().is_empty());
    }

    #[test]
    fn confirmation_after_n_init_hits() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        assert!(tr.step(1, &[det(5.0, 5.0)]).unwrap().is_empty());
        assert!(tr.step(2, &[det(5.0, 5.0)]).unwrap().is_empty());
        let out = tr.step(3, &[det(5.0, 5.0)]).unwrap();
        assert_eq!(out.len(), 1);
        let id = out[0].track_id;
        for f in 4..10 {
            let out = tr.step(f, &[det(5.0, 5.0)]).unwrap();
            assert_eq!(out[0].track_id, id);
        }
        let trajs = tr.extract_trajectories();
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].samples.len(), 9);
        assert!(trajs[0].samples.iter().all(|s| s.1 == Point::new(15.0, 15.0)));
    }

    #[test]
    fn rejects_non_monotone_frames() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        tr.step(4, &[]).unwrap();
        assert!(matches!(tr.step(4, &[]), Err(TrackerError::NonMonotoneFrame { previous: 4, got: 4 })));
        assert!(tr.step(3, &[]).is_err());
    }

    #[test]
    fn tentative_miss_deletes_and_redetection_gets_new_id() {
        let cfg = TrackerConfig { max_age: 2, ..TrackerConfig::default() };
        let mut tr = Tracker::new(cfg).unwrap();
        for f in 1..=3 {
            tr.step(f, &[det(5.0, 5.0)]).unwrap();
        }
        for f in 4..=7 {
            assert!(tr.step(f, &[]).unwrap().is_empty());
        }
        assert!(tr.tracks().is_empty());
        tr.step(8, &[det(5.0, 5.0)]).unwrap();
        assert_eq!(tr.tracks()[0].id, 2);
    }

    #[test]
    fn coasted_frames_are_filled_on_reacquisition() {
        let mut tr = Tracker::new(TrackerConfig::default()).unwrap();
        for f in 1..=5 {
            tr.step(f, &[det(2.0 * f as f64, 5.0)]).unwrap();
        }
        tr.step(6, &[]).unwrap();
        tr.step(7, &[det(14.0, 5.0)]).unwrap();
        let t = &tr.extract_trajectories()[0];
        let frames: Vec<u32> = t.samples.iter().map(|s| s.0).collect();
        assert_eq!(frames, (1..=7).collect::<Vec<_>>());
        assert!((t.samples[5].1.cx - 22.0).abs() < 2.0);
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            TrackerConfig { n_init: 0, ..Default::default() },
            TrackerConfig { max_age: 0, ..Default::default() },
            TrackerConfig { appearance_weight: 1.5, ..Default::default() },
        ] {
            assert!(matches!(Tracker::new(cfg), Err(TrackerError::Config(_))));
        }
        assert!(Detection::new(BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 1.2).is_err());
    }
}
