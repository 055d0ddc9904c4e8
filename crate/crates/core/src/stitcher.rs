//! Heuristic gluing of trajectory fragments.
//!
//! A fragment `A` may be continued by a later fragment `B` when `B` starts
//! within `max_gap` frames after `A` ends and close to where `A`'s recent
//! constant velocity would have carried it. All candidate links are resolved
//! jointly with the assignment solver; linked fragments are concatenated.
//! Linking repeats until no candidate remains, so the output is a fixed point.
//!
//! This is one reasonable instantiation of fragment gluing, not a global
//! optimum over the whole video.

use serde::{Deserialize, Serialize};

use crate::assignment::{solve, CostMatrix, FORBIDDEN};
use crate::geometry::Point;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("trajectory {id} has no samples")]
    Empty { id: i64 },
    #[error("trajectory {id} frame indices not strictly increasing at frame {frame}")]
    NotIncreasing { id: i64, frame: u32 },
}

/// Identity-bearing sequence of centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: i64,
    pub samples: Vec<(u32, Point)>,
    /// Original track ids merged into this trajectory, in temporal order.
    pub source_ids: Vec<i64>,
}

impl Trajectory {
    pub fn new(id: i64, samples: Vec<(u32, Point)>) -> Result<Self, TrajectoryError> {
        let t = Trajectory { id, samples, source_ids: vec![id] };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.samples.is_empty() {
            return Err(TrajectoryError::Empty { id: self.id });
        }
        for w in self.samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(TrajectoryError::NotIncreasing { id: self.id, frame: w[1].0 });
            }
        }
        Ok(())
    }

    pub fn first_frame(&self) -> u32 {
        self.samples[0].0
    }

    pub fn last_frame(&self) -> u32 {
        self.samples[self.samples.len() - 1].0
    }

    /// Velocity (pixels/frame) over the last `window` samples; zero for a single sample.
    fn end_velocity(&self, window: usize) -> (f64, f64) {
        let n = self.samples.len();
        let k = window.max(2).min(n);
        if k < 2 {
            return (0.0, 0.0);
        }
        let (f0, p0) = self.samples[n - k];
        let (f1, p1) = self.samples[n - 1];
        let dt = (f1 - f0) as f64;
        ((p1.cx - p0.cx) / dt, (p1.cy - p0.cy) / dt)
    }

    fn extrapolate(&self, frames: u32, window: usize) -> Point {
        let (vx, vy) = self.end_velocity(window);
        let last = self.samples[self.samples.len() - 1].1;
        Point::new(last.cx + vx * frames as f64, last.cy + vy * frames as f64)
    }
}

/// Stitching parameters. `max_link_dist = None` means "three times the
/// median per-frame displacement", resolved by [`StitchConfig::resolve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StitchConfig {
    pub max_gap: u32,
    pub max_link_dist: Option<f64>,
    pub velocity_window: usize,
}

impl Default for StitchConfig {
    fn default() -> Self {
        StitchConfig { max_gap: 10, max_link_dist: None, velocity_window: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedStitchConfig {
    pub max_gap: u32,
    pub max_link_dist: f64,
    pub velocity_window: usize,
}

impl StitchConfig {
    pub fn validate(&self) -> Result<(), String> {
        if let Some(d) = self.max_link_dist {
            if !(d.is_finite() && d > 0.0) {
                return Err(format!("stitch.max_link_dist must be positive, got {d}"));
            }
        }
        if self.velocity_window == 0 {
            return Err("stitch.velocity_window must be at least 1".into());
        }
        Ok(())
    }

    /// Fills in `max_link_dist` from the segments' median per-frame displacement.
    /// Falls back to 1 pixel when no displacement can be measured.
    pub fn resolve(&self, segments: &[Trajectory]) -> ResolvedStitchConfig {
        let max_link_dist = self.max_link_dist.unwrap_or_else(|| {
            let mut steps: Vec<f64> = segments
                .iter()
                .flat_map(|t| t.samples.windows(2))
                .map(|w| w[1].1.distance(&w[0].1) / (w[1].0 - w[0].0) as f64)
                .collect();
            let med = median(&mut steps);
            if med > 0.0 { 3.0 * med } else { 1.0 }
        });
        ResolvedStitchConfig { max_gap: self.max_gap, max_link_dist, velocity_window: self.velocity_window }
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Extrapolation error of linking `a -> b`, or `None` when the link is not a candidate.
fn link_cost(a: &Trajectory, b: &Trajectory, cfg: &ResolvedStitchConfig) -> Option<f64> {
    let (end, start) = (a.last_frame(), b.first_frame());
    if start <= end {
        return None;
    }
    let gap = start - end;
    if gap > cfg.max_gap {
        return None;
    }
    let err = a.extrapolate(gap, cfg.velocity_window).distance(&b.samples[0].1);
    (err <= cfg.max_link_dist).then_some(err)
}

fn merge_pass(segments: Vec<Trajectory>, cfg: &ResolvedStitchConfig) -> (Vec<Trajectory>, bool) {
    let n = segments.len();
    let costs = CostMatrix::from_fn(n, n, |i, j| {
        if i == j { FORBIDDEN } else { link_cost(&segments[i], &segments[j], cfg).unwrap_or(FORBIDDEN) }
    })
    .expect("link costs are finite or forbidden");
    let links = solve(&costs);
    if links.pairs.is_empty() {
        return (segments, false);
    }
    let mut next: Vec<Option<usize>> = vec![None; n];
    let mut has_prev = vec![false; n];
    for &(a, b) in &links.pairs {
        next[a] = Some(b);
        has_prev[b] = true;
    }
    let mut slots: Vec<Option<Trajectory>> = segments.into_iter().map(Some).collect();
    let mut out = Vec::new();
    for head in 0..n {
        if has_prev[head] {
            continue;
        }
        let mut merged = slots[head].take().expect("each fragment heads at most one chain");
        let mut cur = head;
        while let Some(nb) = next[cur] {
            let seg = slots[nb].take().expect("links form disjoint chains");
            merged.samples.extend(seg.samples);
            merged.source_ids.extend(seg.source_ids);
            cur = nb;
        }
        out.push(merged);
    }
    debug_assert!(slots.iter().all(Option::is_none));
    (out, true)
}

/// Glues fragments. Output order follows `(first frame, id)`.
pub fn stitch(segments: &[Trajectory], cfg: &ResolvedStitchConfig) -> Vec<Trajectory> {
    let mut cur: Vec<Trajectory> = segments.to_vec();
    loop {
        cur.sort_by(|a, b| a.first_frame().cmp(&b.first_frame()).then(a.id.cmp(&b.id)));
        let (next, changed) = merge_pass(cur, cfg);
        cur = next;
        if !changed {
            break;
        }
    }
    cur.sort_by(|a, b| a.first_frame().cmp(&b.first_frame()).then(a.id.cmp(&b.id)));
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: i64, frames: std::ops::RangeInclusive<u32>, x0: f64, vx: f64, y: f64) -> Trajectory {
        Trajectory::new(id, frames.map(|f| (f, Point::new(x0 + vx * f as f64, y))).collect()).unwrap()
    }

    fn cfg(d: f64) -> ResolvedStitchConfig {
        ResolvedStitchConfig { max_gap: 10, max_link_dist: d, velocity_window: 5 }
    }

    #[test]
    fn rejects_invalid_trajectories() {
        assert!(matches!(Trajectory::new(1, vec![]), Err(TrajectoryError::Empty { .. })));
        let p = Point::new(0.0, 0.0);
        assert!(matches!(Trajectory::new(1, vec![(2, p), (2, p)]), Err(TrajectoryError::NotIncreasing { .. })));
    }

    #[test]
    fn non_linkable_input_unchanged() {
        let a = line(1, 1..=10, 0.0, 2.0, 10.0);
        let b = line(2, 1..=10, 0.0, 2.0, 90.0);
        let out = stitch(&[a.clone(), b.clone()], &cfg(5.0));
        assert_eq!(out, vec![a, b]);
    }

    #[test]
    fn split_line_with_gap_is_rejoined() {
        let a = line(1, 1..=10, 0.0, 2.0, 10.0);
        let b = line(7, 14..=20, 0.0, 2.0, 10.0);
        let out = stitch(&[b, a], &cfg(5.0));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source_ids, vec![1, 7]);
        assert_eq!(out[0].id, 1);
        assert_eq!(out[0].samples.len(), 17);
        out[0].validate().unwrap();
    }

    #[test]
    fn parallel_droplets_do_not_cross_merge() {
        let a1 = line(1, 1..=10, 0.0, 3.0, 20.0);
        let a2 = line(2, 13..=25, 0.0, 3.0, 20.0);
        let b1 = line(3, 1..=11, 0.0, 3.0, 32.0);
        let b2 = line(4, 14..=25, 0.0, 3.0, 32.0);
        let out = stitch(&[a1, a2, b1, b2], &cfg(20.0));
        assert_eq!(out.len(), 2);
        let mut ids: Vec<Vec<i64>> = out.iter().map(|t| t.source_ids.clone()).collect();
        ids.sort();
        assert_eq!(ids, vec![vec![1, 2], vec![3, 4]]);
    }

    #[test]
    fn overlapping_segments_never_merge() {
        let a = line(1, 1..=10, 0.0, 2.0, 10.0);
        let b = line(2, 10..=20, 0.0, 2.0, 10.0);
        assert_eq!(stitch(&[a, b], &cfg(50.0)).len(), 2);
    }

    #[test]
    fn gap_limit_respected() {
        let a = line(1, 1..=10, 0.0, 2.0, 10.0);
        let b = line(2, 21..=30, 0.0, 2.0, 10.0);
        assert_eq!(stitch(&[a.clone(), b.clone()], &cfg(50.0)).len(), 2);
        let loose = ResolvedStitchConfig { max_gap: 11, ..cfg(50.0) };
        assert_eq!(stitch(&[a, b], &loose).len(), 1);
    }

    #[test]
    fn resolve_uses_median_displacement() {
        let a = line(1, 1..=10, 0.0, 2.0, 10.0);
        let r = StitchConfig::default().resolve(&[a]);
        assert!((r.max_link_dist - 6.0).abs() < 1e-12);
        let explicit = StitchConfig { max_link_dist: Some(4.0), ..Default::default() }.resolve(&[]);
        assert_eq!(explicit.max_link_dist, 4.0);
        assert_eq!(StitchConfig::default().resolve(&[]).max_link_dist, 1.0);
    }

    #[test]
    fn chains_of_three() {
        let a = line(1, 1..=5, 0.0, 2.0, 10.0);
        let b = line(2, 7..=12, 0.0, 2.0, 10.0);
        let c = line(3, 15..=20, 0.0, 2.0, 10.0);
        let out = stitch(&[c, a, b], &cfg(3.0));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source_ids, vec![1, 2, 3]);
    }
}
