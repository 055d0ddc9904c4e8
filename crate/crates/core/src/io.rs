//! Text formats. All numbers are written with six decimals and a `.` separator.
//!
//! * detections: MOT `det.txt` rows `frame,id,x,y,w,h,conf[,...]`, id fixed at -1
//! * ground truth: `frame,id,x,y,w,h` with header
//! * trajectories: `track_id,frame,cx,cy` with header, sorted by `(track_id, frame)`
//! * counts: `frame,count` with header

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::geometry::{BBox, Point};
use crate::simulator::{DetectionFrame, GroundTruthFrame};
use crate::stitcher::Trajectory;
use crate::tracker::Detection;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

fn line_err(line: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Line { line, msg: msg.into() }
}

fn field<T: std::str::FromStr>(fields: &[&str], i: usize, name: &str, line: usize) -> Result<T, ParseError> {
    let raw = fields.get(i).ok_or_else(|| line_err(line, format!("missing field {name}")))?;
    raw.trim().parse().map_err(|_| line_err(line, format!("invalid {name} {raw:?}")))
}

fn is_blank_or_comment(l: &str) -> bool {
    let t = l.trim();
    t.is_empty() || t.starts_with('#')
}

/// Parses a MOT detection file. Rows of the same frame are grouped in file
/// order; frames must be non-decreasing. Only frames that occur are returned.
pub fn read_detections(text: &str) -> Result<Vec<DetectionFrame>, ParseError> {
    let mut out: Vec<DetectionFrame> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if is_blank_or_comment(raw) {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() < 7 {
            return Err(line_err(line, format!("expected at least 7 fields, got {}", fields.len())));
        }
        let frame: u32 = field(&fields, 0, "frame", line)?;
        if frame == 0 {
            return Err(line_err(line, "frame numbers are 1-based"));
        }
        let _id: f64 = field(&fields, 1, "id", line)?;
        let x: f64 = field(&fields, 2, "x", line)?;
        let y: f64 = field(&fields, 3, "y", line)?;
        let w: f64 = field(&fields, 4, "w", line)?;
        let h: f64 = field(&fields, 5, "h", line)?;
        let conf: f64 = field(&fields, 6, "confidence", line)?;
        let bbox = BBox::new(x, y, w, h).map_err(|e| line_err(line, e.to_string()))?;
        let det = Detection::new(bbox, conf).map_err(|e| line_err(line, e.to_string()))?;
        match out.last_mut() {
            Some(last) if last.frame == frame => last.detections.push(det),
            Some(last) if last.frame > frame => {
                return Err(line_err(line, format!("frame {frame} after frame {}", last.frame)));
            }
            _ => out.push(DetectionFrame { frame, detections: vec![det] }),
        }
    }
    Ok(out)
}

pub fn write_detections(frames: &[DetectionFrame]) -> String {
    let mut s = String::new();
    for f in frames {
        for d in &f.detections {
            let b = &d.bbox;
            writeln!(s, "{},-1,{:.6},{:.6},{:.6},{:.6},{:.6}", f.frame, b.x(), b.y(), b.w(), b.h(), d.confidence).unwrap();
        }
    }
    s
}

pub const GROUND_TRUTH_HEADER: &str = "frame,id,x,y,w,h";

pub fn write_ground_truth(frames: &[GroundTruthFrame]) -> String {
    let mut s = format!("{GROUND_TRUTH_HEADER}\n");
    for f in frames {
        for d in &f.droplets {
            let b = &d.bbox;
            writeln!(s, "{},{},{:.6},{:.6},{:.6},{:.6}", f.frame_index, d.true_id, b.x(), b.y(), b.w(), b.h()).unwrap();
        }
    }
    s
}

/// One ground-truth row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthRow {
    pub frame: u32,
    pub id: i64,
    pub bbox: BBox,
}

pub fn read_ground_truth(text: &str) -> Result<Vec<GroundTruthRow>, ParseError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if is_blank_or_comment(raw) || (line == 1 && raw.trim() == GROUND_TRUTH_HEADER) {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 6 {
            return Err(line_err(line, format!("expected 6 fields, got {}", fields.len())));
        }
        let frame: u32 = field(&fields, 0, "frame", line)?;
        let id: i64 = field(&fields, 1, "id", line)?;
        let vals: Vec<f64> = (2..6).map(|k| field(&fields, k, ["x", "y", "w", "h"][k - 2], line)).collect::<Result<_, _>>()?;
        let bbox = BBox::new(vals[0], vals[1], vals[2], vals[3]).map_err(|e| line_err(line, e.to_string()))?;
        rows.push(GroundTruthRow { frame, id, bbox });
    }
    Ok(rows)
}

/// Groups ground-truth rows into center trajectories keyed by id.
pub fn ground_truth_trajectories(rows: &[GroundTruthRow]) -> Vec<Trajectory> {
    let mut by_id: BTreeMap<i64, Vec<(u32, Point)>> = BTreeMap::new();
    for r in rows {
        by_id.entry(r.id).or_default().push((r.frame, r.bbox.center()));
    }
    by_id
        .into_iter()
        .map(|(id, mut samples)| {
            samples.sort_by_key(|s| s.0);
            samples.dedup_by_key(|s| s.0);
            Trajectory { id, samples, source_ids: vec![id] }
        })
        .collect()
}

pub const TRAJECTORY_HEADER: &str = "track_id,frame,cx,cy";

pub fn write_trajectories(trajs: &[Trajectory]) -> String {
    let mut rows: Vec<(i64, u32, Point)> =
        trajs.iter().flat_map(|t| t.samples.iter().map(move |(f, p)| (t.id, *f, *p))).collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut s = format!("{TRAJECTORY_HEADER}\n");
    for (id, f, p) in rows {
        writeln!(s, "{id},{f},{:.6},{:.6}", p.cx, p.cy).unwrap();
    }
    s
}

pub fn read_trajectories(text: &str) -> Result<Vec<Trajectory>, ParseError> {
    let mut by_id: BTreeMap<i64, Vec<(u32, Point)>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if is_blank_or_comment(raw) || (line == 1 && raw.trim() == TRAJECTORY_HEADER) {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 4 {
            return Err(line_err(line, format!("expected 4 fields, got {}", fields.len())));
        }
        let id: i64 = field(&fields, 0, "track_id", line)?;
        let frame: u32 = field(&fields, 1, "frame", line)?;
        let cx: f64 = field(&fields, 2, "cx", line)?;
        let cy: f64 = field(&fields, 3, "cy", line)?;
        let samples = by_id.entry(id).or_default();
        if samples.last().is_some_and(|s| s.0 >= frame) {
            return Err(line_err(line, format!("track {id}: frame {frame} out of order")));
        }
        samples.push((frame, Point::new(cx, cy)));
    }
    Ok(by_id.into_iter().map(|(id, samples)| Trajectory { id, samples, source_ids: vec![id] }).collect())
}

pub const COUNTS_HEADER: &str = "frame,count";

/// `counts[i]` is written as frame `i + 1`.
pub fn write_counts(counts: &[u32]) -> String {
    let mut s = format!("{COUNTS_HEADER}\n");
    for (i, c) in counts.iter().enumerate() {
        writeln!(s, "{},{c}", i + 1).unwrap();
    }
    s
}

/// Reads a count series; frames must run 1, 2, 3, ... without holes.
pub fn read_counts(text: &str) -> Result<Vec<u32>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if is_blank_or_comment(raw) || (line == 1 && raw.trim() == COUNTS_HEADER) {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 2 {
            return Err(line_err(line, format!("expected 2 fields, got {}", fields.len())));
        }
        let frame: usize = field(&fields, 0, "frame", line)?;
        if frame != out.len() + 1 {
            return Err(line_err(line, format!("expected frame {}, got {frame}", out.len() + 1)));
        }
        out.push(field(&fields, 1, "count", line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use rand::Rng;

    #[test]
    fn single_row_and_blank() {
        let f = read_detections("1,-1,10,10,5,5,0.9").unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].frame, 1);
        assert_eq!(f[0].detections[0].bbox, BBox::new(10.0, 10.0, 5.0, 5.0).unwrap());
        assert!(read_detections("").unwrap().is_empty());
        assert!(read_detections("\n\n").unwrap().is_empty());
    }

    #[test]
    fn trailing_fields_ignored_and_order_kept() {
        let text = "2,-1,1,1,2,2,0.5,-1,-1,-1\n2,-1,5,5,2,2,0.7,-1,-1,-1\n4,-1,0,0,1,1,1.0\n";
        let f = read_detections(text).unwrap();
        assert_eq!(f.iter().map(|f| f.frame).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(f[0].detections[1].confidence, 0.7);
    }

    #[test]
    fn malformed_rows_report_line() {
        for (text, line) in [
            ("1,-1,10,10,5,5,0.9\n1,-1,abc,10,5,5,0.9", 2),
            ("1,-1,10,10,5,5", 1),
            ("1,-1,10,10,0,5,0.9", 1),
            ("1,-1,10,10,5,5,1.5", 1),
            ("3,-1,10,10,5,5,0.9\n2,-1,10,10,5,5,0.9", 2),
            ("0,-1,10,10,5,5,0.9", 1),
        ] {
            match read_detections(text) {
                Err(ParseError::Line { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn detections_round_trip() {
        let mut rng = StreamRng::new(1, "io");
        let frames: Vec<DetectionFrame> = (1..=20)
            .map(|f| DetectionFrame {
                frame: f,
                detections: (0..rng.random_range(1..5))
                    .map(|_| {
                        let b = BBox::new(rng.random_range(-5.0..600.0), rng.random_range(0.0..150.0), rng.random_range(1.0..40.0), rng.random_range(1.0..40.0)).unwrap();
                        Detection::new(b, rng.random()).unwrap()
                    })
                    .collect(),
            })
            .collect();
        let text = write_detections(&frames);
        let back = read_detections(&text).unwrap();
        assert_eq!(back.len(), frames.len());
        for (a, b) in frames.iter().zip(&back) {
            for (da, db) in a.detections.iter().zip(&b.detections) {
                assert!((da.bbox.x() - db.bbox.x()).abs() <= 5e-7);
                assert!((da.bbox.h() - db.bbox.h()).abs() <= 5e-7);
                assert!((da.confidence - db.confidence).abs() <= 5e-7);
            }
        }
        assert_eq!(write_detections(&back), text);
    }

    #[test]
    fn trajectory_file_shape() {
        assert_eq!(write_trajectories(&[]), "track_id,frame,cx,cy\n");
        let t = Trajectory::new(3, vec![(1, Point::new(1.0, 2.0)), (2, Point::new(1.5, 2.25))]).unwrap();
        let text = write_trajectories(std::slice::from_ref(&t));
        assert_eq!(text, "track_id,frame,cx,cy\n3,1,1.000000,2.000000\n3,2,1.500000,2.250000\n");
        assert_eq!(read_trajectories(&text).unwrap(), vec![t]);
    }

    #[test]
    fn trajectories_sorted_by_id_then_frame() {
        let a = Trajectory::new(9, vec![(5, Point::new(0.0, 0.0))]).unwrap();
        let b = Trajectory::new(2, vec![(7, Point::new(1.0, 1.0)), (8, Point::new(2.0, 2.0))]).unwrap();
        let text = write_trajectories(&[a, b]);
        let ids: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(ids, vec!["2", "2", "9"]);
    }

    #[test]
    fn trajectories_round_trip_within_precision() {
        let mut rng = StreamRng::new(2, "traj");
        let trajs: Vec<Trajectory> = (1..=5)
            .map(|id| {
                let samples = (1..=30).map(|f| (f, Point::new(rng.random_range(0.0..640.0), rng.random_range(0.0..160.0)))).collect();
                Trajectory::new(id, samples).unwrap()
            })
            .collect();
        let back = read_trajectories(&write_trajectories(&trajs)).unwrap();
        for (a, b) in trajs.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            for (sa, sb) in a.samples.iter().zip(&b.samples) {
                assert_eq!(sa.0, sb.0);
                assert!((sa.1.cx - sb.1.cx).abs() <= 1e-6 && (sa.1.cy - sb.1.cy).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn counts_round_trip_and_gaps_rejected() {
        let c = vec![3, 0, 5];
        assert_eq!(read_counts(&write_counts(&c)).unwrap(), c);
        assert!(read_counts("frame,count\n1,2\n3,4\n").is_err());
    }

    #[test]
    fn ground_truth_parse() {
        let text = "frame,id,x,y,w,h\n1,4,0.000000,0.000000,2.000000,2.000000\n2,4,1.000000,0.000000,2.000000,2.000000\n";
        let rows = read_ground_truth(text).unwrap();
        assert_eq!(rows.len(), 2);
        let t = ground_truth_trajectories(&rows);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].samples[1], (2, Point::new(2.0, 1.0)));
        assert!(read_ground_truth("frame,id,x,y,w,h\n1,2,3\n").is_err());
    }
}
