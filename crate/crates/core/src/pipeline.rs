//! Commands behind the CLI: simulate, track, score, datagen, bench.
//!
//! Each `cmd_*` writes its artifacts plus `effective_config.toml` into the
//! output directory. The in-memory stages (`run_tracking`, `score_run`, ...)
//! are public so tests and the benchmark can skip the file round trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{load_config, ConfigError, RunConfig};
use crate::datagen::{self, DatagenError, DatasetManifest};
use crate::io::{self, GroundTruthRow, ParseError};
use crate::metrics::{self, CountSeries, FrameBoxes, ScoreReport};
use crate::simulator::{self, DetectionFrame, Palette, Scene, SimulatorError};
use crate::stitcher::{stitch, StitchConfig, Trajectory};
use crate::tracker::{Tracker, TrackerConfig, TrackerError};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const DETECTIONS_FILE: &str = "detections.txt";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const COUNTS_FILE: &str = "counts.csv";
pub const SCORE_JSON_FILE: &str = "score.json";
pub const SCORE_TABLE_FILE: &str = "score.txt";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Simulator(#[from] SimulatorError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
}

impl PipelineError {
    /// 1 for usage and configuration problems, 2 for everything data-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

fn parsed<T>(path: &Path, r: std::result::Result<T, ParseError>) -> Result<T> {
    r.map_err(|source| PipelineError::Parse { path: path.to_path_buf(), source })
}

/// Loads a config file, or the defaults when no path is given.
pub fn load_config_file(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = read_file(p)?;
            load_config(&text).map_err(|e| match e {
                ConfigError::Syntax(m) => ConfigError::Syntax(format!("{}: {m}", p.display())),
                other => other,
            })
            .map_err(PipelineError::from)
        }
    }
}

fn write_effective_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_file(&out.join(EFFECTIVE_CONFIG_FILE), cfg.to_toml())
}

/// SHA-256 of the effective config text, hex encoded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------- simulate

/// Ground truth and corrupted detections for the configured scene.
pub fn simulate(cfg: &RunConfig) -> Result<(Scene, Vec<DetectionFrame>)> {
    let scene = simulator::generate_scene(&cfg.scene)?;
    let dets = simulator::corrupt(&scene, &cfg.noise)?;
    Ok((scene, dets))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub n_frames: usize,
    pub n_droplets: usize,
    pub n_detections: usize,
}

/// Writes `ground_truth.csv`, `detections.txt` and, when enabled, `frames/frame_NNNNNN.ppm`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<SimulateSummary> {
    let (scene, dets) = simulate(cfg)?;
    create_dir(out)?;
    write_file(&out.join(GROUND_TRUTH_FILE), io::write_ground_truth(&scene.frames))?;
    write_file(&out.join(DETECTIONS_FILE), io::write_detections(&dets))?;
    if cfg.simulate.render {
        let dir = out.join("frames");
        create_dir(&dir)?;
        let palette = Palette::default();
        for f in &scene.frames {
            let img = simulator::render_frame(f, &cfg.scene, &palette);
            let comment = format!("frame={} seed={}", f.frame_index, cfg.scene.seed);
            write_file(&dir.join(format!("frame_{:06}.ppm", f.frame_index)), img.to_ppm(Some(&comment)))?;
        }
    }
    write_effective_config(cfg, out)?;
    let ids: std::collections::BTreeSet<u64> =
        scene.frames.iter().flat_map(|f| f.droplets.iter().map(|d| d.true_id)).collect();
    Ok(SimulateSummary {
        n_frames: scene.frames.len(),
        n_droplets: ids.len(),
        n_detections: dets.iter().map(|f| f.detections.len()).sum(),
    })
}

// ------------------------------------------------------------------- track

/// Trajectories and per-frame counts of one tracking run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRun {
    pub trajectories: Vec<Trajectory>,
    /// `counts[i]` is the number of trajectories with a sample in frame `i + 1`.
    pub counts: Vec<u32>,
}

/// Number of trajectories present in each frame `1..=n_frames`.
pub fn counts_from_trajectories(trajs: &[Trajectory], n_frames: u32) -> Vec<u32> {
    let mut counts = vec![0u32; n_frames as usize];
    for t in trajs {
        for &(f, _) in &t.samples {
            if (1..=n_frames).contains(&f) {
                counts[f as usize - 1] += 1;
            }
        }
    }
    counts
}

/// Feeds every frame to a fresh tracker and optionally stitches the result.
/// The count series spans frame 1 up to the last frame with detections.
pub fn run_tracking(frames: &[DetectionFrame], tracker: &TrackerConfig, stitch_cfg: Option<&StitchConfig>) -> Result<TrackRun> {
    let mut t = Tracker::new(tracker.clone())?;
    for f in frames {
        t.step(f.frame, &f.detections)?;
    }
    let mut trajectories = t.extract_trajectories();
    if let Some(sc) = stitch_cfg {
        let resolved = sc.resolve(&trajectories);
        trajectories = stitch(&trajectories, &resolved);
    }
    let n_frames = frames.last().map_or(0, |f| f.frame);
    let counts = counts_from_trajectories(&trajectories, n_frames);
    Ok(TrackRun { trajectories, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackSummary {
    pub n_frames: usize,
    pub n_trajectories: usize,
    pub stitched: bool,
}

/// Writes `trajectories.csv`, `counts.csv` and a copy of the detections used.
pub fn cmd_track(detections: &Path, cfg: &RunConfig, out: &Path, stitch_flag: bool) -> Result<TrackSummary> {
    let text = read_file(detections)?;
    let frames = parsed(detections, io::read_detections(&text))?;
    let run = run_tracking(&frames, &cfg.tracker, stitch_flag.then_some(&cfg.stitch))?;
    create_dir(out)?;
    write_file(&out.join(TRAJECTORIES_FILE), io::write_trajectories(&run.trajectories))?;
    write_file(&out.join(COUNTS_FILE), io::write_counts(&run.counts))?;
    write_file(&out.join(DETECTIONS_FILE), io::write_detections(&frames))?;
    write_effective_config(cfg, out)?;
    Ok(TrackSummary { n_frames: run.counts.len(), n_trajectories: run.trajectories.len(), stitched: stitch_flag })
}

// ------------------------------------------------------------------- score

/// Ground-truth count per frame `1..=n_frames`.
pub fn ground_truth_counts(rows: &[GroundTruthRow], n_frames: u32) -> Vec<u32> {
    let mut counts = vec![0u32; n_frames as usize];
    for r in rows {
        if (1..=n_frames).contains(&r.frame) {
            counts[r.frame as usize - 1] += 1;
        }
    }
    counts
}

/// Scores one run against ground truth.
///
/// The ground truth fixes the frame range `1..=N` (N = its last frame). A
/// predicted count series may be shorter, since a detection file cannot
/// express trailing empty frames; missing frames count as zero. Predictions
/// beyond frame N, or a run without any frame, are a range mismatch.
pub fn score_run(
    trajectories: &[Trajectory],
    counts: &[u32],
    detections: &[DetectionFrame],
    gt: &[GroundTruthRow],
    cfg: &RunConfig,
) -> Result<ScoreReport> {
    let n = gt.iter().map(|r| r.frame).max().unwrap_or(0);
    if n == 0 {
        return Err(PipelineError::Data("ground truth has no rows".into()));
    }
    if counts.len() > n as usize {
        return Err(PipelineError::Data(format!(
            "frame range mismatch: prediction covers {} frames, ground truth {n}",
            counts.len()
        )));
    }
    let last_pred = trajectories.iter().map(|t| t.last_frame()).chain(detections.iter().map(|f| f.frame)).max();
    if let Some(l) = last_pred {
        if l > n {
            return Err(PipelineError::Data(format!("frame range mismatch: prediction has frame {l}, ground truth ends at {n}")));
        }
    }
    let mut pred_counts = counts.to_vec();
    pred_counts.resize(n as usize, 0);
    let gt_counts = ground_truth_counts(gt, n);
    let series = |v: Vec<u32>| CountSeries::new(v).map_err(|e| PipelineError::Data(e.to_string()));
    let mse = metrics::counting_error(&series(gt_counts)?, &series(pred_counts)?)
        .map_err(|e| PipelineError::Data(e.to_string()))?;

    let mut per_frame: Vec<FrameBoxes> = vec![(Vec::new(), Vec::new()); n as usize];
    for r in gt {
        per_frame[r.frame as usize - 1].1.push(r.bbox);
    }
    for f in detections {
        per_frame[f.frame as usize - 1].0.extend(f.detections.iter().map(|d| (d.bbox, d.confidence)));
    }
    let ap = metrics::average_precision_frames(&per_frame, cfg.metrics.iou_threshold);

    let gt_trajs = io::ground_truth_trajectories(gt);
    let dist = cfg.metrics.dist_threshold.unwrap_or_else(|| metrics::default_dist_threshold(gt.iter().map(|r| r.bbox)));
    let t = metrics::tracking_score(trajectories, &gt_trajs, dist);
    Ok(ScoreReport::new(mse, ap, t))
}

/// Reads a track output directory and a ground-truth CSV; writes `score.json` and `score.txt` into `out`.
pub fn cmd_score(pred_dir: &Path, gt_path: &Path, cfg: &RunConfig, out: &Path) -> Result<ScoreReport> {
    let tp = pred_dir.join(TRAJECTORIES_FILE);
    let trajectories = parsed(&tp, io::read_trajectories(&read_file(&tp)?))?;
    let cp = pred_dir.join(COUNTS_FILE);
    let counts = parsed(&cp, io::read_counts(&read_file(&cp)?))?;
    let dp = pred_dir.join(DETECTIONS_FILE);
    let detections = parsed(&dp, io::read_detections(&read_file(&dp)?))?;
    let gt = parsed(gt_path, io::read_ground_truth(&read_file(gt_path)?))?;
    let report = score_run(&trajectories, &counts, &detections, &gt, cfg)?;
    create_dir(out)?;
    write_file(&out.join(SCORE_JSON_FILE), report.to_json())?;
    write_file(&out.join(SCORE_TABLE_FILE), report.to_table())?;
    write_effective_config(cfg, out)?;
    Ok(report)
}

// ----------------------------------------------------------------- datagen

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatagenEntry {
    pub directory: String,
    pub synthetic: usize,
    pub real: usize,
}

/// Manifests for every fraction on the grid, or only the all-synthetic one.
pub fn plan_datasets(cfg: &RunConfig) -> Result<Vec<DatasetManifest>> {
    let d = &cfg.datagen;
    let fractions: Vec<f64> = if d.synthetic_only { vec![1.0] } else { datagen::fraction_grid().to_vec() };
    let pool = match (&d.real_pool, d.synthetic_only) {
        (_, true) => Vec::new(),
        (Some(dir), false) => datagen::scan_real_pool(dir)?,
        (None, false) => {
            return Err(PipelineError::Usage(
                "datagen needs datagen.real_pool, or datagen.synthetic_only = true".into(),
            ))
        }
    };
    fractions
        .into_iter()
        .map(|f| datagen::compose(&pool, f, d.total, d.master_seed, &d.synthetic).map_err(PipelineError::from))
        .collect()
}

/// Writes directories `000` ... `100` under `out`, each with images, labels and
/// `manifest.json`. `jobs` bounds the number of worker threads.
pub fn cmd_datagen(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Vec<DatagenEntry>> {
    let manifests = plan_datasets(cfg)?;
    create_dir(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    let mut entries = Vec::new();
    for m in &manifests {
        let name = datagen::fraction_dir_name(m.synthetic_fraction);
        pool.install(|| datagen::materialize(m, &out.join(&name)))?;
        entries.push(DatagenEntry { directory: name, synthetic: m.synthetic_entries.len(), real: m.real_entries.len() });
    }
    write_effective_config(cfg, out)?;
    Ok(entries)
}

/// Rebuilds one dataset directory from its `manifest.json`.
pub fn regenerate_dataset(manifest: &Path, out: &Path) -> Result<()> {
    let m = datagen::read_manifest(manifest)?;
    datagen::materialize(&m, out)?;
    Ok(())
}

// ------------------------------------------------------------------- bench

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    /// Seconds per frame.
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl StageTiming {
    fn from_samples(s: &[f64]) -> Self {
        let n = s.len().max(1) as f64;
        StageTiming {
            mean: s.iter().sum::<f64>() / n,
            min: s.iter().copied().fold(f64::INFINITY, f64::min),
            max: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub n_droplets: usize,
    pub n_frames: usize,
    pub config_hash: String,
    pub tracking: StageTiming,
    /// Whole-run stitching time spread evenly over the frames.
    pub stitching: StageTiming,
    /// Whole-run scoring time spread evenly over the frames.
    pub scoring: StageTiming,
    pub total: StageTiming,
    /// Frames per second, `1 / total.mean`.
    pub throughput_fps: f64,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per configuration: per-stage seconds, then frames per second.
    pub fn to_table(&self) -> String {
        let name = format!("tracker, {} droplets x {} frames", self.n_droplets, self.n_frames);
        let header = ["Configuration", "Tracking (CPU)", "Stitching (CPU)", "Scoring (CPU)", "Total FPS (CPU)"];
        let cells = [
            name,
            format!("{:.6} s", self.tracking.mean),
            format!("{:.6} s", self.stitching.mean),
            format!("{:.6} s", self.scoring.mean),
            format!("{:.2}", self.throughput_fps),
        ];
        let widths: Vec<usize> = header.iter().zip(&cells).map(|(h, c)| h.len().max(c.len())).collect();
        let row = |items: Vec<&str>| -> String {
            let body: Vec<String> = items.iter().zip(&widths).map(|(s, w)| format!(" {s:<w$} ")).collect();
            format!("|{}|\n", body.join("|"))
        };
        let rule = format!("|{}|\n", widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|"));
        let mut s = row(header.to_vec());
        s.push_str(&rule);
        s.push_str(&row(cells.iter().map(String::as_str).collect()));
        s.push_str(&format!(
            "\ntracking per frame: min {:.6} s, max {:.6} s; total per frame: min {:.6} s, max {:.6} s\n",
            self.tracking.min, self.tracking.max, self.total.min, self.total.max
        ));
        s
    }
}

/// Times tracking per frame, then stitching and scoring once, on the bench
/// scene. Scene generation and corruption happen before the clock starts.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchmarkReport> {
    let mut run_cfg = cfg.clone();
    run_cfg.scene = cfg.bench_scene();
    let (scene, frames) = simulate(&run_cfg)?;
    let n_frames = scene.frames.len();

    let mut tracker = Tracker::new(cfg.tracker.clone())?;
    let mut per_frame = Vec::with_capacity(n_frames);
    for f in &frames {
        let t0 = Instant::now();
        tracker.step(f.frame, &f.detections)?;
        per_frame.push(t0.elapsed().as_secs_f64());
    }

    let t0 = Instant::now();
    let segments = tracker.extract_trajectories();
    let resolved = cfg.stitch.resolve(&segments);
    let trajectories = stitch(&segments, &resolved);
    let stitch_secs = t0.elapsed().as_secs_f64();

    let gt: Vec<GroundTruthRow> = scene
        .frames
        .iter()
        .flat_map(|f| f.droplets.iter().map(move |d| GroundTruthRow { frame: f.frame_index, id: d.true_id as i64, bbox: d.bbox }))
        .collect();
    let t0 = Instant::now();
    let last = frames.last().map_or(0, |f| f.frame);
    let counts = counts_from_trajectories(&trajectories, last);
    if !gt.is_empty() {
        std::hint::black_box(score_run(&trajectories, &counts, &frames, &gt, cfg)?);
    }
    let score_secs = t0.elapsed().as_secs_f64();

    let n = n_frames.max(1) as f64;
    let stitch_pf = stitch_secs / n;
    let score_pf = score_secs / n;
    let totals: Vec<f64> = per_frame.iter().map(|t| t + stitch_pf + score_pf).collect();
    let total = StageTiming::from_samples(&totals);
    let flat = |v: f64| StageTiming { mean: v, min: v, max: v };
    Ok(BenchmarkReport {
        n_droplets: run_cfg.scene.n_droplets,
        n_frames,
        config_hash: config_hash(cfg),
        tracking: StageTiming::from_samples(&per_frame),
        stitching: flat(stitch_pf),
        scoring: flat(score_pf),
        throughput_fps: if total.mean > 0.0 { 1.0 / total.mean } else { f64::INFINITY },
        total,
    })
}
