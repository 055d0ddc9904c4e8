//! Synthetic annotated ellipse images and hybrid real/synthetic dataset composition.
//!
//! A [`DatasetManifest`] is the full recipe of one dataset: which real images
//! were drawn from the pool, and the seed of every synthetic image. Rendering
//! a manifest twice gives byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::raster::{Ellipse, Image, Rgb};
use crate::rng::{derive_seed, StreamRng};

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("box {index} ({x}, {y}, {w}, {h}) lies outside the {width}x{height} image")]
    OutOfBounds { index: usize, x: f64, y: f64, w: f64, h: f64, width: usize, height: usize },
    #[error("label line {line}: {msg}")]
    Label { line: usize, msg: String },
    #[error("real pool has {available} images but {needed} are required (short by {})", needed - available)]
    InsufficientPool { needed: usize, available: usize },
    #[error("synthetic fraction {0} is not on the 0.0, 0.1, ..., 1.0 grid")]
    Fraction(f64),
    #[error("invalid synthetic image spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatagenError + '_ {
    move |source| DatagenError::Io { path: path.to_path_buf(), source }
}

/// Minimum per-channel separation (max over channels) between background and ellipse colors.
pub const MIN_COLOR_SEPARATION: u8 = 30;
const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticImageSpec {
    pub width: usize,
    pub height: usize,
    pub n_ellipses_range: [usize; 2],
    /// Semi-axis range in pixels.
    pub axis_range: [f64; 2],
    pub seed: u64,
    #[serde(default = "default_true")]
    pub allow_overlap: bool,
}

fn default_true() -> bool {
    true
}

impl SyntheticImageSpec {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let fail = |m: String| Err(DatagenError::Spec(m));
        let [nmin, nmax] = self.n_ellipses_range;
        let [amin, amax] = self.axis_range;
        if self.width == 0 || self.height == 0 {
            return fail("image size must be positive".into());
        }
        if nmin > nmax {
            return fail(format!("n_ellipses_range [{nmin}, {nmax}] is empty"));
        }
        if !(amin > 0.0 && amin <= amax && amax.is_finite()) {
            return fail(format!("axis_range [{amin}, {amax}] must be positive and non-empty"));
        }
        if 2.0 * amax > self.width.min(self.height) as f64 {
            return fail(format!("axis {amax} does not fit in a {}x{} image", self.width, self.height));
        }
        Ok(())
    }
}

fn color_separated(a: Rgb, b: Rgb) -> bool {
    a.iter().zip(&b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0) >= MIN_COLOR_SEPARATION
}

fn random_color(rng: &mut StreamRng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

/// A rendered synthetic image with one label per drawn ellipse.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub image: Image,
    pub boxes: Vec<BBox>,
    pub ellipses: Vec<Ellipse>,
    pub background: Rgb,
    /// Ellipses requested before placement; more than `boxes.len()` when placement gave up.
    pub requested: usize,
}

/// Renders random solid ellipses on a uniform random background.
pub fn render_synthetic(spec: &SyntheticImageSpec) -> Result<SyntheticImage, DatagenError> {
    spec.validate()?;
    let mut rng = StreamRng::new(spec.seed, "datagen.image");
    let background = random_color(&mut rng);
    let mut image = Image::filled(spec.width, spec.height, background);
    let [nmin, nmax] = spec.n_ellipses_range;
    let requested = rng.random_range(nmin..=nmax);
    let [amin, amax] = spec.axis_range;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut boxes = Vec::with_capacity(requested);
    let mut ellipses: Vec<Ellipse> = Vec::with_capacity(requested);
    for _ in 0..requested {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let a = if amax > amin { rng.random_range(amin..=amax) } else { amin };
            let b = if amax > amin { rng.random_range(amin..=amax) } else { amin };
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let probe = Ellipse { cx: 0.0, cy: 0.0, a, b, angle };
            let (hx, hy) = probe.half_extents();
            let cx = rng.random_range(hx..=(w - hx));
            let cy = rng.random_range(hy..=(h - hy));
            let e = Ellipse { cx, cy, ..probe };
            let bbox = BBox::new(cx - hx, cy - hy, 2.0 * hx, 2.0 * hy).expect("positive axes");
            let free = spec.allow_overlap
                || boxes.iter().all(|o: &BBox| crate::geometry::iou(o, &bbox) == 0.0);
            if free {
                placed = Some((e, bbox));
                break;
            }
        }
        let Some((e, bbox)) = placed else { break };
        let mut color = random_color(&mut rng);
        while !color_separated(color, background) {
            color = random_color(&mut rng);
        }
        e.fill(&mut image, color);
        boxes.push(bbox);
        ellipses.push(e);
    }
    Ok(SyntheticImage { image, boxes, ellipses, background, requested })
}

/// YOLO label text: `0 cx cy w h`, normalized, six decimals, one line per box.
pub fn write_yolo_labels(boxes: &[BBox], width: usize, height: usize) -> Result<String, DatagenError> {
    let (w, h) = (width as f64, height as f64);
    let mut out = String::new();
    for (index, b) in boxes.iter().enumerate() {
        if !b.within(w, h, 1e-9) {
            return Err(DatagenError::OutOfBounds { index, x: b.x(), y: b.y(), w: b.w(), h: b.h(), width, height });
        }
        let c = b.center();
        let clamp = |v: f64| v.clamp(0.0, 1.0);
        writeln!(out, "0 {:.6} {:.6} {:.6} {:.6}", clamp(c.cx / w), clamp(c.cy / h), clamp(b.w() / w), clamp(b.h() / h))
            .expect("write to string");
    }
    Ok(out)
}

/// Parses YOLO labels back into pixel boxes.
pub fn read_yolo_labels(text: &str, width: usize, height: usize) -> Result<Vec<BBox>, DatagenError> {
    let (w, h) = (width as f64, height as f64);
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(DatagenError::Label { line: line_no, msg: format!("expected 5 fields, got {}", fields.len()) });
        }
        if fields[0] != "0" {
            return Err(DatagenError::Label { line: line_no, msg: format!("unexpected class {:?}", fields[0]) });
        }
        let mut v = [0.0f64; 4];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f.parse().map_err(|_| DatagenError::Label { line: line_no, msg: format!("bad number {f:?}") })?;
            if !(0.0..=1.0).contains(&v[k]) {
                return Err(DatagenError::Label { line: line_no, msg: format!("value {} outside [0, 1]", v[k]) });
            }
        }
        let (bw, bh) = (v[2] * w, v[3] * h);
        let b = BBox::new(v[0] * w - bw / 2.0, v[1] * h - bh / 2.0, bw, bh)
            .map_err(|e| DatagenError::Label { line: line_no, msg: e.to_string() })?;
        boxes.push(b);
    }
    Ok(boxes)
}

/// One real image/label pair in the pool.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RealEntry {
    pub image: PathBuf,
    pub label: PathBuf,
}

/// Lists `<stem>.<ext>` images having a sibling `<stem>.txt` label, sorted by path.
pub fn scan_real_pool(dir: &Path) -> Result<Vec<RealEntry>, DatagenError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e != "txt") && path.is_file() {
            let label = path.with_extension("txt");
            if label.is_file() {
                out.push(RealEntry { image: path, label });
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Template for the synthetic part of a dataset; only the seed varies per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTemplate {
    pub width: usize,
    pub height: usize,
    pub n_ellipses_range: [usize; 2],
    pub axis_range: [f64; 2],
    pub allow_overlap: bool,
}

impl Default for SyntheticTemplate {
    fn default() -> Self {
        SyntheticTemplate { width: 416, height: 416, n_ellipses_range: [3, 12], axis_range: [8.0, 40.0], allow_overlap: true }
    }
}

impl SyntheticTemplate {
    pub fn spec(&self, seed: u64) -> SyntheticImageSpec {
        SyntheticImageSpec {
            width: self.width,
            height: self.height,
            n_ellipses_range: self.n_ellipses_range,
            axis_range: self.axis_range,
            seed,
            allow_overlap: self.allow_overlap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub total: usize,
    pub synthetic_fraction: f64,
    pub real_entries: Vec<RealEntry>,
    pub synthetic_entries: Vec<SyntheticImageSpec>,
    pub master_seed: u64,
}

pub const DEFAULT_TOTAL: usize = 800;

/// Fractions 0.0, 0.1, ..., 1.0.
pub fn fraction_grid() -> [f64; 11] {
    std::array::from_fn(|i| i as f64 / 10.0)
}

fn grid_step(fraction: f64) -> Result<usize, DatagenError> {
    let step = (fraction * 10.0).round();
    if !(0.0..=10.0).contains(&step) || (fraction * 10.0 - step).abs() > 1e-9 {
        return Err(DatagenError::Fraction(fraction));
    }
    Ok(step as usize)
}

/// Number of synthetic images for a fraction on the grid.
pub fn synthetic_count(fraction: f64, total: usize) -> Result<usize, DatagenError> {
    let step = grid_step(fraction)?;
    // round(step/10 * total) in integer arithmetic, halves rounding up
    Ok((step * total * 2 + 10) / 20)
}

/// Draws the real subset without replacement and seeds every synthetic image.
pub fn compose(
    real_pool: &[RealEntry],
    fraction: f64,
    total: usize,
    master_seed: u64,
    template: &SyntheticTemplate,
) -> Result<DatasetManifest, DatagenError> {
    let n_syn = synthetic_count(fraction, total)?;
    let n_real = total - n_syn;
    if real_pool.len() < n_real {
        return Err(DatagenError::InsufficientPool { needed: n_real, available: real_pool.len() });
    }
    let step = grid_step(fraction)? as u64;
    let mut rng = StreamRng::indexed(master_seed, "datagen.real", step);
    let mut picked = rand::seq::index::sample(&mut rng, real_pool.len(), n_real).into_vec();
    picked.sort_unstable();
    let real_entries = picked.into_iter().map(|i| real_pool[i].clone()).collect();
    let synthetic_entries = (0..n_syn)
        .map(|i| template.spec(derive_seed(master_seed, "datagen.synthetic", step * 1_000_000 + i as u64)))
        .collect::<Vec<_>>();
    if let Some(s) = synthetic_entries.first() {
        s.validate()?;
    }
    Ok(DatasetManifest { total, synthetic_fraction: step as f64 / 10.0, real_entries, synthetic_entries, master_seed })
}

/// Writes a manifest's images and labels into `out/images` and `out/labels`, plus `out/manifest.json`.
pub fn materialize(manifest: &DatasetManifest, out: &Path) -> Result<(), DatagenError> {
    let images = out.join("images");
    let labels = out.join("labels");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    fs::create_dir_all(&labels).map_err(io_err(&labels))?;

    manifest.real_entries.par_iter().enumerate().try_for_each(|(i, e)| -> Result<(), DatagenError> {
        let ext = e.image.extension().and_then(|x| x.to_str()).unwrap_or("img");
        let stem = format!("real_{i:06}");
        let img_dst = images.join(format!("{stem}.{ext}"));
        let lbl_dst = labels.join(format!("{stem}.txt"));
        fs::copy(&e.image, &img_dst).map_err(io_err(&e.image))?;
        fs::copy(&e.label, &lbl_dst).map_err(io_err(&e.label))?;
        Ok(())
    })?;

    manifest.synthetic_entries.par_iter().enumerate().try_for_each(|(i, spec)| -> Result<(), DatagenError> {
        let s = render_synthetic(spec)?;
        let stem = format!("syn_{i:06}");
        let img_path = images.join(format!("{stem}.ppm"));
        let lbl_path = labels.join(format!("{stem}.txt"));
        fs::write(&img_path, s.image.to_ppm(Some(&format!("seed={}", spec.seed)))).map_err(io_err(&img_path))?;
        let text = write_yolo_labels(&s.boxes, spec.width, spec.height)?;
        fs::write(&lbl_path, text).map_err(io_err(&lbl_path))?;
        Ok(())
    })?;

    let path = out.join("manifest.json");
    let mut json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DatagenError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DatagenError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

/// Directory name of a grid fraction: `000`, `010`, ..., `100`.
pub fn fraction_dir_name(fraction: f64) -> String {
    format!("{:03}", (fraction * 100.0).round() as u32)
}
