//! Kinematic dense-emulsion scenes: deformable elliptical droplets carried by
//! a prescribed flow through a channel with a smooth constriction.
//!
//! Motion per frame:
//! 1. Advection along streamlines. The mean axial speed follows flux
//!    conservation, `U(x) = inflow * W / w(x)`, with a parabolic profile
//!    across the local width; each droplet keeps its normalized lateral
//!    coordinate, so it is funneled towards the axis inside the constriction.
//! 2. Deformation. Aspect ratio `1 + k (speed / inflow - 1)`, elongated along
//!    the direction of motion, area preserving.
//! 3. Soft repulsion. Overlapping pairs are pushed apart along their line of
//!    centers, then clamped inside the walls, for a bounded number of sweeps.
//!
//! Droplets leave the scene once their center passes the outlet.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::raster::{Ellipse, Image, Rgb};
use crate::rng::StreamRng;
use crate::tracker::Detection;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulatorError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error("droplets cannot fit: packing fraction {fraction:.3} exceeds 0.9")]
    Overpacked { fraction: f64 },
    #[error("could not place droplet {index} without overlap")]
    Placement { index: usize },
    #[error("invalid noise model: {0}")]
    Noise(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub channel_width: f64,
    pub channel_length: f64,
    pub orifice_width: f64,
    pub orifice_position: f64,
    /// Axial length of the tapered constriction.
    pub orifice_length: f64,
    pub n_droplets: usize,
    pub droplet_radius_mean: f64,
    pub droplet_radius_std: f64,
    pub inflow_speed: f64,
    pub n_frames: u32,
    pub seed: u64,
    /// Deformation gain `k` in `aspect = 1 + k (speed / inflow - 1)`.
    pub deformation_k: f64,
    /// Weight of the parabolic part of the axial profile; 0 is plug flow, 1 fully parabolic.
    pub profile_curvature: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            channel_width: 160.0,
            channel_length: 640.0,
            orifice_width: 80.0,
            orifice_position: 320.0,
            orifice_length: 160.0,
            n_droplets: 19,
            droplet_radius_mean: 14.0,
            droplet_radius_std: 1.5,
            inflow_speed: 2.5,
            n_frames: 120,
            seed: 2022,
            deformation_k: 0.5,
            profile_curvature: 0.5,
        }
    }
}

const MIN_ASPECT: f64 = 0.5;
const MAX_ASPECT: f64 = 3.0;
const REPULSION_SWEEPS: usize = 200;
const MAX_PACKING: f64 = 0.9;

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        let fail = |m: String| Err(SimulatorError::Config(m));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.channel_width) || !pos(self.channel_length) || !pos(self.orifice_width) {
            return fail("channel and orifice sizes must be positive".into());
        }
        if self.orifice_width > self.channel_width {
            return fail(format!("orifice_width {} exceeds channel_width {}", self.orifice_width, self.channel_width));
        }
        if !pos(self.orifice_length) || !self.orifice_position.is_finite() {
            return fail("orifice_length must be positive and orifice_position finite".into());
        }
        if !pos(self.droplet_radius_mean) || !(self.droplet_radius_std >= 0.0) {
            return fail("droplet radius mean must be positive and std non-negative".into());
        }
        if !pos(self.inflow_speed) {
            return fail("inflow_speed must be positive".into());
        }
        if self.n_frames < 1 {
            return fail("n_frames must be at least 1".into());
        }
        if !(self.deformation_k >= 0.0) || !(0.0..=1.0).contains(&self.profile_curvature) {
            return fail("deformation_k must be >= 0 and profile_curvature in [0, 1]".into());
        }
        if 2.0 * self.droplet_radius_mean >= self.channel_width {
            return fail("droplet diameter must be smaller than channel_width".into());
        }
        let fraction = self.packing_fraction();
        if fraction > MAX_PACKING {
            return Err(SimulatorError::Overpacked { fraction });
        }
        Ok(())
    }

    /// Expected droplet area over channel area.
    pub fn packing_fraction(&self) -> f64 {
        let r2 = self.droplet_radius_mean.powi(2) + self.droplet_radius_std.powi(2);
        self.n_droplets as f64 * std::f64::consts::PI * r2 / (self.channel_width * self.channel_length)
    }

    pub fn centerline(&self) -> f64 {
        self.channel_width / 2.0
    }

    /// Local half-width of the channel at axial position `x`.
    pub fn half_width(&self, x: f64) -> f64 {
        let half_len = self.orifice_length / 2.0;
        let d = (x - self.orifice_position).abs();
        let bump = if d < half_len { 0.5 * (1.0 + (std::f64::consts::PI * d / half_len).cos()) } else { 0.0 };
        0.5 * (self.channel_width - (self.channel_width - self.orifice_width) * bump)
    }

    /// Axial flow speed at `(x, y)`.
    pub fn flow_speed(&self, x: f64, y: f64) -> f64 {
        let hw = self.half_width(x);
        let mean = self.inflow_speed * self.channel_width / (2.0 * hw);
        let eta = ((y - self.centerline()) / hw).clamp(-1.0, 1.0);
        let beta = self.profile_curvature;
        mean * (1.0 - beta + 1.5 * beta * (1.0 - eta * eta))
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.channel_length.ceil() as usize, self.channel_width.ceil() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDroplet {
    pub true_id: u64,
    pub bbox: BBox,
    /// Semi-axis along `orientation`.
    pub a: f64,
    pub b: f64,
    pub orientation: f64,
}

impl GroundTruthDroplet {
    pub fn ellipse(&self) -> Ellipse {
        let c = self.bbox.center();
        Ellipse { cx: c.cx, cy: c.cy, a: self.a, b: self.b, angle: self.orientation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    /// 1-based.
    pub frame_index: u32,
    pub droplets: Vec<GroundTruthDroplet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub frames: Vec<GroundTruthFrame>,
}

#[derive(Debug, Clone)]
struct Droplet {
    id: u64,
    radius: f64,
    x: f64,
    y: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Droplet {
    fn ellipse(&self) -> Ellipse {
        Ellipse { cx: self.x, cy: self.y, a: self.a, b: self.b, angle: self.angle }
    }

    fn shape_from_motion(&mut self, dx: f64, dy: f64, cfg: &SceneConfig) {
        let speed = dx.hypot(dy);
        let aspect = (1.0 + cfg.deformation_k * (speed / cfg.inflow_speed - 1.0)).clamp(MIN_ASPECT, MAX_ASPECT);
        let s = aspect.sqrt();
        self.a = self.radius * s;
        self.b = self.radius / s;
        self.angle = if speed > 0.0 { dy.atan2(dx) } else { 0.0 };
    }
}

/// Where a droplet at `(x, y)` is carried in one frame (midpoint rule).
fn advect(cfg: &SceneConfig, x: f64, y: f64) -> (f64, f64) {
    let yc = cfg.centerline();
    let eta = (y - yc) / cfg.half_width(x);
    let u1 = cfg.flow_speed(x, y);
    let xm = x + 0.5 * u1;
    let ym = yc + eta * cfg.half_width(xm);
    let nx = x + cfg.flow_speed(xm, ym);
    (nx, yc + eta * cfg.half_width(nx))
}

fn clamp_to_walls(cfg: &SceneConfig, d: &mut Droplet) {
    let (_, ey) = d.ellipse().half_extents();
    let room = cfg.half_width(d.x) - ey;
    let yc = cfg.centerline();
    d.y = if room <= 0.0 { yc } else { d.y.clamp(yc - room, yc + room) };
}

/// Pushes overlapping droplets apart along their line of centers.
fn relax(cfg: &SceneConfig, ds: &mut [Droplet]) {
    for _ in 0..REPULSION_SWEEPS {
        let mut worst = 0.0f64;
        for i in 0..ds.len() {
            for j in i + 1..ds.len() {
                let dx = ds[j].x - ds[i].x;
                let dy = ds[j].y - ds[i].y;
                let dist = dx.hypot(dy);
                let target = ds[i].ellipse().radius_towards(dx, dy) + ds[j].ellipse().radius_towards(-dx, -dy);
                if dist >= target {
                    continue;
                }
                let overlap = target - dist;
                worst = worst.max(overlap / target);
                let (ux, uy) = if dist > 1e-9 { (dx / dist, dy / dist) } else { (1.0, 0.0) };
                let push = 0.5 * overlap;
                ds[i].x -= ux * push;
                ds[i].y -= uy * push;
                ds[j].x += ux * push;
                ds[j].y += uy * push;
            }
        }
        for d in ds.iter_mut() {
            clamp_to_walls(cfg, d);
        }
        if worst < 1e-3 {
            break;
        }
    }
}

fn place(cfg: &SceneConfig, rng: &mut StreamRng) -> Result<Vec<Droplet>, SimulatorError> {
    let radius_dist = Normal::new(cfg.droplet_radius_mean, cfg.droplet_radius_std)
        .map_err(|e| SimulatorError::Config(e.to_string()))?;
    let radii: Vec<f64> = (0..cfg.n_droplets)
        .map(|_| radius_dist.sample(rng).clamp(0.5 * cfg.droplet_radius_mean, 1.5 * cfg.droplet_radius_mean))
        .collect();
    // Cluster upstream of the constriction, extended when the cluster needs more room.
    let r_max = radii.iter().copied().fold(0.0, f64::max);
    let area: f64 = radii.iter().map(|r| std::f64::consts::PI * r * r).sum();
    let upstream = cfg.orifice_position - cfg.orifice_length / 2.0;
    let needed = area / (0.35 * cfg.channel_width);
    let x_lo = r_max + 1.0;
    let x_cap = (cfg.channel_length - r_max - 1.0).max(x_lo + 1.0);
    let mut x_hi = upstream.max(x_lo + needed).min(x_cap).max(x_lo + 1.0);
    // Random sequential placement jams well below the packing limit; lengthen the
    // cluster until it fits or the channel runs out.
    loop {
        match place_in(cfg, rng, &radii, x_lo, x_hi) {
            Err(SimulatorError::Placement { .. }) if x_hi < x_cap => {
                x_hi = (x_lo + 1.25 * (x_hi - x_lo)).min(x_cap);
            }
            other => return other,
        }
    }
}

fn place_in(cfg: &SceneConfig, rng: &mut StreamRng, radii: &[f64], x_lo: f64, x_hi: f64) -> Result<Vec<Droplet>, SimulatorError> {
    let mut out: Vec<Droplet> = Vec::with_capacity(radii.len());
    for (index, &radius) in radii.iter().enumerate() {
        let mut placed = false;
        for _ in 0..20_000 {
            let x = rng.random_range(x_lo..x_hi);
            let hw = cfg.half_width(x);
            if hw <= radius + 1.0 {
                continue;
            }
            let y = cfg.centerline() + rng.random_range(-(hw - radius - 1.0)..(hw - radius - 1.0));
            let clear = out.iter().all(|o| (o.x - x).hypot(o.y - y) >= 1.1 * (o.radius + radius) + 2.0);
            if clear {
                out.push(Droplet { id: index as u64 + 1, radius, x, y, a: radius, b: radius, angle: 0.0 });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SimulatorError::Placement { index });
        }
    }
    Ok(out)
}

fn snapshot(frame_index: u32, ds: &[Droplet]) -> GroundTruthFrame {
    let droplets = ds
        .iter()
        .map(|d| {
            let (hx, hy) = d.ellipse().half_extents();
            GroundTruthDroplet {
                true_id: d.id,
                bbox: BBox::new(d.x - hx, d.y - hy, 2.0 * hx, 2.0 * hy).expect("ellipse extents are positive"),
                a: d.a,
                b: d.b,
                orientation: d.angle,
            }
        })
        .collect();
    GroundTruthFrame { frame_index, droplets }
}

/// Generates `n_frames` ground-truth frames. Deterministic for a fixed config.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene, SimulatorError> {
    cfg.validate()?;
    let mut rng = StreamRng::new(cfg.seed, "scene.placement");
    let mut ds = place(cfg, &mut rng)?;
    for d in &mut ds {
        let (nx, ny) = advect(cfg, d.x, d.y);
        d.shape_from_motion(nx - d.x, ny - d.y, cfg);
    }
    relax(cfg, &mut ds);
    let mut frames = Vec::with_capacity(cfg.n_frames as usize);
    frames.push(snapshot(1, &ds));
    for f in 2..=cfg.n_frames {
        for d in &mut ds {
            let (nx, ny) = advect(cfg, d.x, d.y);
            d.shape_from_motion(nx - d.x, ny - d.y, cfg);
            d.x = nx;
            d.y = ny;
        }
        relax(cfg, &mut ds);
        ds.retain(|d| d.x <= cfg.channel_length);
        frames.push(snapshot(f, &ds));
    }
    Ok(Scene { config: cfg.clone(), frames })
}

/// Detector imperfections injected into ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub miss_prob: f64,
    pub false_positive_rate: f64,
    pub jitter_std: f64,
    pub confidence_range: [f64; 2],
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { miss_prob: 0.0, false_positive_rate: 0.0, jitter_std: 0.0, confidence_range: [0.5, 1.0], seed: 7 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), SimulatorError> {
        let fail = |m: &str| Err(SimulatorError::Noise(m.to_string()));
        if !(0.0..=1.0).contains(&self.miss_prob) {
            return fail("miss_prob must lie in [0, 1]");
        }
        if !(self.false_positive_rate >= 0.0 && self.false_positive_rate.is_finite()) {
            return fail("false_positive_rate must be non-negative");
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return fail("jitter_std must be non-negative");
        }
        let [lo, hi] = self.confidence_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return fail("confidence_range must satisfy 0 <= lo <= hi <= 1");
        }
        Ok(())
    }
}

/// Detections of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub frame: u32,
    pub detections: Vec<Detection>,
}

const MIN_JITTERED_SIZE: f64 = 1.0;

/// Turns ground truth into detector-like output. Each frame draws from its
/// own stream, so frames can be corrupted independently.
pub fn corrupt(scene: &Scene, nm: &NoiseModel) -> Result<Vec<DetectionFrame>, SimulatorError> {
    nm.validate()?;
    let jitter = Normal::new(0.0, nm.jitter_std).map_err(|e| SimulatorError::Noise(e.to_string()))?;
    let [lo, hi] = nm.confidence_range;
    let (fp_w, fp_h) = {
        let boxes: Vec<&BBox> = scene.frames.iter().flat_map(|f| f.droplets.iter().map(|d| &d.bbox)).collect();
        if boxes.is_empty() {
            (2.0 * scene.config.droplet_radius_mean, 2.0 * scene.config.droplet_radius_mean)
        } else {
            let n = boxes.len() as f64;
            (boxes.iter().map(|b| b.w()).sum::<f64>() / n, boxes.iter().map(|b| b.h()).sum::<f64>() / n)
        }
    };
    let cfg = &scene.config;
    scene
        .frames
        .iter()
        .map(|f| {
            let mut rng = StreamRng::indexed(nm.seed, "noise.frame", f.frame_index as u64);
            let mut detections = Vec::new();
            for d in &f.droplets {
                if rng.random::<f64>() < nm.miss_prob {
                    continue;
                }
                let b = &d.bbox;
                let x = b.x() + jitter.sample(&mut rng);
                let y = b.y() + jitter.sample(&mut rng);
                let w = (b.w() + jitter.sample(&mut rng)).max(MIN_JITTERED_SIZE);
                let h = (b.h() + jitter.sample(&mut rng)).max(MIN_JITTERED_SIZE);
                let conf = lo + (hi - lo) * rng.random::<f64>();
                let bbox = BBox::new(x, y, w, h).expect("jittered box stays valid");
                detections.push(Detection { bbox, confidence: conf, descriptor: None });
            }
            let n_fp = if nm.false_positive_rate > 0.0 {
                Poisson::new(nm.false_positive_rate).map_err(|e| SimulatorError::Noise(e.to_string()))?.sample(&mut rng) as usize
            } else {
                0
            };
            for _ in 0..n_fp {
                let cx = rng.random::<f64>() * cfg.channel_length;
                let cy = rng.random::<f64>() * cfg.channel_width;
                let conf = lo + (hi - lo) * rng.random::<f64>();
                let bbox = BBox::new(cx - fp_w / 2.0, cy - fp_h / 2.0, fp_w, fp_h).expect("positive size");
                detections.push(Detection { bbox, confidence: conf, descriptor: None });
            }
            Ok(DetectionFrame { frame: f.frame_index, detections })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub background: Rgb,
    pub wall: Rgb,
    pub droplet: Rgb,
}

impl Default for Palette {
    fn default() -> Self {
        Palette { background: [214, 214, 208], wall: [52, 52, 60], droplet: [96, 128, 168] }
    }
}

/// Draws the channel walls and the frame's droplets as filled ellipses.
pub fn render_frame(gtf: &GroundTruthFrame, cfg: &SceneConfig, palette: &Palette) -> Image {
    let (w, h) = cfg.frame_size();
    let mut img = Image::filled(w, h, palette.background);
    let yc = cfg.centerline();
    for x in 0..w {
        let hw = cfg.half_width(x as f64 + 0.5);
        for y in 0..h {
            if (y as f64 + 0.5 - yc).abs() > hw {
                img.set(x, y, palette.wall);
            }
        }
    }
    for d in &gtf.droplets {
        d.ellipse().fill(&mut img, palette.droplet);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, frames: u32) -> SceneConfig {
        SceneConfig { n_droplets: n, n_frames: frames, ..SceneConfig::default() }
    }

    #[test]
    fn empty_scene_has_empty_frames() {
        let s = generate_scene(&small(0, 7)).unwrap();
        assert_eq!(s.frames.len(), 7);
        assert!(s.frames.iter().all(|f| f.droplets.is_empty()));
        assert_eq!(s.frames[6].frame_index, 7);
    }

    #[test]
    fn straight_channel_uniform_motion() {
        let cfg = SceneConfig { orifice_width: 160.0, ..small(1, 40) };
        let s = generate_scene(&cfg).unwrap();
        let centers: Vec<_> = s.frames.iter().filter_map(|f| f.droplets.first()).map(|d| d.bbox.center()).collect();
        assert!(centers.len() > 10);
        let step = centers[1].cx - centers[0].cx;
        assert!(step > 0.0);
        for w in centers.windows(2) {
            assert!((w[1].cx - w[0].cx - step).abs() < 1e-9);
            assert!((w[1].cy - w[0].cy).abs() < 1e-9);
        }
        let d0 = &s.frames[0].droplets[0];
        for f in s.frames.iter().filter(|f| !f.droplets.is_empty()) {
            assert!((f.droplets[0].a - d0.a).abs() < 1e-9 && (f.droplets[0].b - d0.b).abs() < 1e-9);
        }
    }

    #[test]
    fn constriction_accelerates() {
        let cfg = SceneConfig { orifice_width: 80.0, n_frames: 200, ..small(1, 200) };
        let s = generate_scene(&cfg).unwrap();
        let xs: Vec<f64> = s.frames.iter().filter_map(|f| f.droplets.first()).map(|d| d.bbox.center().cx).collect();
        let peak = xs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!(peak >= 1.5 * cfg.inflow_speed, "peak {peak}");
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(generate_scene(&small(500, 5)), Err(SimulatorError::Overpacked { .. })));
        let c = SceneConfig { orifice_width: 200.0, ..small(1, 5) };
        assert!(matches!(generate_scene(&c), Err(SimulatorError::Config(_))));
        let c = SceneConfig { n_frames: 0, ..small(1, 5) };
        assert!(generate_scene(&c).is_err());
    }

    #[test]
    fn identity_noise_reproduces_truth() {
        let s = generate_scene(&small(5, 10)).unwrap();
        let nm = NoiseModel { confidence_range: [1.0, 1.0], ..NoiseModel::default() };
        let dets = corrupt(&s, &nm).unwrap();
        for (f, d) in s.frames.iter().zip(&dets) {
            let truth: Vec<BBox> = f.droplets.iter().map(|d| d.bbox).collect();
            let got: Vec<BBox> = d.detections.iter().map(|d| d.bbox).collect();
            assert_eq!(truth, got);
        }
        let all_missed = corrupt(&s, &NoiseModel { miss_prob: 1.0, ..nm }).unwrap();
        assert!(all_missed.iter().all(|f| f.detections.is_empty()));
    }

    #[test]
    fn render_shows_walls_and_single_droplet_region() {
        let cfg = small(1, 1);
        let s = generate_scene(&cfg).unwrap();
        let pal = Palette::default();
        let empty = render_frame(&GroundTruthFrame { frame_index: 1, droplets: vec![] }, &cfg, &pal);
        assert!(empty.pixels().all(|p| p == pal.background || p == pal.wall));
        assert!(empty.pixels().any(|p| p == pal.wall));
        let img = render_frame(&s.frames[0], &cfg, &pal);
        let (w, h) = cfg.frame_size();
        let mut seen = vec![false; w * h];
        let mut regions = 0;
        for y in 0..h {
            for x in 0..w {
                if seen[y * w + x] || img.get(x, y) != pal.droplet {
                    continue;
                }
                regions += 1;
                let mut stack = vec![(x, y)];
                seen[y * w + x] = true;
                while let Some((px, py)) = stack.pop() {
                    let nbrs = [(px.wrapping_sub(1), py), (px + 1, py), (px, py.wrapping_sub(1)), (px, py + 1)];
                    for (nx, ny) in nbrs {
                        if nx < w && ny < h && !seen[ny * w + nx] && img.get(nx, ny) == pal.droplet {
                            seen[ny * w + nx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
        assert_eq!(regions, 1);
    }
}
