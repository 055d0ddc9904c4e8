//! Run configuration: one TOML document with a table per stage.
//!
//! Every table has defaults for all keys and rejects unknown keys. Errors carry
//! the dotted path of the offending key, e.g. `tracker.n_init`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datagen::{SyntheticTemplate, DEFAULT_TOTAL};
use crate::rng::derive_seed;
use crate::simulator::{NoiseModel, SceneConfig};
use crate::stitcher::StitchConfig;
use crate::tracker::TrackerConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config key `{key}`: {msg}")]
    Key { key: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// IoU needed for a detection to count as a true positive in AP.
    pub iou_threshold: f64,
    /// Center distance for matching trajectories; unset means the mean ground-truth box diagonal / 2.
    pub dist_threshold: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { iou_threshold: 0.5, dist_threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Write a PPM image per frame under `frames/`.
    pub render: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenConfig {
    pub total: usize,
    pub master_seed: u64,
    /// Directory holding `images/` and `labels/` of real annotated frames.
    pub real_pool: Option<PathBuf>,
    /// Produce only the all-synthetic directory; no real pool needed.
    pub synthetic_only: bool,
    pub synthetic: SyntheticTemplate,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            total: DEFAULT_TOTAL,
            master_seed: 2022,
            real_pool: None,
            synthetic_only: false,
            synthetic: SyntheticTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Droplets in the benchmark scene; replaces `scene.n_droplets`.
    pub n_droplets: usize,
    /// Frames in the benchmark scene; at least 100.
    pub n_frames: u32,
    /// Channel length of the benchmark scene; unset keeps `scene.channel_length`.
    pub channel_length: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { n_droplets: 50, n_frames: 120, channel_length: Some(1600.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub noise: NoiseModel,
    pub tracker: TrackerConfig,
    pub stitch: StitchConfig,
    pub metrics: MetricsConfig,
    pub simulate: SimulateConfig,
    pub datagen: DatagenConfig,
    pub bench: BenchConfig,
}

pub const MIN_BENCH_FRAMES: u32 = 100;

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.scene.validate().map_err(|e| inv(e.to_string()))?;
        self.noise.validate().map_err(|e| inv(e.to_string()))?;
        self.tracker.validate().map_err(|e| inv(e.to_string()))?;
        self.stitch.validate().map_err(inv)?;
        if !(self.metrics.iou_threshold > 0.0 && self.metrics.iou_threshold <= 1.0) {
            return Err(inv("metrics.iou_threshold must lie in (0, 1]".into()));
        }
        if let Some(d) = self.metrics.dist_threshold {
            if !(d.is_finite() && d > 0.0) {
                return Err(inv("metrics.dist_threshold must be positive".into()));
            }
        }
        self.datagen.synthetic.spec(0).validate().map_err(|e| inv(format!("datagen.synthetic: {e}")))?;
        if self.bench.n_frames < MIN_BENCH_FRAMES {
            return Err(inv(format!("bench.n_frames must be at least {MIN_BENCH_FRAMES}")));
        }
        self.bench_scene().validate().map_err(|e| inv(format!("bench: {e}")))?;
        Ok(())
    }

    /// Replaces every seed with one derived from `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.scene.seed = seed;
        self.noise.seed = derive_seed(seed, "noise", 0);
        self.datagen.master_seed = seed;
    }

    /// Scene used by the benchmark.
    pub fn bench_scene(&self) -> SceneConfig {
        let mut s = self.scene.clone();
        s.n_droplets = self.bench.n_droplets;
        s.n_frames = self.bench.n_frames;
        if let Some(len) = self.bench.channel_length {
            s.channel_length = len;
        }
        s
    }

    /// Effective configuration as TOML; loading it yields an identical config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses and validates a configuration document. Absent keys take defaults.
pub fn load_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let msg = e.inner().message().to_string();
        ConfigError::Key { key, msg }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(load_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn single_override() {
        let cfg = load_config("[tracker]\nn_init = 5\n").unwrap();
        let mut want = RunConfig::default();
        want.tracker.n_init = 5;
        assert_eq!(cfg, want);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = load_config("[tracker]\nn_inti = 5\n").unwrap_err().to_string();
        assert!(err.contains("n_inti"), "{err}");
        let err = load_config("[bogus]\nx = 1\n").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn type_mismatch_is_named() {
        let err = load_config("[tracker.kalman]\npos_std_factor = \"big\"\n").unwrap_err();
        match err {
            ConfigError::Key { key, .. } => assert_eq!(key, "tracker.kalman.pos_std_factor"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(load_config("[tracker]\nn_init = 0\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(load_config("[bench]\nn_frames = 50\n"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn echo_reloads_identically() {
        let mut cfg = RunConfig::default();
        cfg.metrics.dist_threshold = Some(7.25);
        cfg.stitch.max_link_dist = Some(1.0 / 3.0);
        cfg.datagen.real_pool = Some(PathBuf::from("pool dir/x"));
        cfg.override_seed(99);
        let text = cfg.to_toml();
        let back = load_config(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
        assert_eq!(load_config(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }

    #[test]
    fn seed_override_touches_every_seed() {
        let mut cfg = RunConfig::default();
        cfg.override_seed(5);
        assert_eq!(cfg.scene.seed, 5);
        assert_eq!(cfg.datagen.master_seed, 5);
        assert_ne!(cfg.noise.seed, NoiseModel::default().seed);
    }
}
