//! Pipeline configuration file.
//!
//! One JSON document drives every subcommand; sections are optional and
//! each command validates the fields it needs. Paths are resolved relative
//! to the config file's directory, and any path named in the config must
//! exist at load time (output directories are the exception; they are
//! created on demand).

use anyhow::{bail, Context, Result};
use egohoi_core::augment::AugmentConfig;
use egohoi_core::fusion::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelinePaths {
    pub cameras: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub cube: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Quadruple directory (pose HMAP + hand PGM + object PGM + manifest).
    pub frames_dir: Option<PathBuf>,
    pub backgrounds: Option<PathBuf>,
    /// Augmentation input manifest (images + joint labels).
    pub augment_manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: PipelinePaths,
    pub joint_count: usize,
    /// Gate expressed as allowed RMS pixel error per visible observation.
    pub gate_rms_px: f64,
    /// Crop side in pixels around the located hand keypoint.
    pub crop_side: u32,
    pub fps: f64,
    pub decision_threshold: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PipelinePaths::default(),
            joint_count: egohoi_core::pose3d::DEFAULT_JOINT_COUNT,
            gate_rms_px: egohoi_core::pose3d::DEFAULT_GATE_RMS_PX,
            crop_side: 256,
            fps: 30.0,
            decision_threshold: egohoi_core::fusion::DEFAULT_DECISION_THRESHOLD,
            seed: 0,
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Load, resolve paths against the config directory, and verify every
    /// referenced input path exists.
    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: PipelineConfig = serde_json::from_slice(&data)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&inner);
                }
            }
        };
        let paths = &mut config.paths;
        for p in [
            &mut paths.cameras,
            &mut paths.detections,
            &mut paths.cube,
            &mut paths.model,
            &mut paths.frames_dir,
            &mut paths.backgrounds,
            &mut paths.augment_manifest,
            &mut paths.out_dir,
        ] {
            resolve(p);
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.joint_count == 0 {
            bail!("joint_count must be positive");
        }
        if !self.fps.is_finite() || self.fps <= 0.0 {
            bail!("fps must be positive");
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            bail!("decision_threshold must lie in [0, 1]");
        }
        if self.gate_rms_px < 0.0 {
            bail!("gate_rms_px must be non-negative");
        }
        if self.crop_side == 0 {
            bail!("crop_side must be positive");
        }
        let inputs = [
            ("cameras", &self.paths.cameras),
            ("detections", &self.paths.detections),
            ("cube", &self.paths.cube),
            ("model", &self.paths.model),
            ("frames_dir", &self.paths.frames_dir),
            ("backgrounds", &self.paths.backgrounds),
            ("augment_manifest", &self.paths.augment_manifest),
        ];
        for (name, path) in inputs {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("config path `{name}` does not exist: {}", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn require<'a>(&'a self, name: &str, path: &'a Option<PathBuf>) -> Result<&'a Path> {
        path.as_deref()
            .with_context(|| format!("config is missing required path `{name}`"))
    }
}
