//! Experiment configuration: a flat `key: value` text format with typed
//! validation, a canonical writer, and defaults for every field.
//!
//! The writer emits keys in one fixed order with shortest round-trip float
//! formatting, so write -> read -> write is byte-identical.

use std::path::Path;

use crate::backbone::SceneSpec;
use crate::error::{Error, Result};
use crate::pyramid::{FpnConfig, PyramidKind};

/// Everything a CLI run needs: builder choice, pyramid geometry, scene
/// recipe, and training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub builder: PyramidKind,
    pub min_level: usize,
    pub max_level: usize,
    pub channels: usize,
    pub backbone_channels: Vec<usize>,
    pub extra_levels: usize,
    pub image_size: usize,
    pub image_channels: usize,
    pub blobs_small: usize,
    pub blobs_medium: usize,
    pub blobs_large: usize,
    pub noise: f64,
    pub lr: f64,
    pub epochs: usize,
    pub scenes: usize,
    pub seed: u64,
    pub out: String,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            builder: PyramidKind::Mfpn,
            min_level: 2,
            max_level: 5,
            channels: 256,
            backbone_channels: vec![256, 512, 1024, 2048],
            extra_levels: 0,
            image_size: 128,
            image_channels: 1,
            blobs_small: 2,
            blobs_medium: 2,
            blobs_large: 1,
            noise: 0.0,
            lr: 0.05,
            epochs: 1,
            scenes: 500,
            seed: 0,
            out: "out".to_string(),
        }
    }
}

impl ExperimentConfig {
    /// Parse the flat text format. Missing keys keep their defaults; unknown
    /// and duplicate keys are errors carrying the line number.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| {
                Error::Config(format!("line {lineno}: expected `key: value`, got {line:?}"))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {lineno}: duplicate key {key:?}")));
            }
            seen.push(key.to_string());
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "builder" => self.builder = value.parse()?,
            "levels" => {
                let (a, b) = value.split_once("..").ok_or_else(|| {
                    Error::Config(format!("bad value {value:?} for levels (want LO..HI)"))
                })?;
                self.min_level = num("levels", a.trim())?;
                self.max_level = num("levels", b.trim())?;
            }
            "channels" => self.channels = num(key, value)?,
            "backbone_channels" => {
                self.backbone_channels = value
                    .split(',')
                    .map(|v| num(key, v.trim()))
                    .collect::<Result<_>>()?;
            }
            "extra_levels" => self.extra_levels = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "image_channels" => self.image_channels = num(key, value)?,
            "blobs.small" => self.blobs_small = num(key, value)?,
            "blobs.medium" => self.blobs_medium = num(key, value)?,
            "blobs.large" => self.blobs_large = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "scenes" => self.scenes = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = value.to_string(),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.fpn_config()?;
        if self.image_size != 128 && self.image_size != 256 {
            return Err(Error::Config(format!(
                "image_size must be 128 or 256, got {}",
                self.image_size
            )));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::Config(format!(
                "image_channels must be 1 or 3, got {}",
                self.image_channels
            )));
        }
        if self.blobs_small + self.blobs_medium + self.blobs_large == 0 {
            return Err(Error::Config("at least one blob is required".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.scenes == 0 {
            return Err(Error::Config(
                "epochs and scenes must be at least 1".into(),
            ));
        }
        if self.out.is_empty() {
            return Err(Error::Config("out must not be empty".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::parse(&text)
    }

    /// Canonical form: fixed key order, shortest round-trip numbers.
    pub fn to_text(&self) -> String {
        let bc = self
            .backbone_channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "builder: {}\n\
             levels: {}..{}\n\
             channels: {}\n\
             backbone_channels: {}\n\
             extra_levels: {}\n\
             image_size: {}\n\
             image_channels: {}\n\
             blobs.small: {}\n\
             blobs.medium: {}\n\
             blobs.large: {}\n\
             noise: {}\n\
             lr: {}\n\
             epochs: {}\n\
             scenes: {}\n\
             seed: {}\n\
             out: {}\n",
            self.builder,
            self.min_level,
            self.max_level,
            self.channels,
            bc,
            self.extra_levels,
            self.image_size,
            self.image_channels,
            self.blobs_small,
            self.blobs_medium,
            self.blobs_large,
            self.noise,
            self.lr,
            self.epochs,
            self.scenes,
            self.seed,
            self.out,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn fpn_config(&self) -> Result<FpnConfig> {
        FpnConfig::new(
            self.min_level,
            self.max_level,
            self.channels,
            &self.backbone_channels,
            self.extra_levels,
        )
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            image_size: self.image_size,
            image_channels: self.image_channels,
            small: self.blobs_small,
            medium: self.blobs_medium,
            large: self.blobs_large,
            noise: self.noise,
            seed: self.seed,
        }
    }
}
