use crate::error::{Error, Result};
use crate::network::{InitScheme, NetworkConfig};

use super::adam::AdamConfig;

/// Optimisation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the total-variation term.
    pub alpha: f64,
    pub seed: u64,
    /// Optimiser steps per epoch; one pass over the samples when `None`.
    pub steps_per_epoch: Option<usize>,
    /// High-resolution training patch side; whole cubes when `None`.
    pub patch_size: Option<usize>,
    pub patch_overlap: usize,
    /// Share of the training cubes held out for validation by the CLI.
    pub val_fraction: f64,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            lr_decay_factor: 10.0,
            lr_decay_epoch: 30,
            epochs: 40,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            alpha: 1e-3,
            seed: 0,
            steps_per_epoch: None,
            patch_size: None,
            patch_overlap: 0,
            val_fraction: 0.1,
            init: InitScheme::HeUniform,
        }
    }
}

impl TrainConfig {
    /// 200 steps of batch 8 on whole cubes, logged as 10 epochs of 20
    /// steps, starting from the bicubic-start initialisation.
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            steps_per_epoch: Some(20),
            init: InitScheme::BICUBIC_START,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr0", self.lr0),
            ("lr_decay_factor", self.lr_decay_factor),
            ("eps", self.eps),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("{k} must be positive, got {v}")));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::Config(
                "epochs, batch_size and steps_per_epoch must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` setting by field name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
        }
        let optional = |v: &str| -> Result<Option<usize>> {
            if v == "none" {
                Ok(None)
            } else {
                num(key, v).map(Some)
            }
        };
        match key {
            "lr0" | "lr" => self.lr0 = num(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = num(key, value)?,
            "lr_decay_epoch" => self.lr_decay_epoch = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "eps" => self.eps = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = optional(value)?,
            "patch_size" => self.patch_size = optional(value)?,
            "patch_overlap" => self.patch_overlap = num(key, value)?,
            "val_fraction" => self.val_fraction = num(key, value)?,
            "init" => {
                self.init = match value {
                    "he_uniform" => InitScheme::HeUniform,
                    "bicubic_start" => InitScheme::BICUBIC_START,
                    _ => {
                        return Err(Error::Config(format!(
                            "init: expected he_uniform or bicubic_start, got `{value}`"
                        )))
                    }
                }
            }
            "residual_gain" => {
                self.init = InitScheme::BicubicStart {
                    residual_gain: num(key, value)?,
                }
            }
            _ => return Err(Error::Config(format!("unknown training setting `{key}`"))),
        }
        Ok(())
    }
}

/// Step decay: `lr0` before the decay epoch, `lr0 / factor` from it on.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.lr_decay_epoch {
        cfg.lr0
    } else {
        cfg.lr0 / cfg.lr_decay_factor
    }
}

/// Network and optimisation settings read together.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// The desk presets for a cube with `bands` bands.
    pub fn desk(bands: usize) -> Self {
        Self {
            network: NetworkConfig::desk(bands),
            train: TrainConfig::desk(),
        }
    }

    /// Routes a setting to the training or network configuration.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.train.set(key, value) {
            Err(Error::Config(msg)) if msg.starts_with("unknown") => self.network.set(key, value),
            other => other,
        }
    }

    /// Applies every setting of a `key = value` text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_key_values(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{raw}`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_steps_once() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 1e-4);
        assert_eq!(lr_schedule(29, &cfg), 1e-4);
        assert!((lr_schedule(30, &cfg) - 1e-5).abs() < 1e-20);
        assert_eq!(lr_schedule(39, &cfg), lr_schedule(30, &cfg));
    }

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn key_value_text() {
        let text = "# desk run\nepochs = 3\n\nn_feats=8  # narrow\nscale = 2\n";
        let mut cfg = RunConfig::desk(16);
        cfg.apply_text(text).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.network.n_feats, 8);
        assert_eq!(cfg.network.scale, 2);
        assert!(cfg.apply_text("bogus = 1").is_err());
        assert!(cfg.apply_text("no equals sign").is_err());
        assert!(cfg.apply_text("epochs = many").is_err());
    }
}
