use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SynthConfig;
use crate::density::{GmmConfig, Reduction};
use crate::error::{Error, Result};
use crate::preprocessing::{SamplingConfig, GRID};
use crate::rcae::{Architecture, TrainConfig};
use crate::spotting::SpotRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small blocks and filter counts that run end to end on one CPU core
    /// in minutes.
    Desk,
    /// Full-size blocks and filter counts.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotConfig {
    /// Min–max normalize each clip's curves to `[0, 1]`.
    pub normalize: bool,
    pub rule: SpotRule,
    /// Held-out normal clips scored to calibrate the no-event rule.
    pub calibration_clips: usize,
}

impl Default for SpotConfig {
    fn default() -> Self {
        Self {
            normalize: true,
            rule: SpotRule::default(),
            calibration_clips: 6,
        }
    }
}

/// Everything a run needs besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub arch: Architecture,
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    pub gmm: GmmConfig,
    pub spot: SpotConfig,
    pub synth: SynthConfig,
}

impl Config {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => {
                let arch = Architecture::desk();
                Self {
                    synth: SynthConfig {
                        frame_side: GRID * arch.block,
                        ..SynthConfig::default()
                    },
                    arch,
                    sampling: SamplingConfig::default(),
                    train: TrainConfig {
                        instances_per_epoch: Some(320),
                        ..TrainConfig::default()
                    },
                    gmm: GmmConfig::default(),
                    spot: SpotConfig::default(),
                }
            }
            Profile::Paper => {
                let arch = Architecture::paper();
                Self {
                    synth: SynthConfig {
                        frame_side: GRID * arch.block,
                        ..SynthConfig::default()
                    },
                    arch,
                    sampling: SamplingConfig::default(),
                    train: TrainConfig::default(),
                    gmm: GmmConfig {
                        reduction: Reduction::None,
                        ..GmmConfig::default()
                    },
                    spot: SpotConfig::default(),
                }
            }
        }
    }

    /// Applies a TOML document on top of `self`; keys it omits keep their
    /// current values.
    pub fn merge_toml(&self, text: &str) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overrides);
        let cfg: Config = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Profile defaults, overridden by the file at `path` when given.
    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        let base = Self::profile(profile);
        match path {
            None => Ok(base),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
                base.merge_toml(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.synth.validate()?;
        if self.sampling.window != self.arch.time_steps {
            return Err(Error::Config(format!(
                "sampling window {} differs from the model's {} time steps",
                self.sampling.window, self.arch.time_steps
            )));
        }
        if self.synth.frame_side != GRID * self.arch.block {
            return Err(Error::Config(format!(
                "synthetic frames of side {} do not split into {GRID}x{GRID} blocks of {}",
                self.synth.frame_side, self.arch.block
            )));
        }
        if self.gmm.components == 0 {
            return Err(Error::Config("mixtures need at least one component".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_consistent() {
        for p in [Profile::Desk, Profile::Paper] {
            Config::profile(p).validate().unwrap();
        }
        assert_eq!(Config::profile(Profile::Paper).arch.latent_dim(), 4608);
    }

    #[test]
    fn toml_overrides_only_named_keys() {
        let base = Config::profile(Profile::Desk);
        let cfg = base
            .merge_toml("[train]\nepochs = 3\n[gmm]\ncomponents = 2\nreduction = \"none\"\n")
            .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, base.train.batch_size);
        assert_eq!(cfg.gmm.components, 2);
        assert_eq!(cfg.gmm.reduction, Reduction::None);
        assert_eq!(cfg.arch, base.arch);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        let base = Config::profile(Profile::Desk);
        assert!(matches!(base.merge_toml("[train\n"), Err(Error::Config(_))));
        assert!(matches!(base.merge_toml("[arch]\nblock = 16\n"), Err(Error::Config(_))));
        assert!(matches!(base.merge_toml("[train]\nepochs = \"x\"\n"), Err(Error::Config(_))));
    }
}
