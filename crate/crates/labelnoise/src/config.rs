//! TOML experiment configuration.
//!
//! ```toml
//! mode = "full"                  # full | ablate_policy | ce_baseline | coteaching_baseline | semi
//! dataset = "data/fmnist/train/manifest.json"
//! test_dataset = "data/fmnist/test/manifest.json"
//! out_dir = "runs/fmnist-idn40"
//! perturbation_gamma = 0.5       # optional
//!
//! [noise]                        # optional; without it the stored noisy labels are used
//! kind = "IDN"
//! rate = 0.4
//! seed = 1
//!
//! [train]                        # required unless mode = "semi"
//! epochs = 30
//! schedule = { noise_rate_estimate = 0.4 }
//!
//! [semi_split]                   # mode = "semi": clean fraction of the training set
//! train_fraction = 0.2
//! seed = 0
//!
//! [semi]                         # mode = "semi"
//! preset = "cifar10n"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! The top-level `mode` overrides `train.mode`. With perturbation enabled the
//! policy-gradient weight is set to its perturbation value.

use std::fs;
use std::path::{Path, PathBuf};

use labelnoise_core::data::SplitSpec;
use labelnoise_core::losses::LossWeights;
use labelnoise_core::noise::NoiseSpec;
use labelnoise_core::semi::SemiConfig;
use labelnoise_core::train::{TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    AblatePolicy,
    CeBaseline,
    CoteachingBaseline,
    Semi,
}

impl Mode {
    pub fn train_mode(self) -> Option<TrainMode> {
        match self {
            Mode::Full => Some(TrainMode::Full),
            Mode::AblatePolicy => Some(TrainMode::AblatePolicy),
            Mode::CeBaseline => Some(TrainMode::CeBaseline),
            Mode::CoteachingBaseline => Some(TrainMode::CoteachingBaseline),
            Mode::Semi => None,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Mode::Full,
            "ablate_policy" => Mode::AblatePolicy,
            "ce_baseline" => Mode::CeBaseline,
            "coteaching_baseline" => Mode::CoteachingBaseline,
            "semi" => Mode::Semi,
            other => return Err(Error::Config(format!("unknown mode `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semi_split: Option<SplitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semi: Option<SemiConfig>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub mode: Option<Mode>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| Error::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads, resolves relative paths, applies overrides and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.out_dir);
        if let Some(t) = &mut self.test_dataset {
            fix(t);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(s) = o.seed {
            if let Some(t) = &mut self.train {
                t.seed = s;
            }
            if let Some(c) = &mut self.semi {
                c.seed = s;
            }
        }
    }

    /// Training configuration as run: mode from the top level and the
    /// perturbation weight when instances are perturbed.
    pub fn effective_train(&self) -> Result<TrainConfig> {
        let mode = self
            .mode
            .train_mode()
            .ok_or_else(|| Error::Config("mode `semi` has no [train] run".into()))?;
        let mut t = self
            .train
            .clone()
            .ok_or_else(|| Error::Config(format!("mode `{mode:?}` requires a [train] section")))?;
        t.mode = mode;
        if self.perturbed() {
            t.weights.alpha2 = LossWeights::perturbed().alpha2;
        }
        Ok(t)
    }

    pub fn perturbed(&self) -> bool {
        self.perturbation_gamma.is_some_and(|g| g > 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.exists() {
            return Err(Error::MissingFile {
                path: self.dataset.clone(),
            });
        }
        if let Some(t) = &self.test_dataset {
            if !t.exists() {
                return Err(Error::MissingFile { path: t.clone() });
            }
        }
        if let Some(g) = self.perturbation_gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::Config(format!(
                    "perturbation_gamma {g} must be finite and non-negative"
                )));
            }
        }
        if self.mode == Mode::Semi {
            let semi = self
                .semi
                .as_ref()
                .ok_or_else(|| Error::Config("mode `semi` requires a [semi] section".into()))?;
            semi.validate()?;
            if self.semi_split.is_none() {
                return Err(Error::Config("mode `semi` requires a [semi_split] section".into()));
            }
        } else {
            self.effective_train()?.validate()?;
        }
        Ok(())
    }
}
