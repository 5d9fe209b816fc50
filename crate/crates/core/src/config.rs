//! Run configuration files.
//!
//! A run is described by one TOML document with a section per concern. Every
//! key has a default, so an empty file is a valid configuration; unknown keys
//! are rejected at every level.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! dir = "runs/data"
//!
//! [network]
//! base_width = 64
//! spin = "full"
//!
//! [train]
//! batch_size = 4
//!
//! [train.schedule]
//! lr = 0.01
//! steps = [50, 90, 110]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthOptions;
use crate::error::{Error, Result};
use crate::metrics::EvalOptions;
use crate::network::NetworkConfig;
use crate::spin::SpinVariant;
use crate::train::TrainConfig;

/// File name of the configuration copy kept in every run directory.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub ablate: AblateConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory with a manifest.
    pub dir: Option<PathBuf>,
}

/// Synthetic dataset generation, also used by the ablation harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub train_count: usize,
    pub val_count: usize,
    pub size: usize,
    pub buildings: bool,
    pub occluders: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_count: 64,
            val_count: 16,
            size: 64,
            buildings: true,
            occluders: false,
        }
    }
}

impl SynthConfig {
    pub fn options(&self) -> SynthOptions {
        SynthOptions {
            buildings: self.buildings,
            occluders: self.occluders,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub epochs: usize,
    pub variants: Vec<SpinVariant>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            epochs: 20,
            variants: SpinVariant::ALL.to_vec(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: None,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        let s = &self.synth;
        if s.size < 16 || s.size % 16 != 0 {
            return bad(format!("synth.size must be a positive multiple of 16, got {}", s.size));
        }
        if s.train_count == 0 {
            return bad("synth.train_count must be positive".into());
        }
        let e = &self.eval;
        if !(e.threshold > 0.0 && e.threshold <= 1.0) {
            return bad(format!("eval.threshold must lie in (0, 1], got {}", e.threshold));
        }
        if !(e.snap_radius >= 0.0) {
            return bad(format!("eval.snap_radius must be non-negative, got {}", e.snap_radius));
        }
        if let Some(t) = &e.tile {
            t.validate()?;
        }
        if self.ablate.epochs == 0 || self.ablate.variants.is_empty() {
            return bad("ablate needs at least one epoch and one variant".into());
        }
        Ok(())
    }
}
