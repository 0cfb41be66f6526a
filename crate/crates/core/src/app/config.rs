//! TOML run configuration.
//!
//! ```toml
//! [train]
//! epochs = 200
//! crop_size = 64          # or "full"
//!
//! [loss]
//! alpha = 0.9
//! beta = 0.99
//! msssim_scales = 3
//!
//! [net]
//! depth = 3
//! base_width = 8
//!
//! [dehaze]
//! omega = 0.95
//! ```
//!
//! Every table and key is optional; missing values take their defaults.

use std::path::Path;

use crate::contrast::DehazeParams;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::net::NetSpec;
use crate::raw::Cfa;
use crate::train::TrainConfig;

/// Network size; channel counts and upsampling follow from the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetOptions {
    /// Expected packed channels; checked against the data when set.
    pub in_channels: Option<usize>,
    pub depth: usize,
    pub base_width: usize,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self {
            in_channels: None,
            depth: 5,
            base_width: 32,
        }
    }
}

impl NetOptions {
    pub fn spec_for(&self, cfa: &Cfa) -> NetSpec {
        NetSpec {
            depth: self.depth,
            base_width: self.base_width,
            ..NetSpec::full(cfa)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub net: NetOptions,
    pub dehaze: DehazeParams,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::arg(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::arg(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.dehaze.validate()
    }

    /// The trainer's view: `[train]` with `[loss]` folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss.clone(),
            ..self.train.clone()
        }
    }
}
