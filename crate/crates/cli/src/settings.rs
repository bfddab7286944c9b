//! Config file loading and flag overrides.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use cellprep_core::{AblationConfig, SynthSpec, TrainConfig};

use crate::{Global, TrainFlags};

/// Contents of the `--config` file; every table is optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub ablation: AblationConfig,
}

impl Settings {
    /// Reads `--config` (defaults without it) and applies the global flags.
    pub fn load(global: &Global) -> Result<Settings> {
        let mut s = match &global.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => Settings::default(),
        };
        if let Some(seed) = global.seed {
            s.train.seed = seed;
            s.synth.seed = seed;
        }
        if let Some(d) = global.deterministic {
            s.train.deterministic = d;
        }
        Ok(s)
    }
}

impl TrainFlags {
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        macro_rules! set {
            ($($field:ident => $target:expr),+) => {
                $(if let Some(v) = self.$field { $target = v; })+
            };
        }
        set!(epochs => cfg.epochs, batch => cfg.batch, lr => cfg.lr, mode => cfg.ensemble_mode, model => cfg.model, sigmoid_on => cfg.sigmoid_on);
        for net in [&mut cfg.unet1, &mut cfg.unet2] {
            if let Some(d) = self.depth {
                net.depth = d;
            }
            if let Some(w) = self.width {
                net.base_width = w;
            }
        }
        cfg.validate()?;
        Ok(())
    }
}
