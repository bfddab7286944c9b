use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::translation::SigmoidOn;
use crate::unet::UNetConfig;

/// How the S segmentation outputs are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    /// No ensemble term in the loss; predictions are the mean of the
    /// second network's logits.
    None,
    /// Frozen `w_i = 1`, bias 0.
    Fixed,
    /// Learned weights starting from `1/S`.
    #[default]
    Automated,
}

/// Which model a run trains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Both networks with translation filters and the ensemble.
    #[default]
    Pipeline,
    /// The first network alone on the raw image, one cross-entropy term.
    Baseline,
}

macro_rules! str_enum {
    ($ty:ty, $what:literal, $($variant:path => $s:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $s),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($variant),)+
                    _ => Err(Error::Config(format!(concat!($what, " must be one of {:?}, got {:?}"), [$($s),+], s))),
                }
            }
        }
    };
}

str_enum!(EnsembleMode, "ensemble_mode", EnsembleMode::None => "none", EnsembleMode::Fixed => "fixed", EnsembleMode::Automated => "automated");
str_enum!(ModelKind, "model", ModelKind::Pipeline => "pipeline", ModelKind::Baseline => "baseline");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub ensemble_mode: EnsembleMode,
    pub sigmoid_on: SigmoidOn,
    pub lr: f64,
    pub betas: [f64; 2],
    pub adam_epsilon: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Seeded batch order. When false the order is drawn from OS entropy
    /// each epoch, so repeated runs differ; initialization stays seeded.
    pub deterministic: bool,
    pub unet1: UNetConfig,
    pub unet2: UNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Pipeline,
            ensemble_mode: EnsembleMode::Automated,
            sigmoid_on: SigmoidOn::Sum,
            lr: 1e-3,
            betas: [0.9, 0.999],
            adam_epsilon: 1e-8,
            batch: 4,
            epochs: 50,
            seed: 0,
            deterministic: true,
            unet1: UNetConfig::default(),
            unet2: UNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.unet1.validate()?;
        if self.model == ModelKind::Pipeline {
            self.unet2.validate()?;
            if self.unet1.num_classes != self.unet2.num_classes {
                return bad(format!(
                    "unet1 has {} classes but unet2 has {}",
                    self.unet1.num_classes, self.unet2.num_classes
                ));
            }
            if self.unet2.in_channels != 1 {
                return bad(format!(
                    "unet2.in_channels must be 1, got {}",
                    self.unet2.in_channels
                ));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return bad(format!("betas must lie in [0,1), got {:?}", self.betas));
        }
        if !(self.adam_epsilon > 0.0) {
            return bad(format!(
                "adam_epsilon must be > 0, got {}",
                self.adam_epsilon
            ));
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.unet1.num_classes
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.betas[0],
            beta2: self.betas[1],
            epsilon: self.adam_epsilon,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.lr, c.betas, c.batch, c.epochs),
            (1e-3, [0.9, 0.999], 4, 50)
        );
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = TrainConfig {
            ensemble_mode: EnsembleMode::Fixed,
            seed: 9,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = TrainConfig::from_toml("epochs = 3\nensemble_mode = \"none\"\n[unet1]\nin_channels = 1\nnum_classes = 3\ndepth = 2\nbase_width = 4\n").unwrap();
        assert_eq!(p.epochs, 3);
        assert_eq!(p.ensemble_mode, EnsembleMode::None);
        assert_eq!(p.unet1.depth, 2);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
        assert!(TrainConfig::from_toml("ensemble_mode = \"maybe\"").is_err());
        let mut c = TrainConfig::default();
        c.unet2.num_classes = 4;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.unet2.in_channels = 3;
        assert!(c.validate().is_err());
        assert!(TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn enum_strings() {
        for m in [
            EnsembleMode::None,
            EnsembleMode::Fixed,
            EnsembleMode::Automated,
        ] {
            assert_eq!(m.to_string().parse::<EnsembleMode>().unwrap(), m);
        }
        assert_eq!(
            "baseline".parse::<ModelKind>().unwrap(),
            ModelKind::Baseline
        );
        assert!("x".parse::<ModelKind>().is_err());
    }
}
