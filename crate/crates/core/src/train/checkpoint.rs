//! Versioned little-endian checkpoint files.
//!
//! ```text
//! magic      8 bytes  "CELLPREP"
//! version    u32
//! config     u32 length + UTF-8 TOML
//! epoch      u64      epochs completed
//! best_val   f64      best validation mIoU so far (NaN if none)
//! count      u32      number of tensors
//! table      count × { u32 name length, name, u8 flags, u32 ndim, ndim × u64 }
//! data       count × { numel × f32 values,
//!                      if flags & 1: u64 adam step, numel × f32 m, numel × f32 v }
//! ```

use std::path::Path;

use indexmap::IndexMap;

use super::config::TrainConfig;
use super::model::Model;
use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CELLPREP";
pub const FORMAT_VERSION: u32 = 1;
const HAS_OPTIMIZER: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: u64,
    pub best_val_miou: Option<f64>,
    pub model: Model,
    /// Adam state per trainable tensor, keyed by checkpoint name.
    pub optimizer: IndexMap<String, AdamState<f32>>,
}

impl Checkpoint {
    /// Fresh state for `cfg` at epoch 0.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        let model = Model::init(cfg)?;
        let optimizer = model
            .entries()
            .into_iter()
            .filter(|(_, _, trainable)| *trainable)
            .map(|(name, t, _)| (name, AdamState::new(t.shape(), cfg.adam())))
            .collect();
        Ok(Checkpoint {
            config: cfg.clone(),
            epoch: 0,
            best_val_miou: None,
            model,
            optimizer,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let cfg = self.config.to_toml();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.best_val_miou.unwrap_or(f64::NAN).to_le_bytes());
        let entries = self.model.entries();
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t, _) in &entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let flags = if self.optimizer.contains_key(name) {
                HAS_OPTIMIZER
            } else {
                0
            };
            out.push(flags);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        let put = |out: &mut Vec<u8>, t: &Tensor<f32>| {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, t, _) in &entries {
            put(&mut out, t);
            if let Some(st) = self.optimizer.get(name) {
                out.extend_from_slice(&st.step.to_le_bytes());
                put(&mut out, &st.m);
                put(&mut out, &st.v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let config = TrainConfig::from_toml(text)?;
        let epoch = r.u64()?;
        let best = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let mut ckpt = Checkpoint::init(&config)?;
        ckpt.epoch = epoch;
        ckpt.best_val_miou = (!best.is_nan()).then_some(best);

        let count = r.u32()? as usize;
        let expected: Vec<(String, Vec<usize>)> = ckpt
            .model
            .entries()
            .into_iter()
            .map(|(n, t, _)| (n, t.shape().to_vec()))
            .collect();
        if count != expected.len() {
            return Err(Error::Checkpoint(format!(
                "{count} tensors stored, model has {}",
                expected.len()
            )));
        }
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let flags = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            table.push((name, flags, shape));
        }
        for ((name, flags, shape), (ename, eshape)) in table.iter().zip(&expected) {
            if name != ename || shape != eshape {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} {shape:?} does not match model tensor {ename} {eshape:?}"
                )));
            }
            if (flags & HAS_OPTIMIZER != 0) != ckpt.optimizer.contains_key(name) {
                return Err(Error::Checkpoint(format!(
                    "optimizer state flag mismatch for {name}"
                )));
            }
        }
        for (name, _, shape) in table {
            let numel = shape.iter().product::<usize>();
            let values = r.f32s(numel)?;
            ckpt.model
                .tensor_mut(&name)
                .expect("name checked against model")
                .data_mut()
                .copy_from_slice(&values);
            if let Some(st) = ckpt.optimizer.get_mut(&name) {
                st.step = r.u64()?;
                st.m.data_mut().copy_from_slice(&r.f32s(numel)?);
                st.v.data_mut().copy_from_slice(&r.f32s(numel)?);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated: wanted {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::config::{EnsembleMode, ModelKind};
    use crate::unet::UNetConfig;

    fn small(mode: EnsembleMode, model: ModelKind) -> TrainConfig {
        let u = UNetConfig {
            in_channels: 1,
            num_classes: 3,
            depth: 1,
            base_width: 2,
        };
        TrainConfig {
            unet1: u,
            unet2: u,
            ensemble_mode: mode,
            model,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for (mode, kind) in [
            (EnsembleMode::Automated, ModelKind::Pipeline),
            (EnsembleMode::Fixed, ModelKind::Pipeline),
            (EnsembleMode::None, ModelKind::Pipeline),
            (EnsembleMode::Automated, ModelKind::Baseline),
        ] {
            let mut c = Checkpoint::init(&small(mode, kind)).unwrap();
            c.epoch = 7;
            c.best_val_miou = Some(0.625);
            for st in c.optimizer.values_mut() {
                st.step = 3;
                st.m.data_mut()
                    .iter_mut()
                    .enumerate()
                    .for_each(|(i, v)| *v = i as f32 * 0.5);
            }
            let a = c.to_bytes();
            let back = Checkpoint::from_bytes(&a).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes(), a);
        }
    }

    #[test]
    fn frozen_ensemble_has_no_optimizer_state() {
        let c = Checkpoint::init(&small(EnsembleMode::Fixed, ModelKind::Pipeline)).unwrap();
        assert!(!c.optimizer.contains_key("ensemble.w"));
        let c = Checkpoint::init(&small(EnsembleMode::Automated, ModelKind::Pipeline)).unwrap();
        assert!(c.optimizer.contains_key("ensemble.w"));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = Checkpoint::init(&small(EnsembleMode::Automated, ModelKind::Pipeline))
            .unwrap()
            .to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&magic),
            Err(Error::Checkpoint(_))
        ));
        let mut version = bytes;
        version[8] = 99;
        assert!(Checkpoint::from_bytes(&version).is_err());
    }
}
