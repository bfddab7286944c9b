use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::model::Model;
use crate::adam::adam_step;
use crate::autograd::Graph;
use crate::data::synth::derive_seed;
use crate::data::{make_batch, ClassColormap, Sample};
use crate::error::{Error, Result};
use crate::metrics::{metrics_from_confusion, ConfusionMatrix, LossReport, MetricsReport};

const SHUFFLE_SALT: u64 = 0x5348_5546;

/// Relative tolerance of the per-epoch check that the logged total equals
/// the sum of the logged terms.
pub const AUDIT_TOL: f64 = 1e-5;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Pixel-weighted epoch means of each loss term.
    pub terms: Vec<(String, f64)>,
    pub total: f64,
    pub val_miou: Option<f64>,
    /// Ensemble weights after the epoch (empty for the baseline).
    pub weights: Vec<f64>,
    pub bias: Option<f64>,
    /// Whether this epoch became the retained checkpoint.
    pub best: bool,
}

impl EpochRecord {
    /// `key=value` pairs separated by spaces.
    pub fn to_kv(&self) -> String {
        let mut s = format!("epoch={}", self.epoch);
        for (k, v) in &self.terms {
            let _ = write!(s, " {k}={v}");
        }
        let _ = write!(s, " total={}", self.total);
        match self.val_miou {
            Some(m) => {
                let _ = write!(s, " val_miou={m}");
            }
            None => s.push_str(" val_miou=nan"),
        }
        if !self.weights.is_empty() {
            let w: Vec<String> = self.weights.iter().map(f64::to_string).collect();
            let _ = write!(s, " w={}", w.join(","));
        }
        if let Some(b) = self.bias {
            let _ = write!(s, " bias={b}");
        }
        let _ = write!(s, " best={}", self.best);
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Highest validation mIoU (the last epoch when there is no validation set).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochRecord>,
}

fn check_data(state: &Checkpoint, samples: &[Sample], indices: &[usize]) -> Result<()> {
    let cfg = &state.config;
    if cfg.unet1.in_channels != 1 {
        return Err(Error::InvalidConfig(format!(
            "images are single-channel but unet1.in_channels = {}",
            cfg.unet1.in_channels
        )));
    }
    for &i in indices {
        let s = samples.get(i).ok_or_else(|| {
            Error::Dataset(format!(
                "sample index {i} out of range ({} samples)",
                samples.len()
            ))
        })?;
        cfg.unet1.check_input(s.labels.height(), s.labels.width())?;
        if cfg.model == super::config::ModelKind::Pipeline {
            cfg.unet2.check_input(s.labels.height(), s.labels.width())?;
        }
        s.labels.check_range(cfg.num_classes())?;
    }
    Ok(())
}

/// One pass over `train`, in a seeded order when `deterministic` is set and
/// an entropy-seeded one otherwise. Returns pixel-weighted means of
/// the loss terms.
pub fn train_epoch(
    state: &mut Checkpoint,
    samples: &[Sample],
    train: &[usize],
) -> Result<LossReport> {
    let epoch = state.epoch + 1;
    let cfg = state.config.clone();
    let mut order = train.to_vec();
    let order_seed = if cfg.deterministic {
        derive_seed(cfg.seed ^ SHUFFLE_SALT, epoch)
    } else {
        rand::random()
    };
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));

    let mut sums: Vec<(String, f64)> = Vec::new();
    let mut total = 0.0;
    let mut weight = 0usize;
    for (step, chunk) in order.chunks(cfg.batch).enumerate() {
        let (x, target) = make_batch(samples, chunk)?;
        let mut g = Graph::<f32>::new();
        let xv = g.leaf(x);
        let (loss, binding) = state
            .model
            .record_loss(&mut g, xv, &target, cfg.ensemble_mode)?;
        let report = loss.report(&g);
        if !report.total.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch as usize,
                step: step + 1,
                what: "loss".into(),
                value: report.total,
            });
        }
        g.backward(loss.total)?;
        state.model.collect_grads(&mut g, &binding)?;
        drop(g);
        for name in state.optimizer.keys() {
            let t = state
                .model
                .tensor_mut(name)
                .expect("optimizer names come from the model");
            if let Some(bad) = t
                .grad
                .as_deref()
                .and_then(|gr| gr.iter().find(|v| !v.is_finite()))
            {
                let value = f64::from(*bad);
                return Err(Error::Diverged {
                    epoch: epoch as usize,
                    step: step + 1,
                    what: format!("{name} gradient"),
                    value,
                });
            }
        }
        for (name, st) in state.optimizer.iter_mut() {
            let t = state
                .model
                .tensor_mut(name)
                .expect("optimizer names come from the model");
            adam_step(t, st)?;
            t.grad = None;
        }

        let n = chunk.len();
        if sums.is_empty() {
            sums = report.terms.iter().map(|(k, _)| (k.clone(), 0.0)).collect();
        }
        for ((_, acc), (_, v)) in sums.iter_mut().zip(&report.terms) {
            *acc += v * n as f64;
        }
        total += report.total * n as f64;
        weight += n;
    }
    let w = weight.max(1) as f64;
    state.epoch = epoch;
    Ok(LossReport {
        terms: sums.into_iter().map(|(k, v)| (k, v / w)).collect(),
        total: total / w,
    })
}

/// Rejects a dataset whose colormap declares a different class count than
/// the model predicts.
pub fn check_classes(model_classes: usize, cmap: &ClassColormap) -> Result<()> {
    if cmap.num_classes() != model_classes {
        return Err(Error::InvalidConfig(format!(
            "class mismatch: model predicts {model_classes} classes, dataset colormap declares {}",
            cmap.num_classes()
        )));
    }
    Ok(())
}

/// Confusion counts of the model's predictions on `indices`.
pub fn evaluate_confusion(
    model: &Model,
    samples: &[Sample],
    indices: &[usize],
    batch: usize,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.num_classes());
    for chunk in indices.chunks(batch.max(1)) {
        let (x, target) = make_batch(samples, chunk)?;
        target.check_range(model.num_classes())?;
        cm.accumulate(&model.predict_logits(&x)?, &target)?;
    }
    Ok(cm)
}

pub fn evaluate(
    model: &Model,
    samples: &[Sample],
    indices: &[usize],
    batch: usize,
) -> Result<MetricsReport> {
    metrics_from_confusion(&evaluate_confusion(model, samples, indices, batch)?)
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(
    cfg: &super::config::TrainConfig,
    samples: &[Sample],
    train: &[usize],
    val: &[usize],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    resume(Checkpoint::init(cfg)?, samples, train, val, on_epoch)
}

/// Continues `start` until `start.config.epochs` epochs are complete.
pub fn resume(
    start: Checkpoint,
    samples: &[Sample],
    train: &[usize],
    val: &[usize],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    check_data(&start, samples, train)?;
    check_data(&start, samples, val)?;
    let mut state = start;
    let mut best = state.clone();
    let mut log = Vec::new();
    while state.epoch < state.config.epochs as u64 {
        let report = train_epoch(&mut state, samples, train)?;
        if !report.is_consistent(AUDIT_TOL) {
            return Err(Error::Audit(format!(
                "epoch {}: total {} vs sum of terms {}",
                state.epoch,
                report.total,
                report.term_sum()
            )));
        }
        let val_miou = if val.is_empty() {
            None
        } else {
            Some(evaluate(&state.model, samples, val, state.config.batch)?.miou)
        };
        let improved = match (val_miou, state.best_val_miou) {
            (None, _) => true,
            (Some(m), None) => !m.is_nan(),
            (Some(m), Some(b)) => m > b,
        };
        if improved {
            state.best_val_miou = val_miou;
            best = state.clone();
        }
        let ens = state.model.ensemble();
        let rec = EpochRecord {
            epoch: state.epoch,
            terms: report.terms,
            total: report.total,
            val_miou,
            weights: ens
                .map(|e| e.weights().iter().map(|&w| w as f64).collect())
                .unwrap_or_default(),
            bias: ens.map(|e| e.bias_value() as f64),
            best: improved,
        };
        log::info!("{}", rec.to_kv());
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(TrainOutcome {
        best,
        last: state,
        log,
    })
}
