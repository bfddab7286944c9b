use crate::autograd::{Graph, Var};
use crate::ensemble::{fixed_weights, EnsembleWeights};
use crate::error::{Error, Result};
use crate::metrics::{pipeline_loss, sum_terms, LossVars};
use crate::tensor::{LabelMap, Tensor};
use crate::translation::{Pipeline, PipelineBinding};
use crate::unet::{build_unet, unet_forward, BoundParams, UNet};

use super::config::{EnsembleMode, ModelKind, TrainConfig};

/// Seed offset between the two networks' initializations.
const NET2_SEED_OFFSET: u64 = 0x5151;

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Pipeline(Pipeline<f32>),
    Baseline(UNet<f32>),
}

/// Graph handles of a recorded training step.
pub enum Binding {
    Pipeline(PipelineBinding),
    Baseline(BoundParams),
}

pub fn initial_ensemble(mode: EnsembleMode, s: usize) -> Result<EnsembleWeights<f32>> {
    match mode {
        EnsembleMode::Automated => EnsembleWeights::automated(s),
        EnsembleMode::Fixed => fixed_weights(s),
        EnsembleMode::None => EnsembleWeights::second_network_mean(s),
    }
}

impl Model {
    pub fn init(cfg: &TrainConfig) -> Result<Model> {
        cfg.validate()?;
        let net1 = build_unet(cfg.unet1, cfg.seed)?;
        match cfg.model {
            ModelKind::Baseline => Ok(Model::Baseline(net1)),
            ModelKind::Pipeline => {
                let net2 = build_unet(cfg.unet2, cfg.seed.wrapping_add(NET2_SEED_OFFSET))?;
                let ens = initial_ensemble(cfg.ensemble_mode, cfg.num_classes() + 1)?;
                Ok(Model::Pipeline(Pipeline::new(
                    net1,
                    net2,
                    ens,
                    cfg.sigmoid_on,
                )?))
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Model::Pipeline(p) => p.num_classes(),
            Model::Baseline(n) => n.config.num_classes,
        }
    }

    pub fn ensemble(&self) -> Option<&EnsembleWeights<f32>> {
        match self {
            Model::Pipeline(p) => Some(&p.ensemble),
            Model::Baseline(_) => None,
        }
    }

    /// Logits the prediction is taken from: the ensemble output for the
    /// pipeline (with mode `none` its weights average the second network's
    /// outputs), the network output for the baseline.
    pub fn predict_logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            Model::Pipeline(p) => Ok(p.forward(x)?.ensemble_logits),
            Model::Baseline(n) => Ok(n.forward(x)?.0),
        }
    }

    /// Every stored tensor in a fixed order with its checkpoint name and
    /// whether the optimizer updates it.
    pub fn entries(&self) -> Vec<(String, &Tensor<f32>, bool)> {
        fn net<'a>(prefix: &str, n: &'a UNet<f32>, out: &mut Vec<(String, &'a Tensor<f32>, bool)>) {
            for (name, t) in n.params.iter() {
                out.push((format!("{prefix}.{name}"), t, true));
            }
        }
        let mut out = Vec::new();
        match self {
            Model::Baseline(n) => net("net1", n, &mut out),
            Model::Pipeline(p) => {
                net("net1", &p.net1, &mut out);
                net("net2", &p.net2, &mut out);
                out.push(("ensemble.w".into(), &p.ensemble.w, p.ensemble.trainable));
                out.push((
                    "ensemble.bias".into(),
                    &p.ensemble.bias,
                    p.ensemble.trainable,
                ));
            }
        }
        out
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        let (prefix, rest) = name.split_once('.')?;
        match (self, prefix) {
            (Model::Baseline(n), "net1") => n.params.get_mut(rest),
            (Model::Pipeline(p), "net1") => p.net1.params.get_mut(rest),
            (Model::Pipeline(p), "net2") => p.net2.params.get_mut(rest),
            (Model::Pipeline(p), "ensemble") => match rest {
                "w" => Some(&mut p.ensemble.w),
                "bias" => Some(&mut p.ensemble.bias),
                _ => None,
            },
            _ => None,
        }
    }

    /// Records the training objective on `g`. Mode `none` leaves out the
    /// ensemble term; the baseline has a single term.
    pub fn record_loss(
        &self,
        g: &mut Graph<f32>,
        x: Var,
        target: &LabelMap,
        mode: EnsembleMode,
    ) -> Result<(LossVars, Binding)> {
        match self {
            Model::Pipeline(p) => {
                let (vars, binding) = p.record(g, x, true)?;
                let loss = pipeline_loss(g, &vars, target, mode != EnsembleMode::None)?;
                Ok((loss, Binding::Pipeline(binding)))
            }
            Model::Baseline(n) => {
                let bound = n.params.bind(g, true);
                let (logits, _) = unet_forward(g, &n.config, &bound, x)?;
                let ce = g.softmax_ce(logits, target)?;
                Ok((sum_terms(g, vec![ce])?, Binding::Baseline(bound)))
            }
        }
    }

    /// Moves gradients from `g` into the parameters' grad buffers.
    pub fn collect_grads(&mut self, g: &mut Graph<f32>, binding: &Binding) -> Result<()> {
        match (self, binding) {
            (Model::Baseline(n), Binding::Baseline(b)) => n.params.collect_grads(g, b),
            (Model::Pipeline(p), Binding::Pipeline(b)) => {
                p.net1.params.collect_grads(g, &b.net1);
                p.net2.params.collect_grads(g, &b.net2);
                if p.ensemble.trainable {
                    p.ensemble.w.grad = g.take_grad(b.ensemble.0);
                    p.ensemble.bias.grad = g.take_grad(b.ensemble.1);
                }
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "binding does not match model".into(),
                ))
            }
        }
        Ok(())
    }
}
