//! Learned preprocessing: the first network's penultimate maps become C
//! nonnegative translation filters, each added to the input image to give one
//! class-emphasizing image. A single shared second network segments every
//! translated image, and the S = C + 1 outputs are mixed by the ensemble.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::ensemble::EnsembleWeights;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::unet::{unet_forward, BoundParams, UNet, UNetConfig};

/// Where the sigmoid normalization sits relative to the filter addition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmoidOn {
    /// `sigmoid(input + filter)`
    #[default]
    Sum,
    /// `clamp01(input + sigmoid(filter))`
    Filter,
}

impl fmt::Display for SigmoidOn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SigmoidOn::Sum => "sum",
            SigmoidOn::Filter => "filter",
        })
    }
}

impl FromStr for SigmoidOn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(SigmoidOn::Sum),
            "filter" => Ok(SigmoidOn::Filter),
            _ => Err(Error::Config(format!(
                "sigmoid_on must be sum|filter, got {s:?}"
            ))),
        }
    }
}

/// Tensors produced by one pipeline forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutputs<T: Scalar = f32> {
    pub logits1: Tensor<T>,
    pub filters: Tensor<T>,
    pub translated: Vec<Tensor<T>>,
    pub logits2: Vec<Tensor<T>>,
    pub ensemble_logits: Tensor<T>,
}

impl<T: Scalar> PipelineOutputs<T> {
    /// Outputs entering the ensemble: first network, then second network in
    /// class order.
    pub fn segmentation_outputs(&self) -> Vec<&Tensor<T>> {
        std::iter::once(&self.logits1)
            .chain(&self.logits2)
            .collect()
    }
}

/// Graph handles mirroring [`PipelineOutputs`].
#[derive(Clone, Debug)]
pub struct PipelineVars {
    pub logits1: Var,
    pub filters: Var,
    pub translated: Vec<Var>,
    pub logits2: Vec<Var>,
    pub stacked: Var,
    pub ensemble_logits: Var,
}

impl PipelineVars {
    pub fn outputs<T: Scalar>(&self, g: &Graph<T>) -> PipelineOutputs<T> {
        PipelineOutputs {
            logits1: g.value(self.logits1).clone(),
            filters: g.value(self.filters).clone(),
            translated: self
                .translated
                .iter()
                .map(|v| g.value(*v).clone())
                .collect(),
            logits2: self.logits2.iter().map(|v| g.value(*v).clone()).collect(),
            ensemble_logits: g.value(self.ensemble_logits).clone(),
        }
    }
}

fn check_filters<T: Scalar>(filters: &Tensor<T>) -> Result<()> {
    match filters
        .data()
        .iter()
        .position(|v| *v < T::zero() || v.is_nan())
    {
        None => Ok(()),
        Some(index) => Err(Error::NegativeFilter {
            index,
            value: filters.data()[index].as_f64(),
        }),
    }
}

/// Records the C translated images `[B,1,H,W]`.
pub fn make_translated_graph<T: Scalar>(
    g: &mut Graph<T>,
    input: Var,
    filters: Var,
    mode: SigmoidOn,
) -> Result<Vec<Var>> {
    let [bi, ci, hi, wi] = g.value(input).dims4("make_translated")?;
    let [bf, cf, hf, wf] = g.value(filters).dims4("make_translated")?;
    if ci != 1 || (bi, hi, wi) != (bf, hf, wf) {
        return Err(shape_err(
            "make_translated",
            format!("input [{bi},{ci},{hi},{wi}] vs filters [{bf},{cf},{hf},{wf}]"),
        ));
    }
    check_filters(g.value(filters))?;
    (0..cf)
        .map(|c| {
            let f = g.slice_channel(filters, c)?;
            Ok(match mode {
                SigmoidOn::Sum => {
                    let s = g.add(input, f)?;
                    g.sigmoid(s)
                }
                SigmoidOn::Filter => {
                    let sf = g.sigmoid(f);
                    let s = g.add(input, sf)?;
                    g.clamp01(s)
                }
            })
        })
        .collect()
}

/// Value-level [`make_translated_graph`].
pub fn make_translated<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    mode: SigmoidOn,
) -> Result<Vec<Tensor<T>>> {
    let mut g = Graph::new();
    let i = g.leaf(input.clone());
    let f = g.leaf(filters.clone());
    let vars = make_translated_graph(&mut g, i, f, mode)?;
    Ok(vars.into_iter().map(|v| g.value(v).clone()).collect())
}

/// Records the full two-network forward pass.
///
/// `net2` sees every translated image in a single pass, stacked along the
/// batch axis, so each image is segmented with the same parameters.
#[allow(clippy::too_many_arguments)]
pub fn pipeline_forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    cfg1: &UNetConfig,
    net1: &BoundParams,
    cfg2: &UNetConfig,
    net2: &BoundParams,
    ensemble: (Var, Var),
    x: Var,
    mode: SigmoidOn,
) -> Result<PipelineVars> {
    if cfg1.num_classes != cfg2.num_classes {
        return Err(Error::InvalidConfig(format!(
            "class count mismatch: first network {} vs second network {}",
            cfg1.num_classes, cfg2.num_classes
        )));
    }
    if cfg2.in_channels != 1 {
        return Err(Error::InvalidConfig(
            "second network must take 1-channel translated images".into(),
        ));
    }
    let (logits1, filters) = unet_forward(g, cfg1, net1, x)?;
    let translated = make_translated_graph(g, x, filters, mode)?;
    let batch = g.value(x).shape()[0];
    let all = g.cat_batch(&translated)?;
    let (all_logits, _) = unet_forward(g, cfg2, net2, all)?;
    let logits2 = (0..translated.len())
        .map(|c| g.slice_batch(all_logits, c * batch, batch))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Var> = std::iter::once(logits1)
        .chain(logits2.iter().copied())
        .collect();
    let stacked = g.stack(&outputs)?;
    let ensemble_logits = g.ensemble_mix(stacked, ensemble.0, ensemble.1)?;
    Ok(PipelineVars {
        logits1,
        filters,
        translated,
        logits2,
        stacked,
        ensemble_logits,
    })
}

/// Both networks, the ensemble weights, and the sigmoid placement.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline<T: Scalar = f32> {
    pub net1: UNet<T>,
    pub net2: UNet<T>,
    pub ensemble: EnsembleWeights<T>,
    pub sigmoid_on: SigmoidOn,
}

impl<T: Scalar> Pipeline<T> {
    pub fn new(
        net1: UNet<T>,
        net2: UNet<T>,
        ensemble: EnsembleWeights<T>,
        sigmoid_on: SigmoidOn,
    ) -> Result<Self> {
        let s = net1.config.num_classes + 1;
        if ensemble.len() != s {
            return Err(Error::InvalidConfig(format!(
                "ensemble has {} weights, pipeline produces {s} outputs",
                ensemble.len()
            )));
        }
        Ok(Pipeline {
            net1,
            net2,
            ensemble,
            sigmoid_on,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.net1.config.num_classes
    }

    /// Records the pipeline with parameters bound as leaves.
    pub fn record(
        &self,
        g: &mut Graph<T>,
        x: Var,
        requires_grad: bool,
    ) -> Result<(PipelineVars, PipelineBinding)> {
        let b1 = self.net1.params.bind(g, requires_grad);
        let b2 = self.net2.params.bind(g, requires_grad);
        let ens = if requires_grad {
            self.ensemble.bind(g)
        } else {
            self.ensemble.clone().frozen().bind(g)
        };
        let vars = pipeline_forward_graph(
            g,
            &self.net1.config,
            &b1,
            &self.net2.config,
            &b2,
            ens,
            x,
            self.sigmoid_on,
        )?;
        Ok((
            vars,
            PipelineBinding {
                net1: b1,
                net2: b2,
                ensemble: ens,
            },
        ))
    }

    /// Inference-only forward pass.
    pub fn forward(&self, x: &Tensor<T>) -> Result<PipelineOutputs<T>> {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let (vars, _) = self.record(&mut g, xv, false)?;
        Ok(vars.outputs(&g))
    }
}

/// Graph handles of a recorded pipeline's parameters.
#[derive(Clone, Debug)]
pub struct PipelineBinding {
    pub net1: BoundParams,
    pub net2: BoundParams,
    pub ensemble: (Var, Var),
}

impl<T: Scalar> EnsembleWeights<T> {
    fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }
}

/// Value-level pipeline forward pass.
pub fn pipeline_forward<T: Scalar>(
    net1: &UNet<T>,
    net2: &UNet<T>,
    ens: &EnsembleWeights<T>,
    x: &Tensor<T>,
    mode: SigmoidOn,
) -> Result<PipelineOutputs<T>> {
    let mut g = Graph::new();
    let b1 = net1.params.bind(&mut g, false);
    let b2 = net2.params.bind(&mut g, false);
    let e = ens.clone().frozen().bind(&mut g);
    let xv = g.leaf(x.clone());
    let vars = pipeline_forward_graph(&mut g, &net1.config, &b1, &net2.config, &b2, e, xv, mode)?;
    Ok(vars.outputs(&g))
}
