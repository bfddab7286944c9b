//! Same-padded U-Net used for both networks of the pipeline.
//!
//! Layout for `depth = D`, `base_width = w`:
//!
//! ```text
//! enc{l}  (l < D): conv3x3 → relu → conv3x3 → relu, width w·2^l, then maxpool2
//! mid            : conv3x3 → relu → conv3x3 → relu, width w·2^D
//! dec{l}  (l < D): upsample2 → concat(enc{l} skip) → conv3x3 → relu → conv3x3 → relu, width w·2^l
//! head           : conv3x3 (w→w) → relu → conv1x1 (w→C) → relu   = penultimate map
//!                  conv1x1 (C→C)                                  = logits
//! ```
//!
//! The penultimate map has exactly `num_classes` channels and is nonnegative,
//! which is what lets it act as a per-class translation filter.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub depth: usize,
    pub base_width: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 1,
            num_classes: 3,
            depth: 2,
            base_width: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels < 1 {
            return Err(Error::InvalidConfig("in_channels must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be >= 2".into()));
        }
        if self.num_classes > u8::MAX as usize {
            return Err(Error::InvalidConfig(
                "num_classes must fit in a u8 label".into(),
            ));
        }
        if self.depth < 1 || self.depth > 16 {
            return Err(Error::InvalidConfig("depth must be in 1..=16".into()));
        }
        if self.base_width < 1 {
            return Err(Error::InvalidConfig("base_width must be >= 1".into()));
        }
        Ok(())
    }

    /// Spatial dims must be divisible by `2^depth`.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let m = 1usize << self.depth;
        if height % m != 0 || width % m != 0 || height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "input {height}x{width} not divisible by 2^depth = {m}"
            )));
        }
        Ok(())
    }

    fn width_at(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Every convolution in forward order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let spec = |name: String, cin, cout, k| LayerSpec { name, cin, cout, k };
        let mut out = Vec::new();
        for l in 0..self.depth {
            let cin = if l == 0 {
                self.in_channels
            } else {
                self.width_at(l - 1)
            };
            out.push(spec(format!("enc{l}.conv1"), cin, self.width_at(l), 3));
            out.push(spec(
                format!("enc{l}.conv2"),
                self.width_at(l),
                self.width_at(l),
                3,
            ));
        }
        let bottom = self.width_at(self.depth);
        out.push(spec(
            "mid.conv1".into(),
            self.width_at(self.depth - 1),
            bottom,
            3,
        ));
        out.push(spec("mid.conv2".into(), bottom, bottom, 3));
        for l in (0..self.depth).rev() {
            let cin = self.width_at(l + 1) + self.width_at(l);
            out.push(spec(format!("dec{l}.conv1"), cin, self.width_at(l), 3));
            out.push(spec(
                format!("dec{l}.conv2"),
                self.width_at(l),
                self.width_at(l),
                3,
            ));
        }
        let (w, c) = (self.base_width, self.num_classes);
        out.push(spec("head.conv".into(), w, w, 3));
        out.push(spec(FILTER_LAYER.into(), w, c, 1));
        out.push(spec("head.logits".into(), c, c, 1));
        out
    }
}

/// Closed-form learnable scalar count.
pub fn count_params(cfg: &UNetConfig) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| k * k * cin * cout + cout;
    let w = |l: usize| cfg.base_width << l;
    let d = cfg.depth;
    let mut total = conv(cfg.in_channels, w(0), 3) + conv(w(0), w(0), 3);
    for l in 1..d {
        total += conv(w(l - 1), w(l), 3) + conv(w(l), w(l), 3);
    }
    total += conv(w(d - 1), w(d), 3) + conv(w(d), w(d), 3);
    for l in 0..d {
        total += conv(w(l + 1) + w(l), w(l), 3) + conv(w(l), w(l), 3);
    }
    let c = cfg.num_classes;
    total + conv(w(0), w(0), 3) + conv(w(0), c, 1) + conv(c, c, 1)
}

/// Named learnable tensors in deterministic insertion order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T: Scalar = f32> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Records every tensor as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let mut t = v.clone();
                t.grad = None;
                t.requires_grad = requires_grad;
                (k.clone(), g.leaf(t))
            })
            .collect();
        BoundParams { vars }
    }

    /// Moves gradients out of the graph into each tensor's `grad` buffer.
    pub fn collect_grads(&mut self, g: &mut Graph<T>, bound: &BoundParams) {
        for (name, t) in self.tensors.iter_mut() {
            if let Some(&v) = bound.vars.get(name) {
                t.grad = g.take_grad(v);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }
}

/// Graph handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Binds names to leaves that are already recorded in a graph.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        BoundParams {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// A U-Net: its configuration and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet<T: Scalar = f32> {
    pub config: UNetConfig,
    pub params: ParamSet<T>,
}

/// Initial bias of the penultimate C-channel layer, so the ReLU filters
/// start active.
pub const FILTER_BIAS_INIT: f64 = 0.1;

/// He-normal weights (σ = √(2/fan_in)) drawn from `seed`; zero biases except
/// the filter layer, which starts at [`FILTER_BIAS_INIT`].
pub fn build_unet<T: Scalar>(config: UNetConfig, seed: u64) -> Result<UNet<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for layer in config.layers() {
        let fan_in = layer.cin * layer.k * layer.k;
        let std = (2.0 / fan_in as f64).sqrt();
        let n = layer.cout * fan_in;
        let w: Vec<T> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::lit(z * std)
            })
            .collect();
        params.insert(
            format!("{}.weight", layer.name),
            Tensor::new([layer.cout, layer.cin, layer.k, layer.k], w)?,
        );
        let bias = if layer.name == FILTER_LAYER {
            T::lit(FILTER_BIAS_INIT)
        } else {
            T::zero()
        };
        params.insert(
            format!("{}.bias", layer.name),
            Tensor::full([layer.cout], bias),
        );
    }
    Ok(UNet { config, params })
}

const FILTER_LAYER: &str = "head.filter";

fn conv<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, name: &str, x: Var, k: usize) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    g.conv2d(x, w, b, (k - 1) / 2)
}

fn conv_relu<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let y = conv(g, p, name, x, 3)?;
    Ok(g.relu(y))
}

/// Records the forward pass; returns `(logits, penultimate)`, both `[B,C,H,W]`.
pub fn unet_forward<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &UNetConfig,
    p: &BoundParams,
    x: Var,
) -> Result<(Var, Var)> {
    let [_, c, h, w] = g.value(x).dims4("unet_forward")?;
    if c != cfg.in_channels {
        return Err(shape_err(
            "unet_forward",
            format!(
                "input has {c} channels, network expects {}",
                cfg.in_channels
            ),
        ));
    }
    cfg.check_input(h, w)?;
    let mut skips = Vec::with_capacity(cfg.depth);
    let mut cur = x;
    for l in 0..cfg.depth {
        cur = conv_relu(g, p, &format!("enc{l}.conv1"), cur)?;
        cur = conv_relu(g, p, &format!("enc{l}.conv2"), cur)?;
        skips.push(cur);
        cur = g.maxpool2(cur)?;
    }
    cur = conv_relu(g, p, "mid.conv1", cur)?;
    cur = conv_relu(g, p, "mid.conv2", cur)?;
    for l in (0..cfg.depth).rev() {
        let up = g.upsample2(cur)?;
        let cat = g.concat_channels(up, skips[l])?;
        cur = conv_relu(g, p, &format!("dec{l}.conv1"), cat)?;
        cur = conv_relu(g, p, &format!("dec{l}.conv2"), cur)?;
    }
    cur = conv_relu(g, p, "head.conv", cur)?;
    let filt = conv(g, p, FILTER_LAYER, cur, 1)?;
    let penultimate = g.relu(filt);
    let logits = conv(g, p, "head.logits", penultimate, 1)?;
    Ok((logits, penultimate))
}

impl<T: Scalar> UNet<T> {
    /// Inference without gradient tracking.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let xv = g.leaf(x.clone());
        let (l, p) = unet_forward(&mut g, &self.config, &bound, xv)?;
        Ok((g.value(l).clone(), g.value(p).clone()))
    }
}
