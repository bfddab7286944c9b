//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied during a forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates `d(loss)/d(leaf)` into the `grad` buffer of every leaf created
//! with `requires_grad`. Accumulation order is fixed (reverse tape order, then
//! operand order), so gradients are bitwise reproducible.

pub(crate) mod kernels;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{LabelMap, Scalar, Tensor};

use kernels::ConvDims;

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample2 {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Clamp01 {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    SliceChannel {
        x: Var,
        channel: usize,
    },
    CatBatch {
        parts: Vec<Var>,
    },
    SliceBatch {
        x: Var,
        start: usize,
    },
    SoftmaxCe {
        logits: Var,
        probs: Vec<T>,
        target: Vec<u8>,
    },
    Sum {
        x: Var,
    },
    Stack {
        parts: Vec<Var>,
    },
    EnsembleMix {
        stacked: Var,
        w: Var,
        bias: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients flow into it iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad;
        self.push(t, Op::Leaf, needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated into a leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.grad.take()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Same-padded stride-1 cross-correlation plus bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let [batch, cin, height, width] = self.value(x).dims4("conv2d")?;
        let (cout, k) = match self.value(w).shape()[..] {
            [co, ci, kh, kw] if kh == kw => {
                if ci != cin {
                    return Err(shape_err(
                        "conv2d",
                        format!("input channels: x has {cin}, weight expects {ci}"),
                    ));
                }
                (co, kh)
            }
            ref s => {
                return Err(shape_err(
                    "conv2d",
                    format!("weight must be [Cout,Cin,k,k], got {s:?}"),
                ))
            }
        };
        if k % 2 == 0 {
            return Err(shape_err(
                "conv2d",
                format!("kernel size must be odd, got {k}"),
            ));
        }
        if pad != (k - 1) / 2 {
            return Err(shape_err(
                "conv2d",
                format!(
                    "pad must be (k-1)/2 = {} for k = {k}, got {pad}",
                    (k - 1) / 2
                ),
            ));
        }
        if self.value(b).shape() != [cout] {
            return Err(shape_err(
                "conv2d",
                format!("bias must be [{cout}], got {:?}", self.value(b).shape()),
            ));
        }
        let dims = ConvDims {
            batch,
            cin,
            cout,
            height,
            width,
            k,
            pad,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
        );
        let t = Tensor::new([batch, cout, height, width], out)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, dims }, ng))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let dims @ [b, c, h, w] = self.value(x).dims4("maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(
                "maxpool2",
                format!("H and W must be even, got {h}x{w}"),
            ));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(x).data(), dims);
        let t = Tensor::new([b, c, h / 2, w / 2], out)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::MaxPool2 { x, argmax }, ng))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let dims @ [b, c, h, w] = self.value(x).dims4("upsample2")?;
        let out = kernels::upsample2_forward(self.value(x).data(), dims);
        let t = Tensor::new([b, c, 2 * h, 2 * w], out)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Upsample2 { x }, ng))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(T::zero()), Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, kernels::sigmoid, Op::Sigmoid { x })
    }

    /// Clamps to `[0, 1]`; gradient passes only strictly inside.
    pub fn clamp01(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(T::zero()).min(T::one()), Op::Clamp01 { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| *x + *y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| *x * *y)
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul { a, b }, ng))
    }

    /// Stacks `[B,Ca,H,W]` and `[B,Cb,H,W]` into `[B,Ca+Cb,H,W]`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ba, ca, ha, wa] = self.value(a).dims4("concat_channels")?;
        let [bb, cb, hb, wb] = self.value(b).dims4("concat_channels")?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(shape_err(
                "concat_channels",
                format!("B,H,W differ: [{ba},{ha},{wa}] vs [{bb},{hb},{wb}]"),
            ));
        }
        let plane = ha * wa;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ba * (ca + cb) * plane);
        for bi in 0..ba {
            out.extend_from_slice(&da[bi * ca * plane..(bi + 1) * ca * plane]);
            out.extend_from_slice(&db[bi * cb * plane..(bi + 1) * cb * plane]);
        }
        let t = Tensor::new([ba, ca + cb, ha, wa], out)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::ConcatChannels { a, b }, ng))
    }

    /// Channel `c` of `[B,C,H,W]` as `[B,1,H,W]`.
    pub fn slice_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let t = self.value(x).channel(channel)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::SliceChannel { x, channel }, ng))
    }

    /// Concatenates along the batch axis; all other dimensions must agree.
    pub fn cat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| self.value(*p)).collect();
        let t = Tensor::cat_batch(&values)?;
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            t,
            Op::CatBatch {
                parts: parts.to_vec(),
            },
            ng,
        ))
    }

    /// Samples `start..start + len` of the batch.
    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let batch = v.shape().first().copied().unwrap_or(0);
        if len == 0 || start + len > batch {
            return Err(shape_err(
                "slice_batch",
                format!("range {start}..{} of batch {batch}", start + len),
            ));
        }
        let per = v.numel() / batch;
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        let t = Tensor::new(shape, v.data()[start * per..(start + len) * per].to_vec())?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::SliceBatch { x, start }, ng))
    }

    /// Softmax cross-entropy averaged over every pixel of the batch.
    pub fn softmax_ce(&mut self, logits: Var, target: &LabelMap) -> Result<Var> {
        let dims @ [b, c, h, w] = self.value(logits).dims4("softmax_ce")?;
        if (target.batch(), target.height(), target.width()) != (b, h, w) {
            return Err(shape_err(
                "softmax_ce",
                format!(
                    "target [{},{},{}] vs logits [{b},{c},{h},{w}]",
                    target.batch(),
                    target.height(),
                    target.width()
                ),
            ));
        }
        target.check_range(c)?;
        let (loss, probs) =
            kernels::softmax_ce_forward(self.value(logits).data(), dims, target.labels());
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                probs,
                target: target.labels().to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, ng)
    }

    /// Inserts a new axis after the batch: S × `[B,...]` → `[B,S,...]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack needs at least one tensor".into()))?;
        let shape = self.value(first).shape().to_vec();
        for p in parts {
            if self.value(*p).shape() != shape {
                return Err(shape_err(
                    "stack",
                    format!("{:?} vs {:?}", self.value(*p).shape(), shape),
                ));
            }
        }
        let batch = shape[0];
        let per = self.value(first).numel() / batch;
        let mut out = Vec::with_capacity(per * batch * parts.len());
        for bi in 0..batch {
            for p in parts {
                out.extend_from_slice(&self.value(*p).data()[bi * per..(bi + 1) * per]);
            }
        }
        let mut new_shape = vec![batch, parts.len()];
        new_shape.extend_from_slice(&shape[1..]);
        let t = Tensor::new(new_shape, out)?;
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            t,
            Op::Stack {
                parts: parts.to_vec(),
            },
            ng,
        ))
    }

    /// `out[b,...] = Σ_i w[i]·stacked[b,i,...] + bias`: a 1×1×1 convolution
    /// whose input-channel axis is the stacking axis.
    pub fn ensemble_mix(&mut self, stacked: Var, w: Var, bias: Var) -> Result<Var> {
        let shape = self.value(stacked).shape().to_vec();
        if shape.len() < 2 {
            return Err(shape_err(
                "ensemble_mix",
                format!("stacked must be [B,S,...], got {shape:?}"),
            ));
        }
        let (batch, s) = (shape[0], shape[1]);
        if self.value(w).shape() != [s] {
            return Err(shape_err(
                "ensemble_mix",
                format!("{} weights for {s} stacked outputs", self.value(w).numel()),
            ));
        }
        if self.value(bias).shape() != [1] {
            return Err(shape_err("ensemble_mix", "bias must be a single value"));
        }
        let per = shape[2..].iter().product::<usize>();
        let (sd, wd, bv) = (
            self.value(stacked).data(),
            self.value(w).data(),
            self.value(bias).item(),
        );
        let mut out = vec![bv; batch * per];
        for bi in 0..batch {
            let o = &mut out[bi * per..(bi + 1) * per];
            for (i, wi) in wd.iter().enumerate() {
                let src = &sd[(bi * s + i) * per..(bi * s + i + 1) * per];
                for (ov, sv) in o.iter_mut().zip(src) {
                    *ov = *ov + *wi * *sv;
                }
            }
        }
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&shape[2..]);
        let t = Tensor::new(out_shape, out)?;
        let ng = self.needs(stacked) || self.needs(w) || self.needs(bias);
        Ok(self.push(t, Op::EnsembleMix { stacked, w, bias }, ng))
    }

    /// Propagates `d(loss)/d(node)` to every leaf with `requires_grad`,
    /// adding into any gradient already present there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let t = &mut self.nodes[i].value;
                match &mut t.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a = *a + *v),
                    None => t.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let zeros = |v: Var| vec![T::zero(); self.value(v).numel()];
        // Returns the accumulation buffer for `v`, or None when `v` is constant.
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                if self.needs(v) {
                    Some(grads[v.0].get_or_insert_with(|| zeros(v)))
                } else {
                    None
                }
            }};
        }
        match &self.nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::Conv2d { x, w, b, dims } => {
                let mut dx = self
                    .needs(*x)
                    .then(|| grads[x.0].take().unwrap_or_else(|| zeros(*x)));
                let mut dw = self
                    .needs(*w)
                    .then(|| grads[w.0].take().unwrap_or_else(|| zeros(*w)));
                let mut db = self
                    .needs(*b)
                    .then(|| grads[b.0].take().unwrap_or_else(|| zeros(*b)));
                kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    dims,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                // x, w, b are distinct nodes in every network we build; if two
                // coincide the later store must keep the sum.
                for (v, d) in [(*x, dx), (*w, dw), (*b, db)] {
                    if let Some(d) = d {
                        match &mut grads[v.0] {
                            Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, e)| *a = *a + *e),
                            slot => *slot = Some(d),
                        }
                    }
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(dx) = slot!(*x) {
                    for (gv, &a) in g.iter().zip(argmax) {
                        dx[a as usize] = dx[a as usize] + *gv;
                    }
                }
            }
            Op::Upsample2 { x } => {
                let dims = self.value(*x).dims4("upsample2").expect("recorded shape");
                if let Some(dx) = slot!(*x) {
                    kernels::upsample2_backward(g, dims, dx);
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                if let Some(dx) = slot!(*x) {
                    for ((d, gv), v) in dx.iter_mut().zip(g).zip(xv) {
                        if *v > T::zero() {
                            *d = *d + *gv;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                let y = self.nodes[i].value.data();
                if let Some(dx) = slot!(*x) {
                    for ((d, gv), yv) in dx.iter_mut().zip(g).zip(y) {
                        *d = *d + *gv * *yv * (T::one() - *yv);
                    }
                }
            }
            Op::Clamp01 { x } => {
                let xv = self.value(*x).data();
                if let Some(dx) = slot!(*x) {
                    for ((d, gv), v) in dx.iter_mut().zip(g).zip(xv) {
                        if *v > T::zero() && *v < T::one() {
                            *d = *d + *gv;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = slot!(v) {
                        d.iter_mut().zip(g).for_each(|(d, gv)| *d = *d + *gv);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(d) = slot!(*a) {
                    for ((d, gv), o) in d.iter_mut().zip(g).zip(bv) {
                        *d = *d + *gv * *o;
                    }
                }
                if let Some(d) = slot!(*b) {
                    for ((d, gv), o) in d.iter_mut().zip(g).zip(av) {
                        *d = *d + *gv * *o;
                    }
                }
            }
            Op::ConcatChannels { a, b } => {
                let [batch, ca, h, w] = self.value(*a).dims4("concat").expect("recorded shape");
                let cb = self.value(*b).shape()[1];
                let plane = h * w;
                for bi in 0..batch {
                    let row = &g[bi * (ca + cb) * plane..(bi + 1) * (ca + cb) * plane];
                    if let Some(da) = slot!(*a) {
                        let dst = &mut da[bi * ca * plane..(bi + 1) * ca * plane];
                        dst.iter_mut()
                            .zip(&row[..ca * plane])
                            .for_each(|(d, gv)| *d = *d + *gv);
                    }
                    if let Some(db) = slot!(*b) {
                        let dst = &mut db[bi * cb * plane..(bi + 1) * cb * plane];
                        dst.iter_mut()
                            .zip(&row[ca * plane..])
                            .for_each(|(d, gv)| *d = *d + *gv);
                    }
                }
            }
            Op::SliceChannel { x, channel } => {
                let [batch, c, h, w] = self.value(*x).dims4("slice").expect("recorded shape");
                let plane = h * w;
                if let Some(dx) = slot!(*x) {
                    for bi in 0..batch {
                        let start = (bi * c + channel) * plane;
                        dx[start..start + plane]
                            .iter_mut()
                            .zip(&g[bi * plane..(bi + 1) * plane])
                            .for_each(|(d, gv)| *d = *d + *gv);
                    }
                }
            }
            Op::CatBatch { parts } => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if let Some(d) = slot!(*p) {
                        d.iter_mut()
                            .zip(&g[off..off + n])
                            .for_each(|(d, gv)| *d = *d + *gv);
                    }
                    off += n;
                }
            }
            Op::SliceBatch { x, start } => {
                let v = self.value(*x);
                let off = start * (v.numel() / v.shape()[0]);
                if let Some(dx) = slot!(*x) {
                    dx[off..off + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, gv)| *d = *d + *gv);
                }
            }
            Op::SoftmaxCe {
                logits,
                probs,
                target,
            } => {
                let [b, c, h, w] = self
                    .value(*logits)
                    .dims4("softmax_ce")
                    .expect("recorded shape");
                let plane = h * w;
                let scale = g[0] / T::lit((b * plane) as f64);
                if let Some(dl) = slot!(*logits) {
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * plane;
                            for p in 0..plane {
                                let hit = if target[bi * plane + p] as usize == ci {
                                    T::one()
                                } else {
                                    T::zero()
                                };
                                dl[base + p] = dl[base + p] + scale * (probs[base + p] - hit);
                            }
                        }
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(dx) = slot!(*x) {
                    dx.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Stack { parts } => {
                let s = parts.len();
                let batch = self.value(parts[0]).shape()[0];
                let per = self.value(parts[0]).numel() / batch;
                for (pi, p) in parts.iter().enumerate() {
                    if let Some(dp) = slot!(*p) {
                        for bi in 0..batch {
                            let src = &g[(bi * s + pi) * per..(bi * s + pi + 1) * per];
                            dp[bi * per..(bi + 1) * per]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, gv)| *d = *d + *gv);
                        }
                    }
                }
            }
            Op::EnsembleMix { stacked, w, bias } => {
                let shape = self.value(*stacked).shape();
                let (batch, s) = (shape[0], shape[1]);
                let per = shape[2..].iter().product::<usize>();
                let sd = self.value(*stacked).data();
                let wd = self.value(*w).data();
                if let Some(ds) = slot!(*stacked) {
                    for bi in 0..batch {
                        let gb = &g[bi * per..(bi + 1) * per];
                        for (si, wi) in wd.iter().enumerate() {
                            let dst = &mut ds[(bi * s + si) * per..(bi * s + si + 1) * per];
                            dst.iter_mut()
                                .zip(gb)
                                .for_each(|(d, gv)| *d = *d + *wi * *gv);
                        }
                    }
                }
                if let Some(dw) = slot!(*w) {
                    for bi in 0..batch {
                        let gb = &g[bi * per..(bi + 1) * per];
                        for (si, d) in dw.iter_mut().enumerate() {
                            let src = &sd[(bi * s + si) * per..(bi * s + si + 1) * per];
                            let dot = src.iter().zip(gb).map(|(a, b)| *a * *b).sum::<T>();
                            *d = *d + dot;
                        }
                    }
                }
                if let Some(db) = slot!(*bias) {
                    db[0] = db[0] + g.iter().copied().sum::<T>();
                }
            }
        }
    }
}
