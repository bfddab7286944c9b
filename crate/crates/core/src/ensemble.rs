//! Weighted aggregation of stacked segmentation outputs.
//!
//! The S outputs `[B,C,H,W]` are stacked to `[B,S,C,H,W]`, and a point-wise
//! (1×1×1 kernel, stride 1, no padding) 3D convolution with a single output
//! channel mixes along S: one scalar weight per output plus a bias. The
//! outputs mixed are logits; softmax happens downstream.

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleWeights<T: Scalar = f32> {
    pub w: Tensor<T>,
    pub bias: Tensor<T>,
    pub trainable: bool,
}

impl<T: Scalar> EnsembleWeights<T> {
    /// Learnable weights starting at the plain average: `w_i = 1/S`, bias 0.
    pub fn automated(s: usize) -> Result<Self> {
        if s < 1 {
            return Err(Error::InvalidArgument("ensemble needs S >= 1".into()));
        }
        Ok(EnsembleWeights {
            w: Tensor::full([s], T::lit(1.0 / s as f64)),
            bias: Tensor::scalar(T::zero()),
            trainable: true,
        })
    }

    /// Frozen weights that average outputs `1..S` and ignore output 0, i.e.
    /// the mean of the second network's logits.
    pub fn second_network_mean(s: usize) -> Result<Self> {
        if s < 2 {
            return Err(Error::InvalidArgument(
                "second-network mean needs S >= 2".into(),
            ));
        }
        let mut w = vec![T::lit(1.0 / (s - 1) as f64); s];
        w[0] = T::zero();
        Ok(EnsembleWeights {
            w: Tensor::new([s], w)?,
            bias: Tensor::scalar(T::zero()),
            trainable: false,
        })
    }

    pub fn from_values(w: Vec<T>, bias: T, trainable: bool) -> Result<Self> {
        let s = w.len();
        if s < 1 {
            return Err(Error::InvalidArgument("ensemble needs S >= 1".into()));
        }
        Ok(EnsembleWeights {
            w: Tensor::new([s], w)?,
            bias: Tensor::scalar(bias),
            trainable,
        })
    }

    pub fn len(&self) -> usize {
        self.w.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.w.numel() == 0
    }

    pub fn weights(&self) -> &[T] {
        self.w.data()
    }

    pub fn bias_value(&self) -> T {
        self.bias.item()
    }

    pub fn cast<U: Scalar>(&self) -> EnsembleWeights<U> {
        EnsembleWeights {
            w: self.w.cast(),
            bias: self.bias.cast(),
            trainable: self.trainable,
        }
    }

    /// Records `(w, bias)` as leaves; they require grad iff trainable.
    pub fn bind(&self, g: &mut Graph<T>) -> (Var, Var) {
        let mut w = self.w.clone();
        let mut b = self.bias.clone();
        w.grad = None;
        b.grad = None;
        w.requires_grad = self.trainable;
        b.requires_grad = self.trainable;
        (g.leaf(w), g.leaf(b))
    }
}

/// `w_i = 1` for every output, bias 0, frozen.
pub fn fixed_weights<T: Scalar>(s: usize) -> Result<EnsembleWeights<T>> {
    if s < 1 {
        return Err(Error::InvalidArgument(format!(
            "fixed_weights needs S >= 1, got {s}"
        )));
    }
    Ok(EnsembleWeights {
        w: Tensor::full([s], T::one()),
        bias: Tensor::scalar(T::zero()),
        trainable: false,
    })
}

/// S × `[B,C,H,W]` → `[B,S,C,H,W]`.
pub fn stack_outputs<T: Scalar>(outputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = outputs.iter().map(|t| g.leaf((*t).clone())).collect();
    let s = g.stack(&vars)?;
    Ok(g.value(s).clone())
}

/// `[B,S,C,H,W]` → `[B,C,H,W]` via the point-wise mix.
pub fn ensemble_mix<T: Scalar>(stacked: &Tensor<T>, ew: &EnsembleWeights<T>) -> Result<Tensor<T>> {
    if stacked.shape().len() != 5 {
        return Err(crate::error::shape_err(
            "ensemble_mix",
            format!("stacked must be [B,S,C,H,W], got {:?}", stacked.shape()),
        ));
    }
    let mut g = Graph::new();
    let s = g.leaf(stacked.clone());
    let (w, b) = ew.bind(&mut g);
    let out = g.ensemble_mix(s, w, b)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn fixed_sum_and_weighted_examples() {
        let a = t(&[1, 1, 1, 1], &[2.0]);
        let b = t(&[1, 1, 1, 1], &[3.0]);
        let st = stack_outputs(&[&a, &b]).unwrap();
        assert_eq!(st.shape(), &[1, 2, 1, 1, 1]);
        let fixed = fixed_weights::<f64>(2).unwrap();
        assert_eq!(ensemble_mix(&st, &fixed).unwrap().data(), &[5.0]);
        let ew = EnsembleWeights::from_values(vec![0.5, 0.25], 0.1, true).unwrap();
        let out = ensemble_mix(&st, &ew).unwrap().item();
        assert!((out - 1.85).abs() < 1e-12);
    }

    #[test]
    fn fixed_weights_shape() {
        let f = fixed_weights::<f32>(4).unwrap();
        assert_eq!(f.weights(), &[1.0; 4]);
        assert_eq!(f.bias_value(), 0.0);
        assert!(!f.trainable);
        assert!(fixed_weights::<f32>(0).is_err());
    }

    #[test]
    fn singleton_stack_and_identity_mix() {
        let a = t(&[2, 3, 2, 2], &(0..24).map(f64::from).collect::<Vec<_>>());
        let st = stack_outputs(&[&a]).unwrap();
        assert_eq!(st.shape(), &[2, 1, 3, 2, 2]);
        assert_eq!(st.data(), a.data());
        let ew = EnsembleWeights::from_values(vec![1.0], 0.0, false).unwrap();
        let out = ensemble_mix(&st, &ew).unwrap();
        assert_eq!(out.data(), a.data());
        assert_eq!(out.shape(), a.shape());
    }

    #[test]
    fn rejects_mismatches() {
        let a = Tensor::<f32>::zeros([1, 2, 2, 2]);
        let b = Tensor::<f32>::zeros([1, 3, 2, 2]);
        assert!(stack_outputs(&[&a, &b]).is_err());
        assert!(stack_outputs::<f32>(&[]).is_err());
        let st = stack_outputs(&[&a, &a]).unwrap();
        assert!(ensemble_mix(&st, &fixed_weights(3).unwrap()).is_err());
    }

    #[test]
    fn second_network_mean_ignores_first_output() {
        let a = t(&[1, 1, 1, 1], &[100.0]);
        let b = t(&[1, 1, 1, 1], &[2.0]);
        let c = t(&[1, 1, 1, 1], &[4.0]);
        let st = stack_outputs(&[&a, &b, &c]).unwrap();
        let m = EnsembleWeights::second_network_mean(3).unwrap();
        assert_eq!(ensemble_mix(&st, &m).unwrap().item(), 3.0);
    }
}
