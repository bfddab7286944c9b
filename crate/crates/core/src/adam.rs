use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        AdamState {
            step: 0,
            m: Tensor::zeros(shape.to_vec()),
            v: Tensor::zeros(shape.to_vec()),
            config,
        }
    }
}

/// One bias-corrected Adam update from `param.grad`. The gradient buffer is
/// left in place; callers reset it.
pub fn adam_step<T: Scalar>(param: &mut Tensor<T>, state: &mut AdamState<T>) -> Result<()> {
    if state.m.shape() != param.shape() || state.v.shape() != param.shape() {
        return Err(shape_err(
            "adam_step",
            format!("state {:?} vs param {:?}", state.m.shape(), param.shape()),
        ));
    }
    let grad = param.grad.take().ok_or(Error::MissingGrad)?;
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step.min(i32::MAX as u64) as i32;
    let bc1 = T::lit(1.0 - beta1.powi(t));
    let bc2 = T::lit(1.0 - beta2.powi(t));
    let (b1, b2, lr, eps) = (T::lit(beta1), T::lit(beta2), T::lit(lr), T::lit(epsilon));
    let one = T::one();
    let values = param.data_mut();
    for (((p, g), m), v) in values
        .iter_mut()
        .zip(&grad)
        .zip(state.m.data_mut())
        .zip(state.v.data_mut())
    {
        *m = b1 * *m + (one - b1) * *g;
        *v = b2 * *v + (one - b2) * *g * *g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    param.grad = Some(grad);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_param_and_counts_step() {
        let mut p = Tensor::<f64>::new([3], vec![1.0, -2.0, 0.5]).unwrap();
        p.grad = Some(vec![0.0; 3]);
        let mut st = AdamState::new(&[3], AdamConfig::default());
        adam_step(&mut p, &mut st).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 0.5]);
        assert_eq!(st.step, 1);
        assert!(p.grad.is_some());
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-4, 0.3, -7.0, 250.0] {
            let mut p = Tensor::<f64>::new([1], vec![0.0]).unwrap();
            p.grad = Some(vec![g]);
            let cfg = AdamConfig::default();
            let mut st = AdamState::new(&[1], cfg);
            adam_step(&mut p, &mut st).unwrap();
            let moved = -p.data()[0];
            assert!((moved.abs() - cfg.lr).abs() < 1e-6 * cfg.lr.max(1.0) + 1e-7);
            assert_eq!(moved.signum(), g.signum());
        }
    }

    #[test]
    fn quadratic_converges() {
        // independent scalar re-derivation of the update rule as the oracle
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=200 {
            let g = 2.0 * theta;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!(theta.abs() < 0.05, "oracle ended at {theta}");

        let mut p = Tensor::<f64>::new([1], vec![1.0]).unwrap();
        let mut st = AdamState::new(&[1], cfg);
        for _ in 0..200 {
            p.grad = Some(vec![2.0 * p.data()[0]]);
            adam_step(&mut p, &mut st).unwrap();
        }
        assert!(p.data()[0].abs() < 0.05);
        assert!((p.data()[0] - theta).abs() < 1e-12);
        assert_eq!(st.step, 200);
    }

    #[test]
    fn missing_grad_is_rejected() {
        let mut p = Tensor::<f32>::zeros([2]);
        let mut st = AdamState::new(&[2], AdamConfig::default());
        assert!(matches!(
            adam_step(&mut p, &mut st),
            Err(Error::MissingGrad)
        ));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f32>::zeros([2]);
        p.grad = Some(vec![1.0; 2]);
        let mut st = AdamState::new(&[3], AdamConfig::default());
        assert!(adam_step(&mut p, &mut st).is_err());
    }
}
