//! Adam with bias correction, used for latent updates and training.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    m: Tensor<F>,
    v: Tensor<F>,
    t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(shape: &[usize]) -> Self {
        AdamState { m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&Tensor<F>, &Tensor<F>) {
        (&self.m, &self.v)
    }
}

/// One Adam update; returns the new value.
pub fn adam_step<F: Scalar>(
    value: &Tensor<F>,
    grad: &Tensor<F>,
    state: &mut AdamState<F>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<Tensor<F>> {
    if value.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            detail: format!("{:?} vs {:?}", value.shape(), grad.shape()),
        });
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite { op: "adam_step" });
    }
    state.t += 1;
    let b1 = F::of(beta1);
    let b2 = F::of(beta2);
    let one = F::one();
    let corr1 = F::of(1.0 - beta1.powi(state.t as i32));
    let corr2 = F::of(1.0 - beta2.powi(state.t as i32));
    let lr = F::of(lr);
    let eps = F::of(eps);
    let mut out = value.clone();
    for i in 0..value.numel() {
        let g = grad.data()[i];
        let m = b1 * state.m.data()[i] + (one - b1) * g;
        let v = b2 * state.v.data()[i] + (one - b2) * g * g;
        state.m.data_mut()[i] = m;
        state.v.data_mut()[i] = v;
        let mhat = m / corr1;
        let vhat = v / corr2;
        out.data_mut()[i] = out.data()[i] - lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn zero_gradient_leaves_value_and_moments_untouched() {
        let value = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let grad = Tensor::zeros(&[3]);
        let mut state = AdamState::new(&[3]);
        let out = adam_step(&value, &grad, &mut state, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(out.data(), value.data());
        assert!(state.moments().0.data().iter().all(|&v| v == 0.0));
        assert!(state.moments().1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn first_step_moves_by_sign_times_lr() {
        // bias correction makes the first update -lr * g / (|g| + tiny)
        let value = Tensor::zeros(&[4]);
        let grad = Tensor::new(vec![4], vec![3.0, -0.5, 1e4, -1e-3]).unwrap();
        let mut state = AdamState::new(&[4]);
        let out = adam_step(&value, &grad, &mut state, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        for (o, g) in out.data().iter().zip(grad.data()) {
            let want = -1e-3 * g.signum();
            assert!((o - want).abs() < 1e-6, "g={g} o={o}");
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let mut r = Rng::new(8);
        let run = || {
            let mut value = Tensor::new(vec![8], (0..8).map(|i| i as f64 / 3.0).collect()).unwrap();
            let mut state = AdamState::new(&[8]);
            let mut rr = Rng::new(55);
            for _ in 0..50 {
                let grad = Tensor::from_fn(&[8], |_| rr.range(-1.0, 1.0));
                value = adam_step(&value, &grad, &mut state, 1e-2, 0.9, 0.999, 1e-8).unwrap();
            }
            value
        };
        let a = run();
        let b = run();
        assert_eq!(a.data(), b.data());
        let _ = r.next_u64();
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let value = Tensor::zeros(&[1]);
        let grad = Tensor::new(vec![1], vec![f64::NAN]).unwrap();
        let mut state = AdamState::new(&[1]);
        assert!(adam_step(&value, &grad, &mut state, 1e-3, 0.9, 0.999, 1e-8).is_err());
    }
}
