//! Quantization surrogates.
//!
//! `Round` is exact rounding with zero gradient. `Noise` adds seeded
//! uniform noise on `[-0.5, 0.5)` and passes gradients through. `Ste`
//! rounds forward and passes gradients through. `Annealed` soft-rounds at
//! temperature `tau`: the stochastic variant draws the offset bit from a
//! Bernoulli whose probability is `sigmoid((frac - 0.5)/tau)`, the mean
//! variant uses the probability itself; both backpropagate through the
//! expectation.

use crate::rng;
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuantizeMode {
    Round,
    Noise,
    Ste,
    Annealed { tau: f64, stochastic: bool },
}

impl QuantizeMode {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, QuantizeMode::Noise | QuantizeMode::Annealed { stochastic: true, .. })
    }
}

/// Minimum annealing temperature; schedules floor here.
pub const TAU_FLOOR: f64 = 1e-4;

/// Hash stream tag for quantizer draws; fixed per op kind so identical
/// seeds reproduce identical draws across different recordings.
pub const QUANT_STREAM: u64 = 0x5155414e;

pub fn quantize_forward<F: Scalar>(
    x: &Tensor<F>,
    mode: QuantizeMode,
    seed: u64,
    stream: u64,
) -> Tensor<F> {
    match mode {
        QuantizeMode::Round | QuantizeMode::Ste => x.map(|v| v.round()),
        QuantizeMode::Noise => {
            let mut out = x.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                let u = rng::uniform(seed, stream, i as u64) - 0.5;
                *v = *v + F::of(u);
            }
            out.requires_grad = false;
            out
        }
        QuantizeMode::Annealed { tau, stochastic } => {
            let tau = tau.max(TAU_FLOOR);
            let mut out = x.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                let fl = v.floor();
                let frac = (*v - fl).as_f64();
                let p = sigmoid((frac - 0.5) / tau);
                let bit = if stochastic {
                    if rng::uniform(seed, stream, i as u64) < p { 1.0 } else { 0.0 }
                } else {
                    p
                };
                *v = fl + F::of(bit);
            }
            out.requires_grad = false;
            out
        }
    }
}

/// Elementwise factor the incoming gradient is multiplied by.
pub fn quantize_backward_factor<F: Scalar>(x: &Tensor<F>, mode: QuantizeMode) -> Option<Tensor<F>> {
    match mode {
        QuantizeMode::Round => None,
        QuantizeMode::Noise | QuantizeMode::Ste => Some(Tensor::full(x.shape(), F::one())),
        QuantizeMode::Annealed { tau, .. } => {
            let tau = tau.max(TAU_FLOOR);
            Some(x.map(|v| {
                let frac = (v - v.floor()).as_f64();
                let s = sigmoid((frac - 0.5) / tau);
                F::of(s * (1.0 - s) / tau)
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Float;

    #[test]
    fn round_and_ste_produce_integers() {
        let x = Tensor::new(vec![4], vec![-1.7, -0.2, 0.49, 2.5]).unwrap();
        for mode in [QuantizeMode::Round, QuantizeMode::Ste] {
            let q = quantize_forward(&x, mode, 0, 0);
            for v in q.data() {
                assert_eq!(v.fract(), 0.0);
            }
        }
    }

    #[test]
    fn noise_stays_within_half() {
        let x = Tensor::<f64>::zeros(&[1000]);
        let q = quantize_forward(&x, QuantizeMode::Noise, 9, 3);
        for v in q.data() {
            assert!(*v >= -0.5 && *v < 0.5);
        }
    }

    #[test]
    fn annealed_approaches_round_at_low_tau() {
        // sample away from bin boundaries, where the limit is ambiguous
        let mut r = crate::rng::Rng::new(4);
        let x = Tensor::from_fn(&[512], |_| loop {
            let v = r.range(-4.0, 4.0);
            if (v - v.floor() - 0.5).abs() > 5e-3 {
                break v;
            }
        });
        let round = quantize_forward(&x, QuantizeMode::Round, 0, 0);
        for stochastic in [true, false] {
            let q = quantize_forward(
                &x,
                QuantizeMode::Annealed { tau: 1e-4, stochastic },
                7,
                1,
            );
            let max_diff = q
                .data()
                .iter()
                .zip(round.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(max_diff < 1e-3, "stochastic={stochastic} diff={max_diff}");
        }
    }

    #[test]
    fn annealed_is_seed_deterministic() {
        let mut r = crate::rng::Rng::new(5);
        let x = Tensor::from_fn(&[64], |_| r.range(-2.0, 2.0));
        let m = QuantizeMode::Annealed { tau: 0.5, stochastic: true };
        assert_eq!(quantize_forward(&x, m, 11, 2).data(), quantize_forward(&x, m, 11, 2).data());
        assert_ne!(quantize_forward(&x, m, 11, 2).data(), quantize_forward(&x, m, 12, 2).data());
    }
}
