//! Learned per-channel factorized density (entropy bottleneck parameters).
//!
//! Each hyper channel carries a stack of monotone scalar maps defining a
//! CDF `c(v)`; integer bins are coded with `P(n) = c(n+0.5) - c(n-0.5)`.
//! Parameter tensors live in the fixed order consumed by the
//! `factorized_nll` op: `h0,b0,a0, h1,b1,a1, h2,b2,a2, h3,b3`.

use crate::autodiff::nll::{chan_view, chain_cdf, layer_param_index, CHAIN_LAYERS, CHAIN_WIDTHS};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedDensity<F: Scalar> {
    tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> FactorizedDensity<F> {
    /// Initialize so each channel starts near a unit-scale logistic CDF:
    /// the chain's layer gains multiply out to roughly one, biases get a
    /// small jitter, gates start closed.
    pub fn init(channels: usize, rng: &mut Rng) -> Self {
        // overall gain = prod_k softplus(h) * fan_in; solve for constant h
        let mut gain_budget = 1.0_f64;
        for k in 0..CHAIN_LAYERS {
            gain_budget *= CHAIN_WIDTHS[k] as f64;
        }
        let per_layer = (1.0 / gain_budget).powf(1.0 / CHAIN_LAYERS as f64);
        let h_init = (per_layer.exp() - 1.0).ln(); // softplus inverse

        let mut tensors = Vec::with_capacity(11);
        for k in 0..CHAIN_LAYERS {
            let (r_in, r_out) = (CHAIN_WIDTHS[k], CHAIN_WIDTHS[k + 1]);
            let h = Tensor::from_fn(&[channels, r_out, r_in], |_| {
                F::of(h_init + rng.range(-0.01, 0.01))
            });
            let b = Tensor::from_fn(&[channels, r_out], |_| F::of(rng.range(-0.25, 0.25)));
            tensors.push(h);
            tensors.push(b);
            if k + 1 < CHAIN_LAYERS {
                tensors.push(Tensor::zeros(&[channels, r_out]));
            }
        }
        FactorizedDensity { tensors }
    }

    pub fn from_tensors(tensors: Vec<Tensor<F>>) -> Self {
        assert_eq!(tensors.len(), 11);
        FactorizedDensity { tensors }
    }

    pub fn channels(&self) -> usize {
        self.tensors[layer_param_index(0, 1)].shape()[0]
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn param_refs(&self) -> Vec<&Tensor<F>> {
        self.tensors.iter().collect()
    }

    /// CDF of channel `c` at `v`.
    pub fn cdf(&self, c: usize, v: F) -> F {
        let refs = self.param_refs();
        chain_cdf(v, &chan_view(&refs, c))
    }

    /// Probability of the unit-width bin centered on `v` for channel `c`.
    pub fn bin_prob(&self, c: usize, v: F) -> F {
        let refs = self.param_refs();
        let view = chan_view(&refs, c);
        let half = F::of(0.5);
        chain_cdf(v + half, &view) - chain_cdf(v - half, &view)
    }

    /// Bin probabilities over the integer support `[v_min, v_max]`.
    pub fn pmf_table(&self, c: usize, v_min: i32, v_max: i32) -> Vec<f64> {
        let refs = self.param_refs();
        let view = chan_view(&refs, c);
        let half = F::of(0.5);
        let mut lo = chain_cdf(F::of(v_min as f64) - half, &view);
        let mut out = Vec::with_capacity((v_max - v_min + 1) as usize);
        for n in v_min..=v_max {
            let hi = chain_cdf(F::of(n as f64) + half, &view);
            out.push((hi - lo).as_f64().max(0.0));
            lo = hi;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn density() -> FactorizedDensity<f64> {
        FactorizedDensity::init(4, &mut Rng::new(3))
    }

    #[test]
    fn cdf_is_monotone_and_normalized_on_grid() {
        let d = density();
        for c in 0..d.channels() {
            let mut prev = d.cdf(c, -200.0);
            assert!(prev < 1e-6);
            for step in -64..=64 {
                let v = step as f64 + 0.5;
                let cur = d.cdf(c, v);
                assert!(cur >= prev, "channel {c} at {v}");
                prev = cur;
            }
            assert!(d.cdf(c, 200.0) > 1.0 - 1e-6);
        }
    }

    #[test]
    fn pmf_sums_to_at_most_one() {
        let d = density();
        for c in 0..d.channels() {
            let total: f64 = d.pmf_table(c, -64, 64).iter().sum();
            assert!(total <= 1.0 + 1e-6, "channel {c}: {total}");
            assert!(total > 0.9, "channel {c}: {total}");
        }
    }

    #[test]
    fn bin_prob_matches_pmf_table() {
        let d = density();
        let table = d.pmf_table(1, -4, 4);
        for (i, n) in (-4..=4).enumerate() {
            let direct = d.bin_prob(1, n as f64);
            assert!((table[i] - direct).abs() < 1e-12);
        }
    }
}
