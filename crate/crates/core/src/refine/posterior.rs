//! Monte-Carlo dropout posterior over the hyper latent.
//!
//! The frozen hyper analysis becomes a stochastic map by Bernoulli-
//! masking configured layer inputs (inverted scaling keeps expectations
//! unchanged). `T` masked passes give a fully factorized Gaussian
//! estimate: sample mean and biased (1/T) sample variance, floored.

use crate::error::{Error, Result};
use crate::model::{hyper_analysis, hyper_analysis_t, Checkpoint, DropoutSpec, ParamIds};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct PosteriorEstimate<F: Scalar> {
    pub mean: Tensor<F>,
    /// Per-element variance, floored at [`VAR_FLOOR`].
    pub variance: Tensor<F>,
}

/// Sample mean and biased variance (divide by `T`) of same-shape
/// tensors, accumulated in index order.
pub fn mc_mean_var<F: Scalar>(samples: &[Tensor<F>]) -> (Tensor<F>, Tensor<F>) {
    let t = samples.len();
    assert!(t >= 1);
    let inv = F::of(1.0 / t as f64);
    let mut mean = Tensor::zeros(samples[0].shape());
    for s in samples {
        for (m, v) in mean.data_mut().iter_mut().zip(s.data()) {
            *m = *m + *v;
        }
    }
    for m in mean.data_mut() {
        *m = *m * inv;
    }
    let mut var = Tensor::zeros(samples[0].shape());
    for s in samples {
        for ((va, v), m) in var.data_mut().iter_mut().zip(s.data()).zip(mean.data()) {
            let d = *v - *m;
            *va = *va + d * d;
        }
    }
    let floor = F::of(VAR_FLOOR);
    for va in var.data_mut() {
        *va = *va * inv + floor;
    }
    (mean, var)
}

fn sample_seed(seed: u64, t: usize) -> u64 {
    rng::counter_hash(seed, 0x4d43, t as u64)
}

/// Estimate the posterior of `z` given `y` from `t_samples` dropout-
/// masked hyper-analysis passes.
pub fn estimate_posterior<F: Scalar>(
    y: &Tensor<F>,
    ckpt: &Checkpoint<F>,
    t_samples: usize,
    keep_prob: f64,
    layers: &[usize],
    seed: u64,
) -> Result<PosteriorEstimate<F>> {
    if t_samples < 2 {
        return Err(Error::Config(format!("posterior estimation needs T >= 2, got {t_samples}")));
    }
    let samples: Vec<Tensor<F>> = (0..t_samples)
        .map(|t| {
            hyper_analysis(
                ckpt,
                y,
                Some(&DropoutSpec {
                    keep_prob,
                    seed: sample_seed(seed, t),
                    layers: layers.to_vec(),
                }),
            )
        })
        .collect::<Result<_>>()?;
    let (mean, variance) = mc_mean_var(&samples);
    Ok(PosteriorEstimate { mean, variance })
}

/// Tape version: `T` masked passes reduced in fixed order; gradients
/// flow into `y` through every sample. Returns `(mean, variance)` ids.
pub fn posterior_t<F: Scalar>(
    tape: &mut crate::autodiff::Tape<F>,
    y: crate::autodiff::VarId,
    params: &ParamIds,
    t_samples: usize,
    keep_prob: f64,
    layers: &[usize],
    seed: u64,
) -> Result<(crate::autodiff::VarId, crate::autodiff::VarId)> {
    let samples: Vec<crate::autodiff::VarId> = (0..t_samples)
        .map(|t| {
            hyper_analysis_t(
                tape,
                y,
                params,
                Some(&DropoutSpec {
                    keep_prob,
                    seed: sample_seed(seed, t),
                    layers: layers.to_vec(),
                }),
            )
        })
        .collect::<Result<_>>()?;
    let mut acc = samples[0];
    for s in &samples[1..] {
        acc = tape.add(acc, *s)?;
    }
    let mean = tape.mul_scalar(acc, 1.0 / t_samples as f64)?;
    let mut sq_acc = None;
    for s in &samples {
        let d = tape.sub(*s, mean)?;
        let sq = tape.square(d)?;
        sq_acc = Some(match sq_acc {
            None => sq,
            Some(a) => tape.add(a, sq)?,
        });
    }
    let var_raw = tape.mul_scalar(sq_acc.expect("at least one sample"), 1.0 / t_samples as f64)?;
    let variance = tape.add_scalar(var_raw, VAR_FLOOR)?;
    Ok((mean, variance))
}
