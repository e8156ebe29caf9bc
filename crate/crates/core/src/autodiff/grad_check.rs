//! Central-difference validation of recorded gradients.

use rayon::prelude::*;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Tape, VarId};

/// Compare the tape gradient of a scalar-valued computation against
/// central finite differences with step `h`, over every coordinate of
/// every input. Returns the max relative error
/// `|analytic - central| / (|analytic| + |central| + 1e-12)`.
///
/// The builder is re-invoked for each probe, so stochastic ops must be
/// seeded (they are, by construction) for the differences to be
/// well-defined.
pub fn grad_check<F, B>(build: &B, points: &[Tensor<F>], h: f64) -> Result<f64>
where
    F: Scalar,
    B: Fn(&mut Tape<F>, &[VarId]) -> Result<VarId> + Sync,
{
    let analytic = analytic_grads(build, points)?;
    let probes: Vec<(usize, usize)> = points
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.numel()).map(move |ci| (pi, ci)))
        .collect();
    let errs: Result<Vec<f64>> = probes
        .par_iter()
        .map(|&(pi, ci)| -> Result<f64> {
            let fp = eval_perturbed(build, points, pi, ci, h)?;
            let fm = eval_perturbed(build, points, pi, ci, -h)?;
            let central = (fp - fm) / (2.0 * h);
            let a = analytic[pi].data()[ci].as_f64();
            Ok((a - central).abs() / (a.abs() + central.abs() + 1e-12))
        })
        .collect();
    Ok(errs?.into_iter().fold(0.0, f64::max))
}

fn analytic_grads<F, B>(build: &B, points: &[Tensor<F>]) -> Result<Vec<Tensor<F>>>
where
    F: Scalar,
    B: Fn(&mut Tape<F>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = points.iter().map(|p| tape.leaf(p.clone().with_grad())).collect();
    let out = build(&mut tape, &ids)?;
    let mut grads = tape.backward(out)?;
    Ok(ids
        .iter()
        .zip(points)
        .map(|(&id, p)| grads.take(id).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}

fn eval_perturbed<F, B>(
    build: &B,
    points: &[Tensor<F>],
    pi: usize,
    ci: usize,
    delta: f64,
) -> Result<f64>
where
    F: Scalar,
    B: Fn(&mut Tape<F>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut t = p.clone();
            if i == pi {
                let d = t.data_mut();
                d[ci] = d[ci] + F::of(delta);
            }
            tape.leaf(t)
        })
        .collect();
    let out = build(&mut tape, &ids)?;
    Ok(tape.value(out).item().as_f64())
}
