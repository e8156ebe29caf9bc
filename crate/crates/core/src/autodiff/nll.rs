//! Likelihood kernels: per-element negative log likelihoods in bits.
//!
//! `GaussianForm::Bin` integrates a unit-width bin of a Gaussian,
//! `P = Φ((v-μ+0.5)/σ) - Φ((v-μ-0.5)/σ)`, as used for coding quantized
//! values. `GaussianForm::Density` is the plain Gaussian density NLL.
//! The factorized chain is a stack of monotone scalar maps per channel
//! (positive-weight affine layers with bounded tanh gating, logistic
//! output) defining a CDF; bin probabilities come from CDF differences.
//!
//! Probabilities are floored at 2^-16 before the log, capping any single
//! symbol at 16 bits; floored elements get zero gradient.

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, std_normal_cdf, std_normal_pdf, Scalar, LN_2};
use crate::tensor::Tensor;

pub const P_FLOOR: f64 = 1.0 / 65536.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaussianForm {
    /// Bits of the unit-width quantization bin around `v`.
    Bin,
    /// Bits of the continuous density at `v`.
    Density,
}

pub fn gaussian_nll_forward<F: Scalar>(
    form: GaussianForm,
    v: &Tensor<F>,
    mu: &Tensor<F>,
    sigma: &Tensor<F>,
) -> Result<Tensor<F>> {
    if v.shape() != mu.shape() || v.shape() != sigma.shape() {
        return Err(Error::ShapeMismatch {
            op: "gaussian_nll",
            detail: format!("{:?} vs {:?} vs {:?}", v.shape(), mu.shape(), sigma.shape()),
        });
    }
    let n = v.numel();
    let mut out = vec![F::zero(); n];
    let ln2 = F::of(LN_2);
    let floor = F::of(P_FLOOR);
    match form {
        GaussianForm::Bin => {
            for i in 0..n {
                let s = sigma.data()[i];
                let d = v.data()[i] - mu.data()[i];
                let half = F::of(0.5);
                let p = std_normal_cdf((d + half) / s) - std_normal_cdf((d - half) / s);
                out[i] = -(p.max(floor)).ln() / ln2;
            }
        }
        GaussianForm::Density => {
            let c = F::of(0.5 * (2.0 * std::f64::consts::PI).ln());
            for i in 0..n {
                let s = sigma.data()[i];
                let t = (v.data()[i] - mu.data()[i]) / s;
                out[i] = (F::of(0.5) * t * t + s.ln() + c) / ln2;
            }
        }
    }
    Tensor::new(v.shape().to_vec(), out)
}

/// Gradients of `sum(g ∘ bits)` with respect to `(v, mu, sigma)`.
pub fn gaussian_nll_backward<F: Scalar>(
    form: GaussianForm,
    g: &Tensor<F>,
    v: &Tensor<F>,
    mu: &Tensor<F>,
    sigma: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let n = v.numel();
    let mut dv = vec![F::zero(); n];
    let mut dmu = vec![F::zero(); n];
    let mut dsig = vec![F::zero(); n];
    let ln2 = F::of(LN_2);
    let floor = F::of(P_FLOOR);
    match form {
        GaussianForm::Bin => {
            let half = F::of(0.5);
            for i in 0..n {
                let s = sigma.data()[i];
                let d = v.data()[i] - mu.data()[i];
                let hi = (d + half) / s;
                let lo = (d - half) / s;
                let p = std_normal_cdf(hi) - std_normal_cdf(lo);
                if p <= floor {
                    continue;
                }
                let phi_hi = std_normal_pdf(hi);
                let phi_lo = std_normal_pdf(lo);
                let scale = -g.data()[i] / (p * ln2);
                let dp_dv = (phi_hi - phi_lo) / s;
                let dp_ds = -(phi_hi * hi - phi_lo * lo) / s;
                dv[i] = scale * dp_dv;
                dmu[i] = -scale * dp_dv;
                dsig[i] = scale * dp_ds;
            }
        }
        GaussianForm::Density => {
            for i in 0..n {
                let s = sigma.data()[i];
                let t = (v.data()[i] - mu.data()[i]) / s;
                let gi = g.data()[i];
                let dv_i = gi * t / (s * ln2);
                dv[i] = dv_i;
                dmu[i] = -dv_i;
                dsig[i] = gi * (F::one() - t * t) / (s * ln2);
            }
        }
    }
    let shape = v.shape().to_vec();
    (
        Tensor::new(shape.clone(), dv).expect("dv"),
        Tensor::new(shape.clone(), dmu).expect("dmu"),
        Tensor::new(shape, dsig).expect("dsigma"),
    )
}

// ---------------------------------------------------------------------
// Factorized density chain
// ---------------------------------------------------------------------

/// Widths of the per-channel scalar chain, input to output.
pub const CHAIN_WIDTHS: [usize; 5] = [1, 3, 3, 3, 1];
pub const CHAIN_LAYERS: usize = 4;
const WMAX: usize = 3;

/// Per-channel parameter slices in `(h0,b0,a0, h1,b1,a1, h2,b2,a2, h3,b3)`
/// order. Matrices `h` are softplus-reparametrized, gates `a` are
/// tanh-bounded; the final layer has no gate.
pub struct ChanView<'a, F: Scalar> {
    pub h: [&'a [F]; CHAIN_LAYERS],
    pub b: [&'a [F]; CHAIN_LAYERS],
    pub a: [&'a [F]; CHAIN_LAYERS - 1],
}

/// Offsets of one channel inside the 11 stacked parameter tensors.
pub fn chan_view<'a, F: Scalar>(params: &[&'a Tensor<F>], c: usize) -> ChanView<'a, F> {
    debug_assert_eq!(params.len(), 11);
    let mut h: [&[F]; CHAIN_LAYERS] = [&[]; CHAIN_LAYERS];
    let mut b: [&[F]; CHAIN_LAYERS] = [&[]; CHAIN_LAYERS];
    let mut a: [&[F]; CHAIN_LAYERS - 1] = [&[]; CHAIN_LAYERS - 1];
    for k in 0..CHAIN_LAYERS {
        let (r_in, r_out) = (CHAIN_WIDTHS[k], CHAIN_WIDTHS[k + 1]);
        let hk = params[layer_param_index(k, 0)];
        let bk = params[layer_param_index(k, 1)];
        h[k] = &hk.data()[c * r_out * r_in..][..r_out * r_in];
        b[k] = &bk.data()[c * r_out..][..r_out];
        if k + 1 < CHAIN_LAYERS {
            let ak = params[layer_param_index(k, 2)];
            a[k] = &ak.data()[c * r_out..][..r_out];
        }
    }
    ChanView { h, b, a }
}

/// Index of layer `k`'s matrix (`what`=0), bias (1) or gate (2) in the
/// flattened 11-tensor parameter list.
pub fn layer_param_index(k: usize, what: usize) -> usize {
    if k + 1 < CHAIN_LAYERS {
        k * 3 + what
    } else {
        debug_assert!(what < 2);
        9 + what
    }
}

struct ChainState<F: Scalar> {
    /// Inputs to each layer (u[0] holds the evaluation point).
    u: [[F; WMAX]; CHAIN_LAYERS + 1],
    /// Pre-gate affine outputs per layer.
    t: [[F; WMAX]; CHAIN_LAYERS],
}

fn chain_forward<F: Scalar>(v: F, view: &ChanView<F>) -> (F, ChainState<F>) {
    let mut st = ChainState { u: [[F::zero(); WMAX]; CHAIN_LAYERS + 1], t: [[F::zero(); WMAX]; CHAIN_LAYERS] };
    st.u[0][0] = v;
    for k in 0..CHAIN_LAYERS {
        let (r_in, r_out) = (CHAIN_WIDTHS[k], CHAIN_WIDTHS[k + 1]);
        for j in 0..r_out {
            let mut acc = view.b[k][j];
            for i in 0..r_in {
                acc = acc + softplus(view.h[k][j * r_in + i]) * st.u[k][i];
            }
            st.t[k][j] = acc;
            st.u[k + 1][j] = if k + 1 < CHAIN_LAYERS {
                acc + view.a[k][j].tanh() * acc.tanh()
            } else {
                acc
            };
        }
    }
    (st.u[CHAIN_LAYERS][0], st)
}

/// CDF of the factorized density for one channel at point `v`.
pub fn chain_cdf<F: Scalar>(v: F, view: &ChanView<F>) -> F {
    sigmoid(chain_forward(v, view).0)
}

/// Mutable per-channel gradient slices matching [`ChanView`].
struct ChanGrads<'a, F: Scalar> {
    h: [&'a mut [F]; CHAIN_LAYERS],
    b: [&'a mut [F]; CHAIN_LAYERS],
    a: [&'a mut [F]; CHAIN_LAYERS - 1],
}

/// Backprop `d_logit` through one chain evaluation; accumulates parameter
/// gradients and returns the derivative with respect to the input point.
fn chain_backward<F: Scalar>(
    d_logit: F,
    st: &ChainState<F>,
    view: &ChanView<F>,
    grads: &mut ChanGrads<F>,
) -> F {
    let mut du = [F::zero(); WMAX];
    du[0] = d_logit;
    for k in (0..CHAIN_LAYERS).rev() {
        let (r_in, r_out) = (CHAIN_WIDTHS[k], CHAIN_WIDTHS[k + 1]);
        let mut dt = [F::zero(); WMAX];
        for j in 0..r_out {
            if k + 1 < CHAIN_LAYERS {
                let g = view.a[k][j].tanh();
                let th = st.t[k][j].tanh();
                dt[j] = du[j] * (F::one() + g * (F::one() - th * th));
                grads.a[k][j] = grads.a[k][j] + du[j] * th * (F::one() - g * g);
            } else {
                dt[j] = du[j];
            }
            grads.b[k][j] = grads.b[k][j] + dt[j];
        }
        let mut du_next = [F::zero(); WMAX];
        for j in 0..r_out {
            for i in 0..r_in {
                let hji = view.h[k][j * r_in + i];
                grads.h[k][j * r_in + i] =
                    grads.h[k][j * r_in + i] + dt[j] * st.u[k][i] * sigmoid(hji);
                du_next[i] = du_next[i] + dt[j] * softplus(hji);
            }
        }
        du = du_next;
    }
    du[0]
}

fn check_factorized_shapes<F: Scalar>(z: &Tensor<F>, params: &[&Tensor<F>]) -> Result<usize> {
    if z.shape().len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "factorized_nll",
            detail: format!("expected [C,H,W] input, got {:?}", z.shape()),
        });
    }
    let c = z.shape()[0];
    if params.len() != 11 {
        return Err(Error::ShapeMismatch {
            op: "factorized_nll",
            detail: format!("expected 11 parameter tensors, got {}", params.len()),
        });
    }
    for k in 0..CHAIN_LAYERS {
        let (r_in, r_out) = (CHAIN_WIDTHS[k], CHAIN_WIDTHS[k + 1]);
        let h = params[layer_param_index(k, 0)];
        let b = params[layer_param_index(k, 1)];
        if h.shape() != [c, r_out, r_in] || b.shape() != [c, r_out] {
            return Err(Error::ShapeMismatch {
                op: "factorized_nll",
                detail: format!("layer {} params {:?}/{:?}", k, h.shape(), b.shape()),
            });
        }
        if k + 1 < CHAIN_LAYERS {
            let a = params[layer_param_index(k, 2)];
            if a.shape() != [c, r_out] {
                return Err(Error::ShapeMismatch {
                    op: "factorized_nll",
                    detail: format!("layer {} gate {:?}", k, a.shape()),
                });
            }
        }
    }
    Ok(c)
}

/// Per-element bits of the unit bin `[v-0.5, v+0.5]` under each channel's
/// factorized density.
pub fn factorized_nll_forward<F: Scalar>(
    z: &Tensor<F>,
    params: &[&Tensor<F>],
) -> Result<Tensor<F>> {
    let c_n = check_factorized_shapes(z, params)?;
    let sp = z.shape()[1] * z.shape()[2];
    let mut out = vec![F::zero(); z.numel()];
    let ln2 = F::of(LN_2);
    let floor = F::of(P_FLOOR);
    let half = F::of(0.5);
    for c in 0..c_n {
        let view = chan_view(params, c);
        for i in 0..sp {
            let v = z.data()[c * sp + i];
            let p = chain_cdf(v + half, &view) - chain_cdf(v - half, &view);
            out[c * sp + i] = -(p.max(floor)).ln() / ln2;
        }
    }
    Tensor::new(z.shape().to_vec(), out)
}

/// Gradients of `sum(g ∘ bits)` with respect to `z` and the 11 parameter
/// tensors (in the same order as the inputs).
pub fn factorized_nll_backward<F: Scalar>(
    g: &Tensor<F>,
    z: &Tensor<F>,
    params: &[&Tensor<F>],
) -> (Tensor<F>, Vec<Tensor<F>>) {
    let c_n = z.shape()[0];
    let sp = z.shape()[1] * z.shape()[2];
    let mut dz = vec![F::zero(); z.numel()];
    let mut dparams: Vec<Tensor<F>> =
        params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    let ln2 = F::of(LN_2);
    let floor = F::of(P_FLOOR);
    let half = F::of(0.5);
    for c in 0..c_n {
        let view = chan_view(params, c);
        // split the flat gradient buffers into this channel's slices
        let (mut gh, mut gb, mut ga): (Vec<_>, Vec<_>, Vec<_>) = (vec![], vec![], vec![]);
        let mut iter = dparams.iter_mut();
        for k in 0..CHAIN_LAYERS {
            let (r_in, r_out) = (CHAIN_WIDTHS[k], CHAIN_WIDTHS[k + 1]);
            gh.push(&mut iter.next().expect("h grad").data_mut()[c * r_out * r_in..][..r_out * r_in]);
            gb.push(&mut iter.next().expect("b grad").data_mut()[c * r_out..][..r_out]);
            if k + 1 < CHAIN_LAYERS {
                ga.push(&mut iter.next().expect("a grad").data_mut()[c * r_out..][..r_out]);
            }
        }
        let mut grads = ChanGrads {
            h: gh.try_into().ok().expect("h arity"),
            b: gb.try_into().ok().expect("b arity"),
            a: ga.try_into().ok().expect("a arity"),
        };
        for i in 0..sp {
            let v = z.data()[c * sp + i];
            let (l_hi, st_hi) = chain_forward(v + half, &view);
            let (l_lo, st_lo) = chain_forward(v - half, &view);
            let c_hi = sigmoid(l_hi);
            let c_lo = sigmoid(l_lo);
            let p = c_hi - c_lo;
            if p <= floor {
                continue;
            }
            let dbits_dp = -g.data()[c * sp + i] / (p * ln2);
            let d_hi = dbits_dp * c_hi * (F::one() - c_hi);
            let d_lo = -dbits_dp * c_lo * (F::one() - c_lo);
            let dv_hi = chain_backward(d_hi, &st_hi, &view, &mut grads);
            let dv_lo = chain_backward(d_lo, &st_lo, &view, &mut grads);
            dz[c * sp + i] = dv_hi + dv_lo;
        }
    }
    (Tensor::new(z.shape().to_vec(), dz).expect("dz"), dparams)
}
