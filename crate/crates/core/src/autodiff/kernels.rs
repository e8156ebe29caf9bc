//! Raw forward/backward kernels for the structured ops.
//!
//! Convolutions are direct (no im2col); shapes at this scale are small
//! enough that cache-friendly loops with hoisted bounds win.
//!
//! Conventions:
//!   conv2d            x: [Ci,H,W]  w: [Co,Ci,Kh,Kw]  b: [Co] -> [Co,Oh,Ow]
//!   conv2d_transpose  x: [Ci,H,W]  w: [Ci,Co,Kh,Kw]  b: [Co] -> [Co,Oh,Ow]
//!   dense             x: [N]       w: [M,N]                  -> [M]
//!
//! Transposed convolution uses output padding `stride - 1`, so a
//! stride-2 pair inverts shapes exactly for even extents.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

/// Range of `o` in `[0, o_max)` such that `0 <= o*s + off < lim`.
#[inline]
fn srange(o_max: usize, s: usize, off: isize, lim: usize) -> (usize, usize) {
    let lo = if off >= 0 { 0 } else { ((-off) as usize + s - 1) / s };
    let hi_num = lim as isize - 1 - off;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / s) + 1;
    (lo.min(o_max), hi.min(o_max))
}

pub fn conv2d_out_shape(
    xs: &[usize],
    ws: &[usize],
    stride: usize,
    pad: usize,
) -> Result<[usize; 3]> {
    if xs.len() != 3 || ws.len() != 4 {
        return Err(shape_err("conv2d", format!("x {:?}, w {:?}", xs, ws)));
    }
    let (ci, h, w) = (xs[0], xs[1], xs[2]);
    let (co, wci, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if ci != wci {
        return Err(shape_err("conv2d", format!("{} input channels, kernel expects {}", ci, wci)));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw || stride == 0 {
        return Err(shape_err("conv2d", format!("kernel {}x{} too big for {}x{} pad {}", kh, kw, h, w, pad)));
    }
    Ok([co, (h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1])
}

pub fn conv2d_transpose_out_shape(
    xs: &[usize],
    ws: &[usize],
    stride: usize,
    pad: usize,
) -> Result<[usize; 3]> {
    if xs.len() != 3 || ws.len() != 4 {
        return Err(shape_err("conv2d_transpose", format!("x {:?}, w {:?}", xs, ws)));
    }
    let (ci, h, w) = (xs[0], xs[1], xs[2]);
    let (wci, co, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if ci != wci {
        return Err(shape_err("conv2d_transpose", format!("{} input channels, kernel expects {}", ci, wci)));
    }
    if stride == 0 {
        return Err(shape_err("conv2d_transpose", "stride 0".into()));
    }
    let oh = (h - 1) * stride + kh + (stride - 1);
    let ow = (w - 1) * stride + kw + (stride - 1);
    if oh < 2 * pad || ow < 2 * pad {
        return Err(shape_err("conv2d_transpose", "padding exceeds output".into()));
    }
    Ok([co, oh - 2 * pad, ow - 2 * pad])
}

pub fn conv2d<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let os = conv2d_out_shape(x.shape(), w.shape(), stride, pad)?;
    let [co_n, oh_n, ow_n] = os;
    if b.shape() != [co_n] {
        return Err(shape_err("conv2d", format!("bias {:?}, expected [{}]", b.shape(), co_n)));
    }
    let (ci_n, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw) = (w.shape()[2], w.shape()[3]);
    let xd = x.data();
    let wdt = w.data();
    let bd = b.data();
    let mut out = vec![F::zero(); co_n * oh_n * ow_n];
    let p = pad as isize;
    for co in 0..co_n {
        let out_c = &mut out[co * oh_n * ow_n..][..oh_n * ow_n];
        out_c.fill(bd[co]);
        for ci in 0..ci_n {
            let x_c = &xd[ci * h * wd..][..h * wd];
            let w_cc = &wdt[(co * ci_n + ci) * kh * kw..][..kh * kw];
            for kh_i in 0..kh {
                let hoff = kh_i as isize - p;
                let (oh_lo, oh_hi) = srange(oh_n, stride, hoff, h);
                for kw_i in 0..kw {
                    let wv = w_cc[kh_i * kw + kw_i];
                    let woff = kw_i as isize - p;
                    let (ow_lo, ow_hi) = srange(ow_n, stride, woff, wd);
                    for oh_i in oh_lo..oh_hi {
                        let ih = (oh_i * stride) as isize + hoff;
                        let x_row = &x_c[ih as usize * wd..][..wd];
                        let out_row = &mut out_c[oh_i * ow_n..][..ow_n];
                        for ow_i in ow_lo..ow_hi {
                            let iw = (ow_i * stride) as isize + woff;
                            out_row[ow_i] = out_row[ow_i] + wv * x_row[iw as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(os.to_vec(), out)
}

pub fn conv2d_grad_input<F: Scalar>(
    g: &Tensor<F>,
    w: &Tensor<F>,
    xs: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<F> {
    let (ci_n, h, wd) = (xs[0], xs[1], xs[2]);
    let (co_n, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (oh_n, ow_n) = (g.shape()[1], g.shape()[2]);
    let gd = g.data();
    let wdt = w.data();
    let mut dx = vec![F::zero(); ci_n * h * wd];
    let p = pad as isize;
    for co in 0..co_n {
        let g_c = &gd[co * oh_n * ow_n..][..oh_n * ow_n];
        for ci in 0..ci_n {
            let dx_c = &mut dx[ci * h * wd..][..h * wd];
            let w_cc = &wdt[(co * ci_n + ci) * kh * kw..][..kh * kw];
            for kh_i in 0..kh {
                let hoff = kh_i as isize - p;
                let (oh_lo, oh_hi) = srange(oh_n, stride, hoff, h);
                for kw_i in 0..kw {
                    let wv = w_cc[kh_i * kw + kw_i];
                    let woff = kw_i as isize - p;
                    let (ow_lo, ow_hi) = srange(ow_n, stride, woff, wd);
                    for oh_i in oh_lo..oh_hi {
                        let ih = (oh_i * stride) as isize + hoff;
                        let g_row = &g_c[oh_i * ow_n..][..ow_n];
                        let dx_row = &mut dx_c[ih as usize * wd..][..wd];
                        for ow_i in ow_lo..ow_hi {
                            let iw = ((ow_i * stride) as isize + woff) as usize;
                            dx_row[iw] = dx_row[iw] + wv * g_row[ow_i];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(xs.to_vec(), dx).expect("dx shape")
}

pub fn conv2d_grad_weight<F: Scalar>(
    g: &Tensor<F>,
    x: &Tensor<F>,
    ws: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<F> {
    let (ci_n, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kh, kw) = (ws[0], ws[2], ws[3]);
    let (oh_n, ow_n) = (g.shape()[1], g.shape()[2]);
    let gd = g.data();
    let xd = x.data();
    let mut dw = vec![F::zero(); co_n * ci_n * kh * kw];
    let p = pad as isize;
    for co in 0..co_n {
        let g_c = &gd[co * oh_n * ow_n..][..oh_n * ow_n];
        for ci in 0..ci_n {
            let x_c = &xd[ci * h * wd..][..h * wd];
            for kh_i in 0..kh {
                let hoff = kh_i as isize - p;
                let (oh_lo, oh_hi) = srange(oh_n, stride, hoff, h);
                for kw_i in 0..kw {
                    let woff = kw_i as isize - p;
                    let (ow_lo, ow_hi) = srange(ow_n, stride, woff, wd);
                    let mut acc = F::zero();
                    for oh_i in oh_lo..oh_hi {
                        let ih = (oh_i * stride) as isize + hoff;
                        let g_row = &g_c[oh_i * ow_n..][..ow_n];
                        let x_row = &x_c[ih as usize * wd..][..wd];
                        for ow_i in ow_lo..ow_hi {
                            let iw = ((ow_i * stride) as isize + woff) as usize;
                            acc = acc + g_row[ow_i] * x_row[iw];
                        }
                    }
                    dw[((co * ci_n + ci) * kh + kh_i) * kw + kw_i] = acc;
                }
            }
        }
    }
    Tensor::new(ws.to_vec(), dw).expect("dw shape")
}

/// Per-channel sum of the gradient over spatial positions.
pub fn grad_bias<F: Scalar>(g: &Tensor<F>) -> Tensor<F> {
    let (c_n, sp) = (g.shape()[0], g.shape()[1] * g.shape()[2]);
    let gd = g.data();
    let data = (0..c_n)
        .map(|c| gd[c * sp..][..sp].iter().copied().sum())
        .collect();
    Tensor::new(vec![c_n], data).expect("db shape")
}

pub fn conv2d_transpose<F: Scalar>(
    x: &Tensor<F>,
    w: &Tensor<F>,
    b: &Tensor<F>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<F>> {
    let os = conv2d_transpose_out_shape(x.shape(), w.shape(), stride, pad)?;
    let [co_n, oh_n, ow_n] = os;
    if b.shape() != [co_n] {
        return Err(shape_err("conv2d_transpose", format!("bias {:?}, expected [{}]", b.shape(), co_n)));
    }
    let (ci_n, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw) = (w.shape()[2], w.shape()[3]);
    let xd = x.data();
    let wdt = w.data();
    let bd = b.data();
    let mut out = vec![F::zero(); co_n * oh_n * ow_n];
    let p = pad as isize;
    for co in 0..co_n {
        out[co * oh_n * ow_n..][..oh_n * ow_n].fill(bd[co]);
    }
    for ci in 0..ci_n {
        let x_c = &xd[ci * h * wd..][..h * wd];
        for co in 0..co_n {
            let out_c = &mut out[co * oh_n * ow_n..][..oh_n * ow_n];
            let w_cc = &wdt[(ci * co_n + co) * kh * kw..][..kh * kw];
            for kh_i in 0..kh {
                let hoff = kh_i as isize - p;
                let (ih_lo, ih_hi) = srange(h, stride, hoff, oh_n);
                for kw_i in 0..kw {
                    let wv = w_cc[kh_i * kw + kw_i];
                    let woff = kw_i as isize - p;
                    let (iw_lo, iw_hi) = srange(wd, stride, woff, ow_n);
                    for ih in ih_lo..ih_hi {
                        let oh = ((ih * stride) as isize + hoff) as usize;
                        let x_row = &x_c[ih * wd..][..wd];
                        let out_row = &mut out_c[oh * ow_n..][..ow_n];
                        for iw in iw_lo..iw_hi {
                            let ow = ((iw * stride) as isize + woff) as usize;
                            out_row[ow] = out_row[ow] + wv * x_row[iw];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(os.to_vec(), out)
}

pub fn conv2d_transpose_grad_input<F: Scalar>(
    g: &Tensor<F>,
    w: &Tensor<F>,
    xs: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<F> {
    let (ci_n, h, wd) = (xs[0], xs[1], xs[2]);
    let (co_n, kh, kw) = (w.shape()[1], w.shape()[2], w.shape()[3]);
    let (oh_n, ow_n) = (g.shape()[1], g.shape()[2]);
    let gd = g.data();
    let wdt = w.data();
    let mut dx = vec![F::zero(); ci_n * h * wd];
    let p = pad as isize;
    for ci in 0..ci_n {
        let dx_c = &mut dx[ci * h * wd..][..h * wd];
        for co in 0..co_n {
            let g_c = &gd[co * oh_n * ow_n..][..oh_n * ow_n];
            let w_cc = &wdt[(ci * co_n + co) * kh * kw..][..kh * kw];
            for kh_i in 0..kh {
                let hoff = kh_i as isize - p;
                let (ih_lo, ih_hi) = srange(h, stride, hoff, oh_n);
                for kw_i in 0..kw {
                    let wv = w_cc[kh_i * kw + kw_i];
                    let woff = kw_i as isize - p;
                    let (iw_lo, iw_hi) = srange(wd, stride, woff, ow_n);
                    for ih in ih_lo..ih_hi {
                        let oh = ((ih * stride) as isize + hoff) as usize;
                        let g_row = &g_c[oh * ow_n..][..ow_n];
                        let dx_row = &mut dx_c[ih * wd..][..wd];
                        for iw in iw_lo..iw_hi {
                            let ow = ((iw * stride) as isize + woff) as usize;
                            dx_row[iw] = dx_row[iw] + wv * g_row[ow];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(xs.to_vec(), dx).expect("dx shape")
}

pub fn conv2d_transpose_grad_weight<F: Scalar>(
    g: &Tensor<F>,
    x: &Tensor<F>,
    ws: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<F> {
    let (ci_n, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kh, kw) = (ws[1], ws[2], ws[3]);
    let (oh_n, ow_n) = (g.shape()[1], g.shape()[2]);
    let gd = g.data();
    let xd = x.data();
    let mut dw = vec![F::zero(); ci_n * co_n * kh * kw];
    let p = pad as isize;
    for ci in 0..ci_n {
        let x_c = &xd[ci * h * wd..][..h * wd];
        for co in 0..co_n {
            let g_c = &gd[co * oh_n * ow_n..][..oh_n * ow_n];
            for kh_i in 0..kh {
                let hoff = kh_i as isize - p;
                let (ih_lo, ih_hi) = srange(h, stride, hoff, oh_n);
                for kw_i in 0..kw {
                    let woff = kw_i as isize - p;
                    let (iw_lo, iw_hi) = srange(wd, stride, woff, ow_n);
                    let mut acc = F::zero();
                    for ih in ih_lo..ih_hi {
                        let oh = ((ih * stride) as isize + hoff) as usize;
                        let g_row = &g_c[oh * ow_n..][..ow_n];
                        let x_row = &x_c[ih * wd..][..wd];
                        for iw in iw_lo..iw_hi {
                            let ow = ((iw * stride) as isize + woff) as usize;
                            acc = acc + x_row[iw] * g_row[ow];
                        }
                    }
                    dw[((ci * co_n + co) * kh + kh_i) * kw + kw_i] = acc;
                }
            }
        }
    }
    Tensor::new(ws.to_vec(), dw).expect("dw shape")
}

pub fn dense<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>) -> Result<Tensor<F>> {
    if w.shape().len() != 2 || x.numel() != w.shape()[1] {
        return Err(shape_err("dense", format!("x {:?}, w {:?}", x.shape(), w.shape())));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let xd = x.data();
    let wd = w.data();
    let data = (0..m)
        .map(|i| {
            wd[i * n..][..n]
                .iter()
                .zip(xd)
                .map(|(&wv, &xv)| wv * xv)
                .sum()
        })
        .collect();
    Tensor::new(vec![m], data)
}

pub fn dense_grad_input<F: Scalar>(g: &Tensor<F>, w: &Tensor<F>, xs: &[usize]) -> Tensor<F> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let gd = g.data();
    let wd = w.data();
    let mut dx = vec![F::zero(); n];
    for i in 0..m {
        let row = &wd[i * n..][..n];
        let gi = gd[i];
        for j in 0..n {
            dx[j] = dx[j] + gi * row[j];
        }
    }
    Tensor::new(xs.to_vec(), dx).expect("dx shape")
}

pub fn dense_grad_weight<F: Scalar>(g: &Tensor<F>, x: &Tensor<F>) -> Tensor<F> {
    let (m, n) = (g.numel(), x.numel());
    let gd = g.data();
    let xd = x.data();
    let mut dw = vec![F::zero(); m * n];
    for i in 0..m {
        let gi = gd[i];
        let row = &mut dw[i * n..][..n];
        for j in 0..n {
            row[j] = gi * xd[j];
        }
    }
    Tensor::new(vec![m, n], dw).expect("dw shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent reference conv with per-output gathering and explicit
    /// bounds checks, used to validate the hoisted-range kernels.
    fn conv2d_naive(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let [co_n, oh_n, ow_n] = conv2d_out_shape(x.shape(), w.shape(), stride, pad).unwrap();
        let (ci_n, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw) = (w.shape()[2], w.shape()[3]);
        let mut out = vec![0.0; co_n * oh_n * ow_n];
        for co in 0..co_n {
            for oh in 0..oh_n {
                for ow in 0..ow_n {
                    let mut acc = b.data()[co];
                    for ci in 0..ci_n {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (oh * stride + ki) as isize - pad as isize;
                                let iw = (ow * stride + kj) as isize - pad as isize;
                                if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                                    acc += x.data()[(ci * h + ih as usize) * wd + iw as usize]
                                        * w.data()[((co * ci_n + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                    }
                    out[(co * oh_n + oh) * ow_n + ow] = acc;
                }
            }
        }
        Tensor::new(vec![co_n, oh_n, ow_n], out).unwrap()
    }

    fn rnd_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = crate::rng::Rng::new(seed);
        Tensor::from_fn(shape, |_| r.range(-1.0, 1.0))
    }

    #[test]
    fn conv_all_ones_3x3_sums_to_nine() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn conv_matches_naive_reference() {
        for &(stride, pad, k) in &[(1usize, 0usize, 3usize), (1, 1, 3), (2, 1, 3), (2, 2, 5), (1, 2, 5)] {
            let x = rnd_tensor(&[3, 9, 10], 5 + stride as u64 + pad as u64);
            let w = rnd_tensor(&[4, 3, k, k], 17 + k as u64);
            let b = rnd_tensor(&[4], 23);
            let fast = conv2d(&x, &w, &b, stride, pad).unwrap();
            let slow = conv2d_naive(&x, &w, &b, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, c) in fast.data().iter().zip(slow.data()) {
                assert!((a - c).abs() < 1e-12, "s={stride} p={pad} k={k}");
            }
        }
    }

    #[test]
    fn transpose_inverts_stride2_shapes() {
        // stride-2 pairs with pad k/2 and output padding 1 halve then restore
        let x = rnd_tensor(&[2, 8, 8], 1);
        let w_down = rnd_tensor(&[5, 2, 5, 5], 2);
        let b_down = Tensor::zeros(&[5]);
        let y = conv2d(&x, &w_down, &b_down, 2, 2).unwrap();
        assert_eq!(y.shape(), &[5, 4, 4]);
        let w_up = rnd_tensor(&[5, 2, 5, 5], 3);
        let b_up = Tensor::zeros(&[2]);
        let z = conv2d_transpose(&y, &w_up, &b_up, 2, 2).unwrap();
        assert_eq!(z.shape(), &[2, 8, 8]);

        let w3 = rnd_tensor(&[5, 2, 3, 3], 4);
        let y3 = conv2d_transpose(&y, &w3, &b_up, 2, 1).unwrap();
        assert_eq!(y3.shape(), &[2, 8, 8]);
    }

    #[test]
    fn transpose_agrees_with_adjoint_of_conv() {
        // <conv(x), g> == <x, conv_grad_input(g)> and conv_grad_input is the
        // same computation conv2d_transpose performs (up to weight layout).
        let x = rnd_tensor(&[2, 6, 6], 31);
        let w = rnd_tensor(&[3, 2, 3, 3], 32);
        let b = Tensor::zeros(&[3]);
        let y = conv2d(&x, &w, &b, 2, 1).unwrap();
        let g = rnd_tensor(y.shape(), 33);
        let dx = conv2d_grad_input(&g, &w, x.shape(), 2, 1);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, c)| a * c).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, c)| a * c).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn dense_small_case() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 3.0, -1.0]).unwrap();
        let y = dense(&x, &w).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0]);
    }
}
