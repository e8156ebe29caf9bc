//! The toy hyperprior codec: transforms, quantization, likelihoods and the
//! rate-distortion objective.
//!
//! Analysis `g_a` downsamples images 8x into latents `y`; the hyper
//! analysis `h_a` downsamples latents a further 4x into hyper-latents `z`.
//! `h_e` maps quantized `z` to a per-element Gaussian `(μ, σ)` for `y`;
//! synthesis `g_e` reconstructs the image. `z` itself is coded with the
//! learned factorized density.
//!
//! Coding is centered: the residual `round(y - μ)` is what gets coded and
//! `ŷ = round(y - μ) + μ`. Rates are in bits; the scalar objective is
//! `(rate_y + rate_z) / (H·W) + λ · 255² · MSE` with MSE on the `[0, 1]`
//! pixel scale.

pub mod checkpoint;
pub mod density;

pub use checkpoint::Checkpoint;
pub use density::FactorizedDensity;

use crate::autodiff::{GaussianForm, QuantizeMode, Tape, VarId};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Training trade-off grid; index into this with `--lambda-index`.
pub const LAMBDA_GRID: [f64; 6] = [0.0018, 0.0035, 0.0067, 0.013, 0.025, 0.048];

/// Distortion terms are scaled to the 8-bit pixel range.
pub const DISTORTION_SCALE: f64 = 255.0 * 255.0;

/// Inputs are padded to this multiple before analysis.
pub const PAD_MULTIPLE: usize = 32;

const MAIN_PAD: usize = 2;
const HYPER_PAD: usize = 1;

/// Seed streams for quantizer noise inside the objective.
const SEED_STREAM_QZ: u64 = 1;
const SEED_STREAM_QY: u64 = 2;
/// Stream tag for dropout masks in the direct (off-tape) forward path.
const SEED_STREAM_MASK: u64 = 0x4d41534b;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub main_hidden: usize,
    pub hyper_hidden: usize,
    /// `h_a` conv layers whose input may be dropout-masked.
    pub dropout_layers: Vec<usize>,
    pub sigma_min: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            in_channels: 3,
            latent_channels: 32,
            hyper_channels: 16,
            main_hidden: 32,
            hyper_hidden: 32,
            dropout_layers: vec![1],
            sigma_min: 0.04,
        }
    }
}

impl Architecture {
    /// Canonical single-line descriptor stored in checkpoints.
    pub fn descriptor(&self) -> String {
        let drop: Vec<String> = self.dropout_layers.iter().map(|l| l.to_string()).collect();
        format!(
            "latentlab-arch v1 in={} cy={} cz={} mh={} hh={} smin={} drop={}",
            self.in_channels,
            self.latent_channels,
            self.hyper_channels,
            self.main_hidden,
            self.hyper_hidden,
            self.sigma_min,
            if drop.is_empty() { "-".to_string() } else { drop.join(",") },
        )
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut fields = text.split_whitespace();
        let bad = |what: &str| Error::Format(format!("architecture descriptor: {what}"));
        if fields.next() != Some("latentlab-arch") || fields.next() != Some("v1") {
            return Err(bad("unknown header"));
        }
        let mut arch = Architecture::default();
        for field in fields {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(field))?;
            match key {
                "in" => arch.in_channels = value.parse().map_err(|_| bad(field))?,
                "cy" => arch.latent_channels = value.parse().map_err(|_| bad(field))?,
                "cz" => arch.hyper_channels = value.parse().map_err(|_| bad(field))?,
                "mh" => arch.main_hidden = value.parse().map_err(|_| bad(field))?,
                "hh" => arch.hyper_hidden = value.parse().map_err(|_| bad(field))?,
                "smin" => arch.sigma_min = value.parse().map_err(|_| bad(field))?,
                "drop" => {
                    arch.dropout_layers = if value == "-" {
                        vec![]
                    } else {
                        value
                            .split(',')
                            .map(|v| v.parse().map_err(|_| bad(field)))
                            .collect::<Result<Vec<usize>>>()?
                    }
                }
                _ => return Err(bad(field)),
            }
        }
        Ok(arch)
    }

    pub fn latent_shape(&self, h: usize, w: usize) -> [usize; 3] {
        [self.latent_channels, h / 8, w / 8]
    }

    pub fn hyper_shape(&self, h: usize, w: usize) -> [usize; 3] {
        [self.hyper_channels, h / 32, w / 32]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParam<F: Scalar> {
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

/// All learned parameters, in checkpoint declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F: Scalar> {
    pub ga: [ConvParam<F>; 3],
    pub ge: [ConvParam<F>; 3],
    pub ha: [ConvParam<F>; 2],
    pub he_hidden: ConvParam<F>,
    pub he_mu: ConvParam<F>,
    pub he_sigma: ConvParam<F>,
    pub density: FactorizedDensity<F>,
}

impl<F: Scalar> Params<F> {
    pub fn ordered(&self) -> Vec<&Tensor<F>> {
        let mut out = Vec::with_capacity(33);
        for layer in &self.ga {
            out.push(&layer.w);
            out.push(&layer.b);
        }
        for layer in &self.ge {
            out.push(&layer.w);
            out.push(&layer.b);
        }
        for layer in &self.ha {
            out.push(&layer.w);
            out.push(&layer.b);
        }
        for layer in [&self.he_hidden, &self.he_mu, &self.he_sigma] {
            out.push(&layer.w);
            out.push(&layer.b);
        }
        out.extend(self.density.tensors().iter());
        out
    }

    pub fn ordered_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::with_capacity(33);
        for layer in &mut self.ga {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        for layer in &mut self.ge {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        for layer in &mut self.ha {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        for layer in [&mut self.he_hidden, &mut self.he_mu, &mut self.he_sigma] {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out.extend(self.density.tensors_mut().iter_mut());
        out
    }

    pub fn tensor_count() -> usize {
        33
    }
}

/// Tape handles for registered parameters.
pub struct ParamIds {
    pub ga: [(VarId, VarId); 3],
    pub ge: [(VarId, VarId); 3],
    pub ha: [(VarId, VarId); 2],
    pub he_hidden: (VarId, VarId),
    pub he_mu: (VarId, VarId),
    pub he_sigma: (VarId, VarId),
    pub density: Vec<VarId>,
}

impl ParamIds {
    pub fn ordered(&self) -> Vec<VarId> {
        let mut out = Vec::with_capacity(33);
        for (w, b) in self.ga.iter().chain(self.ge.iter()).chain(self.ha.iter()) {
            out.push(*w);
            out.push(*b);
        }
        for (w, b) in [self.he_hidden, self.he_mu, self.he_sigma] {
            out.push(w);
            out.push(b);
        }
        out.extend(self.density.iter().copied());
        out
    }
}

pub fn register_params<F: Scalar>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    trainable: bool,
) -> ParamIds {
    let mut reg = |t: &Tensor<F>| {
        let mut c = t.clone();
        c.requires_grad = trainable;
        tape.leaf(c)
    };
    let conv = |reg: &mut dyn FnMut(&Tensor<F>) -> VarId, p: &ConvParam<F>| (reg(&p.w), reg(&p.b));
    let ga = [
        conv(&mut reg, &params.ga[0]),
        conv(&mut reg, &params.ga[1]),
        conv(&mut reg, &params.ga[2]),
    ];
    let ge = [
        conv(&mut reg, &params.ge[0]),
        conv(&mut reg, &params.ge[1]),
        conv(&mut reg, &params.ge[2]),
    ];
    let ha = [conv(&mut reg, &params.ha[0]), conv(&mut reg, &params.ha[1])];
    let he_hidden = conv(&mut reg, &params.he_hidden);
    let he_mu = conv(&mut reg, &params.he_mu);
    let he_sigma = conv(&mut reg, &params.he_sigma);
    let density = params.density.tensors().iter().map(&mut reg).collect();
    ParamIds { ga, ge, ha, he_hidden, he_mu, he_sigma, density }
}

/// Dropout request for `h_a`: mask the input of each listed conv layer.
#[derive(Debug, Clone)]
pub struct DropoutSpec {
    pub keep_prob: f64,
    pub seed: u64,
    pub layers: Vec<usize>,
}

// ---------------------------------------------------------------------
// transforms (tape builders)
// ---------------------------------------------------------------------

pub fn analysis_t<F: Scalar>(tape: &mut Tape<F>, x: VarId, p: &ParamIds) -> Result<VarId> {
    let c0 = tape.conv2d(x, p.ga[0].0, p.ga[0].1, 2, MAIN_PAD)?;
    let a0 = tape.softplus(c0)?;
    let c1 = tape.conv2d(a0, p.ga[1].0, p.ga[1].1, 2, MAIN_PAD)?;
    let a1 = tape.softplus(c1)?;
    tape.conv2d(a1, p.ga[2].0, p.ga[2].1, 2, MAIN_PAD)
}

pub fn hyper_analysis_t<F: Scalar>(
    tape: &mut Tape<F>,
    y: VarId,
    p: &ParamIds,
    dropout: Option<&DropoutSpec>,
) -> Result<VarId> {
    let masked = |tape: &mut Tape<F>, input: VarId, layer: usize| -> Result<VarId> {
        match dropout {
            Some(spec) if spec.layers.contains(&layer) => {
                let seed = rng::counter_hash(spec.seed, SEED_STREAM_MASK, layer as u64);
                tape.dropout(input, spec.keep_prob, seed)
            }
            _ => Ok(input),
        }
    };
    let in0 = masked(tape, y, 0)?;
    let c0 = tape.conv2d(in0, p.ha[0].0, p.ha[0].1, 2, HYPER_PAD)?;
    let a0 = tape.softplus(c0)?;
    let in1 = masked(tape, a0, 1)?;
    tape.conv2d(in1, p.ha[1].0, p.ha[1].1, 2, HYPER_PAD)
}

pub fn hyper_synthesis_t<F: Scalar>(
    tape: &mut Tape<F>,
    zhat: VarId,
    p: &ParamIds,
    sigma_min: f64,
) -> Result<(VarId, VarId)> {
    let h = tape.conv2d_transpose(zhat, p.he_hidden.0, p.he_hidden.1, 2, HYPER_PAD)?;
    let a = tape.softplus(h)?;
    let mu = tape.conv2d_transpose(a, p.he_mu.0, p.he_mu.1, 2, HYPER_PAD)?;
    let raw = tape.conv2d_transpose(a, p.he_sigma.0, p.he_sigma.1, 2, HYPER_PAD)?;
    let sp = tape.softplus(raw)?;
    let sigma = tape.add_scalar(sp, sigma_min)?;
    Ok((mu, sigma))
}

pub fn synthesis_t<F: Scalar>(tape: &mut Tape<F>, yhat: VarId, p: &ParamIds) -> Result<VarId> {
    let t0 = tape.conv2d_transpose(yhat, p.ge[0].0, p.ge[0].1, 2, MAIN_PAD)?;
    let a0 = tape.softplus(t0)?;
    let t1 = tape.conv2d_transpose(a0, p.ge[1].0, p.ge[1].1, 2, MAIN_PAD)?;
    let a1 = tape.softplus(t1)?;
    tape.conv2d_transpose(a1, p.ge[2].0, p.ge[2].1, 2, MAIN_PAD)
}

// ---------------------------------------------------------------------
// transforms (direct convenience wrappers)
// ---------------------------------------------------------------------

fn run_isolated<F: Scalar>(
    ckpt: &Checkpoint<F>,
    build: impl FnOnce(&mut Tape<F>, &ParamIds) -> Result<Vec<VarId>>,
) -> Result<Vec<Tensor<F>>> {
    let mut tape = Tape::new();
    let p = register_params(&mut tape, &ckpt.params, false);
    let outs = build(&mut tape, &p)?;
    Ok(outs.into_iter().map(|id| tape.value(id).clone()).collect())
}

/// `y = g_a(x)`; `x` must be `[C, H, W]` with spatial dims divisible by 8.
pub fn analysis<F: Scalar>(ckpt: &Checkpoint<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
    if x.shape().len() != 3 || x.shape()[1] % 8 != 0 || x.shape()[2] % 8 != 0 {
        return Err(Error::ShapeMismatch {
            op: "analysis",
            detail: format!("expected [C,H,W] with H,W divisible by 8, got {:?}", x.shape()),
        });
    }
    Ok(run_isolated(ckpt, |tape, p| {
        let xi = tape.leaf(x.clone());
        Ok(vec![analysis_t(tape, xi, p)?])
    })?
    .remove(0))
}

/// `z = h_a(y)`, optionally with inverted dropout on configured layers.
pub fn hyper_analysis<F: Scalar>(
    ckpt: &Checkpoint<F>,
    y: &Tensor<F>,
    dropout: Option<&DropoutSpec>,
) -> Result<Tensor<F>> {
    Ok(run_isolated(ckpt, |tape, p| {
        let yi = tape.leaf(y.clone());
        Ok(vec![hyper_analysis_t(tape, yi, p, dropout)?])
    })?
    .remove(0))
}

/// `(μ, σ) = h_e(ẑ)` with `σ = softplus(raw) + σ_min`.
pub fn hyper_synthesis<F: Scalar>(
    ckpt: &Checkpoint<F>,
    zhat: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let mut out = run_isolated(ckpt, |tape, p| {
        let zi = tape.leaf(zhat.clone());
        let (mu, sigma) = hyper_synthesis_t(tape, zi, p, ckpt.arch.sigma_min)?;
        Ok(vec![mu, sigma])
    })?;
    let sigma = out.remove(1);
    let mu = out.remove(0);
    Ok((mu, sigma))
}

/// `x̂ = g_e(ŷ)`, unclamped; clamp only when emitting an image.
pub fn synthesis<F: Scalar>(ckpt: &Checkpoint<F>, yhat: &Tensor<F>) -> Result<Tensor<F>> {
    Ok(run_isolated(ckpt, |tape, p| {
        let yi = tape.leaf(yhat.clone());
        Ok(vec![synthesis_t(tape, yi, p)?])
    })?
    .remove(0))
}

/// Clamp to the displayable range; used only at image emission.
pub fn clamp_image<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| v.max(F::zero()).min(F::one()))
}

/// Quantize off-tape with the same element hashing as the tape op.
pub fn quantize<F: Scalar>(x: &Tensor<F>, mode: QuantizeMode, seed: u64) -> Tensor<F> {
    crate::autodiff::quantize::quantize_forward(
        x,
        mode,
        seed,
        crate::autodiff::quantize::QUANT_STREAM,
    )
}

// ---------------------------------------------------------------------
// rates and the objective
// ---------------------------------------------------------------------

/// Per-element bits and total for `ŷ` under `N(μ, σ)` unit bins.
pub fn gaussian_rate<F: Scalar>(
    yhat: &Tensor<F>,
    mu: &Tensor<F>,
    sigma: &Tensor<F>,
) -> Result<(Tensor<F>, F)> {
    let bits = crate::autodiff::nll::gaussian_nll_forward(GaussianForm::Bin, yhat, mu, sigma)?;
    let total = bits.sum();
    Ok((bits, total))
}

/// Per-element bits and total for `ẑ` under the factorized density.
pub fn factorized_rate<F: Scalar>(
    zhat: &Tensor<F>,
    density: &FactorizedDensity<F>,
) -> Result<(Tensor<F>, F)> {
    let bits = crate::autodiff::nll::factorized_nll_forward(zhat, &density.param_refs())?;
    let total = bits.sum();
    Ok((bits, total))
}

/// Tape handles for the objective's pieces, all scalars.
pub struct RdTermIds {
    pub total: VarId,
    pub rate_y_bits: VarId,
    pub rate_z_bits: VarId,
    pub distortion: VarId,
    pub yhat: VarId,
    pub zhat: VarId,
    pub xhat: VarId,
}

/// Build the full objective on `tape` from image and latent handles.
pub fn rd_terms_t<F: Scalar>(
    tape: &mut Tape<F>,
    x: VarId,
    y: VarId,
    z: VarId,
    p: &ParamIds,
    arch: &Architecture,
    lambda: f64,
    qmode: QuantizeMode,
    seed: u64,
) -> Result<RdTermIds> {
    let zhat = tape.quantize(z, qmode, rng::counter_hash(seed, SEED_STREAM_QZ, 0))?;
    let (mu, sigma) = hyper_synthesis_t(tape, zhat, p, arch.sigma_min)?;
    let centered = tape.sub(y, mu)?;
    let residual = tape.quantize(centered, qmode, rng::counter_hash(seed, SEED_STREAM_QY, 0))?;
    let yhat = tape.add(residual, mu)?;
    let bits_y = tape.gaussian_nll(yhat, mu, sigma, GaussianForm::Bin)?;
    let rate_y_bits = tape.sum(bits_y)?;
    let bits_z = tape.factorized_nll(zhat, &p.density)?;
    let rate_z_bits = tape.sum(bits_z)?;
    let xhat = synthesis_t(tape, yhat, p)?;
    let distortion = distortion_t(tape, x, xhat, lambda)?;
    let num_pixels = {
        let s = tape.value(x).shape();
        (s[1] * s[2]) as f64
    };
    let rates = tape.add(rate_y_bits, rate_z_bits)?;
    let rate_pp = tape.mul_scalar(rates, 1.0 / num_pixels)?;
    let total = tape.add(rate_pp, distortion)?;
    Ok(RdTermIds { total, rate_y_bits, rate_z_bits, distortion, yhat, zhat, xhat })
}

/// `λ · 255² · MSE(x, x̂)` as a tape scalar.
pub fn distortion_t<F: Scalar>(
    tape: &mut Tape<F>,
    x: VarId,
    xhat: VarId,
    lambda: f64,
) -> Result<VarId> {
    let diff = tape.sub(xhat, x)?;
    let sq = tape.square(diff)?;
    let mse = tape.mean(sq)?;
    tape.mul_scalar(mse, lambda * DISTORTION_SCALE)
}

/// Objective values for given latents (no gradients).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdLoss {
    pub total: f64,
    pub rate_y_bits: f64,
    pub rate_z_bits: f64,
    pub distortion: f64,
}

/// Evaluate the objective for explicit latents `(y, z)`.
pub fn rd_loss<F: Scalar>(
    x: &Tensor<F>,
    y: &Tensor<F>,
    z: &Tensor<F>,
    ckpt: &Checkpoint<F>,
    lambda: f64,
    qmode: QuantizeMode,
    seed: u64,
) -> Result<RdLoss> {
    if lambda <= 0.0 {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let mut tape = Tape::new();
    let p = register_params(&mut tape, &ckpt.params, false);
    let xi = tape.leaf(x.clone());
    let yi = tape.leaf(y.clone());
    let zi = tape.leaf(z.clone());
    let terms = rd_terms_t(&mut tape, xi, yi, zi, &p, &ckpt.arch, lambda, qmode, seed)?;
    Ok(RdLoss {
        total: tape.value(terms.total).item().as_f64(),
        rate_y_bits: tape.value(terms.rate_y_bits).item().as_f64(),
        rate_z_bits: tape.value(terms.rate_z_bits).item().as_f64(),
        distortion: tape.value(terms.distortion).item().as_f64(),
    })
}

// ---------------------------------------------------------------------
// padding
// ---------------------------------------------------------------------

/// Reflect-pad (edge inclusive) bottom/right to a multiple of
/// [`PAD_MULTIPLE`]; returns the original spatial size alongside.
pub fn pad_reflect<F: Scalar>(x: &Tensor<F>, multiple: usize) -> (Tensor<F>, (usize, usize)) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let nh = h.div_ceil(multiple) * multiple;
    let nw = w.div_ceil(multiple) * multiple;
    if nh == h && nw == w {
        return (x.clone(), (h, w));
    }
    let fold = |i: usize, n: usize| -> usize {
        let j = i % (2 * n);
        if j < n {
            j
        } else {
            2 * n - 1 - j
        }
    };
    let mut out = Tensor::zeros(&[c, nh, nw]);
    for ci in 0..c {
        for i in 0..nh {
            let si = fold(i, h);
            for j in 0..nw {
                let sj = fold(j, w);
                out.data_mut()[(ci * nh + i) * nw + j] = x.data()[(ci * h + si) * w + sj];
            }
        }
    }
    (out, (h, w))
}

/// Crop back to `h x w` (top-left corner).
pub fn crop<F: Scalar>(x: &Tensor<F>, h: usize, w: usize) -> Tensor<F> {
    let (c, ph, pw) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    debug_assert!(h <= ph && w <= pw);
    let mut out = Tensor::zeros(&[c, h, w]);
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out.data_mut()[(ci * h + i) * w + j] = x.data()[(ci * ph + i) * pw + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
