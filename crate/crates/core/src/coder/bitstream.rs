//! Bitstream container and the image compress/decompress pipeline.
//!
//! Layout (little-endian):
//!   magic "LBIT" | version u16 | orig h,w u32 | padded h,w u32 |
//!   λ index u8 | checkpoint hash 32B |
//!   z len u64 + bytes | y len u64 + bytes
//!
//! `z` symbols use one table per hyper channel over `[-64, 64]`; centered
//! `y` residuals use one table per element over `[-128, 128]`, built from
//! that element's σ. Escapes cover anything outside.

use crate::error::{Error, Result};
use crate::model::{self, Checkpoint, LAMBDA_GRID};
use crate::scalar::{std_normal_cdf, Scalar};
use crate::tensor::Tensor;

use super::{decode_symbols, encode_symbols, CdfTable};

pub const BITSTREAM_MAGIC: &[u8; 4] = b"LBIT";
pub const BITSTREAM_VERSION: u16 = 1;

pub const Z_SUPPORT: (i32, i32) = (-64, 64);
pub const Y_SUPPORT: (i32, i32) = (-128, 128);

#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub orig_h: u32,
    pub orig_w: u32,
    pub padded_h: u32,
    pub padded_w: u32,
    pub lambda_index: u8,
    pub checkpoint_hash: [u8; 32],
    pub z_stream: Vec<u8>,
    pub y_stream: Vec<u8>,
}

impl Bitstream {
    /// Bits per pixel of the coded payload, over original pixels.
    pub fn bpp(&self) -> f64 {
        8.0 * (self.z_stream.len() + self.y_stream.len()) as f64
            / (self.orig_h as f64 * self.orig_w as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BITSTREAM_MAGIC);
        out.extend(BITSTREAM_VERSION.to_le_bytes());
        for v in [self.orig_h, self.orig_w, self.padded_h, self.padded_w] {
            out.extend(v.to_le_bytes());
        }
        out.push(self.lambda_index);
        out.extend(self.checkpoint_hash);
        out.extend((self.z_stream.len() as u64).to_le_bytes());
        out.extend(&self.z_stream);
        out.extend((self.y_stream.len() as u64).to_le_bytes());
        out.extend(&self.y_stream);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::CorruptStream(what.into());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(corrupt("truncated container"));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4)? != BITSTREAM_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != BITSTREAM_VERSION {
            return Err(corrupt("unsupported version"));
        }
        let mut dims = [0u32; 4];
        for d in &mut dims {
            *d = u32::from_le_bytes(take(4)?.try_into().unwrap());
        }
        let lambda_index = take(1)?[0];
        let checkpoint_hash: [u8; 32] = take(32)?.try_into().unwrap();
        let z_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let z_stream = take(z_len)?.to_vec();
        let y_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let y_stream = take(y_len)?.to_vec();
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Bitstream {
            orig_h: dims[0],
            orig_w: dims[1],
            padded_h: dims[2],
            padded_w: dims[3],
            lambda_index,
            checkpoint_hash,
            z_stream,
            y_stream,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn lambda_index_of(lambda: f64) -> u8 {
    LAMBDA_GRID
        .iter()
        .position(|&l| l == lambda)
        .map(|i| i as u8)
        .unwrap_or(u8::MAX)
}

/// Per-channel tables for the hyper latent.
fn z_tables<F: Scalar>(ckpt: &Checkpoint<F>) -> Result<Vec<CdfTable>> {
    (0..ckpt.arch.hyper_channels)
        .map(|c| {
            let pmf = ckpt.params.density.pmf_table(c, Z_SUPPORT.0, Z_SUPPORT.1);
            CdfTable::from_value_pmf(Z_SUPPORT.0, &pmf)
        })
        .collect()
}

/// Per-element table for a centered residual with scale `sigma`.
fn y_table(sigma: f64) -> Result<CdfTable> {
    let mut pmf = Vec::with_capacity((Y_SUPPORT.1 - Y_SUPPORT.0 + 1) as usize);
    let mut lo = std_normal_cdf((Y_SUPPORT.0 as f64 - 0.5) / sigma);
    for r in Y_SUPPORT.0..=Y_SUPPORT.1 {
        let hi = std_normal_cdf((r as f64 + 0.5) / sigma);
        pmf.push((hi - lo).max(0.0));
        lo = hi;
    }
    CdfTable::from_value_pmf(Y_SUPPORT.0, &pmf)
}

fn to_symbols<F: Scalar>(t: &Tensor<F>) -> Vec<i32> {
    t.data().iter().map(|v| v.as_f64() as i32).collect()
}

/// Compress an image with the checkpoint's transforms, or transport
/// externally refined latents `(y, z)` (defined on the padded image).
pub fn compress_image<F: Scalar>(
    x: &Tensor<F>,
    ckpt: &Checkpoint<F>,
    refined: Option<(&Tensor<F>, &Tensor<F>)>,
) -> Result<Bitstream> {
    let (xp, (orig_h, orig_w)) = model::pad_reflect(x, model::PAD_MULTIPLE);
    let (padded_h, padded_w) = (xp.shape()[1], xp.shape()[2]);
    let (y, z) = match refined {
        Some((y, z)) => {
            let want_y = ckpt.arch.latent_shape(padded_h, padded_w);
            let want_z = ckpt.arch.hyper_shape(padded_h, padded_w);
            if y.shape() != want_y || z.shape() != want_z {
                return Err(Error::ShapeMismatch {
                    op: "compress_image",
                    detail: format!("refined latents {:?}/{:?}", y.shape(), z.shape()),
                });
            }
            (y.clone(), z.clone())
        }
        None => {
            let y = model::analysis(ckpt, &xp)?;
            let z = model::hyper_analysis(ckpt, &y, None)?;
            (y, z)
        }
    };
    let zhat = z.map(|v| v.round());
    let ztabs = z_tables(ckpt)?;
    let sp = zhat.shape()[1] * zhat.shape()[2];
    let ztab_refs: Vec<&CdfTable> = (0..zhat.numel()).map(|i| &ztabs[i / sp]).collect();
    let z_stream = encode_symbols(&to_symbols(&zhat), &ztab_refs)?;

    let (mu, sigma) = model::hyper_synthesis(ckpt, &zhat)?;
    let residual: Vec<i32> = y
        .data()
        .iter()
        .zip(mu.data())
        .map(|(&yv, &m)| (yv - m).round().as_f64() as i32)
        .collect();
    let ytabs: Vec<CdfTable> = sigma
        .data()
        .iter()
        .map(|s| y_table(s.as_f64()))
        .collect::<Result<_>>()?;
    let ytab_refs: Vec<&CdfTable> = ytabs.iter().collect();
    let y_stream = encode_symbols(&residual, &ytab_refs)?;

    Ok(Bitstream {
        orig_h: orig_h as u32,
        orig_w: orig_w as u32,
        padded_h: padded_h as u32,
        padded_w: padded_w as u32,
        lambda_index: lambda_index_of(ckpt.lambda),
        checkpoint_hash: ckpt.content_hash(),
        z_stream,
        y_stream,
    })
}

pub struct DecodedImage<F: Scalar> {
    /// Reconstruction cropped to the original size, clamped to `[0, 1]`.
    pub xhat: Tensor<F>,
    pub yhat: Tensor<F>,
    pub zhat: Tensor<F>,
}

/// Decode the reconstruction.
pub fn decompress<F: Scalar>(bs: &Bitstream, ckpt: &Checkpoint<F>) -> Result<Tensor<F>> {
    Ok(decompress_full(bs, ckpt)?.xhat)
}

/// Decode reconstruction plus the transported latents.
pub fn decompress_full<F: Scalar>(bs: &Bitstream, ckpt: &Checkpoint<F>) -> Result<DecodedImage<F>> {
    if bs.checkpoint_hash != ckpt.content_hash() {
        return Err(Error::HashMismatch);
    }
    let (ph, pw) = (bs.padded_h as usize, bs.padded_w as usize);
    if ph % model::PAD_MULTIPLE != 0 || pw % model::PAD_MULTIPLE != 0 || ph == 0 || pw == 0 {
        return Err(Error::CorruptStream("padded dims".into()));
    }
    if bs.orig_h as usize > ph || bs.orig_w as usize > pw {
        return Err(Error::CorruptStream("original dims exceed padded dims".into()));
    }
    let zshape = ckpt.arch.hyper_shape(ph, pw);
    let ztabs = z_tables(ckpt)?;
    let sp = zshape[1] * zshape[2];
    let n_z = zshape.iter().product::<usize>();
    let ztab_refs: Vec<&CdfTable> = (0..n_z).map(|i| &ztabs[i / sp]).collect();
    let z_syms = decode_symbols(&bs.z_stream, &ztab_refs)?;
    let zhat = Tensor::new(zshape.to_vec(), z_syms.iter().map(|&v| F::of(v as f64)).collect())?;

    let (mu, sigma) = model::hyper_synthesis(ckpt, &zhat)?;
    let ytabs: Vec<CdfTable> = sigma
        .data()
        .iter()
        .map(|s| y_table(s.as_f64()))
        .collect::<Result<_>>()?;
    let ytab_refs: Vec<&CdfTable> = ytabs.iter().collect();
    let y_syms = decode_symbols(&bs.y_stream, &ytab_refs)?;
    let yhat = Tensor::new(
        mu.shape().to_vec(),
        y_syms
            .iter()
            .zip(mu.data())
            .map(|(&r, &m)| F::of(r as f64) + m)
            .collect(),
    )?;

    let xpad = model::synthesis(ckpt, &yhat)?;
    let xhat = model::clamp_image(&model::crop(&xpad, bs.orig_h as usize, bs.orig_w as usize));
    Ok(DecodedImage { xhat, yhat, zhat })
}
