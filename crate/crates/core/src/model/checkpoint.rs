//! Checkpoint container: every learned parameter plus the architecture
//! descriptor, training λ and seed.
//!
//! On-disk layout (all little-endian):
//!   magic "LLAB" | version u16 | descriptor len u32 + utf8 | λ f64 |
//!   train seed u64 | tensor count u16 |
//!   per tensor: ndim u8, dims u64.., values f64.. (declaration order) |
//!   trailing 32-byte SHA-256 of everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Architecture, ConvParam, FactorizedDensity, Params};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LLAB";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F: Scalar> {
    pub arch: Architecture,
    pub lambda: f64,
    pub train_seed: u64,
    pub params: Params<F>,
}

impl<F: Scalar> Checkpoint<F> {
    /// Fresh parameters: truncated-normal conv weights scaled by fan-in,
    /// zero biases except a positive σ-branch bias (initial σ ≈ 1) and a
    /// mid-gray final synthesis bias.
    pub fn init(arch: Architecture, lambda: f64, seed: u64) -> Self {
        let mut rng = Rng::new(seed).fork(0x494e4954);
        let conv = |rng: &mut Rng, co: usize, ci: usize, k: usize| ConvParam {
            w: Tensor::from_fn(&[co, ci, k, k], |_| {
                F::of(rng.trunc_normal(1.0 / ((ci * k * k) as f64).sqrt()))
            }),
            b: Tensor::zeros(&[co]),
        };
        // transposed conv weight layout is [ci, co, k, k]
        let tconv = |rng: &mut Rng, ci: usize, co: usize, k: usize| ConvParam {
            w: Tensor::from_fn(&[ci, co, k, k], |_| {
                F::of(rng.trunc_normal(1.0 / ((ci * k * k) as f64).sqrt()))
            }),
            b: Tensor::zeros(&[co]),
        };
        let (inc, cy, cz, mh, hh) =
            (arch.in_channels, arch.latent_channels, arch.hyper_channels, arch.main_hidden, arch.hyper_hidden);
        let ga = [conv(&mut rng, mh, inc, 5), conv(&mut rng, mh, mh, 5), conv(&mut rng, cy, mh, 5)];
        let mut ge = [tconv(&mut rng, cy, mh, 5), tconv(&mut rng, mh, mh, 5), tconv(&mut rng, mh, inc, 5)];
        ge[2].b = Tensor::full(&[inc], F::of(0.5));
        let ha = [conv(&mut rng, hh, cy, 3), conv(&mut rng, cz, hh, 3)];
        let he_hidden = tconv(&mut rng, cz, hh, 3);
        let he_mu = tconv(&mut rng, hh, cy, 3);
        let mut he_sigma = tconv(&mut rng, hh, cy, 3);
        he_sigma.b = Tensor::full(&[cy], F::of(0.54));
        let density = FactorizedDensity::init(cz, &mut rng.fork(0x44454e53));
        Checkpoint {
            arch,
            lambda,
            train_seed: seed,
            params: Params { ga, ge, ha, he_hidden, he_mu, he_sigma, density },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        let desc = self.arch.descriptor();
        out.extend((desc.len() as u32).to_le_bytes());
        out.extend(desc.as_bytes());
        out.extend(self.lambda.to_le_bytes());
        out.extend(self.train_seed.to_le_bytes());
        let tensors = self.params.ordered();
        out.extend((tensors.len() as u16).to_le_bytes());
        for t in tensors {
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend(v.as_f64().to_le_bytes());
            }
        }
        let hash: [u8; 32] = Sha256::digest(&out).into();
        out.extend(hash);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("checkpoint magic mismatch".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let desc_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let desc = std::str::from_utf8(r.take(desc_len)?)
            .map_err(|_| Error::Format("descriptor not utf8".into()))?
            .to_string();
        let arch = Architecture::from_descriptor(&desc)?;
        let lambda = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let train_seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let count = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        if count != Params::<F>::tensor_count() {
            return Err(Error::Format(format!("expected {} tensors, found {count}", Params::<F>::tensor_count())));
        }
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(F::of(f64::from_le_bytes(r.take(8)?.try_into().unwrap())));
            }
            tensors.push(Tensor::new(shape, data)?);
        }
        let body_len = r.pos;
        let stored: [u8; 32] = r
            .take(32)?
            .try_into()
            .map_err(|_| Error::Format("truncated checkpoint hash".into()))?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint hash".into()));
        }
        let computed: [u8; 32] = Sha256::digest(&bytes[..body_len]).into();
        if stored != computed {
            return Err(Error::Format("checkpoint content hash mismatch".into()));
        }
        let mut here = Checkpoint::init(arch, lambda, train_seed);
        for (slot, loaded) in here.params.ordered_mut().into_iter().zip(tensors) {
            if slot.shape() != loaded.shape() {
                return Err(Error::Format(format!(
                    "tensor shape {:?} does not match architecture slot {:?}",
                    loaded.shape(),
                    slot.shape()
                )));
            }
            *slot = loaded;
        }
        Ok(here)
    }

    /// SHA-256 over the serialized body; identifies the model in
    /// bitstream headers.
    pub fn content_hash(&self) -> [u8; 32] {
        let bytes = self.to_bytes();
        bytes[bytes.len() - 32..].try_into().expect("trailing hash")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
