//! Dense multidimensional array with shape metadata.
//!
//! Carrier for images, latents, parameters and gradients. Layout is
//! row-major over the shape `[C, H, W]` (or flat `[N]`), always contiguous.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    pub requires_grad: bool,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {:?} implies {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor { shape, data, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![F::zero(); n], requires_grad: false }
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n], requires_grad: false }
    }

    pub fn scalar(v: F) -> Self {
        Tensor { shape: vec![1], data: vec![v], requires_grad: false }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> F {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    /// Mean squared difference to another tensor of the same shape.
    pub fn mse(&self, other: &Self) -> F {
        debug_assert_eq!(self.shape, other.shape);
        let n = F::of(self.numel() as f64);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<F>()
            / n
    }

    /// Little-endian f64 bytes of shape then data; stable digest input.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.shape.len() * 8 + self.data.len() * 8);
        out.extend((self.shape.len() as u64).to_le_bytes());
        for &d in &self.shape {
            out.extend((d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend(v.as_f64().to_le_bytes());
        }
        out
    }
}

/// 3-D index helper for `[C, H, W]` tensors.
#[inline]
pub fn idx3(c: usize, h: usize, w: usize, height: usize, width: usize) -> usize {
    (c * height + h) * width + w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn mse_basics() {
        let a: Tensor<f64> = Tensor::new(vec![4], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::new(vec![4], vec![0.0, 1.0, 2.0, 5.0]).unwrap();
        assert_eq!(a.mse(&a), 0.0);
        assert!((a.mse(&b) - 1.0_f64).abs() < 1e-15);
    }

    #[test]
    fn canonical_bytes_distinguish_shape() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[3, 2]);
        assert_ne!(a.canonical_bytes(), b.canonical_bytes());
    }
}
