//! Dense row-major `f64` tensors and the linear-algebra kernels the layers
//! are built on.
//!
//! A [`Tensor`] is a shape plus a flat buffer. Nothing here broadcasts; every
//! binary operation requires identical shapes.

mod gemm;
mod im2col;

pub use gemm::{gemm, gemm_nt, gemm_tn};
pub(crate) use gemm::{matmul_into, matmul_nt_into, matmul_tn_into};
pub use im2col::{col2im, im2col, output_extent, ConvGeometry};
pub(crate) use im2col::{col2im_batch, im2col_batch};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "shape must have at least one extent".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Tensor of the given shape with every element set to `fill`.
    pub fn new(shape: &[usize], fill: f64) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![fill; len],
        })
    }

    /// Zero tensor. Panics on an invalid shape; use [`Tensor::new`] for
    /// shapes that come from outside the crate.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, 0.0).expect("zeros: invalid shape")
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "index {index:?} has rank {}, tensor has rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut offset = 0;
        for (&i, &extent) in index.iter().zip(&self.shape) {
            if i >= extent {
                return Err(Error::shape(format!(
                    "index {index:?} out of bounds for shape {:?}",
                    self.shape
                )));
            }
            offset = offset * extent + i;
        }
        Ok(offset)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let at = self.offset(index)?;
        self.data[at] = value;
        Ok(())
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|x| x * factor)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "expected shape {:?}, got {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::shape(format!(
                "{what} expects a rank-{rank} tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

/// `[B, C, S]` (batch-major) to `[C, B*S]` (channel-major).
pub(crate) fn to_channel_major(data: &[f64], batch: usize, channels: usize, spatial: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        for c in 0..channels {
            let src = &data[(b * channels + c) * spatial..][..spatial];
            out[c * batch * spatial + b * spatial..][..spatial].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`to_channel_major`].
pub(crate) fn from_channel_major(data: &[f64], batch: usize, channels: usize, spatial: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &data[c * batch * spatial + b * spatial..][..spatial];
            out[(b * channels + c) * spatial..][..spatial].copy_from_slice(src);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn create_fills_every_element() {
        let t = Tensor::new(&[2, 3], 0.0).unwrap();
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.data(), &[0.0; 6]);

        let t = Tensor::new(&[1], 7.5).unwrap();
        assert_eq!(t.data(), &[7.5]);

        let t = Tensor::new(&[2, 2, 2], 1.0).unwrap();
        assert_eq!(t.len(), 8);
        assert!(t.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn create_rejects_bad_shapes() {
        assert!(matches!(Tensor::new(&[], 1.0), Err(Error::InvalidShape { .. })));
        assert!(matches!(Tensor::new(&[3, 0], 1.0), Err(Error::InvalidShape { .. })));
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn out_of_bounds_index_is_an_error() {
        let t = Tensor::zeros(&[2, 3]);
        assert!(t.get(&[2, 0]).is_err());
        assert!(t.get(&[0]).is_err());
    }

    #[test]
    fn channel_major_round_trip() {
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let cm = to_channel_major(&data, 2, 3, 4);
        assert_eq!(&cm[..4], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(&cm[4..8], &[12.0, 13.0, 14.0, 15.0]);
        assert_eq!(from_channel_major(&cm, 2, 3, 4), data);
    }

    proptest! {
        #[test]
        fn set_then_get_round_trips(
            shape in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
            value in -1e6f64..1e6,
        ) {
            let mut t = Tensor::zeros(&shape);
            let index: Vec<usize> = shape
                .iter()
                .enumerate()
                .map(|(i, &e)| ((seed >> (i * 8)) as usize) % e)
                .collect();
            t.set(&index, value).unwrap();
            prop_assert_eq!(t.get(&index).unwrap(), value);
            prop_assert_eq!(t.sum(), value);
        }
    }
}
