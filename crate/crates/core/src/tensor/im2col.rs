//! Patch lowering for "valid" (unpadded) convolutions.
//!
//! One-dimensional inputs are handled as two-dimensional inputs of height 1.
//! Rows of the lowered matrix are ordered `(channel, kernel row, kernel
//! column)`; columns are `(batch item, output row, output column)`.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Extents of one unpadded convolution over a `C×H×W` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub dilation_h: usize,
    pub dilation_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// `floor((len - ((kernel-1)*dilation + 1)) / stride) + 1`, or `None` when
/// the dilated kernel does not fit.
pub fn output_extent(len: usize, kernel: usize, stride: usize, dilation: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || dilation == 0 {
        return None;
    }
    let span = (kernel - 1) * dilation + 1;
    if span > len {
        return None;
    }
    Some((len - span) / stride + 1)
}

impl ConvGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        channels: usize,
        (in_h, in_w): (usize, usize),
        (kernel_h, kernel_w): (usize, usize),
        (stride_h, stride_w): (usize, usize),
        (dilation_h, dilation_w): (usize, usize),
    ) -> Result<Self> {
        let fit = |len, k, s, d, axis: &str| {
            output_extent(len, k, s, d).ok_or_else(|| {
                Error::shape(format!(
                    "kernel {k} (stride {s}, dilation {d}) spans {} but {axis} extent is {len}",
                    k.saturating_sub(1) * d + 1
                ))
            })
        };
        let out_h = fit(in_h, kernel_h, stride_h, dilation_h, "height")?;
        let out_w = fit(in_w, kernel_w, stride_w, dilation_w, "width")?;
        Ok(Self {
            channels,
            in_h,
            in_w,
            kernel_h,
            kernel_w,
            stride_h,
            stride_w,
            dilation_h,
            dilation_w,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.in_h * self.in_w
    }
}

/// Lowers `batch` stacked inputs into a `patch_len × (batch·positions)` matrix.
pub(crate) fn im2col_batch(input: &[f64], batch: usize, g: &ConvGeometry) -> Vec<f64> {
    debug_assert_eq!(input.len(), batch * g.input_len());
    let cols = batch * g.positions();
    let mut out = vec![0.0; g.patch_len() * cols];
    out.par_chunks_mut(cols).enumerate().for_each(|(row, dst)| {
        let c = row / (g.kernel_h * g.kernel_w);
        let kh = (row / g.kernel_w) % g.kernel_h;
        let kw = row % g.kernel_w;
        let mut at = 0;
        for b in 0..batch {
            let plane = &input[(b * g.channels + c) * g.in_h * g.in_w..][..g.in_h * g.in_w];
            for oh in 0..g.out_h {
                let ih = oh * g.stride_h + kh * g.dilation_h;
                let line = &plane[ih * g.in_w..][..g.in_w];
                for ow in 0..g.out_w {
                    dst[at] = line[ow * g.stride_w + kw * g.dilation_w];
                    at += 1;
                }
            }
        }
    });
    out
}

/// Scatter-adds a lowered matrix back onto `batch` stacked inputs; the
/// adjoint of [`im2col_batch`].
pub(crate) fn col2im_batch(cols: &[f64], batch: usize, g: &ConvGeometry) -> Vec<f64> {
    let width = batch * g.positions();
    debug_assert_eq!(cols.len(), g.patch_len() * width);
    let plane_len = g.in_h * g.in_w;
    let mut out = vec![0.0; batch * g.input_len()];
    out.par_chunks_mut(plane_len).enumerate().for_each(|(slab, plane)| {
        let b = slab / g.channels;
        let c = slab % g.channels;
        for kh in 0..g.kernel_h {
            for kw in 0..g.kernel_w {
                let row = (c * g.kernel_h + kh) * g.kernel_w + kw;
                let src = &cols[row * width + b * g.positions()..][..g.positions()];
                let mut at = 0;
                for oh in 0..g.out_h {
                    let ih = oh * g.stride_h + kh * g.dilation_h;
                    for ow in 0..g.out_w {
                        plane[ih * g.in_w + ow * g.stride_w + kw * g.dilation_w] += src[at];
                        at += 1;
                    }
                }
            }
        }
    });
    out
}

fn geometry_for(
    shape: &[usize],
    kernel: &[usize],
    strides: &[usize],
    dilations: &[usize],
) -> Result<ConvGeometry> {
    let spatial = shape.len().checked_sub(1).filter(|r| (1..=2).contains(r));
    let Some(spatial) = spatial else {
        return Err(Error::shape(format!(
            "im2col expects a C×L or C×H×W input, got shape {shape:?}"
        )));
    };
    if kernel.len() != spatial || strides.len() != spatial || dilations.len() != spatial {
        return Err(Error::shape(format!(
            "im2col needs {spatial} kernel/stride/dilation extents for shape {shape:?}"
        )));
    }
    let pair = |v: &[usize]| if spatial == 1 { (1, v[0]) } else { (v[0], v[1]) };
    let in_hw = if spatial == 1 { (1, shape[1]) } else { (shape[1], shape[2]) };
    ConvGeometry::new(shape[0], in_hw, pair(kernel), pair(strides), pair(dilations))
}

/// Lowers one `C×L` or `C×H×W` input into a `(C·∏kernel) × positions` matrix.
pub fn im2col(input: &Tensor, kernel: &[usize], strides: &[usize], dilations: &[usize]) -> Result<Tensor> {
    let g = geometry_for(input.shape(), kernel, strides, dilations)?;
    let data = im2col_batch(input.data(), 1, &g);
    Tensor::from_vec(&[g.patch_len(), g.positions()], data)
}

/// Adjoint of [`im2col`]: accumulates columns back into an input of `shape`.
pub fn col2im(
    cols: &Tensor,
    shape: &[usize],
    kernel: &[usize],
    strides: &[usize],
    dilations: &[usize],
) -> Result<Tensor> {
    let g = geometry_for(shape, kernel, strides, dilations)?;
    if cols.shape() != [g.patch_len(), g.positions()] {
        return Err(Error::shape(format!(
            "col2im expects {}x{} columns, got {:?}",
            g.patch_len(),
            g.positions(),
            cols.shape()
        )));
    }
    Tensor::from_vec(shape, col2im_batch(cols.data(), 1, &g))
}
