use rayon::prelude::*;

use super::{with_batch, wrong_cache, CacheKind, LayerCache, Mode, ParamGrads};
use crate::error::{Error, Result};
use crate::tensor::{output_extent, Tensor};

/// One length-`K` kernel per input channel; channel `c` only ever sees kernel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv1d {
    /// `[channels, K]`
    pub kernels: Tensor,
    /// `[channels]`
    pub bias: Tensor,
    pub stride: usize,
}

struct Dims {
    batch: usize,
    channels: usize,
    len: usize,
    width: usize,
    out: usize,
}

impl DepthwiseConv1d {
    pub fn new(kernels: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        kernels.expect_rank(2, "depthwise kernels")?;
        if bias.shape() != [kernels.shape()[0]] {
            return Err(Error::shape(format!(
                "depthwise bias must have shape [{}], got {:?}",
                kernels.shape()[0],
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("depthwise stride must be at least 1".into()));
        }
        Ok(Self { kernels, bias, stride })
    }

    pub fn channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    fn dims(&self, shape: &[usize]) -> Result<Dims> {
        let (batch, item) = match shape.len() {
            2 => (1, shape.to_vec()),
            3 => (shape[0], shape[1..].to_vec()),
            _ => return Err(Error::shape(format!("depthwise expects C×L or B×C×L, got {shape:?}"))),
        };
        if item[0] != self.channels() {
            return Err(Error::shape(format!(
                "depthwise has {} kernels but input has {} channels",
                self.channels(),
                item[0]
            )));
        }
        let width = self.kernels.shape()[1];
        let out = output_extent(item[1], width, self.stride, 1).ok_or_else(|| {
            Error::shape(format!("depthwise kernel {width} exceeds input length {}", item[1]))
        })?;
        Ok(Dims {
            batch,
            channels: item[0],
            len: item[1],
            width,
            out,
        })
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<LayerCache>)> {
        let d = self.dims(input.shape())?;
        let x = input.data();
        let k = self.kernels.data();
        let a = self.bias.data();
        let mut y = vec![0.0; d.batch * d.channels * d.out];
        y.par_chunks_mut(d.out).enumerate().for_each(|(plane, dst)| {
            let c = plane % d.channels;
            let src = &x[plane * d.len..][..d.len];
            let kern = &k[c * d.width..][..d.width];
            for (t, v) in dst.iter_mut().enumerate() {
                let window = &src[t * self.stride..][..d.width];
                *v = window.iter().zip(kern).map(|(p, q)| p * q).sum::<f64>() + a[c];
            }
        });
        let shape = with_batch(input.shape(), 2, &[d.channels, d.out]);
        let cache = (mode == Mode::Train).then(|| LayerCache::new(CacheKind::Input(input.clone())));
        Ok((Tensor::from_vec(&shape, y)?, cache))
    }

    pub fn backward(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<(Tensor, ParamGrads)> {
        let CacheKind::Input(input) = &cache.kind else {
            return Err(wrong_cache("depthwise"));
        };
        let d = self.dims(input.shape())?;
        let expect = with_batch(input.shape(), 2, &[d.channels, d.out]);
        if grad_out.shape() != expect.as_slice() {
            return Err(Error::shape(format!(
                "depthwise grad_out must be {expect:?}, got {:?}",
                grad_out.shape()
            )));
        }
        let x = input.data();
        let dy = grad_out.data();
        let k = self.kernels.data();

        let mut dx = vec![0.0; x.len()];
        dx.par_chunks_mut(d.len).enumerate().for_each(|(plane, dst)| {
            let c = plane % d.channels;
            let g = &dy[plane * d.out..][..d.out];
            let kern = &k[c * d.width..][..d.width];
            for (t, &gt) in g.iter().enumerate() {
                for (slot, &w) in dst[t * self.stride..][..d.width].iter_mut().zip(kern) {
                    *slot += gt * w;
                }
            }
        });

        // Per-channel kernel and bias gradients; batch items are summed in order.
        let per_channel: Vec<(Vec<f64>, f64)> = (0..d.channels)
            .into_par_iter()
            .map(|c| {
                let mut dk = vec![0.0; d.width];
                let mut da = 0.0;
                for b in 0..d.batch {
                    let plane = b * d.channels + c;
                    let src = &x[plane * d.len..][..d.len];
                    let g = &dy[plane * d.out..][..d.out];
                    for (t, &gt) in g.iter().enumerate() {
                        da += gt;
                        for (acc, &v) in dk.iter_mut().zip(&src[t * self.stride..][..d.width]) {
                            *acc += gt * v;
                        }
                    }
                }
                (dk, da)
            })
            .collect();
        let mut dk = Vec::with_capacity(d.channels * d.width);
        let mut da = Vec::with_capacity(d.channels);
        for (kern, bias) in per_channel {
            dk.extend(kern);
            da.push(bias);
        }
        Ok((
            Tensor::from_vec(input.shape(), dx)?,
            vec![
                Tensor::from_vec(self.kernels.shape(), dk)?,
                Tensor::from_vec(self.bias.shape(), da)?,
            ],
        ))
    }
}
