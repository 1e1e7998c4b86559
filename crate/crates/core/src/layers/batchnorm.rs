use rayon::prelude::*;

use super::{wrong_cache, CacheKind, LayerCache, Mode, ParamGrads};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Variances below this are clamped before the square root.
pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization.
///
/// Rank-2 inputs are one `C×L` item; higher ranks are `B×C×…`. Statistics
/// cover every axis except the channel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub epsilon: f64,
    /// Weight of the old running value in `r ← m·r + (1−m)·batch`.
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BatchStats {
    pub(crate) mean: Vec<f64>,
    pub(crate) var: Vec<f64>,
    inv_std: Vec<f64>,
    floored: Vec<bool>,
    normalized: Vec<f64>,
    shape: Vec<usize>,
}

/// `(outer, channels, inner)` for a BN input of this shape.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        0 | 1 => Err(Error::shape(format!("batchnorm needs a channel axis, got shape {shape:?}"))),
        2 => Ok((1, shape[0], shape[1])),
        _ => Ok((shape[0], shape[1], shape[2..].iter().product())),
    }
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::new(&[channels], 1.0).expect("channels >= 1"),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::new(&[channels], 1.0).expect("channels >= 1"),
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        let (outer, c, inner) = layout(shape)?;
        if c != self.channels() {
            return Err(Error::shape(format!(
                "batchnorm has {} channels, input shape {shape:?} has {c}",
                self.channels()
            )));
        }
        Ok((outer, c, inner))
    }

    fn channel_values(data: &[f64], outer: usize, c: usize, channels: usize, inner: usize) -> impl Iterator<Item = f64> + '_ {
        (0..outer).flat_map(move |b| data[(b * channels + c) * inner..][..inner].iter().copied())
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<LayerCache>)> {
        let (outer, channels, inner) = self.check(input.shape())?;
        let x = input.data();
        let count = outer * inner;

        let (mean, var) = match mode {
            Mode::Eval => (self.running_mean.data().to_vec(), self.running_var.data().to_vec()),
            Mode::Train => {
                if count < 2 {
                    return Err(Error::DegenerateVariance(format!(
                        "training batch has {count} value per channel; at least 2 are required"
                    )));
                }
                let stats: Vec<(f64, f64)> = (0..channels)
                    .into_par_iter()
                    .map(|c| {
                        let m = Self::channel_values(x, outer, c, channels, inner).sum::<f64>() / count as f64;
                        let v = Self::channel_values(x, outer, c, channels, inner)
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>()
                            / count as f64;
                        (m, v)
                    })
                    .collect();
                stats.into_iter().unzip()
            }
        };
        let floored: Vec<bool> = var.iter().map(|&v| v < VARIANCE_FLOOR).collect();
        let inv_std: Vec<f64> = var
            .iter()
            .map(|&v| 1.0 / (v.max(VARIANCE_FLOOR) + self.epsilon).sqrt())
            .collect();

        let mut normalized = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        let (g, bt) = (self.gamma.data(), self.beta.data());
        for (slab, (xs, (ns, ys))) in x
            .chunks(inner)
            .zip(normalized.chunks_mut(inner).zip(y.chunks_mut(inner)))
            .enumerate()
        {
            let c = slab % channels;
            for ((&xv, nv), yv) in xs.iter().zip(ns.iter_mut()).zip(ys.iter_mut()) {
                *nv = (xv - mean[c]) * inv_std[c];
                *yv = g[c] * *nv + bt[c];
            }
        }

        let cache = (mode == Mode::Train).then(|| {
            LayerCache::new(CacheKind::BatchNorm(BatchStats {
                mean,
                var,
                inv_std,
                floored,
                normalized,
                shape: input.shape().to_vec(),
            }))
        });
        Ok((Tensor::from_vec(input.shape(), y)?, cache))
    }

    pub fn backward(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<(Tensor, ParamGrads)> {
        let CacheKind::BatchNorm(stats) = &cache.kind else {
            return Err(wrong_cache("batchnorm"));
        };
        if grad_out.shape() != stats.shape.as_slice() {
            return Err(Error::shape(format!(
                "batchnorm grad_out must be {:?}, got {:?}",
                stats.shape,
                grad_out.shape()
            )));
        }
        let (outer, channels, inner) = self.check(&stats.shape)?;
        let count = (outer * inner) as f64;
        let dy = grad_out.data();
        let xhat = &stats.normalized;

        let sums: Vec<(f64, f64)> = (0..channels)
            .into_par_iter()
            .map(|c| {
                let g = Self::channel_values(dy, outer, c, channels, inner);
                let n = Self::channel_values(xhat, outer, c, channels, inner);
                g.zip(n).fold((0.0, 0.0), |(sg, sgn), (g, n)| (sg + g, sgn + g * n))
            })
            .collect();
        let dbeta: Vec<f64> = sums.iter().map(|s| s.0).collect();
        let dgamma: Vec<f64> = sums.iter().map(|s| s.1).collect();

        let gamma = self.gamma.data();
        let mut dx = vec![0.0; dy.len()];
        for (slab, (gs, (ns, ds))) in dy
            .chunks(inner)
            .zip(xhat.chunks(inner).zip(dx.chunks_mut(inner)))
            .enumerate()
        {
            let c = slab % channels;
            let scale = gamma[c] * stats.inv_std[c];
            let mean_g = dbeta[c] / count;
            let mean_gn = dgamma[c] / count;
            for ((&g, &n), d) in gs.iter().zip(ns).zip(ds.iter_mut()) {
                *d = if stats.floored[c] {
                    scale * (g - mean_g)
                } else {
                    scale * (g - mean_g - n * mean_gn)
                };
            }
        }
        Ok((
            Tensor::from_vec(&stats.shape, dx)?,
            vec![
                Tensor::from_vec(&[channels], dgamma)?,
                Tensor::from_vec(&[channels], dbeta)?,
            ],
        ))
    }

    pub(crate) fn commit(&mut self, cache: &LayerCache) {
        let CacheKind::BatchNorm(stats) = &cache.kind else {
            return;
        };
        let m = self.momentum;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }
}
