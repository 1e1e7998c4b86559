use serde::{Deserialize, Serialize};

use super::{split_batch, with_batch, wrong_cache, CacheKind, LayerCache, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Non-overlapping 2-D pooling (stride equals window). Trailing rows and
/// columns that do not fill a window are dropped. No activation follows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub window: (usize, usize),
}

impl Pool2d {
    pub fn new(kind: PoolKind) -> Self {
        Self { kind, window: (2, 2) }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (wh, ww) = self.window;
        if h < wh || w < ww {
            return Err(Error::shape(format!(
                "pool window {wh}x{ww} does not fit a {h}x{w} input"
            )));
        }
        Ok((h / wh, w / ww))
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<LayerCache>)> {
        let (batch, item) = split_batch(input, 3, "pool2d")?;
        let (c, h, w) = (item[0], item[1], item[2]);
        let (oh, ow) = self.output_hw(h, w)?;
        let (wh, ww) = self.window;
        let x = input.data();
        let mut y = Vec::with_capacity(batch * c * oh * ow);
        let mut argmax = Vec::new();
        for plane in 0..batch * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    match self.kind {
                        PoolKind::Max => {
                            let mut best = base + i * wh * w + j * ww;
                            for p in 0..wh {
                                for q in 0..ww {
                                    let at = base + (i * wh + p) * w + j * ww + q;
                                    // strict comparison keeps the first maximum in scan order
                                    if x[at] > x[best] {
                                        best = at;
                                    }
                                }
                            }
                            y.push(x[best]);
                            argmax.push(best);
                        }
                        PoolKind::Avg => {
                            let mut s = 0.0;
                            for p in 0..wh {
                                for q in 0..ww {
                                    s += x[base + (i * wh + p) * w + j * ww + q];
                                }
                            }
                            y.push(s / (wh * ww) as f64);
                        }
                    }
                }
            }
        }
        let shape = with_batch(input.shape(), 3, &[c, oh, ow]);
        let cache = (mode == Mode::Train).then(|| {
            let input_shape = input.shape().to_vec();
            LayerCache::new(match self.kind {
                PoolKind::Max => CacheKind::MaxPool { argmax, input_shape },
                PoolKind::Avg => CacheKind::AvgPool { input_shape },
            })
        });
        Ok((Tensor::from_vec(&shape, y)?, cache))
    }

    pub fn backward(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<Tensor> {
        let input_shape = match (&cache.kind, self.kind) {
            (CacheKind::MaxPool { input_shape, .. }, PoolKind::Max) => input_shape,
            (CacheKind::AvgPool { input_shape }, PoolKind::Avg) => input_shape,
            _ => return Err(wrong_cache("pool2d")),
        };
        let n = input_shape.len();
        let (c, h, w) = (input_shape[n - 3], input_shape[n - 2], input_shape[n - 1]);
        let (oh, ow) = self.output_hw(h, w)?;
        let expect = with_batch(input_shape, 3, &[c, oh, ow]);
        if grad_out.shape() != expect.as_slice() {
            return Err(Error::shape(format!(
                "pool2d grad_out must be {expect:?}, got {:?}",
                grad_out.shape()
            )));
        }
        let mut dx = vec![0.0; input_shape.iter().product()];
        let dy = grad_out.data();
        match &cache.kind {
            CacheKind::MaxPool { argmax, .. } => {
                for (&at, &g) in argmax.iter().zip(dy) {
                    dx[at] += g;
                }
            }
            _ => {
                let (wh, ww) = self.window;
                let share = 1.0 / (wh * ww) as f64;
                let planes = dx.len() / (h * w);
                for plane in 0..planes {
                    for i in 0..oh {
                        for j in 0..ow {
                            let g = dy[(plane * oh + i) * ow + j] * share;
                            for p in 0..wh {
                                for q in 0..ww {
                                    dx[plane * h * w + (i * wh + p) * w + j * ww + q] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(input_shape, dx)
    }
}
