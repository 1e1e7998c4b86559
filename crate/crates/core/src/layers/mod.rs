//! Forward and backward passes for every layer the network uses.
//!
//! Layers accept either a single item (`C×L`, `C×H×W`) or a leading batch
//! axis (`B×C×L`, `B×C×H×W`); outputs keep the caller's convention. A
//! forward pass in [`Mode::Train`] returns a [`LayerCache`] that the matching
//! backward pass consumes. Forward passes never mutate the layer: batch
//! statistics travel in the cache and are folded into running statistics by
//! [`Layer::commit`].

mod activation;
mod batchnorm;
mod classifier;
mod conv;
mod depthwise;
mod pointwise;
mod pool;
pub mod reference;

pub use activation::relu;
pub use batchnorm::{BatchNorm, DEFAULT_EPSILON as BN_EPSILON, DEFAULT_MOMENTUM as BN_MOMENTUM, VARIANCE_FLOOR};
pub use classifier::{softmax, softmax_cross_entropy_grad, Classifier};
pub use conv::{Conv1d, DilatedConv2d};
pub use depthwise::DepthwiseConv1d;
pub use pointwise::PointwiseConv;
pub use pool::{Pool2d, PoolKind};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Values saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub(crate) kind: CacheKind,
}

#[derive(Debug, Clone)]
pub(crate) enum CacheKind {
    Lowered {
        cols: Vec<f64>,
        batch: usize,
        input_shape: Vec<usize>,
    },
    ChannelMajor {
        input: Vec<f64>,
        batch: usize,
        input_shape: Vec<usize>,
    },
    Input(Tensor),
    BatchNorm(batchnorm::BatchStats),
    MaxPool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    AvgPool {
        input_shape: Vec<usize>,
    },
}

impl LayerCache {
    pub(crate) fn new(kind: CacheKind) -> Self {
        Self { kind }
    }

    /// Per-channel batch mean and (biased) variance, for batch norm caches.
    pub fn batch_statistics(&self) -> Option<(&[f64], &[f64])> {
        match &self.kind {
            CacheKind::BatchNorm(stats) => Some((&stats.mean, &stats.var)),
            _ => None,
        }
    }
}

/// Gradients of one layer's parameters, in [`Layer::parameters`] order.
pub type ParamGrads = Vec<Tensor>;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    Depthwise(DepthwiseConv1d),
    Pointwise(PointwiseConv),
    BatchNorm(BatchNorm),
    Relu,
    DilatedConv2d(DilatedConv2d),
    Pool(Pool2d),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::Depthwise(_) => "depthwise",
            Layer::Pointwise(_) => "pointwise",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::DilatedConv2d(_) => "dilated_conv2d",
            Layer::Pool(p) => match p.kind {
                PoolKind::Max => "max_pool",
                PoolKind::Avg => "avg_pool",
            },
        }
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<LayerCache>)> {
        match self {
            Layer::Conv1d(l) => l.forward(input, mode),
            Layer::Depthwise(l) => l.forward(input, mode),
            Layer::Pointwise(l) => l.forward(input, mode),
            Layer::BatchNorm(l) => l.forward(input, mode),
            Layer::Relu => activation::relu_forward(input, mode),
            Layer::DilatedConv2d(l) => l.forward(input, mode),
            Layer::Pool(l) => l.forward(input, mode),
        }
    }

    pub fn backward(&self, cache: Option<&LayerCache>, grad_out: &Tensor) -> Result<(Tensor, ParamGrads)> {
        let cache = cache.ok_or_else(|| {
            Error::State(format!("{} backward called without a training-mode cache", self.kind_name()))
        })?;
        match self {
            Layer::Conv1d(l) => l.backward(cache, grad_out),
            Layer::Depthwise(l) => l.backward(cache, grad_out),
            Layer::Pointwise(l) => l.backward(cache, grad_out),
            Layer::BatchNorm(l) => l.backward(cache, grad_out),
            Layer::Relu => activation::relu_backward(cache, grad_out).map(|g| (g, Vec::new())),
            Layer::DilatedConv2d(l) => l.backward(cache, grad_out),
            Layer::Pool(l) => l.backward(cache, grad_out).map(|g| (g, Vec::new())),
        }
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv1d(l) => vec![&l.weights, &l.bias],
            Layer::Depthwise(l) => vec![&l.kernels, &l.bias],
            Layer::Pointwise(l) => vec![&l.weights, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::DilatedConv2d(l) => vec![&l.kernels, &l.bias],
            Layer::Relu | Layer::Pool(_) => Vec::new(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv1d(l) => vec![&mut l.weights, &mut l.bias],
            Layer::Depthwise(l) => vec![&mut l.kernels, &mut l.bias],
            Layer::Pointwise(l) => vec![&mut l.weights, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::DilatedConv2d(l) => vec![&mut l.kernels, &mut l.bias],
            Layer::Relu | Layer::Pool(_) => Vec::new(),
        }
    }

    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            Layer::BatchNorm(_) => &["gamma", "beta"],
            Layer::Relu | Layer::Pool(_) => &[],
            _ => &["weight", "bias"],
        }
    }

    /// Folds the batch statistics of a training pass into running statistics.
    pub fn commit(&mut self, cache: &LayerCache) {
        if let Layer::BatchNorm(bn) = self {
            bn.commit(cache);
        }
    }
}

/// Splits a tensor into `(batch, item shape)` given the unbatched rank.
pub(crate) fn split_batch(input: &Tensor, item_rank: usize, what: &str) -> Result<(usize, Vec<usize>)> {
    let shape = input.shape();
    if shape.len() == item_rank {
        Ok((1, shape.to_vec()))
    } else if shape.len() == item_rank + 1 {
        Ok((shape[0], shape[1..].to_vec()))
    } else {
        Err(Error::shape(format!(
            "{what} expects a rank-{item_rank} item or rank-{} batch, got shape {shape:?}",
            item_rank + 1
        )))
    }
}

/// Output shape keeping the input's batched/unbatched convention.
pub(crate) fn with_batch(input_shape: &[usize], item_rank: usize, item: &[usize]) -> Vec<usize> {
    if input_shape.len() == item_rank {
        item.to_vec()
    } else {
        let mut s = vec![input_shape[0]];
        s.extend_from_slice(item);
        s
    }
}

pub(crate) fn wrong_cache(layer: &str) -> Error {
    Error::State(format!("{layer} backward received a cache from a different layer"))
}
