use super::{split_batch, with_batch, wrong_cache, CacheKind, LayerCache, Mode, ParamGrads};
use crate::error::{Error, Result};
use crate::tensor::{from_channel_major, matmul_into, matmul_nt_into, matmul_tn_into, to_channel_major, Tensor};

/// 1×1 convolution: at every position, `y = Z·x + b` across channels.
///
/// No lowering is needed; the channel-major input already is the GEMM operand.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseConv {
    /// `[out_channels, in_channels]`
    pub weights: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
}

impl PointwiseConv {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        weights.expect_rank(2, "pointwise weights")?;
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::shape(format!(
                "pointwise bias must have shape [{}], got {:?}",
                weights.shape()[0],
                bias.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<LayerCache>)> {
        let (batch, item) = split_batch(input, 2, "pointwise")?;
        if item[0] != self.in_channels() {
            return Err(Error::shape(format!(
                "pointwise expects {} input channels, got {}",
                self.in_channels(),
                item[0]
            )));
        }
        let len = item[1];
        let width = batch * len;
        let x = to_channel_major(input.data(), batch, item[0], len);
        let mut y = vec![0.0; self.out_channels() * width];
        matmul_into(self.weights.data(), &x, &mut y, self.out_channels(), self.in_channels(), width);
        for (row, &b) in y.chunks_mut(width).zip(self.bias.data()) {
            row.iter_mut().for_each(|v| *v += b);
        }
        let y = from_channel_major(&y, batch, self.out_channels(), len);
        let shape = with_batch(input.shape(), 2, &[self.out_channels(), len]);
        let cache = (mode == Mode::Train).then(|| {
            LayerCache::new(CacheKind::ChannelMajor {
                input: x,
                batch,
                input_shape: input.shape().to_vec(),
            })
        });
        Ok((Tensor::from_vec(&shape, y)?, cache))
    }

    pub fn backward(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<(Tensor, ParamGrads)> {
        let CacheKind::ChannelMajor { input, batch, input_shape } = &cache.kind else {
            return Err(wrong_cache("pointwise"));
        };
        let len = input_shape[input_shape.len() - 1];
        let expect = with_batch(input_shape, 2, &[self.out_channels(), len]);
        if grad_out.shape() != expect.as_slice() {
            return Err(Error::shape(format!(
                "pointwise grad_out must be {expect:?}, got {:?}",
                grad_out.shape()
            )));
        }
        let (c_in, c_out, width) = (self.in_channels(), self.out_channels(), batch * len);
        let dy = to_channel_major(grad_out.data(), *batch, c_out, len);
        let mut dz = vec![0.0; c_out * c_in];
        matmul_nt_into(&dy, input, &mut dz, c_out, width, c_in);
        let db: Vec<f64> = dy.chunks(width).map(|row| row.iter().sum()).collect();
        let mut dx = vec![0.0; c_in * width];
        matmul_tn_into(self.weights.data(), &dy, &mut dx, c_in, c_out, width);
        Ok((
            Tensor::from_vec(input_shape, from_channel_major(&dx, *batch, c_in, len))?,
            vec![Tensor::from_vec(self.weights.shape(), dz)?, Tensor::from_vec(self.bias.shape(), db)?],
        ))
    }
}
