//! Standard 1-D convolution and time-dilated 2-D convolution, both lowered
//! with im2col onto a single GEMM per batch.

use super::{split_batch, with_batch, wrong_cache, CacheKind, LayerCache, Mode, ParamGrads};
use crate::error::{Error, Result};
use crate::tensor::{
    col2im_batch, from_channel_major, im2col_batch, matmul_into, matmul_nt_into, matmul_tn_into,
    to_channel_major, ConvGeometry, Tensor,
};

/// `W·im2col(x) + b`, returned batch-major together with the lowered input.
fn lowered_forward(
    input: &[f64],
    batch: usize,
    g: &ConvGeometry,
    weights: &Tensor,
    bias: &Tensor,
) -> (Vec<f64>, Vec<f64>) {
    let out_channels = bias.len();
    let width = batch * g.positions();
    let cols = im2col_batch(input, batch, g);
    let mut out = vec![0.0; out_channels * width];
    matmul_into(weights.data(), &cols, &mut out, out_channels, g.patch_len(), width);
    for (row, &b) in out.chunks_mut(width).zip(bias.data()) {
        row.iter_mut().for_each(|v| *v += b);
    }
    (from_channel_major(&out, batch, out_channels, g.positions()), cols)
}

/// Returns `(grad_input, grad_weights, grad_bias)` data buffers.
fn lowered_backward(
    cols: &[f64],
    batch: usize,
    g: &ConvGeometry,
    weights: &Tensor,
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let out_channels = weights.shape()[0];
    let width = batch * g.positions();
    let dy = to_channel_major(grad_out, batch, out_channels, g.positions());
    let mut dw = vec![0.0; out_channels * g.patch_len()];
    matmul_nt_into(&dy, cols, &mut dw, out_channels, width, g.patch_len());
    let db = dy.chunks(width).map(|row| row.iter().sum()).collect();
    let mut dcols = vec![0.0; g.patch_len() * width];
    matmul_tn_into(weights.data(), &dy, &mut dcols, g.patch_len(), out_channels, width);
    (col2im_batch(&dcols, batch, g), dw, db)
}

fn check_bias(bias: &Tensor, out_channels: usize, what: &str) -> Result<()> {
    if bias.shape() != [out_channels] {
        return Err(Error::shape(format!(
            "{what} bias must have shape [{out_channels}], got {:?}",
            bias.shape()
        )));
    }
    Ok(())
}

/// Cross-correlation over `C_in×L` with `C_out×C_in×K` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv1d {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize) -> Result<Self> {
        weights.expect_rank(3, "conv1d weights")?;
        check_bias(&bias, weights.shape()[0], "conv1d")?;
        if stride == 0 {
            return Err(Error::InvalidArgument("conv1d stride must be at least 1".into()));
        }
        Ok(Self { weights, bias, stride })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    fn geometry(&self, item: &[usize]) -> Result<ConvGeometry> {
        let (c_in, k) = (self.weights.shape()[1], self.weights.shape()[2]);
        if item[0] != c_in {
            return Err(Error::shape(format!(
                "conv1d expects {c_in} input channels, got {}",
                item[0]
            )));
        }
        ConvGeometry::new(c_in, (1, item[1]), (1, k), (1, self.stride), (1, 1))
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<LayerCache>)> {
        let (batch, item) = split_batch(input, 2, "conv1d")?;
        let g = self.geometry(&item)?;
        let (out, cols) = lowered_forward(input.data(), batch, &g, &self.weights, &self.bias);
        let shape = with_batch(input.shape(), 2, &[self.out_channels(), g.out_w]);
        let cache = (mode == Mode::Train).then(|| {
            LayerCache::new(CacheKind::Lowered {
                cols,
                batch,
                input_shape: input.shape().to_vec(),
            })
        });
        Ok((Tensor::from_vec(&shape, out)?, cache))
    }

    pub fn backward(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<(Tensor, ParamGrads)> {
        let CacheKind::Lowered { cols, batch, input_shape } = &cache.kind else {
            return Err(wrong_cache("conv1d"));
        };
        let item = &input_shape[input_shape.len() - 2..];
        let g = self.geometry(item)?;
        let expect = with_batch(input_shape, 2, &[self.out_channels(), g.out_w]);
        if grad_out.shape() != expect.as_slice() {
            return Err(Error::shape(format!(
                "conv1d grad_out must be {expect:?}, got {:?}",
                grad_out.shape()
            )));
        }
        let (dx, dw, db) = lowered_backward(cols, *batch, &g, &self.weights, grad_out.data());
        Ok((
            Tensor::from_vec(input_shape, dx)?,
            vec![
                Tensor::from_vec(self.weights.shape(), dw)?,
                Tensor::from_vec(self.bias.shape(), db)?,
            ],
        ))
    }
}

/// Stride-1 2-D cross-correlation over `C_in×H×W` whose kernel taps are
/// spread `dilation` rows apart along the time (height) axis only.
#[derive(Debug, Clone, PartialEq)]
pub struct DilatedConv2d {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
}

impl DilatedConv2d {
    pub fn new(kernels: Tensor, bias: Tensor, dilation: usize) -> Result<Self> {
        kernels.expect_rank(4, "dilated conv2d kernels")?;
        check_bias(&bias, kernels.shape()[0], "dilated conv2d")?;
        if dilation == 0 {
            return Err(Error::InvalidArgument("dilation must be at least 1".into()));
        }
        Ok(Self { kernels, bias, dilation })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    /// Rows of the input one output row depends on: `(K-1)·ξ + 1`.
    pub fn time_extent(&self) -> usize {
        (self.kernels.shape()[2] - 1) * self.dilation + 1
    }

    fn geometry(&self, item: &[usize]) -> Result<ConvGeometry> {
        let s = self.kernels.shape();
        if item[0] != s[1] {
            return Err(Error::shape(format!(
                "dilated conv2d expects {} input channels, got {}",
                s[1], item[0]
            )));
        }
        ConvGeometry::new(s[1], (item[1], item[2]), (s[2], s[3]), (1, 1), (self.dilation, 1))
    }

    pub fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<LayerCache>)> {
        let (batch, item) = split_batch(input, 3, "dilated conv2d")?;
        let g = self.geometry(&item)?;
        let (out, cols) = lowered_forward(input.data(), batch, &g, &self.kernels, &self.bias);
        let shape = with_batch(input.shape(), 3, &[self.out_channels(), g.out_h, g.out_w]);
        let cache = (mode == Mode::Train).then(|| {
            LayerCache::new(CacheKind::Lowered {
                cols,
                batch,
                input_shape: input.shape().to_vec(),
            })
        });
        Ok((Tensor::from_vec(&shape, out)?, cache))
    }

    pub fn backward(&self, cache: &LayerCache, grad_out: &Tensor) -> Result<(Tensor, ParamGrads)> {
        let CacheKind::Lowered { cols, batch, input_shape } = &cache.kind else {
            return Err(wrong_cache("dilated conv2d"));
        };
        let item = &input_shape[input_shape.len() - 3..];
        let g = self.geometry(item)?;
        let expect = with_batch(input_shape, 3, &[self.out_channels(), g.out_h, g.out_w]);
        if grad_out.shape() != expect.as_slice() {
            return Err(Error::shape(format!(
                "dilated conv2d grad_out must be {expect:?}, got {:?}",
                grad_out.shape()
            )));
        }
        let (dx, dw, db) = lowered_backward(cols, *batch, &g, &self.kernels, grad_out.data());
        Ok((
            Tensor::from_vec(input_shape, dx)?,
            vec![
                Tensor::from_vec(self.kernels.shape(), dw)?,
                Tensor::from_vec(self.bias.shape(), db)?,
            ],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::reference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn table_row_one_shape() {
        let conv = Conv1d::new(Tensor::zeros(&[64, 1, 204]), Tensor::zeros(&[64]), 50).unwrap();
        let (y, _) = conv.forward(&Tensor::zeros(&[1, 2176]), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[64, 40]);
    }

    #[test]
    fn all_ones_sums_the_window() {
        let conv = Conv1d::new(Tensor::new(&[2, 1, 204], 1.0).unwrap(), Tensor::zeros(&[2]), 50).unwrap();
        let (y, _) = conv.forward(&Tensor::new(&[1, 2176], 1.0).unwrap(), Mode::Eval).unwrap();
        assert!(y.data().iter().all(|&v| v == 204.0));
    }

    #[test]
    fn delta_kernel_copies_the_input() {
        let mut w = Tensor::zeros(&[1, 1, 4]);
        w.set(&[0, 0, 0], 1.0).unwrap();
        let conv = Conv1d::new(w, Tensor::zeros(&[1]), 1).unwrap();
        let x = Tensor::from_vec(&[1, 7], vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0]).unwrap();
        let (y, _) = conv.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &x.data()[..4]);
    }

    #[test]
    fn kernel_longer_than_signal() {
        let conv = Conv1d::new(Tensor::zeros(&[1, 1, 8]), Tensor::zeros(&[1]), 1).unwrap();
        assert!(matches!(conv.forward(&Tensor::zeros(&[1, 7]), Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn lowered_conv1d_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(c_in, c_out, k, s, l) in &[(1, 3, 5, 2, 17), (3, 4, 3, 1, 9), (2, 2, 4, 3, 20)] {
            let w = random(&[c_out, c_in, k], &mut rng);
            let b = random(&[c_out], &mut rng);
            let x = random(&[c_in, l], &mut rng);
            let conv = Conv1d::new(w.clone(), b.clone(), s).unwrap();
            let (y, _) = conv.forward(&x, Mode::Eval).unwrap();
            let expect = reference::conv1d(&x, &w, &b, s).unwrap();
            assert!(y.max_abs_diff(&expect).unwrap() < 1e-12);
        }
    }

    #[test]
    fn batched_items_match_single_items_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = DilatedConv2d::new(random(&[3, 2, 3, 3], &mut rng), random(&[3], &mut rng), 2).unwrap();
        let x = random(&[4, 2, 11, 6], &mut rng);
        let (batched, _) = conv.forward(&x, Mode::Eval).unwrap();
        let per_item = batched.len() / 4;
        for b in 0..4 {
            let item = Tensor::from_vec(&[2, 11, 6], x.data()[b * 132..][..132].to_vec()).unwrap();
            let (single, _) = conv.forward(&item, Mode::Eval).unwrap();
            assert_eq!(single.data(), &batched.data()[b * per_item..][..per_item]);
        }
    }

    #[test]
    fn paper_first_dilated_stage_shape() {
        let conv = DilatedConv2d::new(Tensor::zeros(&[64, 1, 3, 3]), Tensor::zeros(&[64]), 12).unwrap();
        assert_eq!(conv.time_extent(), 25);
        let (y, _) = conv.forward(&Tensor::zeros(&[1, 800, 100]), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[64, 776, 98]);
    }

    #[test]
    fn dilation_larger_than_input_rejected() {
        let conv = DilatedConv2d::new(Tensor::zeros(&[1, 1, 3, 3]), Tensor::zeros(&[1]), 12).unwrap();
        assert!(conv.forward(&Tensor::zeros(&[1, 24, 10]), Mode::Eval).is_err());
        assert!(conv.forward(&Tensor::zeros(&[1, 25, 10]), Mode::Eval).is_ok());
    }

    #[test]
    fn lowered_dilated_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random(&[4, 3, 3, 2], &mut rng);
        let b = random(&[4], &mut rng);
        let x = random(&[3, 14, 7], &mut rng);
        let conv = DilatedConv2d::new(w.clone(), b.clone(), 3).unwrap();
        let (y, _) = conv.forward(&x, Mode::Eval).unwrap();
        let expect = reference::dilated_conv2d(&x, &w, &b, 3).unwrap();
        assert!(y.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn backward_without_cache_is_a_state_error() {
        let layer = crate::layers::Layer::Conv1d(
            Conv1d::new(Tensor::zeros(&[1, 1, 2]), Tensor::zeros(&[1]), 1).unwrap(),
        );
        let err = layer.backward(None, &Tensor::zeros(&[1, 3])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }
}
