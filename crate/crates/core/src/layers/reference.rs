//! Direct nested-loop convolutions over single (unbatched) items.
//!
//! These share no code with the lowered GEMM path and serve as its oracle.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn out_len(len: usize, span: usize, stride: usize) -> Result<usize> {
    if span > len {
        return Err(Error::shape(format!("kernel span {span} exceeds extent {len}")));
    }
    Ok((len - span) / stride + 1)
}

/// `y[o,t] = Σ_c Σ_k x[c, t·s + k]·w[o,c,k] + b[o]`.
pub fn conv1d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    let (c_in, len) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[0], w.shape()[2]);
    let l_out = out_len(len, k, stride)?;
    let mut y = Tensor::zeros(&[c_out, l_out]);
    for o in 0..c_out {
        for t in 0..l_out {
            let mut acc = b.data()[o];
            for c in 0..c_in {
                for kk in 0..k {
                    acc += x.get(&[c, t * stride + kk])? * w.get(&[o, c, kk])?;
                }
            }
            y.set(&[o, t], acc)?;
        }
    }
    Ok(y)
}

/// `y[c,t] = Σ_k x[c, t·s + k]·w[c,k] + b[c]`.
pub fn depthwise_conv1d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    let (channels, len) = (x.shape()[0], x.shape()[1]);
    let k = w.shape()[1];
    let l_out = out_len(len, k, stride)?;
    let mut y = Tensor::zeros(&[channels, l_out]);
    for c in 0..channels {
        for t in 0..l_out {
            let mut acc = b.data()[c];
            for kk in 0..k {
                acc += x.get(&[c, t * stride + kk])? * w.get(&[c, kk])?;
            }
            y.set(&[c, t], acc)?;
        }
    }
    Ok(y)
}

/// Plain stride-1 2-D cross-correlation, no dilation.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (h_out, w_out) = (out_len(h, kh, 1)?, out_len(wd, kw, 1)?);
    let mut y = Tensor::zeros(&[c_out, h_out, w_out]);
    for o in 0..c_out {
        for i in 0..h_out {
            for j in 0..w_out {
                let mut acc = b.data()[o];
                for c in 0..c_in {
                    for p in 0..kh {
                        for q in 0..kw {
                            acc += x.get(&[c, i + p, j + q])? * w.get(&[o, c, p, q])?;
                        }
                    }
                }
                y.set(&[o, i, j], acc)?;
            }
        }
    }
    Ok(y)
}

/// Stride-1 2-D cross-correlation visiting input row `i + ξ·p` for kernel row `p`.
pub fn dilated_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, dilation: usize) -> Result<Tensor> {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let h_out = out_len(h, (kh - 1) * dilation + 1, 1)?;
    let w_out = out_len(wd, kw, 1)?;
    let mut y = Tensor::zeros(&[c_out, h_out, w_out]);
    for o in 0..c_out {
        for i in 0..h_out {
            for j in 0..w_out {
                let mut acc = b.data()[o];
                for c in 0..c_in {
                    for p in 0..kh {
                        for q in 0..kw {
                            acc += x.get(&[c, i + dilation * p, j + q])? * w.get(&[o, c, p, q])?;
                        }
                    }
                }
                y.set(&[o, i, j], acc)?;
            }
        }
    }
    Ok(y)
}
