use super::{wrong_cache, CacheKind, LayerCache, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Elementwise `max(x, 0)`.
pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

pub(crate) fn relu_forward(input: &Tensor, mode: Mode) -> Result<(Tensor, Option<LayerCache>)> {
    let cache = (mode == Mode::Train).then(|| LayerCache::new(CacheKind::Input(input.clone())));
    Ok((relu(input), cache))
}

/// Gradient passes where the forward input was strictly positive (0 at exactly 0).
pub(crate) fn relu_backward(cache: &LayerCache, grad_out: &Tensor) -> Result<Tensor> {
    let CacheKind::Input(input) = &cache.kind else {
        return Err(wrong_cache("relu"));
    };
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(format!(
            "relu grad_out must be {:?}, got {:?}",
            input.shape(),
            grad_out.shape()
        )));
    }
    input.zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Layer;

    #[test]
    fn sign_cases() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert!(relu(&Tensor::new(&[4], -3.0).unwrap()).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_vec(&[3], vec![0.0, 1.0, 5.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn subgradient_is_zero_at_zero() {
        let x = Tensor::from_vec(&[4], vec![-1.0, 0.0, 1e-300, 3.0]).unwrap();
        let (_, cache) = Layer::Relu.forward(&x, Mode::Train).unwrap();
        let (dx, grads) = Layer::Relu.backward(cache.as_ref(), &Tensor::new(&[4], 2.0).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 2.0, 2.0]);
        assert!(grads.is_empty());
    }
}
