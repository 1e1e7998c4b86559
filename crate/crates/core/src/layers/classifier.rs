use super::{wrong_cache, CacheKind, LayerCache, Mode, ParamGrads};
use crate::error::{Error, Result};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Numerically stable softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Logit gradient of `cross_entropy(softmax(z), y)`: `p − y`.
pub fn softmax_cross_entropy_grad(probabilities: &[f64], one_hot: &[f64]) -> Result<Vec<f64>> {
    if probabilities.len() != one_hot.len() {
        return Err(Error::shape(format!(
            "prediction has {} classes, label has {}",
            probabilities.len(),
            one_hot.len()
        )));
    }
    Ok(probabilities.iter().zip(one_hot).map(|(p, y)| p - y).collect())
}

/// Linear layer followed by softmax: `softmax(W·f + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `[classes, features]`
    pub weights: Tensor,
    /// `[classes]`
    pub bias: Tensor,
}

impl Classifier {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        weights.expect_rank(2, "classifier weights")?;
        if weights.shape()[0] < 2 {
            return Err(Error::InvalidArgument("classifier needs at least 2 classes".into()));
        }
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::shape(format!(
                "classifier bias must have shape [{}], got {:?}",
                weights.shape()[0],
                bias.shape()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.weights.shape()[1]
    }

    fn batch_of(&self, features: &Tensor) -> Result<usize> {
        let (batch, len) = match features.shape() {
            [f] => (1, *f),
            [b, f] => (*b, *f),
            s => return Err(Error::shape(format!("classifier expects F or B×F features, got {s:?}"))),
        };
        if len != self.features() {
            return Err(Error::shape(format!(
                "classifier expects {} features, got {len}",
                self.features()
            )));
        }
        Ok(batch)
    }

    /// `W·f + b` for every row of `features`.
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let batch = self.batch_of(features)?;
        let c = self.classes();
        let mut z = vec![0.0; batch * c];
        matmul_nt_into(features.data(), self.weights.data(), &mut z, batch, self.features(), c);
        for row in z.chunks_mut(c) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        let shape: Vec<usize> = if features.rank() == 1 { vec![c] } else { vec![batch, c] };
        Tensor::from_vec(&shape, z)
    }

    /// Class probabilities, one row per feature row.
    pub fn forward(&self, features: &Tensor, mode: Mode) -> Result<(Tensor, Option<LayerCache>)> {
        let z = self.logits(features)?;
        let c = self.classes();
        let p: Vec<f64> = z.data().chunks(c).flat_map(softmax).collect();
        let cache = (mode == Mode::Train).then(|| LayerCache::new(CacheKind::Input(features.clone())));
        Ok((Tensor::from_vec(z.shape(), p)?, cache))
    }

    /// Backward from logit gradients (already scaled by the caller).
    pub fn backward(&self, cache: Option<&LayerCache>, grad_logits: &Tensor) -> Result<(Tensor, ParamGrads)> {
        let cache = cache.ok_or_else(|| Error::State("classifier backward called without a training-mode cache".into()))?;
        let CacheKind::Input(features) = &cache.kind else {
            return Err(wrong_cache("classifier"));
        };
        let batch = self.batch_of(features)?;
        let (c, f) = (self.classes(), self.features());
        if grad_logits.len() != batch * c {
            return Err(Error::shape(format!(
                "classifier grad must have {} values, got {}",
                batch * c,
                grad_logits.len()
            )));
        }
        let dz = grad_logits.data();
        let mut dw = vec![0.0; c * f];
        matmul_tn_into(dz, features.data(), &mut dw, c, batch, f);
        let mut db = vec![0.0; c];
        for row in dz.chunks(c) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        let mut df = vec![0.0; batch * f];
        matmul_into(dz, self.weights.data(), &mut df, batch, c, f);
        Ok((
            Tensor::from_vec(features.shape(), df)?,
            vec![Tensor::from_vec(&[c, f], dw)?, Tensor::from_vec(&[c], db)?],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_give_uniform_output() {
        let cls = Classifier::new(Tensor::zeros(&[3, 5]), Tensor::zeros(&[3])).unwrap();
        let (p, _) = cls.forward(&Tensor::new(&[5], 2.0).unwrap(), Mode::Eval).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_softmax() {
        let p = softmax(&[2f64.ln(), 0.0, 0.0]);
        let expect = [0.5, 0.25, 0.25];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.4).collect();
        for (a, b) in softmax(&z).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_gradient_is_p_minus_y() {
        let g = softmax_cross_entropy_grad(&[0.5, 0.25, 0.25], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(g, vec![-0.5, 0.25, 0.25]);
    }

    #[test]
    fn feature_length_mismatch() {
        let cls = Classifier::new(Tensor::zeros(&[3, 5]), Tensor::zeros(&[3])).unwrap();
        assert!(matches!(cls.forward(&Tensor::zeros(&[4]), Mode::Eval), Err(Error::Shape(_))));
    }

    #[test]
    fn needs_two_classes() {
        assert!(Classifier::new(Tensor::zeros(&[1, 5]), Tensor::zeros(&[1])).is_err());
    }
}
