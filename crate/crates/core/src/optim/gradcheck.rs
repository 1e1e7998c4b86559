//! Central-difference verification of analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::PROBABILITY_FLOOR;
use crate::error::{Error, Result};
use crate::layers::{Classifier, Layer, Mode};
use crate::model::Model;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Something with a scalar loss over a list of perturbable tensors.
pub trait Objective {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
    fn loss(&self) -> Result<f64>;
    /// Loss and its gradient, one tensor per entry of [`Objective::tensors_mut`].
    fn loss_and_gradients(&self) -> Result<(f64, Vec<Tensor>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// `(tensor index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Largest relative error within each tensor, in objective order.
    pub per_tensor: Vec<f64>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn finite(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("loss is {loss}")))
    }
}

/// Perturbs every element by ±`step` and compares `(L(θ+h) − L(θ−h))/2h` to
/// the analytic gradient. An objective with nothing to perturb reports 0.
pub fn gradient_check(objective: &mut impl Objective, step: f64) -> Result<GradCheckReport> {
    let (loss, analytic) = objective.loss_and_gradients()?;
    finite(loss)?;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        per_tensor: Vec::new(),
    };
    let sizes: Vec<usize> = objective.tensors_mut().iter().map(|t| t.len()).collect();
    if sizes.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} tensors but {} gradients",
            sizes.len(),
            analytic.len()
        )));
    }
    let mut per_tensor = vec![0.0f64; sizes.len()];
    for (ti, &n) in sizes.iter().enumerate() {
        if analytic[ti].len() != n {
            return Err(Error::shape(format!("gradient {ti} has {} values, tensor has {n}", analytic[ti].len())));
        }
        for e in 0..n {
            let original = objective.tensors_mut()[ti].data()[e];
            objective.tensors_mut()[ti].data_mut()[e] = original + step;
            let plus = finite(objective.loss()?)?;
            objective.tensors_mut()[ti].data_mut()[e] = original - step;
            let minus = finite(objective.loss()?)?;
            objective.tensors_mut()[ti].data_mut()[e] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[ti].data()[e];
            let err = relative_error(a, numeric);
            report.checked += 1;
            per_tensor[ti] = per_tensor[ti].max(err);
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((ti, e));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.per_tensor = per_tensor;
    Ok(report)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid shape")
}

/// One layer under a fixed random linear head: `L = Σ head ⊙ layer(x)`.
/// The input is perturbed too, so input gradients are checked alongside
/// parameter gradients.
#[derive(Debug, Clone)]
pub struct LayerProbe {
    pub layer: Layer,
    pub input: Tensor,
    pub head: Tensor,
}

impl LayerProbe {
    pub fn new(layer: Layer, input: Tensor, seed: u64) -> Result<Self> {
        let (y, _) = layer.forward(&input, Mode::Train)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = random_tensor(&mut rng, y.shape());
        Ok(Self { layer, input, head })
    }
}

impl Objective for LayerProbe {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.layer.parameters_mut();
        v.push(&mut self.input);
        v
    }

    fn loss(&self) -> Result<f64> {
        let (y, _) = self.layer.forward(&self.input, Mode::Train)?;
        Ok(y.data().iter().zip(self.head.data()).map(|(a, b)| a * b).sum())
    }

    fn loss_and_gradients(&self) -> Result<(f64, Vec<Tensor>)> {
        let (y, cache) = self.layer.forward(&self.input, Mode::Train)?;
        let loss = y.data().iter().zip(self.head.data()).map(|(a, b)| a * b).sum();
        let (dx, mut grads) = self.layer.backward(cache.as_ref(), &self.head)?;
        grads.push(dx);
        Ok((loss, grads))
    }
}

/// Linear + softmax + mean cross-entropy over a feature batch.
#[derive(Debug, Clone)]
pub struct LinearSoftmax {
    pub classifier: Classifier,
    /// `[B, F]`
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl LinearSoftmax {
    fn mean_loss(&self, p: &Tensor) -> f64 {
        let c = self.classifier.classes();
        let rows = p.data().chunks(c);
        rows.zip(&self.labels).map(|(r, &y)| -r[y].max(PROBABILITY_FLOOR).ln()).sum::<f64>() / self.labels.len() as f64
    }
}

impl Objective for LinearSoftmax {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.classifier.weights, &mut self.classifier.bias, &mut self.features]
    }

    fn loss(&self) -> Result<f64> {
        let (p, _) = self.classifier.forward(&self.features, Mode::Eval)?;
        Ok(self.mean_loss(&p))
    }

    fn loss_and_gradients(&self) -> Result<(f64, Vec<Tensor>)> {
        let (p, cache) = self.classifier.forward(&self.features, Mode::Train)?;
        let c = self.classifier.classes();
        let b = self.labels.len() as f64;
        let mut dz = p.data().to_vec();
        for (row, &y) in dz.chunks_mut(c).zip(&self.labels) {
            row[y] -= 1.0;
            row.iter_mut().for_each(|v| *v /= b);
        }
        let (df, mut grads) = self.classifier.backward(cache.as_ref(), &Tensor::from_vec(p.shape(), dz)?)?;
        grads.push(df);
        Ok((self.mean_loss(&p), grads))
    }
}

/// The whole network in training mode on a fixed batch.
#[derive(Debug, Clone)]
pub struct ModelObjective {
    pub model: Model,
    /// `[B, T, N]`
    pub frames: Tensor,
    pub labels: Vec<usize>,
}

impl Objective for ModelObjective {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.model.parameters_mut()
    }

    fn loss(&self) -> Result<f64> {
        let (p, _) = self.model.forward(&self.frames, Mode::Train)?;
        let c = self.model.config.class_count;
        let rows = p.data().chunks(c);
        Ok(rows.zip(&self.labels).map(|(r, &y)| -r[y].max(PROBABILITY_FLOOR).ln()).sum::<f64>() / self.labels.len() as f64)
    }

    fn loss_and_gradients(&self) -> Result<(f64, Vec<Tensor>)> {
        let (_, pass) = self.model.forward(&self.frames, Mode::Train)?;
        self.model.backward(&pass.expect("training pass"), &self.labels)
    }
}

/// Objective with nothing to perturb.
#[derive(Debug, Clone, Copy, Default)]
pub struct Constant(pub f64);

impl Objective for Constant {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        Vec::new()
    }

    fn loss(&self) -> Result<f64> {
        Ok(self.0)
    }

    fn loss_and_gradients(&self) -> Result<(f64, Vec<Tensor>)> {
        Ok((self.0, Vec::new()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{
        BatchNorm, Conv1d, DepthwiseConv1d, DilatedConv2d, Pool2d, PoolKind, PointwiseConv,
    };

    fn rand(seed: u64, shape: &[usize]) -> Tensor {
        random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), shape)
    }

    /// Uniform values bounded away from zero, so ReLU kinks and pooling ties
    /// stay outside the finite-difference step.
    fn rand_away_from_zero(seed: u64, shape: &[usize]) -> Tensor {
        rand(seed, shape).map(|v| if v >= 0.0 { 0.1 + v } else { v - 0.1 })
    }

    fn check(layer: Layer, input: Tensor) -> f64 {
        let mut probe = LayerProbe::new(layer, input, 99).unwrap();
        let r = gradient_check(&mut probe, DEFAULT_STEP).unwrap();
        assert!(r.checked > 0);
        r.max_relative_error
    }

    #[test]
    fn conv1d_strided_batched() {
        let layer = Layer::Conv1d(Conv1d::new(rand(1, &[4, 2, 5]), rand(2, &[4]), 3).unwrap());
        assert!(check(layer, rand(3, &[3, 2, 17])) <= 1e-6);
    }

    #[test]
    fn depthwise_three_channels() {
        let layer = Layer::Depthwise(DepthwiseConv1d::new(rand(4, &[3, 4]), rand(5, &[3]), 2).unwrap());
        assert!(check(layer.clone(), rand(6, &[3, 11])) <= 1e-6);
        assert!(check(layer, rand(7, &[2, 3, 11])) <= 1e-6);
    }

    #[test]
    fn pointwise() {
        let layer = Layer::Pointwise(PointwiseConv::new(rand(8, &[5, 3]), rand(9, &[5])).unwrap());
        assert!(check(layer, rand(10, &[2, 3, 4])) <= 1e-6);
    }

    #[test]
    fn batchnorm_train() {
        let mut bn = BatchNorm::new(3);
        bn.gamma = rand(11, &[3]);
        bn.beta = rand(12, &[3]);
        assert!(check(Layer::BatchNorm(bn.clone()), rand(13, &[2, 3, 5])) <= 1e-6);
        assert!(check(Layer::BatchNorm(bn), rand(14, &[2, 3, 2, 3])) <= 1e-6);
    }

    #[test]
    fn relu() {
        assert!(check(Layer::Relu, rand_away_from_zero(15, &[2, 3, 7])) <= 1e-6);
    }

    #[test]
    fn dilated_conv2d() {
        let layer = Layer::DilatedConv2d(DilatedConv2d::new(rand(16, &[3, 2, 3, 2]), rand(17, &[3]), 2).unwrap());
        assert!(check(layer, rand(18, &[2, 2, 9, 5])) <= 1e-6);
    }

    #[test]
    fn pooling() {
        for kind in [PoolKind::Max, PoolKind::Avg] {
            assert!(check(Layer::Pool(Pool2d::new(kind)), rand_away_from_zero(19, &[2, 2, 5, 4])) <= 1e-6);
        }
    }

    #[test]
    fn linear_softmax_fragment() {
        let mut frag = LinearSoftmax {
            classifier: Classifier::new(rand(20, &[3, 6]), rand(21, &[3])).unwrap(),
            features: rand(22, &[4, 6]),
            labels: vec![0, 2, 1, 2],
        };
        assert!(gradient_check(&mut frag, DEFAULT_STEP).unwrap().max_relative_error <= 1e-6);
    }

    #[test]
    fn nothing_to_perturb() {
        let r = gradient_check(&mut Constant(1.5), DEFAULT_STEP).unwrap();
        assert_eq!(r.max_relative_error, 0.0);
        assert_eq!(r.checked, 0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        assert!(matches!(gradient_check(&mut Constant(f64::NAN), DEFAULT_STEP), Err(Error::Numeric(_))));
    }
}
