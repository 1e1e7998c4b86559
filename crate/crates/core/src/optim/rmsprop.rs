use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Squared-gradient accumulators for a list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub accumulators: Vec<Tensor>,
    pub rho: f64,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl RmspropState {
    /// Zero accumulators shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, learning_rate: f64, rho: f64, epsilon: f64) -> Self {
        Self {
            accumulators: params.into_iter().map(|p| Tensor::zeros(p.shape())).collect(),
            rho,
            learning_rate,
            epsilon,
        }
    }

    /// Applies one update to every parameter, in order.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.accumulators.len() {
            return Err(Error::shape(format!(
                "{} parameters, {} gradients, {} accumulators",
                params.len(),
                grads.len(),
                self.accumulators.len()
            )));
        }
        for ((p, g), s) in params.into_iter().zip(grads).zip(&mut self.accumulators) {
            rmsprop_step(p, g, s, self.learning_rate, self.rho, self.epsilon)?;
        }
        Ok(())
    }
}

/// `s ← ρs + (1−ρ)g²; p ← p − lr·g/(√s + ε)`, elementwise.
pub fn rmsprop_step(param: &mut Tensor, grad: &Tensor, acc: &mut Tensor, learning_rate: f64, rho: f64, epsilon: f64) -> Result<()> {
    param.expect_same_shape(grad)?;
    param.expect_same_shape(acc)?;
    for ((p, &g), s) in param.data_mut().iter_mut().zip(grad.data()).zip(acc.data_mut()) {
        *s = rho * *s + (1.0 - rho) * g * g;
        *p -= learning_rate * g / (s.sqrt() + epsilon);
    }
    Ok(())
}
