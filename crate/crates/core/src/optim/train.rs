use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rmsprop::RmspropState;
use crate::audio::{segment_seed, FrameSequence};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{argmax, Model};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    /// `None` when no evaluation set was given.
    pub eval_accuracy: Option<f64>,
    pub seconds: f64,
}

impl TrainStats {
    pub const HEADER: &'static str = "epoch,loss,train_acc,test_acc,seconds";

    /// One delimited row; everything but `seconds` is reproducible.
    pub fn row(&self) -> String {
        format!(
            "{},{:.6},{:.4},{},{:.3}",
            self.epoch,
            self.loss,
            self.train_accuracy,
            self.eval_accuracy.map_or(String::new(), |a| format!("{a:.4}")),
            self.seconds
        )
    }
}

/// Stacks segments into a `[B, T, N]` batch and collects their labels.
pub fn stack(segments: &[&FrameSequence]) -> Result<(Tensor, Vec<usize>)> {
    let first = segments
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let item = first.frames.shape().to_vec();
    let mut data = Vec::with_capacity(segments.len() * first.frames.len());
    let mut labels = Vec::with_capacity(segments.len());
    for s in segments {
        if s.frames.shape() != item.as_slice() {
            return Err(Error::shape(format!(
                "segment {} has shape {:?}, batch expects {item:?}",
                s.segment_id,
                s.frames.shape()
            )));
        }
        data.extend_from_slice(s.frames.data());
        labels.push(
            s.label
                .ok_or_else(|| Error::InvalidLabel(format!("segment {} is unlabelled", s.segment_id)))?,
        );
    }
    let mut shape = vec![segments.len()];
    shape.extend_from_slice(&item);
    Ok((Tensor::from_vec(&shape, data)?, labels))
}

/// Eval-mode predictions, batch by batch.
pub fn predict_all(model: &Model, data: &[FrameSequence], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&FrameSequence> = chunk.iter().collect();
        let (x, _) = stack(&refs)?;
        out.extend(model.predict(&x)?);
    }
    Ok(out)
}

pub fn accuracy(model: &Model, data: &[FrameSequence], batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let preds = predict_all(model, data, batch_size)?;
    let hits = preds.iter().zip(data).filter(|(p, s)| Some(**p) == s.label).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Mini-batch RMSProp training with a seeded shuffle per epoch.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: RmspropState,
    pub seed: u64,
    /// Epochs completed so far.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, seed: u64) -> Self {
        let h = model.config.hyper.clone();
        let optimizer = RmspropState::new(
            model.named_parameters().into_iter().map(|(_, t)| t),
            h.learning_rate,
            h.rho,
            h.epsilon,
        );
        Self {
            model,
            optimizer,
            seed,
            epoch: 0,
        }
    }

    /// One pass over `train`: mean-gradient update per mini-batch, batch-norm
    /// running statistics folded in after every batch. The reported training
    /// accuracy uses the training-mode predictions made along the way.
    pub fn train_epoch(&mut self, train: &[FrameSequence], eval: Option<&[FrameSequence]>) -> Result<TrainStats> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let start = Instant::now();
        let batch_size = self.model.config.hyper.batch_size.max(1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(segment_seed(self.seed, self.epoch));
        order.shuffle(&mut rng);

        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(batch_size) {
            let refs: Vec<&FrameSequence> = chunk.iter().map(|&i| &train[i]).collect();
            let (x, labels) = stack(&refs)?;
            let (p, pass) = self.model.forward(&x, Mode::Train)?;
            let pass = pass.expect("training-mode forward returns a pass");
            let (loss, grads) = self.model.backward(&pass, &labels)?;
            let c = self.model.config.class_count;
            hits += p
                .data()
                .chunks(c)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            loss_sum += loss * chunk.len() as f64;
            self.model.commit_statistics(&pass);
            self.optimizer.step(self.model.parameters_mut(), &grads)?;
        }
        self.epoch += 1;
        let eval_accuracy = match eval {
            Some(e) if !e.is_empty() => Some(accuracy(&self.model, e, batch_size)?),
            _ => None,
        };
        Ok(TrainStats {
            epoch: self.epoch,
            loss: loss_sum / train.len() as f64,
            train_accuracy: hits as f64 / train.len() as f64,
            eval_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs `epochs` epochs, handing each epoch's stats to `on_epoch`.
    pub fn fit(
        &mut self,
        train: &[FrameSequence],
        eval: Option<&[FrameSequence]>,
        epochs: usize,
        mut on_epoch: impl FnMut(&TrainStats),
    ) -> Result<Vec<TrainStats>> {
        let mut all = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let s = self.train_epoch(train, eval)?;
            on_epoch(&s);
            all.push(s);
        }
        Ok(all)
    }
}
