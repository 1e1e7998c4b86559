use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExtractorLayer, ModelConfig};
use super::trace::{first_violation, shape_trace};
use crate::error::{Error, Result};
use crate::layers::{
    BatchNorm, Classifier, Conv1d, DepthwiseConv1d, DilatedConv2d, Layer, LayerCache, Mode, Pool2d, PointwiseConv,
};
use crate::tensor::Tensor;

/// An instantiated network: per-frame extractor, integration, dilated stack,
/// classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub extractor: Vec<Layer>,
    pub dilated: Vec<Layer>,
    pub classifier: Classifier,
}

/// Everything a training-mode forward pass saves for backward.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `[B, classes]`
    pub probabilities: Tensor,
    extractor_caches: Vec<LayerCache>,
    dilated_caches: Vec<LayerCache>,
    classifier_cache: LayerCache,
    extractor_out_shape: Vec<usize>,
    dilated_out_shape: Vec<usize>,
}

/// Gradients in [`Model::named_parameters`] order.
pub type Gradients = Vec<Tensor>;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::from_vec(shape, data).expect("shape and data agree")
}

/// Builds a model with seeded uniform initialization. Fails with a
/// configuration error naming the first layer whose shapes do not close.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    let trace = shape_trace(config);
    if let Some(bad) = first_violation(&trace) {
        return Err(Error::config(bad.label(), bad.error.clone().unwrap_or_default()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bn = |channels: usize| {
        let mut b = BatchNorm::new(channels);
        b.epsilon = config.hyper.bn_epsilon;
        b.momentum = config.hyper.bn_momentum;
        Layer::BatchNorm(b)
    };

    let mut extractor = Vec::new();
    let mut channels = 1;
    for layer in &config.extractor {
        let (conv, out) = match *layer {
            ExtractorLayer::Conv { kernel, stride, channels: c } => {
                let w = uniform(&mut rng, &[c, channels, kernel], channels * kernel, c * kernel);
                (Layer::Conv1d(Conv1d::new(w, Tensor::zeros(&[c]), stride)?), c)
            }
            ExtractorLayer::Depthwise { kernel, stride } => {
                let k = uniform(&mut rng, &[channels, kernel], kernel, kernel);
                (
                    Layer::Depthwise(DepthwiseConv1d::new(k, Tensor::zeros(&[channels]), stride)?),
                    channels,
                )
            }
            ExtractorLayer::Pointwise { channels: c } => {
                let w = uniform(&mut rng, &[c, channels], channels, c);
                (Layer::Pointwise(PointwiseConv::new(w, Tensor::zeros(&[c]))?), c)
            }
        };
        extractor.extend([conv, bn(out), Layer::Relu]);
        channels = out;
    }

    let mut dilated = Vec::new();
    let mut channels = 1;
    for block in &config.dilated {
        let taps = block.kernel_h * block.kernel_w;
        let k = uniform(
            &mut rng,
            &[block.channels, channels, block.kernel_h, block.kernel_w],
            channels * taps,
            block.channels * taps,
        );
        let conv = DilatedConv2d::new(k, Tensor::zeros(&[block.channels]), block.dilation)?;
        dilated.extend([
            Layer::DilatedConv2d(conv),
            bn(block.channels),
            Layer::Relu,
            Layer::Pool(Pool2d::new(block.pool)),
        ]);
        channels = block.channels;
    }

    let features = trace.last().expect("closed trace ends at the classifier").input[0];
    let w = uniform(&mut rng, &[config.class_count, features], features, config.class_count);
    let classifier = Classifier::new(w, Tensor::zeros(&[config.class_count]))?;
    Ok(Model {
        config: config.clone(),
        extractor,
        dilated,
        classifier,
    })
}

fn run(layers: &[Layer], mut x: Tensor, mode: Mode, caches: &mut Vec<LayerCache>) -> Result<Tensor> {
    for layer in layers {
        let (y, cache) = layer.forward(&x, mode)?;
        if let Some(c) = cache {
            caches.push(c);
        }
        x = y;
    }
    Ok(x)
}

fn run_back(layers: &[Layer], caches: &[LayerCache], mut g: Tensor, grads: &mut Vec<Vec<Tensor>>) -> Result<Tensor> {
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let (gi, pg) = layer.backward(Some(cache), &g)?;
        grads.push(pg);
        g = gi;
    }
    Ok(g)
}

impl Model {
    fn check_frames(&self, shape: &[usize]) -> Result<usize> {
        let (t, n) = (self.config.frames_per_segment, self.config.frame_length);
        match shape {
            [tt, nn] if (*tt, *nn) == (t, n) => Ok(1),
            [b, tt, nn] if (*tt, *nn) == (t, n) => Ok(*b),
            s => Err(Error::shape(format!("model expects {t}×{n} frames or B×{t}×{n}, got {s:?}"))),
        }
    }

    fn extract(&self, batch: usize, frames: &Tensor, mode: Mode, caches: &mut Vec<LayerCache>) -> Result<Tensor> {
        let (t, n) = (self.config.frames_per_segment, self.config.frame_length);
        let x = frames.clone().reshape(&[batch * t, 1, n])?;
        run(&self.extractor, x, mode, caches)
    }

    /// Integration matrix `T×F` for one segment: each frame is mapped to its
    /// feature vector independently (eval mode).
    pub fn extract_features(&self, frames: &Tensor) -> Result<Tensor> {
        let batch = self.check_frames(frames.shape())?;
        if frames.rank() != 2 {
            return Err(Error::shape("extract_features takes one T×N segment"));
        }
        let h = self.extract(batch, frames, Mode::Eval, &mut Vec::new())?;
        h.reshape(&[self.config.frames_per_segment, self.config.feature_length])
    }

    /// Class probabilities `[B, C]` (or `[C]` for a single `T×N` segment).
    pub fn forward(&self, frames: &Tensor, mode: Mode) -> Result<(Tensor, Option<ForwardPass>)> {
        let batch = self.check_frames(frames.shape())?;
        let (t, f) = (self.config.frames_per_segment, self.config.feature_length);
        let mut extractor_caches = Vec::new();
        let h = self.extract(batch, frames, mode, &mut extractor_caches)?;
        let extractor_out_shape = h.shape().to_vec();
        let integrated = h.reshape(&[batch, 1, t, f])?;
        let mut dilated_caches = Vec::new();
        let d = run(&self.dilated, integrated, mode, &mut dilated_caches)?;
        let dilated_out_shape = d.shape().to_vec();
        let flat = d.len() / batch;
        let (p, cls_cache) = self.classifier.forward(&d.reshape(&[batch, flat])?, mode)?;
        let p = if frames.rank() == 2 { p.reshape(&[self.config.class_count])? } else { p };
        let pass = cls_cache.map(|classifier_cache| ForwardPass {
            probabilities: p.clone(),
            extractor_caches,
            dilated_caches,
            classifier_cache,
            extractor_out_shape,
            dilated_out_shape,
        });
        Ok((p, pass))
    }

    /// One `T×N` segment.
    pub fn forward_segment(&self, frames: &Tensor, mode: Mode) -> Result<(Tensor, Option<ForwardPass>)> {
        if frames.rank() != 2 {
            return Err(Error::shape(format!(
                "forward_segment takes one T×N segment, got {:?}",
                frames.shape()
            )));
        }
        self.forward(frames, mode)
    }

    /// Mean clamped cross-entropy over the batch and its exact gradient.
    pub fn backward(&self, pass: &ForwardPass, labels: &[usize]) -> Result<(f64, Gradients)> {
        let c = self.config.class_count;
        let p = pass.probabilities.data();
        let batch = p.len() / c;
        if labels.len() != batch {
            return Err(Error::shape(format!("{} labels for a batch of {batch}", labels.len())));
        }
        let mut loss = 0.0;
        let mut dz = p.to_vec();
        for (row, &y) in dz.chunks_mut(c).zip(labels) {
            if y >= c {
                return Err(Error::InvalidLabel(format!("label {y} with {c} classes")));
            }
            loss -= row[y].max(1e-12).ln();
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v /= batch as f64;
            }
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss}")));
        }

        let (g_feat, cls_grads) = self
            .classifier
            .backward(Some(&pass.classifier_cache), &Tensor::from_vec(&[batch, c], dz)?)?;
        let mut dil_grads = Vec::new();
        let g = g_feat.reshape(&pass.dilated_out_shape)?;
        let g = run_back(&self.dilated, &pass.dilated_caches, g, &mut dil_grads)?;
        let mut ext_grads = Vec::new();
        let g = g.reshape(&pass.extractor_out_shape)?;
        run_back(&self.extractor, &pass.extractor_caches, g, &mut ext_grads)?;

        let mut grads: Gradients = Vec::new();
        grads.extend(ext_grads.into_iter().rev().flatten());
        grads.extend(dil_grads.into_iter().rev().flatten());
        grads.extend(cls_grads);
        Ok((loss, grads))
    }

    /// Folds the batch statistics of a training pass into running statistics.
    pub fn commit_statistics(&mut self, pass: &ForwardPass) {
        for (layer, cache) in self.extractor.iter_mut().zip(&pass.extractor_caches) {
            layer.commit(cache);
        }
        for (layer, cache) in self.dilated.iter_mut().zip(&pass.dilated_caches) {
            layer.commit(cache);
        }
    }

    /// Index of the most probable class per segment (eval mode).
    pub fn predict(&self, frames: &Tensor) -> Result<Vec<usize>> {
        let (p, _) = self.forward(frames, Mode::Eval)?;
        Ok(p.data().chunks(self.config.class_count).map(argmax).collect())
    }

    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, layers) in [("extractor", &self.extractor), ("dilated", &self.dilated)] {
            for (i, layer) in layers.iter().enumerate() {
                for (name, t) in layer.parameter_names().iter().zip(layer.parameters()) {
                    out.push((format!("{prefix}.{i}.{}.{name}", layer.kind_name()), t));
                }
            }
        }
        out.push(("classifier.weight".into(), &self.classifier.weights));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in self.extractor.iter_mut().chain(self.dilated.iter_mut()) {
            out.extend(layer.parameters_mut());
        }
        out.push(&mut self.classifier.weights);
        out.push(&mut self.classifier.bias);
        out
    }

    /// Batch-norm running statistics, named like parameters.
    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, layers) in [("extractor", &self.extractor), ("dilated", &self.dilated)] {
            for (i, layer) in layers.iter().enumerate() {
                if let Layer::BatchNorm(bn) = layer {
                    out.push((format!("{prefix}.{i}.batchnorm.running_mean"), &bn.running_mean));
                    out.push((format!("{prefix}.{i}.batchnorm.running_var"), &bn.running_var));
                }
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in self.extractor.iter_mut().chain(self.dilated.iter_mut()) {
            if let Layer::BatchNorm(bn) = layer {
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
