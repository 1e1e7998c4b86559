use serde::{Deserialize, Serialize};

use crate::layers::PoolKind;

/// One layer of the per-frame feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExtractorLayer {
    /// Standard 1-D convolution over all input channels.
    Conv { kernel: usize, stride: usize, channels: usize },
    /// One kernel per channel; channel count is unchanged.
    Depthwise { kernel: usize, stride: usize },
    /// 1×1 cross-channel mixing.
    Pointwise { channels: usize },
}

impl ExtractorLayer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ExtractorLayer::Conv { .. } => "conv1d",
            ExtractorLayer::Depthwise { .. } => "depthwise",
            ExtractorLayer::Pointwise { .. } => "pointwise",
        }
    }
}

/// Time-dilated convolution, BN, ReLU, then 2×2 pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilatedBlock {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub dilation: usize,
    pub channels: usize,
    pub pool: PoolKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub learning_rate: f64,
    /// RMSProp decay of the squared-gradient average.
    pub rho: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Segments per mini-batch.
    pub batch_size: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            rho: 0.9,
            epsilon: 1e-8,
            epochs: 100,
            batch_size: 8,
            bn_epsilon: crate::layers::BN_EPSILON,
            bn_momentum: crate::layers::BN_MOMENTUM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub sample_rate: u32,
    pub segment_seconds: f64,
    /// Samples per frame (N).
    pub frame_length: usize,
    /// Samples between consecutive frame starts.
    pub hop_length: usize,
    /// Frames per segment (T).
    pub frames_per_segment: usize,
    /// Length of each per-frame feature vector (F).
    pub feature_length: usize,
    pub class_count: usize,
    pub class_names: Vec<String>,
    pub extractor: Vec<ExtractorLayer>,
    pub dilated: Vec<DilatedBlock>,
    pub hyper: Hyper,
}

fn ship_classes() -> Vec<String> {
    ["small ship", "ferry", "big ship"].iter().map(|s| s.to_string()).collect()
}

impl ModelConfig {
    /// Full-scale architecture: 48 kHz, 10 s segments, 800 frames of 2176 samples.
    pub fn paper() -> Self {
        use ExtractorLayer::*;
        let block = |channels, pool| DilatedBlock {
            kernel_h: 3,
            kernel_w: 3,
            dilation: 12,
            channels,
            pool,
        };
        Self {
            name: "paper".into(),
            sample_rate: 48_000,
            segment_seconds: 10.0,
            frame_length: 2176,
            hop_length: 600,
            frames_per_segment: 800,
            feature_length: 100,
            class_count: 3,
            class_names: ship_classes(),
            extractor: vec![
                Conv { kernel: 204, stride: 50, channels: 64 },
                Depthwise { kernel: 12, stride: 2 },
                Pointwise { channels: 128 },
                Depthwise { kernel: 15, stride: 1 },
                Pointwise { channels: 100 },
            ],
            dilated: vec![
                block(64, PoolKind::Max),
                block(128, PoolKind::Max),
                block(256, PoolKind::Avg),
                block(512, PoolKind::Avg),
                block(512, PoolKind::Avg),
            ],
            hyper: Hyper::default(),
        }
    }

    /// Laptop-scale variant with the same layer types and shape laws:
    /// 8 kHz, 1 s segments, 64 frames of 272 samples, three dilated blocks.
    pub fn desk() -> Self {
        use ExtractorLayer::*;
        let block = |channels, pool| DilatedBlock {
            kernel_h: 3,
            kernel_w: 3,
            dilation: 4,
            channels,
            pool,
        };
        Self {
            name: "desk".into(),
            sample_rate: 8_000,
            segment_seconds: 1.0,
            frame_length: 272,
            hop_length: 125,
            frames_per_segment: 64,
            feature_length: 25,
            class_count: 3,
            class_names: ship_classes(),
            extractor: vec![
                Conv { kernel: 26, stride: 10, channels: 16 },
                Depthwise { kernel: 6, stride: 2 },
                Pointwise { channels: 32 },
                Depthwise { kernel: 10, stride: 1 },
                Pointwise { channels: 25 },
            ],
            dilated: vec![
                block(8, PoolKind::Max),
                block(16, PoolKind::Max),
                block(16, PoolKind::Avg),
            ],
            hyper: Hyper::default(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn segment_samples(&self) -> usize {
        (self.segment_seconds * f64::from(self.sample_rate)).round() as usize
    }
}
