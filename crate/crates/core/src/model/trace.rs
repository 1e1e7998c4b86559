//! Shape arithmetic over a [`ModelConfig`], without touching parameters.

use std::fmt;

use super::config::{ExtractorLayer, ModelConfig};
use crate::layers::Pool2d;
use crate::tensor::output_extent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Framing,
    Extractor,
    Integration,
    Dilated,
    Classifier,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Framing => "framing",
            Stage::Extractor => "extractor",
            Stage::Integration => "integration",
            Stage::Dilated => "dilated",
            Stage::Classifier => "classifier",
        })
    }
}

/// One traced layer. Shapes use the tables' notation: extractor shapes are
/// `length×channels`, dilated shapes are `time×feature×channels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub stage: Stage,
    pub index: usize,
    pub layer: String,
    pub input: Vec<usize>,
    pub output: Option<Vec<usize>>,
    pub error: Option<String>,
}

impl TraceEntry {
    pub fn label(&self) -> String {
        format!("{}[{}] {}", self.stage, self.index, self.layer)
    }
}

pub fn format_shape(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("×")
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<24} {:>14}", self.label(), format_shape(&self.input))?;
        match (&self.output, &self.error) {
            (Some(out), _) => write!(f, " -> {}", format_shape(out)),
            (None, Some(err)) => write!(f, " -> ERROR: {err}"),
            (None, None) => Ok(()),
        }
    }
}

struct Tracer {
    entries: Vec<TraceEntry>,
}

impl Tracer {
    fn push(&mut self, stage: Stage, index: usize, layer: &str, input: Vec<usize>, output: Result<Vec<usize>, String>) -> Option<Vec<usize>> {
        let (out, error) = match output {
            Ok(o) => (Some(o), None),
            Err(e) => (None, Some(e)),
        };
        self.entries.push(TraceEntry {
            stage,
            index,
            layer: layer.to_string(),
            input,
            output: out.clone(),
            error,
        });
        out
    }
}

/// Every layer's input and output shape, in execution order. Tracing stops
/// at the first violation, which is reported as an entry with an error.
pub fn shape_trace(config: &ModelConfig) -> Vec<TraceEntry> {
    let mut t = Tracer { entries: Vec::new() };
    let segment = config.segment_samples();
    let framing = if config.hop_length == 0 || config.frame_length == 0 || config.frames_per_segment == 0 {
        Err("frame length, hop and frame count must be at least 1".to_string())
    } else if config.frames_per_segment * config.hop_length != segment {
        Err(format!(
            "{} frames with hop {} cover {} samples, segment has {segment}",
            config.frames_per_segment,
            config.hop_length,
            config.frames_per_segment * config.hop_length
        ))
    } else {
        Ok(vec![config.frames_per_segment, config.frame_length])
    };
    if t.push(Stage::Framing, 0, "hamming", vec![segment], framing).is_none() {
        return t.entries;
    }

    let (mut len, mut channels) = (config.frame_length, 1usize);
    for (i, layer) in config.extractor.iter().enumerate() {
        let input = vec![len, channels];
        let out = match *layer {
            ExtractorLayer::Conv { kernel, stride, channels: c } => output_extent(len, kernel, stride, 1)
                .filter(|_| c > 0)
                .map(|l| vec![l, c])
                .ok_or_else(|| format!("kernel {kernel} with stride {stride} does not fit length {len}")),
            ExtractorLayer::Depthwise { kernel, stride } => output_extent(len, kernel, stride, 1)
                .map(|l| vec![l, channels])
                .ok_or_else(|| format!("kernel {kernel} with stride {stride} does not fit length {len}")),
            ExtractorLayer::Pointwise { channels: c } => {
                if c == 0 {
                    Err("pointwise needs at least one output channel".to_string())
                } else {
                    Ok(vec![len, c])
                }
            }
        };
        match t.push(Stage::Extractor, i, layer.kind_name(), input, out) {
            Some(o) => (len, channels) = (o[0], o[1]),
            None => return t.entries,
        }
    }

    let integration = if config.extractor.is_empty() {
        Err("extractor has no layers".to_string())
    } else if len != 1 {
        Err(format!("extractor must reduce each frame to length 1, got {len}"))
    } else if channels != config.feature_length {
        Err(format!(
            "extractor ends with {channels} channels but feature length is {}",
            config.feature_length
        ))
    } else {
        Ok(vec![config.frames_per_segment, config.feature_length, 1])
    };
    let Some(mut shape) = t.push(Stage::Integration, 0, "stack", vec![len, channels], integration) else {
        return t.entries;
    };

    for (i, block) in config.dilated.iter().enumerate() {
        let (h, w) = (shape[0], shape[1]);
        let conv = match (
            output_extent(h, block.kernel_h, 1, block.dilation),
            output_extent(w, block.kernel_w, 1, 1),
        ) {
            (Some(oh), Some(ow)) if block.channels > 0 => Ok(vec![oh, ow, block.channels]),
            _ => Err(format!(
                "{}x{} kernel with time dilation {} spans {}x{} but input is {h}x{w}",
                block.kernel_h,
                block.kernel_w,
                block.dilation,
                block.kernel_h.saturating_sub(1) * block.dilation + 1,
                block.kernel_w
            )),
        };
        let Some(out) = t.push(Stage::Dilated, i, "dilated_conv2d", shape.clone(), conv) else {
            return t.entries;
        };
        let pool = Pool2d::new(block.pool);
        let pooled = pool
            .output_hw(out[0], out[1])
            .map(|(ph, pw)| vec![ph, pw, out[2]])
            .map_err(|e| e.to_string());
        let name = match block.pool {
            crate::layers::PoolKind::Max => "max_pool",
            crate::layers::PoolKind::Avg => "avg_pool",
        };
        match t.push(Stage::Dilated, i, name, out, pooled) {
            Some(p) => shape = p,
            None => return t.entries,
        }
    }

    let flat: usize = shape.iter().product();
    let cls = if config.class_count < 2 {
        Err(format!("class count must be at least 2, got {}", config.class_count))
    } else if config.class_names.len() != config.class_count {
        Err(format!(
            "{} class names for {} classes",
            config.class_names.len(),
            config.class_count
        ))
    } else {
        Ok(vec![config.class_count])
    };
    t.push(Stage::Classifier, 0, "softmax", vec![flat], cls);
    t.entries
}

/// First violation in a trace, if any.
pub fn first_violation(trace: &[TraceEntry]) -> Option<&TraceEntry> {
    trace.iter().find(|e| e.error.is_some())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outputs(trace: &[TraceEntry], stage: Stage) -> Vec<Vec<usize>> {
        trace
            .iter()
            .filter(|e| e.stage == stage)
            .map(|e| e.output.clone().unwrap())
            .collect()
    }

    #[test]
    fn paper_extractor_chain() {
        let trace = shape_trace(&ModelConfig::paper());
        assert!(first_violation(&trace).is_none());
        let ext: Vec<_> = trace.iter().filter(|e| e.stage == Stage::Extractor).collect();
        assert_eq!(ext[0].input, vec![2176, 1]);
        assert_eq!(
            outputs(&trace, Stage::Extractor),
            vec![vec![40, 64], vec![15, 64], vec![15, 128], vec![1, 128], vec![1, 100]]
        );
    }

    #[test]
    fn paper_dilated_chain() {
        let trace = shape_trace(&ModelConfig::paper());
        let expect = [
            [776, 98, 64],
            [388, 49, 64],
            [364, 47, 128],
            [182, 23, 128],
            [158, 21, 256],
            [79, 10, 256],
            [55, 8, 512],
            [27, 4, 512],
            [3, 2, 512],
            [1, 1, 512],
        ];
        let got = outputs(&trace, Stage::Dilated);
        assert_eq!(got.len(), expect.len());
        for (g, e) in got.iter().zip(expect) {
            assert_eq!(g.as_slice(), e);
        }
        let cls = trace.last().unwrap();
        assert_eq!(cls.input, vec![512]);
        assert_eq!(cls.output, Some(vec![3]));
    }

    #[test]
    fn desk_profile_closes() {
        let trace = shape_trace(&ModelConfig::desk());
        assert!(first_violation(&trace).is_none(), "{:?}", first_violation(&trace));
        assert_eq!(trace.last().unwrap().input, vec![16]);
    }

    #[test]
    fn wrong_depthwise_kernel_is_named() {
        let mut cfg = ModelConfig::paper();
        cfg.extractor[1] = ExtractorLayer::Depthwise { kernel: 13, stride: 2 };
        let trace = shape_trace(&cfg);
        let bad = first_violation(&trace).unwrap();
        assert_eq!(bad.stage, Stage::Extractor);
        // 40 -> 14 instead of 15, so the 15-wide depthwise kernel no longer fits
        assert_eq!(bad.index, 3);
        assert_eq!(bad.input, vec![14, 128]);
    }

    #[test]
    fn framing_mismatch_reported() {
        let mut cfg = ModelConfig::paper();
        cfg.hop_length = 544;
        let trace = shape_trace(&cfg);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].stage, Stage::Framing);
        assert!(trace[0].error.is_some());
    }
}
