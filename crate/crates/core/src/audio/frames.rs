use std::f64::consts::PI;

use super::wav::SampleBuffer;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

/// The model input for one segment: `T` windowed, normalized frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    /// `[T, N]`
    pub frames: Tensor,
    pub segment_id: usize,
    pub label: Option<usize>,
}

/// Consecutive non-overlapping segments; a trailing partial segment is dropped.
pub fn segment_audio(buffer: &SampleBuffer, segment_seconds: f64) -> Vec<Vec<f64>> {
    let len = (segment_seconds * f64::from(buffer.sample_rate)).round() as usize;
    if len == 0 {
        return Vec::new();
    }
    buffer.samples.chunks_exact(len).map(<[f64]>::to_vec).collect()
}

/// Symmetric Hamming window `0.54 − 0.46·cos(2πn/(N−1))`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Frames a segment: frame `t` covers `[t·hop, t·hop + N)` (zeros past the
/// end), is Hamming-windowed, then standardized to zero mean and unit
/// variance. A frame whose raw samples are all equal becomes all zeros.
pub fn frame_segment(segment: &[f64], config: &ModelConfig, segment_id: usize, label: Option<usize>) -> Result<FrameSequence> {
    let expected = config.segment_samples();
    if segment.len() != expected {
        return Err(Error::shape(format!(
            "segment has {} samples, {} expected",
            segment.len(),
            expected
        )));
    }
    let (t, n, hop) = (config.frames_per_segment, config.frame_length, config.hop_length);
    let window = hamming(n);
    let mut data = vec![0.0; t * n];
    let mut raw = vec![0.0; n];
    for (f, out) in data.chunks_mut(n).enumerate() {
        let start = f * hop;
        for (i, r) in raw.iter_mut().enumerate() {
            *r = segment.get(start + i).copied().unwrap_or(0.0);
        }
        if raw.iter().all(|&v| v == raw[0]) {
            continue;
        }
        for ((o, &r), &w) in out.iter_mut().zip(&raw).zip(&window) {
            *o = r * w;
        }
        standardize(out);
    }
    Ok(FrameSequence {
        frames: Tensor::from_vec(&[t, n], data)?,
        segment_id,
        label,
    })
}

/// Zero mean, unit (biased) variance in place; a constant row becomes zeros.
fn standardize(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    row.iter_mut().for_each(|v| *v -= mean);
    // second centering pass removes the residual left by the first
    let resid = row.iter().sum::<f64>() / n;
    row.iter_mut().for_each(|v| *v -= resid);
    let var = row.iter().map(|v| v * v).sum::<f64>() / n;
    if var <= 0.0 || !var.is_finite() {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let inv = 1.0 / var.sqrt();
    row.iter_mut().for_each(|v| *v *= inv);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn segmentation_counts() {
        let buf = SampleBuffer::new(vec![0.0; 25 * 48_000], 48_000).unwrap();
        let segs = segment_audio(&buf, 10.0);
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| s.len() == 480_000));
        let exact = SampleBuffer::new(vec![0.0; 480_000], 48_000).unwrap();
        assert_eq!(segment_audio(&exact, 10.0).len(), 1);
        let short = SampleBuffer::new(vec![0.0; 479_520], 48_000).unwrap();
        assert!(segment_audio(&short, 10.0).is_empty());
    }

    #[test]
    fn hamming_endpoints() {
        let w = hamming(2176);
        assert!((w[0] - 0.08).abs() < 1e-15);
        assert!((w[2175] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn silent_segment_gives_zero_frames() {
        let cfg = ModelConfig::desk();
        let fs = frame_segment(&vec![0.0; cfg.segment_samples()], &cfg, 0, None).unwrap();
        assert_eq!(fs.frames.shape(), &[64, 272]);
        assert!(fs.frames.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_length_rejected() {
        let cfg = ModelConfig::desk();
        assert!(matches!(frame_segment(&[0.0; 100], &cfg, 0, None), Err(Error::Shape(_))));
    }

    #[test]
    fn frame_starts_at_hop_multiples() {
        let cfg = ModelConfig::desk();
        // a single impulse lands in every frame that covers it
        let mut seg = vec![0.0; cfg.segment_samples()];
        seg[3 * cfg.hop_length] = 1.0;
        let fs = frame_segment(&seg, &cfg, 0, None).unwrap();
        let row = &fs.frames.data()[3 * 272..4 * 272];
        let peak = (0..272).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(peak, 0);
    }

    proptest! {
        #[test]
        fn rows_are_standardized(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let cfg = ModelConfig::desk();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let seg: Vec<f64> = (0..cfg.segment_samples()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fs = frame_segment(&seg, &cfg, 0, None).unwrap();
            for row in fs.frames.data().chunks(cfg.frame_length) {
                let m = row.iter().sum::<f64>() / row.len() as f64;
                let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / row.len() as f64;
                prop_assert!(m.abs() <= 1e-6);
                prop_assert!((v - 1.0).abs() <= 1e-6);
            }
        }
    }
}
