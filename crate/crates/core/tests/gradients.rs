//! End-to-end gradient checks on small networks.
//!
//! Max pooling and ReLU are only piecewise smooth, and a bias feeding
//! straight into a training-mode batch norm has an exact gradient of zero,
//! so its finite difference is pure roundoff. These tests isolate the
//! smooth part of the composed network to check the chain rule itself.

use atcnn::audio::{frame_all, synth_dataset, SynthSpec};
use atcnn::layers::{Mode, PoolKind};
use atcnn::model::{build_model, ModelConfig};
use atcnn::optim::{stack, ModelObjective, Objective, DEFAULT_STEP};

fn objective(config: &ModelConfig, seed: u64, segments: usize) -> ModelObjective {
    let spec = SynthSpec::ships(config.sample_rate, config.segment_seconds, 1, seed);
    let data = frame_all(&synth_dataset(&spec).unwrap(), config).unwrap();
    let refs: Vec<_> = data.iter().take(segments).collect();
    let (frames, labels) = stack(&refs).unwrap();
    ModelObjective {
        model: build_model(config, seed).unwrap(),
        frames,
        labels,
    }
}

/// Worst `|a − n| − (rel·max(|a|, |n|) + abs)` over every element; ≤ 0 means all agree.
fn mixed_check(obj: &mut impl Objective, step: f64, rel: f64, abs: f64) -> (f64, usize, usize) {
    let (_, grads) = obj.loss_and_gradients().unwrap();
    let mut worst = (f64::NEG_INFINITY, 0, 0);
    for (ti, g) in grads.iter().enumerate() {
        for e in 0..g.len() {
            let orig = obj.tensors_mut()[ti].data()[e];
            obj.tensors_mut()[ti].data_mut()[e] = orig + step;
            let plus = obj.loss().unwrap();
            obj.tensors_mut()[ti].data_mut()[e] = orig - step;
            let minus = obj.loss().unwrap();
            obj.tensors_mut()[ti].data_mut()[e] = orig;
            let (a, n) = (g.data()[e], (plus - minus) / (2.0 * step));
            let excess = (a - n).abs() - (rel * a.abs().max(n.abs()) + abs);
            if excess > worst.0 {
                worst = (excess, ti, e);
            }
        }
    }
    worst
}

/// At the default step, a first-layer ReLU input within ~1e-5 of zero can
/// change sign between the two probes. A tenth of that step stays inside one
/// linear piece. The absolute slack is ten times the roundoff floor
/// ε·|L|/h, which dominates parameters whose true gradient is nearly zero.
#[test]
fn desk_network_matches_finite_differences_within_one_linear_piece() {
    let mut config = ModelConfig::desk();
    for b in &mut config.dilated {
        b.pool = PoolKind::Avg;
    }
    let mut obj = objective(&config, 1, 1);
    let names: Vec<String> = obj.model.named_parameters().into_iter().map(|(n, _)| n).collect();
    let (excess, t, e) = mixed_check(&mut obj, DEFAULT_STEP / 10.0, 1e-4, 1e-9);
    assert!(excess <= 0.0, "{}[{e}] exceeds tolerance by {excess:e}", names[t]);
}

#[test]
fn pre_norm_bias_gradients_are_zero() {
    let obj = objective(&ModelConfig::desk(), 2, 2);
    let (_, grads) = obj.loss_and_gradients().unwrap();
    for ((name, _), g) in obj.model.named_parameters().iter().zip(&grads) {
        if name.ends_with(".bias") && !name.starts_with("classifier") {
            let m = g.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(m < 1e-12, "{name}: {m}");
        }
    }
}

#[test]
fn loss_is_reproducible_in_eval_and_train() {
    let obj = objective(&ModelConfig::desk(), 3, 3);
    assert_eq!(obj.loss().unwrap().to_bits(), obj.loss().unwrap().to_bits());
    let (p, _) = obj.model.forward(&obj.frames, Mode::Eval).unwrap();
    let (q, _) = obj.model.forward(&obj.frames, Mode::Eval).unwrap();
    assert_eq!(p, q);
}
