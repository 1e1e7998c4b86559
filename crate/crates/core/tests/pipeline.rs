use atcnn::audio::{
    frame_all, frame_segment, load_dataset, read_wav, split_dataset, synth_dataset, write_dataset, SampleBuffer,
    SynthSpec,
};
use atcnn::eval::{confusion, metrics};
use atcnn::model::{build_model, count_resources, separable_pairs, complexity_decline_ratio, ModelConfig};
use atcnn::optim::{predict_all, Trainer};

#[test]
fn synth_to_disk_to_predictions() {
    let cfg = ModelConfig::desk();
    let spec = SynthSpec::ships(cfg.sample_rate, cfg.segment_seconds, 3, 21);
    let segments = synth_dataset(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &segments, &spec.class_names(), spec.sample_rate).unwrap();
    let buf = read_wav(dir.path().join("segment_00000.wav")).unwrap();
    assert_eq!(buf.samples.len(), cfg.segment_samples());

    let back = load_dataset(dir.path(), cfg.sample_rate, cfg.segment_seconds).unwrap();
    let framed = frame_all(&back, &cfg).unwrap();
    assert!(framed.iter().all(|f| f.frames.shape() == [cfg.frames_per_segment, cfg.frame_length]));

    let model = build_model(&cfg, 4).unwrap();
    let preds = predict_all(&model, &framed, 4).unwrap();
    let truth: Vec<usize> = framed.iter().map(|f| f.label.unwrap()).collect();
    let report = metrics(&confusion(&preds, &truth, &cfg.class_names).unwrap()).unwrap();
    assert_eq!(report.total, 9);
}

#[test]
fn short_training_run_is_deterministic_and_lowers_loss() {
    let cfg = ModelConfig::desk();
    let segments = synth_dataset(&SynthSpec::ships(cfg.sample_rate, cfg.segment_seconds, 4, 2)).unwrap();
    let (train, test) = split_dataset(&segments, 0.75, 2).unwrap();
    let (train, test) = (frame_all(&train, &cfg).unwrap(), frame_all(&test, &cfg).unwrap());
    let run = || {
        let mut t = Trainer::new(build_model(&cfg, 2).unwrap(), 2);
        let stats = t.fit(&train, Some(&test), 4, |_| {}).unwrap();
        (t.model, stats)
    };
    let (m1, s1) = run();
    let (m2, s2) = run();
    assert_eq!(m1, m2);
    for (a, b) in s1.iter().zip(&s2) {
        assert_eq!((a.loss.to_bits(), a.eval_accuracy), (b.loss.to_bits(), b.eval_accuracy));
    }
    assert!(s1.last().unwrap().loss < s1[0].loss);
}

#[test]
fn paper_scale_framing() {
    let cfg = ModelConfig::paper();
    let n = cfg.segment_samples();
    assert_eq!(n, 480_000);
    let samples: Vec<f64> = (0..n).map(|i| (i as f64 * 0.013).sin() + 0.2 * (i as f64 * 0.0007).cos()).collect();
    let buf = SampleBuffer::new(samples, cfg.sample_rate).unwrap();
    let seq = frame_segment(&buf.samples, &cfg, 0, None).unwrap();
    assert_eq!(seq.frames.shape(), [800, 2176]);
    for row in seq.frames.data().chunks(2176) {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
        assert!(mean.abs() <= 1e-6 && (var - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn paper_resource_table() {
    let r = count_resources(&ModelConfig::paper()).unwrap();
    let pairs: Vec<(u64, u64)> = (1..5)
        .map(|i| {
            let row = r.row(&format!("extractor.{i}")).unwrap();
            (row.mult_adds, row.parameters)
        })
        .collect();
    assert_eq!(pairs, [(11520, 832), (122880, 8320), (1920, 2048), (12800, 12900)]);
    assert!((r.pointwise_mult_add_share - 0.910).abs() <= 0.001);
    assert!((r.pointwise_parameter_share - 0.880).abs() <= 0.001);
    for p in separable_pairs(&ModelConfig::paper()).unwrap() {
        let formula = complexity_decline_ratio(p.out_channels, 1, p.kernel).unwrap();
        assert!((p.counted_ratio() - formula).abs() / formula <= 0.02);
    }
}

/// Power-weighted mean frequency. Weighting by magnitude instead lets the
/// flat sensor-noise floor, identical across classes, dominate the sum.
fn spectral_centroid(samples: &[f64], sample_rate: f64) -> f64 {
    use rustfft::{num_complex::Complex, FftPlanner};
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let half = buf.len() / 2;
    let hz = sample_rate / buf.len() as f64;
    let (num, den) = buf[1..half]
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(n, d), (i, c)| (n + (i + 1) as f64 * hz * c.norm_sqr(), d + c.norm_sqr()));
    num / den
}

/// The default classes must be separable by something trivial, or a
/// learning test on them says nothing.
#[test]
fn default_classes_split_by_centroid_threshold() {
    let spec = SynthSpec::ships(8000, 1.0, 20, 7);
    let segments = synth_dataset(&spec).unwrap();
    let c: Vec<f64> = segments.iter().map(|s| spectral_centroid(&s.samples, 8000.0)).collect();
    let mean = |k: usize| {
        let v: Vec<f64> = c.iter().zip(&segments).filter(|(_, s)| s.label == k).map(|(x, _)| *x).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut order: Vec<(f64, usize)> = (0..3).map(|k| (mean(k), k)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let cuts = [(order[0].0 + order[1].0) / 2.0, (order[1].0 + order[2].0) / 2.0];
    let hits = c
        .iter()
        .zip(&segments)
        .filter(|(&x, s)| {
            let rank = cuts.iter().filter(|&&t| x > t).count();
            order[rank].1 == s.label
        })
        .count();
    assert!(hits as f64 / segments.len() as f64 >= 0.8, "{hits}/{}", segments.len());
}

