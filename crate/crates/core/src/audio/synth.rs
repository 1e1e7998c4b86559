//! Parameterized ship-noise generator standing in for recorded data.
//!
//! A ship signal is a sum of tonal lines plus spectrally tilted broadband
//! noise, amplitude-modulated at a blade-rate-like frequency. White ambient
//! noise is then added at the class SNR and the result is peak-normalized.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PEAK: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tonal {
    pub frequency: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub count: usize,
    pub tonals: Vec<Tonal>,
    /// Each tonal frequency is scaled by `1 + u·jitter`, `u ∈ [−1, 1]`, per segment.
    #[serde(default)]
    pub frequency_jitter: f64,
    /// Broadband RMS relative to the tonal RMS; 0 disables it.
    #[serde(default)]
    pub broadband_level: f64,
    #[serde(default)]
    pub tilt_db_per_octave: f64,
    #[serde(default)]
    pub am_rate_hz: f64,
    #[serde(default)]
    pub am_depth: f64,
    /// Ship signal over ambient noise; `inf` means no ambient noise.
    #[serde(default = "no_noise")]
    pub snr_db: f64,
}

fn no_noise() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub sample_rate: u32,
    pub segment_seconds: f64,
    pub seed: u64,
    pub classes: Vec<ClassSpec>,
}

/// One generated segment.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub index: usize,
    pub label: usize,
    pub samples: Vec<f64>,
}

fn tonals(freqs: &[(f64, f64)]) -> Vec<Tonal> {
    freqs
        .iter()
        .map(|&(frequency, amplitude)| Tonal { frequency, amplitude })
        .collect()
}

impl SynthSpec {
    /// Three ship classes separated by where their tonal and broadband
    /// energy sits: small ships high and fast-modulated, ferries in the
    /// middle, big ships low with a steep low-frequency tilt.
    pub fn ships(sample_rate: u32, segment_seconds: f64, per_class: usize, seed: u64) -> Self {
        let classes = vec![
            ClassSpec {
                name: "small ship".into(),
                count: per_class,
                tonals: tonals(&[(190.0, 1.0), (260.0, 0.8), (330.0, 0.6), (390.0, 0.5)]),
                frequency_jitter: 0.03,
                broadband_level: 0.5,
                tilt_db_per_octave: -3.0,
                am_rate_hz: 9.0,
                am_depth: 0.6,
                snr_db: 15.0,
            },
            ClassSpec {
                name: "ferry".into(),
                count: per_class,
                tonals: tonals(&[(65.0, 1.0), (105.0, 0.8), (140.0, 0.7), (175.0, 0.5)]),
                frequency_jitter: 0.03,
                broadband_level: 0.5,
                tilt_db_per_octave: -6.0,
                am_rate_hz: 4.0,
                am_depth: 0.4,
                snr_db: 15.0,
            },
            ClassSpec {
                name: "big ship".into(),
                count: per_class,
                tonals: tonals(&[(14.0, 1.0), (28.0, 0.9), (42.0, 0.7), (56.0, 0.5)]),
                frequency_jitter: 0.03,
                broadband_level: 0.5,
                tilt_db_per_octave: -12.0,
                am_rate_hz: 1.0,
                am_depth: 0.3,
                snr_db: 15.0,
            },
        ];
        Self {
            sample_rate,
            segment_seconds,
            seed,
            classes,
        }
    }

    pub fn segment_samples(&self) -> usize {
        (self.segment_seconds * f64::from(self.sample_rate)).round() as usize
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if !(self.segment_seconds > 0.0) || self.segment_samples() == 0 {
            return bad(format!("segment duration {} s is too short", self.segment_seconds));
        }
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        for c in &self.classes {
            if c.count == 0 {
                return bad(format!("class {:?} has count 0", c.name));
            }
            if !(0.0..1.0).contains(&c.frequency_jitter) {
                return bad(format!("class {:?}: jitter must be in [0, 1)", c.name));
            }
            for t in &c.tonals {
                let top = t.frequency * (1.0 + c.frequency_jitter);
                if !(t.frequency > 0.0) || top >= nyquist {
                    return bad(format!(
                        "class {:?}: tonal {} Hz (up to {top} Hz with jitter) is not below Nyquist {nyquist} Hz",
                        c.name, t.frequency
                    ));
                }
                if !t.amplitude.is_finite() || t.amplitude < 0.0 {
                    return bad(format!("class {:?}: tonal amplitude must be ≥ 0", c.name));
                }
            }
            if c.am_rate_hz < 0.0 || c.am_rate_hz >= nyquist {
                return bad(format!("class {:?}: modulation rate {} Hz is not below Nyquist", c.name, c.am_rate_hz));
            }
            if !(0.0..=1.0).contains(&c.am_depth) {
                return bad(format!("class {:?}: modulation depth must be in [0, 1]", c.name));
            }
            if c.broadband_level < 0.0 || !c.broadband_level.is_finite() {
                return bad(format!("class {:?}: broadband level must be ≥ 0", c.name));
            }
            if c.snr_db.is_nan() {
                return bad(format!("class {:?}: SNR is NaN", c.name));
            }
        }
        Ok(())
    }
}

/// Stateless 64-bit mix (SplitMix64 finalizer), used to derive one seed per
/// segment so segments can be generated in any order.
pub fn segment_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// White Gaussian noise shaped so its amplitude spectrum falls by `tilt` dB
/// per octave above a 10 Hz corner; unit RMS.
fn tilted_noise(rng: &mut ChaCha8Rng, len: usize, sample_rate: f64, tilt: f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let corner = 10.0;
    for (k, v) in buf.iter_mut().enumerate() {
        let bin = k.min(len - k);
        let f = bin as f64 * sample_rate / len as f64;
        let gain = if bin == 0 {
            0.0
        } else {
            10f64.powf(tilt * (f.max(corner) / corner).log2() / 20.0)
        };
        *v *= gain;
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let r = rms(&out);
    if r > 0.0 {
        out.iter().map(|v| v / r).collect()
    } else {
        out
    }
}

fn generate_one(spec: &SynthSpec, class: &ClassSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = spec.segment_samples();
    let sr = f64::from(spec.sample_rate);
    let mut ship = vec![0.0; len];
    for t in &class.tonals {
        let f = t.frequency * (1.0 + class.frequency_jitter * rng.random_range(-1.0..=1.0));
        let phase = rng.random_range(0.0..2.0 * PI);
        for (i, s) in ship.iter_mut().enumerate() {
            *s += t.amplitude * (2.0 * PI * f * i as f64 / sr + phase).sin();
        }
    }
    if class.broadband_level > 0.0 {
        let tonal_rms = rms(&ship);
        let level = class.broadband_level * if tonal_rms > 0.0 { tonal_rms } else { 1.0 };
        let noise = tilted_noise(&mut rng, len, sr, class.tilt_db_per_octave);
        for (s, n) in ship.iter_mut().zip(noise) {
            *s += level * n;
        }
    }
    if class.am_depth > 0.0 {
        let phase = rng.random_range(0.0..2.0 * PI);
        for (i, s) in ship.iter_mut().enumerate() {
            *s *= 1.0 + class.am_depth * (2.0 * PI * class.am_rate_hz * i as f64 / sr + phase).sin();
        }
    }
    if class.snr_db.is_finite() {
        let signal = rms(&ship);
        let sigma = signal / 10f64.powf(class.snr_db / 20.0);
        for s in ship.iter_mut() {
            *s += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let peak = ship.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let k = PEAK / peak;
        ship.iter_mut().for_each(|v| *v *= k);
    }
    ship
}

/// Every segment `spec` describes, class by class. Deterministic in the seed and
/// independent of thread count.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<LabeledSegment>> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = spec
        .classes
        .iter()
        .enumerate()
        .flat_map(|(label, c)| std::iter::repeat_n(label, c.count))
        .enumerate()
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(index, label)| LabeledSegment {
            index,
            label,
            samples: generate_one(spec, &spec.classes[label], segment_seed(spec.seed, index)),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pure_tone() -> SynthSpec {
        SynthSpec {
            sample_rate: 8000,
            segment_seconds: 1.0,
            seed: 3,
            classes: vec![ClassSpec {
                name: "tone".into(),
                count: 1,
                tonals: tonals(&[(100.0, 1.0)]),
                frequency_jitter: 0.0,
                broadband_level: 0.0,
                tilt_db_per_octave: 0.0,
                am_rate_hz: 0.0,
                am_depth: 0.0,
                snr_db: f64::INFINITY,
            }],
        }
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec::ships(8000, 1.0, 2, 11);
        assert_eq!(synth_dataset(&spec).unwrap(), synth_dataset(&spec).unwrap());
    }

    #[test]
    fn pure_tone_peaks_at_its_bin() {
        let seg = &synth_dataset(&pure_tone()).unwrap()[0].samples;
        let mut buf: Vec<Complex<f64>> = seg.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let half = &buf[..buf.len() / 2];
        let peak = (0..half.len()).max_by(|&a, &b| half[a].norm().total_cmp(&half[b].norm())).unwrap();
        // 1 s at 8 kHz: bin k is k Hz
        assert_eq!(peak, 100);
        let max = seg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((max - PEAK).abs() < 1e-12);
    }

    #[test]
    fn counts_and_labels() {
        let spec = SynthSpec::ships(8000, 1.0, 10, 5);
        let data = synth_dataset(&spec).unwrap();
        assert_eq!(data.len(), 30);
        for label in 0..3 {
            assert_eq!(data.iter().filter(|s| s.label == label).count(), 10);
        }
        assert!(data.iter().all(|s| s.samples.len() == 8000));
    }

    #[test]
    fn nyquist_violation() {
        let mut spec = pure_tone();
        spec.classes[0].tonals[0].frequency = 4000.0;
        assert!(matches!(synth_dataset(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn zero_count_rejected() {
        let mut spec = pure_tone();
        spec.classes[0].count = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn segment_seeds_differ() {
        assert_ne!(segment_seed(1, 0), segment_seed(1, 1));
        assert_ne!(segment_seed(1, 0), segment_seed(2, 0));
    }
}
