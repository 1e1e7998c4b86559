use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::frames::{frame_segment, segment_audio, FrameSequence};
use super::synth::LabeledSegment;
use super::wav::{read_wav, write_wav, SampleBuffer};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const MANIFEST: &str = "manifest.csv";

/// Stratified split of indices by label: per class, `floor(fraction·n)`
/// members (after a seeded shuffle) go to train, the rest to test.
pub fn split_indices(labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must be strictly between 0 and 1, got {fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (label, mut members) in by_class {
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {label} has {} segment(s); at least 2 are needed to split",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let k = (fraction * members.len() as f64).floor() as usize;
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// [`split_indices`] applied to labelled segments.
pub fn split_dataset(segments: &[LabeledSegment], fraction: f64, seed: u64) -> Result<(Vec<LabeledSegment>, Vec<LabeledSegment>)> {
    let labels: Vec<usize> = segments.iter().map(|s| s.label).collect();
    let (tr, te) = split_indices(&labels, fraction, seed)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| segments[i].clone()).collect();
    Ok((pick(tr), pick(te)))
}

/// Frames every segment for the model.
pub fn frame_all(segments: &[LabeledSegment], config: &ModelConfig) -> Result<Vec<FrameSequence>> {
    use rayon::prelude::*;
    segments
        .par_iter()
        .map(|s| frame_segment(&s.samples, config, s.index, Some(s.label)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
    pub class_name: String,
}

/// Writes one WAV per segment plus `manifest.csv` (`path,class_index,class_name`).
pub fn write_dataset(dir: &Path, segments: &[LabeledSegment], class_names: &[String], sample_rate: u32) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    let mut entries = Vec::new();
    for s in segments {
        let name = class_names
            .get(s.label)
            .ok_or_else(|| Error::InvalidLabel(format!("label {} has no class name", s.label)))?;
        let rel = PathBuf::from(format!("segment_{:05}.wav", s.index));
        write_wav(dir.join(&rel), &SampleBuffer::new(s.samples.clone(), sample_rate)?)?;
        writeln!(manifest, "{},{},{}", rel.display(), s.label, name).expect("string write");
        entries.push(ManifestEntry {
            path: rel,
            label: s.label,
            class_name: name.clone(),
        });
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (Some(p), Some(l), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::InvalidArgument(format!(
                "{}:{}: expected path,class_index,class_name",
                path.display(),
                n + 1
            )));
        };
        let label = l.trim().parse().map_err(|_| {
            Error::InvalidArgument(format!("{}:{}: bad class index {l:?}", path.display(), n + 1))
        })?;
        out.push(ManifestEntry {
            path: PathBuf::from(p.trim()),
            label,
            class_name: name.trim().to_string(),
        });
    }
    Ok(out)
}

/// Reads every manifest file and cuts it into segments of the given length.
/// Segment indices follow manifest order.
pub fn load_dataset(dir: &Path, sample_rate: u32, segment_seconds: f64) -> Result<Vec<LabeledSegment>> {
    let mut out = Vec::new();
    for entry in read_manifest(dir)? {
        let buf = read_wav(dir.join(&entry.path))?;
        if buf.sample_rate != sample_rate {
            return Err(Error::InvalidArgument(format!(
                "{} is sampled at {} Hz, the model expects {sample_rate} Hz",
                entry.path.display(),
                buf.sample_rate
            )));
        }
        for samples in segment_audio(&buf, segment_seconds) {
            out.push(LabeledSegment {
                index: out.len(),
                label: entry.label,
                samples,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::synth::{synth_dataset, SynthSpec};
    use proptest::prelude::*;

    #[test]
    fn ten_split_eight_two() {
        let labels = vec![0; 10];
        let (tr, te) = split_indices(&labels, 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
    }

    #[test]
    fn fraction_bounds() {
        assert!(split_indices(&[0, 0, 1, 1], 1.0, 0).is_err());
        assert!(split_indices(&[0, 0, 1, 1], 0.0, 0).is_err());
    }

    #[test]
    fn singleton_class_rejected() {
        assert!(matches!(split_indices(&[0, 0, 1], 0.5, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::ships(8000, 1.0, 2, 9);
        let data = synth_dataset(&spec).unwrap();
        write_dataset(dir.path(), &data, &spec.class_names(), 8000).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(text.lines().next().unwrap(), "segment_00000.wav,0,small ship");
        let back = load_dataset(dir.path(), 8000, 1.0).unwrap();
        assert_eq!(back.len(), data.len());
        for (a, b) in back.iter().zip(&data) {
            assert_eq!(a.label, b.label);
            let err = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err <= 0.5 / 32768.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn split_is_a_partition(labels in prop::collection::vec(0usize..4, 2..60), seed in any::<u64>()) {
            let mut counts = [0usize; 4];
            labels.iter().for_each(|&l| counts[l] += 1);
            prop_assume!(counts.iter().all(|&c| c == 0 || c >= 2));
            let (tr, te) = split_indices(&labels, 0.8, seed).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for (c, &n) in counts.iter().enumerate() {
                let k = tr.iter().filter(|&&i| labels[i] == c).count();
                prop_assert_eq!(k, (0.8 * n as f64).floor() as usize);
            }
        }
    }
}
