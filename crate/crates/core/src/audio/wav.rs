use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Mono samples in `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("sample buffer is empty".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

fn format(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        field,
        reason: reason.into(),
    }
}

/// Reads a RIFF/WAVE PCM 16-bit mono file; samples are scaled by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<SampleBuffer> {
    let path = path.as_ref();
    let mut head = [0u8; 12];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => format("header", "file shorter than a RIFF header"),
            _ => Error::io(path, e),
        })?;
    if &head[0..4] != b"RIFF" {
        return Err(format(
            "riff magic",
            format!("expected \"RIFF\", found {:?}", String::from_utf8_lossy(&head[0..4])),
        ));
    }
    if &head[8..12] != b"WAVE" {
        return Err(format(
            "wave magic",
            format!("expected \"WAVE\", found {:?}", String::from_utf8_lossy(&head[8..12])),
        ));
    }

    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => format("header", other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(format("audio format", "only integer PCM is supported"));
    }
    if spec.bits_per_sample != 16 {
        return Err(format(
            "bits per sample",
            format!("expected 16, found {}", spec.bits_per_sample),
        ));
    }
    if spec.channels != 1 {
        return Err(format("channels", format!("expected mono, found {} channels", spec.channels)));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format("data", e.to_string()))?;
    SampleBuffer::new(samples, spec.sample_rate).map_err(|_| format("data", "no samples"))
}

/// Writes PCM 16-bit mono; values are scaled by 32768, rounded and clipped.
pub fn write_wav(path: impl AsRef<Path>, buffer: &SampleBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => format("data", other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &buffer.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let buf = SampleBuffer::new(vec![0.0, 32767.0 / 32768.0, -1.0, 0.5], 48_000).unwrap();
        write_wav(&path, &buf).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 48_000);
        assert_eq!(back.samples, buf.samples);
        assert!((back.samples[1] - 0.999969).abs() < 1e-6);
    }

    #[test]
    fn rifx_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        write_wav(&path, &SampleBuffer::new(vec![0.1; 8], 8000).unwrap()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[3] = b'X';
        std::fs::write(&path, bytes).unwrap();
        match read_wav(&path) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "riff magic"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..4 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format { field: "channels", .. })));
    }

    #[test]
    fn missing_file_is_io() {
        assert!(matches!(read_wav("/nonexistent/x.wav"), Err(Error::Io { .. })));
    }
}
