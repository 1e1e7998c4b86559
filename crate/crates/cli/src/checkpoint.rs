//! Binary model container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "ATCNNCKP" | version u32 | config_len u64 | config JSON
//! seed u64 | epoch u64 | tensor_count u32
//! per tensor: name_len u32 | name | rank u32 | dims u64×rank | values f64×len
//! ```
//!
//! Tensors are the model's parameters followed by its batch-norm buffers,
//! each in the model's own naming order.

use std::path::Path;

use atcnn::model::{build_model, Model, ModelConfig};
use atcnn::Tensor;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"ATCNNCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub epoch: u64,
}

pub fn encode(model: &Model, seed: u64, epoch: u64) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&model.config).map_err(|e| CliError::Usage(format!("config encode: {e}")))?;
    let tensors: Vec<(String, &Tensor)> = model.named_parameters().into_iter().chain(model.named_buffers()).collect();
    let mut out = Vec::with_capacity(64 + config.len() + tensors.iter().map(|(_, t)| 8 * t.len() + 64).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &Model, seed: u64, epoch: u64, path: &Path) -> Result<()> {
    let bytes = encode(model, seed, epoch)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated while reading {what} at byte {}", self.at))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> std::result::Result<usize, String> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| format!("{what} {v} does not fit in memory"))
    }
}

/// Decodes a checkpoint. With `expected`, tensors are matched against a
/// model built from that configuration instead of the embedded one, so a
/// checkpoint from another profile fails on its first mismatched tensor.
pub fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(format!("format version {version}, this build reads {VERSION}"));
    }
    let config_len = r.len("config length")?;
    let config: ModelConfig =
        serde_json::from_slice(r.take(config_len, "config")?).map_err(|e| format!("config block: {e}"))?;
    let seed = r.u64("seed")?;
    let epoch = r.u64("epoch")?;
    let count = r.u32("tensor count")? as usize;

    let target = expected.unwrap_or(&config);
    let mut model = build_model(target, 0).map_err(|e| format!("embedded config: {e}"))?;
    let names: Vec<(String, Vec<usize>)> = model
        .named_parameters()
        .into_iter()
        .chain(model.named_buffers())
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();

    let mut loaded = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| format!("tensor {i} name is not UTF-8"))?
            .to_string();
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len("tensor dimension")?);
        }
        match names.get(i) {
            Some((n, s)) if *n == name && *s == shape => {}
            Some((n, s)) => {
                return Err(format!(
                    "tensor {i} mismatch: file has {name} {shape:?}, model expects {n} {s:?}"
                ))
            }
            None => return Err(format!("unexpected extra tensor {name}")),
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or("tensor too large")?, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        loaded.push(Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?);
    }
    if count < names.len() {
        return Err(format!("missing tensor {}", names[count].0));
    }
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    let mut loaded = loaded.into_iter();
    for slot in model.parameters_mut() {
        *slot = loaded.next().expect("count checked");
    }
    for slot in model.buffers_mut() {
        *slot = loaded.next().expect("count checked");
    }
    Ok(Checkpoint { model, seed, epoch })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint_as(path, None)
}

pub fn load_checkpoint_as(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, expected).map_err(|m| CliError::checkpoint(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use atcnn::layers::Mode;

    fn frames(cfg: &ModelConfig, seed: u64) -> Tensor {
        let n = cfg.frames_per_segment * cfg.frame_length;
        let data = (0..n).map(|i| ((i as f64 + seed as f64) * 0.37).sin()).collect();
        Tensor::from_vec(&[cfg.frames_per_segment, cfg.frame_length], data).unwrap()
    }

    fn trained_model() -> Model {
        let cfg = ModelConfig::desk();
        let mut m = build_model(&cfg, 3).unwrap();
        // Nudge running statistics away from their initial values.
        let x = Tensor::from_vec(
            &[2, cfg.frames_per_segment, cfg.frame_length],
            frames(&cfg, 1).data().iter().chain(frames(&cfg, 2).data()).copied().collect(),
        )
        .unwrap();
        let (_, pass) = m.forward(&x, Mode::Train).unwrap();
        m.commit_statistics(&pass.unwrap());
        m
    }

    #[test]
    fn round_trip_bitwise() {
        let m = trained_model();
        let back = decode(&encode(&m, 11, 4).unwrap(), None).unwrap();
        assert_eq!((back.seed, back.epoch), (11, 4));
        for ((na, a), (nb, b)) in m.named_parameters().iter().zip(back.model.named_parameters()) {
            assert_eq!(na, &nb);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        for ((_, a), (_, b)) in m.named_buffers().iter().zip(back.model.named_buffers()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let x = frames(&m.config, 5);
        let (p, _) = m.forward_segment(&x, Mode::Eval).unwrap();
        let (q, _) = back.model.forward_segment(&x, Mode::Eval).unwrap();
        assert!(p.data().iter().zip(q.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn every_truncation_fails() {
        let bytes = encode(&trained_model(), 0, 0).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1], None).unwrap_err().contains("truncated"));
        for cut in (0..bytes.len()).step_by(997) {
            assert!(decode(&bytes[..cut], None).is_err());
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer, None).unwrap_err().contains("trailing"));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&trained_model(), 0, 0).unwrap();
        bytes[8] = 9;
        assert!(decode(&bytes, None).unwrap_err().contains("version 9"));
        bytes[0] = b'X';
        assert!(decode(&bytes, None).unwrap_err().contains("magic"));
    }

    #[test]
    fn mismatched_profile_names_tensor() {
        let bytes = encode(&trained_model(), 0, 0).unwrap();
        let err = decode(&bytes, Some(&ModelConfig::paper())).unwrap_err();
        assert!(err.contains("tensor 0") && err.contains("extractor.0.conv1d.weight"), "{err}");

        let mut other = ModelConfig::desk();
        other.dilated[1].channels = 12;
        let err = decode(&bytes, Some(&other)).unwrap_err();
        assert!(err.contains("dilated.4.dilated_conv2d.weight"), "{err}");
    }
}
