//! Checkpoint persistence.
//!
//! Layout: magic, version, JSON header (config + tensor manifest),
//! little-endian tensor payload, trailing SHA-256 over everything
//! before it. Loading rebuilds the model from the stored config and
//! overwrites parameters, batch-norm running stats, and (optionally)
//! optimizer state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cin::{CinConfig, CinModel};
use crate::nn::{AdamW, AdamWConfig, NnError, Scalar, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"VFCK";

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Serialize, Deserialize)]
struct OptimHeader {
    config: AdamWConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: CinConfig,
    params: Vec<(String, Vec<usize>)>,
    /// Channel count per batch-norm state.
    bns: Vec<usize>,
    optim: Option<OptimHeader>,
}

fn write_tensor<F: Scalar>(out: &mut Vec<u8>, t: &Tensor<F>) {
    for &v in t.data() {
        v.write_le(out);
    }
}

fn read_tensor<F: Scalar>(
    bytes: &[u8],
    pos: &mut usize,
    shape: &[usize],
) -> Result<Tensor<F>, CkptError> {
    let n: usize = shape.iter().product();
    let need = n * F::BYTES;
    let end = *pos + need;
    if end > bytes.len() {
        return Err(CkptError::CorruptFile("payload truncated".into()));
    }
    let data = bytes[*pos..end]
        .chunks_exact(F::BYTES)
        .map(F::read_le)
        .collect();
    *pos = end;
    Ok(Tensor::from_vec(shape, data).unwrap())
}

/// Serialize model (and optionally optimizer) to `path`.
pub fn save_checkpoint<F: Scalar>(
    model: &CinModel<F>,
    optim: Option<&AdamW<F>>,
    path: &Path,
) -> Result<(), CkptError> {
    let header = Header {
        dtype: F::DTYPE.to_string(),
        config: model.config.clone(),
        params: model
            .params
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.shape().to_vec()))
            .collect(),
        bns: model.bns.states().iter().map(|s| s.mean.numel()).collect(),
        optim: optim.map(|o| OptimHeader {
            config: o.config,
            step: o.step,
        }),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CkptError::CorruptFile(format!("header encode: {e}")))?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for t in model.params.tensors() {
        write_tensor(&mut buf, t);
    }
    for s in model.bns.states() {
        write_tensor(&mut buf, &s.mean);
        write_tensor(&mut buf, &s.var);
    }
    if let Some(o) = optim {
        for t in o.m.iter().chain(&o.v) {
            write_tensor(&mut buf, t);
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf)?;
    Ok(())
}

/// Load a checkpoint saved with the same scalar type.
pub fn load_checkpoint<F: Scalar>(
    path: &Path,
) -> Result<(CinModel<F>, Option<AdamW<F>>), CkptError> {
    let buf = fs::read(path)?;
    if buf.len() < 4 + 4 + 8 + 32 {
        return Err(CkptError::CorruptFile("file too short".into()));
    }
    let (body, stored_digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != stored_digest {
        return Err(CkptError::CorruptFile("checksum mismatch".into()));
    }
    if &body[..4] != MAGIC {
        return Err(CkptError::CorruptFile("bad magic".into()));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CkptError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    if 16 + hlen > body.len() {
        return Err(CkptError::CorruptFile("header truncated".into()));
    }
    let header: Header = serde_json::from_slice(&body[16..16 + hlen])
        .map_err(|e| CkptError::CorruptFile(format!("header decode: {e}")))?;
    if header.dtype != F::DTYPE {
        return Err(CkptError::CorruptFile(format!(
            "dtype {} on disk, {} requested",
            header.dtype,
            F::DTYPE
        )));
    }

    let mut model: CinModel<F> = CinModel::build(header.config)?;
    if model.params.len() != header.params.len() || model.bns.len() != header.bns.len() {
        return Err(CkptError::CorruptFile(
            "tensor manifest does not match rebuilt model".into(),
        ));
    }
    let payload = &body[16 + hlen..];
    let mut pos = 0usize;
    for (name, shape) in &header.params {
        let id = model
            .params
            .by_name(name)
            .ok_or_else(|| CkptError::CorruptFile(format!("unknown parameter {name}")))?;
        if model.params.get(id).shape() != shape.as_slice() {
            return Err(CkptError::CorruptFile(format!(
                "shape mismatch for {name}: {:?} vs {:?}",
                shape,
                model.params.get(id).shape()
            )));
        }
        *model.params.get_mut(id) = read_tensor(payload, &mut pos, shape)?;
    }
    for (i, &ch) in header.bns.iter().enumerate() {
        let state = &mut model.bns.states_mut()[i];
        if state.mean.numel() != ch {
            return Err(CkptError::CorruptFile(format!(
                "bn state {i} has {ch} channels on disk, {} in model",
                state.mean.numel()
            )));
        }
        state.mean = read_tensor(payload, &mut pos, &[ch])?;
        state.var = read_tensor(payload, &mut pos, &[ch])?;
    }
    let optim = match header.optim {
        None => None,
        Some(oh) => {
            let mut o = AdamW::new(oh.config, model.params.tensors());
            o.step = oh.step;
            for t in o.m.iter_mut().chain(o.v.iter_mut()) {
                let shape = t.shape().to_vec();
                *t = read_tensor(payload, &mut pos, &shape)?;
            }
            Some(o)
        }
    };
    if pos != payload.len() {
        return Err(CkptError::CorruptFile(format!(
            "{} trailing payload bytes",
            payload.len() - pos
        )));
    }
    Ok((model, optim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cin::CinConfig;

    fn tiny_model() -> CinModel<f32> {
        let cfg = CinConfig {
            resolution: 32,
            seed: 5,
            ..CinConfig::mini()
        };
        CinModel::build(cfg).unwrap()
    }

    #[test]
    fn save_load_save_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = tiny_model();
        // perturb a bn state so non-default stats round-trip
        model.bns.states_mut()[0].mean.data_mut()[0] = 0.25;
        let mut opt = AdamW::new(AdamWConfig::default(), model.params.tensors());
        opt.step = 17;
        opt.m[0].data_mut()[0] = 1.5;

        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_checkpoint(&model, Some(&opt), &p1).unwrap();
        let (loaded, lopt) = load_checkpoint::<f32>(&p1).unwrap();
        save_checkpoint(&loaded, lopt.as_ref(), &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());

        assert_eq!(loaded.params.tensors(), model.params.tensors());
        assert_eq!(loaded.bns.states()[0].mean, model.bns.states()[0].mean);
        let lopt = lopt.unwrap();
        assert_eq!(lopt.step, 17);
        assert_eq!(lopt.m[0].data()[0], 1.5);
    }

    #[test]
    fn no_optimizer_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny_model();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&model, None, &p).unwrap();
        let (_, opt) = load_checkpoint::<f32>(&p).unwrap();
        assert!(opt.is_none());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_model(), None, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&p),
            Err(CkptError::CorruptFile(_))
        ));
    }

    #[test]
    fn flipped_bit_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_model(), None, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&p),
            Err(CkptError::CorruptFile(_))
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_model(), None, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        // refresh the checksum so only the version differs
        let body_len = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..body_len]);
        bytes[body_len..].copy_from_slice(&digest);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&p),
            Err(CkptError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_model(), None, &p).unwrap();
        assert!(matches!(
            load_checkpoint::<f64>(&p),
            Err(CkptError::CorruptFile(_))
        ));
    }
}
