//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "FMPX" | version u32 | config fingerprint u64 | tensor count u32
//! per tensor: name len u16 | UTF-8 name | rank u8 | dims u32 × rank | f32 × numel
//! ```
//!
//! Tensors appear in module visit order and include batch-norm running
//! statistics. Names are dotted paths such as
//! `stage2.block0.branch2.conv1.weight`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{build_model, FastMpoxModel, ModelConfig};
use crate::error::{CheckpointError, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FMPX";
pub const FORMAT_VERSION: u32 = 1;

/// Serialises `model` to `w`.
pub fn write_checkpoint<T: Scalar, W: Write>(model: &FastMpoxModel<T>, w: &mut W) -> std::io::Result<()> {
    let state = model.state();
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&model.config().fingerprint().to_le_bytes())?;
    w.write_all(&(state.len() as u32).to_le_bytes())?;
    for (name, t) in &state {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(model: &FastMpoxModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_checkpoint(model, &mut bytes).map_err(|e| Error::io(path, e))?;
    // Write beside the target and rename so a crash never leaves a torn file.
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                context: context.to_string(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, ctx: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, ctx)?[0])
    }

    fn u16(&mut self, ctx: &str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, ctx)?.try_into().unwrap()))
    }

    fn u32(&mut self, ctx: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, ctx)?.try_into().unwrap()))
    }

    fn u64(&mut self, ctx: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, ctx)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes into a model built from `config`.
pub fn read_checkpoint<T: Scalar>(
    bytes: &[u8],
    config: &ModelConfig,
) -> Result<FastMpoxModel<T>, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = match bytes.get(..4) {
        Some(m) => m.try_into().unwrap(),
        None => {
            return Err(CheckpointError::Truncated {
                context: "magic".into(),
            })
        }
    };
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    r.pos = 4;
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let file_fp = r.u64("fingerprint")?;
    if file_fp != config.fingerprint() {
        return Err(CheckpointError::FingerprintMismatch {
            file: file_fp,
            model: config.fingerprint(),
        });
    }
    let model = build_model::<T>(config, 0).map_err(|_| CheckpointError::FingerprintMismatch {
        file: file_fp,
        model: config.fingerprint(),
    })?;
    let expected: HashMap<String, Vec<usize>> = model
        .state()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32("tensor count")?;
    if count as usize != expected.len() {
        return Err(CheckpointError::TensorCountMismatch {
            file: count,
            model: expected.len() as u32,
        });
    }
    let mut state = Vec::with_capacity(count as usize);
    for i in 0..count {
        let ctx = format!("tensor {i}");
        let len = r.u16(&ctx)? as usize;
        let name = std::str::from_utf8(r.take(len, &ctx)?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let rank = r.u8(&ctx)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(&ctx)? as usize);
        }
        let Some(model_shape) = expected.get(&name) else {
            return Err(CheckpointError::UnknownTensor { name });
        };
        if &dims != model_shape {
            return Err(CheckpointError::TensorShapeMismatch {
                name,
                file: dims,
                model: model_shape.clone(),
            });
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 4, &name)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if state.iter().any(|(n, _): &(String, Tensor<f32>)| n == &name) {
            return Err(CheckpointError::DuplicateTensor { name });
        }
        let t = Tensor::new(&dims, data).map_err(|_| CheckpointError::TensorShapeMismatch {
            name: name.clone(),
            file: dims.clone(),
            model: model_shape.clone(),
        })?;
        state.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes);
    }
    model
        .load_state(&state)
        .expect("names and shapes were validated above");
    Ok(model)
}

/// Reads a checkpoint file for the network described by `config`.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>, config: &ModelConfig) -> Result<FastMpoxModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, config).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}
