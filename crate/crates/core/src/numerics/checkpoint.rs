//! Binary parameter checkpoints.
//!
//! Layout, little-endian: magic `ORBW`, u32 version (= 1), u32 parameter
//! count, then per parameter: u16 name length + UTF-8 name, u8 rank,
//! rank × u32 extents, float32 payload. A CRC-32 of all preceding bytes
//! trails the file.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::adam::ParamSet;
use super::tensor::{Real, Tensor};
use crate::util::crc32;

const MAGIC: &[u8; 4] = b"ORBW";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected \"ORBW\"")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint truncated: expected at least {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("invalid utf-8 in parameter name")]
    BadName,
}

/// Serializes a parameter set. Values are stored as float32 regardless of the
/// in-memory dtype.
pub fn save_checkpoint<T: Real>(params: &ParamSet<T>, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for entry in params.iter() {
        let name = entry.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(entry.value.rank() as u8);
        for &e in entry.value.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in entry.value.data() {
            buf.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Loads a checkpoint into an existing parameter set; names, order, and
/// shapes must match the set exactly.
pub fn load_checkpoint_into<T: Real>(
    params: &mut ParamSet<T>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let buf = fs::read(path)?;
    if buf.len() < 16 {
        return Err(CheckpointError::Truncated { expected: 16, actual: buf.len() });
    }
    if &buf[0..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let body = &buf[..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    if count != params.len() {
        return Err(CheckpointError::ParamMismatch(format!(
            "file has {count} parameters, set has {}",
            params.len()
        )));
    }
    let mut off = 12;
    let need = |off: usize, n: usize, len: usize| -> Result<(), CheckpointError> {
        if off + n > len {
            Err(CheckpointError::Truncated { expected: off + n, actual: len })
        } else {
            Ok(())
        }
    };
    let body_len = body.len();
    for idx in 0..count {
        need(off, 2, body_len)?;
        let name_len = u16::from_le_bytes(body[off..off + 2].try_into().unwrap()) as usize;
        off += 2;
        need(off, name_len, body_len)?;
        let name =
            std::str::from_utf8(&body[off..off + name_len]).map_err(|_| CheckpointError::BadName)?;
        off += name_len;
        need(off, 1, body_len)?;
        let rank = body[off] as usize;
        off += 1;
        need(off, 4 * rank, body_len)?;
        let mut shape = Vec::with_capacity(rank);
        for r in 0..rank {
            shape.push(u32::from_le_bytes(body[off + 4 * r..off + 4 * r + 4].try_into().unwrap())
                as usize);
        }
        off += 4 * rank;
        let len: usize = shape.iter().product();
        need(off, 4 * len, body_len)?;
        let id = super::adam::ParamId(idx);
        if params.name(id) != name {
            return Err(CheckpointError::ParamMismatch(format!(
                "parameter {idx} is '{}' in the set but '{name}' in the file",
                params.name(id)
            )));
        }
        if params.value(id).shape() != shape.as_slice() {
            return Err(CheckpointError::ParamMismatch(format!(
                "parameter '{name}' has shape {:?} in the set but {shape:?} in the file",
                params.value(id).shape()
            )));
        }
        let mut data = Vec::with_capacity(len);
        for i in 0..len {
            let v = f32::from_le_bytes(body[off + 4 * i..off + 4 * i + 4].try_into().unwrap());
            data.push(T::from_f64(v as f64));
        }
        off += 4 * len;
        *params.value_mut(id) = Tensor::from_vec(&shape, data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.add("w", Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 3.5, 0.25]));
        p.add("b", Tensor::from_vec(&[2], vec![0.5, -0.5]));
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.orbw");
        let params = sample_params();
        save_checkpoint(&params, &path).unwrap();
        let mut restored = sample_params();
        for e in restored.iter() {
            assert!(!e.value.data().is_empty());
        }
        // Scribble over the values, then reload.
        *restored.value_mut(super::super::adam::ParamId(0)) = Tensor::zeros(&[2, 2]);
        load_checkpoint_into(&mut restored, &path).unwrap();
        for (a, b) in params.iter().zip(restored.iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn corrupted_payload_fails_crc() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.orbw");
        save_checkpoint(&sample_params(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        let mut restored = sample_params();
        match load_checkpoint_into(&mut restored, &path) {
            Err(CheckpointError::ChecksumMismatch { .. }) => {}
            other => panic!("expected checksum mismatch, got {other:?}"),
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.orbw");
        std::fs::write(&path, b"XXXXxxxxxxxxxxxxxxxx").unwrap();
        let mut restored = sample_params();
        assert!(matches!(
            load_checkpoint_into(&mut restored, &path),
            Err(CheckpointError::BadMagic)
        ));
    }
}
