//! Model checkpoints.
//!
//! Layout (little-endian): magic `XCONCKPT`, version u32, config length u32
//! and UTF-8 `key=value` config echo, dims (input, hidden, proj, experts as
//! u32), tensor count u32, then per tensor: name length u32, name bytes,
//! rank u32, each dimension as u64, and the f32 payload.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::model::{Linear, ModelDims, ProjectionHead, TrainableModel};
use crate::error::{Result, XconError};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XCONCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn tensor_names(experts: usize) -> Vec<String> {
    let mut names = vec!["adapter.weight".to_string(), "adapter.bias".to_string()];
    for h in 0..=experts {
        for l in 0..3 {
            names.push(format!("head{h}.layer{l}.weight"));
            names.push(format!("head{h}.layer{l}.bias"));
        }
    }
    names
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn checkpoint_bytes<T: Scalar>(model: &TrainableModel<T>, config_echo: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, config_echo.len() as u32);
    out.extend_from_slice(config_echo.as_bytes());
    let dims = model.dims;
    for v in [dims.input, dims.hidden, dims.proj, dims.experts] {
        put_u32(&mut out, v as u32);
    }
    let names = tensor_names(dims.experts);
    put_u32(&mut out, names.len() as u32);
    let mut name_iter = names.iter();
    for lin in model.linears() {
        for (shape, values) in [
            (lin.weight.shape().to_vec(), lin.weight.iter().copied().collect::<Vec<T>>()),
            (lin.bias.shape().to_vec(), lin.bias.iter().copied().collect()),
        ] {
            let name = name_iter.next().expect("one name per tensor");
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, shape.len() as u32);
            for s in shape {
                out.extend_from_slice(&(s as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| XconError::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self, expected_name: &str, expected_shape: &[usize]) -> Result<Vec<f32>> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?).map_err(|_| XconError::Checkpoint("bad tensor name".into()))?;
        if name != expected_name {
            return Err(XconError::Checkpoint(format!("expected tensor {expected_name}, found {name}")));
        }
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        if shape != expected_shape {
            return Err(XconError::Checkpoint(format!(
                "tensor {name} has shape {shape:?}, expected {expected_shape:?}"
            )));
        }
        let count: usize = shape.iter().product();
        let raw = self.take(count * 4)?;
        let values: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(XconError::Checkpoint(format!("tensor {name} holds non-finite values")));
        }
        Ok(values)
    }
}

/// Parses a checkpoint, returning the model and the config echo.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(TrainableModel<f32>, String)> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(XconError::BadMagic { expected: "XCONCKPT" });
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(XconError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let clen = r.u32()? as usize;
    let echo = String::from_utf8(r.take(clen)?.to_vec()).map_err(|_| XconError::Checkpoint("config echo is not UTF-8".into()))?;
    let dims = ModelDims {
        input: r.u32()? as usize,
        hidden: r.u32()? as usize,
        proj: r.u32()? as usize,
        experts: r.u32()? as usize,
    };
    let names = tensor_names(dims.experts);
    if r.u32()? as usize != names.len() {
        return Err(XconError::Checkpoint("tensor count does not match dims".into()));
    }
    let mut names = names.iter();
    let mut linear = |r: &mut Reader<'_>, i: usize, o: usize| -> Result<Linear<f32>> {
        let w = r.tensor(names.next().unwrap(), &[i, o])?;
        let b = r.tensor(names.next().unwrap(), &[o])?;
        Ok(Linear {
            weight: Array2::from_shape_vec((i, o), w).map_err(|e| XconError::Checkpoint(e.to_string()))?,
            bias: Array1::from(b),
        })
    };
    let adapter = linear(&mut r, dims.input, dims.input)?;
    let mut heads = Vec::with_capacity(dims.experts + 1);
    for _ in 0..=dims.experts {
        heads.push(ProjectionHead {
            layers: [
                linear(&mut r, dims.input, dims.hidden)?,
                linear(&mut r, dims.hidden, dims.hidden)?,
                linear(&mut r, dims.hidden, dims.proj)?,
            ],
        });
    }
    if r.pos != bytes.len() {
        return Err(XconError::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok((TrainableModel { dims, adapter, heads }, echo))
}

pub fn write_checkpoint<T: Scalar>(path: impl AsRef<Path>, model: &TrainableModel<T>, config_echo: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(model, config_echo)).map_err(|e| XconError::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(TrainableModel<f32>, String)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| XconError::io(path, e))?;
    parse_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TrainableModel<f32> {
        TrainableModel::new(
            ModelDims {
                input: 4,
                hidden: 6,
                proj: 3,
                experts: 2,
            },
            9,
        )
    }

    #[test]
    fn round_trip() {
        let m = model();
        let (back, echo) = parse_checkpoint(&checkpoint_bytes(&m, "alpha=0.1\n")).unwrap();
        assert_eq!(back, m);
        assert_eq!(echo, "alpha=0.1\n");
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let bytes = checkpoint_bytes(&model(), "");
        assert!(matches!(parse_checkpoint(b"XCONFEAT...."), Err(XconError::BadMagic { .. })));
        assert!(parse_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }
}
