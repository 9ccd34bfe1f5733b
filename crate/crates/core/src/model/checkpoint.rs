use std::io::Write;
use std::path::Path;

use super::params::RtsnParams;
use super::RtsnConfig;
use crate::corpus::NormStats;
use crate::error::{Error, Result};
use crate::neural::{Scalar, Tensor};
use crate::util::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RTSNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const NORM_MEAN: &str = "norm.mean";
const NORM_STD: &str = "norm.std";

fn push_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f32>) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(shape.len() as u8);
    for &d in shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialized checkpoint; weights and statistics are stored as `f32`.
pub fn checkpoint_bytes<F: Scalar>(params: &RtsnParams<F>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = params.config.to_text();
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    let extra = if params.stats.is_some() { 2 } else { 0 };
    buf.extend_from_slice(&((params.store.len() + extra) as u32).to_le_bytes());
    for (name, t) in params.store.iter() {
        push_tensor(&mut buf, name, t.shape(), t.data().iter().map(|v| v.as_f64() as f32));
    }
    if let Some(s) = &params.stats {
        push_tensor(&mut buf, NORM_MEAN, &[s.mean.len()], s.mean.iter().map(|&v| v as f32));
        push_tensor(&mut buf, NORM_STD, &[s.std.len()], s.std.iter().map(|&v| v as f32));
    }
    buf
}

pub fn save_checkpoint<F: Scalar>(params: &RtsnParams<F>, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(params);
    write_atomic(path, |f| f.write_all(&bytes).map_err(|e| Error::io(path, e)))
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::UnexpectedEof);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::UnexpectedEof)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<RtsnParams<f32>> {
    let mut r = Reader { buf: bytes };
    if r.take(8).map_err(|_| Error::BadMagic("checkpoint"))? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic("checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            what: "checkpoint",
            version,
        });
    }
    let text_len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(text_len)?)
        .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
    let config = RtsnConfig::parse(text).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    let mut params = RtsnParams::<f32>::zeros(&config)?;
    let mut seen = vec![false; params.store.len()];
    let (mut mean, mut std) = (None, None);
    let count = r.u32()?;
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let data = r.f32s(len.ok_or(Error::UnexpectedEof)?)?;
        match name.as_str() {
            NORM_MEAN | NORM_STD => {
                if rank != 1 || shape[0] != config.n_bins {
                    return Err(Error::shape(format!("{name} [{}]", config.n_bins), format!("{shape:?}")));
                }
                let v = data.into_iter().map(f64::from).collect::<Vec<_>>();
                if name == NORM_MEAN {
                    mean = Some(v);
                } else {
                    std = Some(v);
                }
            }
            _ => {
                let Some(id) = params.store.ids().find(|&id| params.store.name(id) == name) else {
                    return Err(Error::Checkpoint(format!("unexpected tensor {name:?}")));
                };
                let dst = params.store.get_mut(id);
                if dst.shape() != shape.as_slice() {
                    return Err(Error::shape(
                        format!("{name} {:?}", dst.shape()),
                        format!("{shape:?}"),
                    ));
                }
                *dst = Tensor::from_vec(&shape, data)?;
                seen[id.index()] = true;
            }
        }
    }
    if !r.buf.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.buf.len())));
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let id = params.store.ids().nth(i).expect("index in range");
        return Err(Error::Checkpoint(format!("missing tensor {:?}", params.store.name(id))));
    }
    params.stats = match (mean, std) {
        (Some(mean), Some(std)) => Some(NormStats { mean, std }),
        (None, None) => None,
        _ => return Err(Error::Checkpoint("incomplete normalization statistics".into())),
    };
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<RtsnParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
