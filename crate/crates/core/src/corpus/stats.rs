use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::dsp::LpsSequence;
use crate::error::{Error, Result};
use crate::util::{tree_reduce, write_atomic};

/// Lower bound on every per-bin standard deviation.
pub const STD_FLOOR: f64 = 1e-5;

const STATS_MAGIC: &[u8; 8] = b"RTSNSTAT";
const STATS_VERSION: u32 = 1;

/// Per-frequency-bin z-score statistics of the noisy training input.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Running count/mean/M2 per bin, merged with Chan's parallel update.
#[derive(Clone, Debug)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn of(seq: &LpsSequence) -> Self {
        let n = seq.n_bins();
        let mut m = Moments {
            count: 0.0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
        };
        for row in seq.values.rows() {
            m.count += 1.0;
            for (k, &x) in row.iter().enumerate() {
                let d = x - m.mean[k];
                m.mean[k] += d / m.count;
                m.m2[k] += d * (x - m.mean[k]);
            }
        }
        m
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.count == 0.0 {
            return b;
        }
        if b.count == 0.0 {
            return a;
        }
        let count = a.count + b.count;
        let mut mean = a.mean;
        let mut m2 = a.m2;
        for k in 0..mean.len() {
            let d = b.mean[k] - mean[k];
            mean[k] += d * b.count / count;
            m2[k] += b.m2[k] + d * d * a.count * b.count / count;
        }
        Moments { count, mean, m2 }
    }
}

/// Mean and population standard deviation per bin over every frame of every sequence.
pub fn compute_norm_stats<'a, I>(corpus: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a LpsSequence>,
{
    let mut bins = None;
    let mut parts = Vec::new();
    for seq in corpus {
        if seq.num_frames() == 0 {
            continue;
        }
        match bins {
            None => bins = Some(seq.n_bins()),
            Some(n) if n != seq.n_bins() => {
                return Err(Error::shape(format!("{n} bins"), format!("{} bins", seq.n_bins())))
            }
            _ => {}
        }
        parts.push(Moments::of(seq));
    }
    let total = tree_reduce(parts, Moments::merge).ok_or(Error::EmptyCorpus)?;
    let std = total
        .m2
        .iter()
        .map(|m2| (m2 / total.count).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats {
        mean: total.mean,
        std,
    })
}

impl NormStats {
    pub fn n_bins(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, l: &LpsSequence) -> Result<()> {
        if l.n_bins() != self.n_bins() {
            return Err(Error::shape(
                format!("{} bins", self.n_bins()),
                format!("{} bins", l.n_bins()),
            ));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(12 + 16 * self.n_bins());
        bytes.extend_from_slice(STATS_MAGIC);
        bytes.extend_from_slice(&STATS_VERSION.to_le_bytes());
        for v in self.mean.iter().chain(&self.std) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_atomic(path, |f| f.write_all(&bytes).map_err(|e| Error::io(path, e)))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != STATS_MAGIC {
            return Err(Error::BadMagic("statistics file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != STATS_VERSION {
            return Err(Error::VersionMismatch {
                what: "statistics",
                version,
            });
        }
        let body = &bytes[12..];
        if body.is_empty() || body.len() % 16 != 0 {
            return Err(Error::Stats(format!("payload of {} bytes", body.len())));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let n = values.len() / 2;
        let stats = NormStats {
            mean: values[..n].to_vec(),
            std: values[n..].to_vec(),
        };
        if stats.std.iter().any(|&s| !(s >= STD_FLOOR) || !s.is_finite()) {
            return Err(Error::Stats("standard deviation below floor".into()));
        }
        Ok(stats)
    }
}

/// `(value - mean) / std` per bin.
pub fn normalize(l: &LpsSequence, s: &NormStats) -> Result<LpsSequence> {
    s.check(l)?;
    let mut out = l.values.clone();
    apply_rows(&mut out, |k, v| (v - s.mean[k]) / s.std[k]);
    Ok(LpsSequence::new(out))
}

pub fn denormalize(l: &LpsSequence, s: &NormStats) -> Result<LpsSequence> {
    s.check(l)?;
    let mut out = l.values.clone();
    apply_rows(&mut out, |k, v| v * s.std[k] + s.mean[k]);
    Ok(LpsSequence::new(out))
}

fn apply_rows(a: &mut Array2<f64>, f: impl Fn(usize, f64) -> f64) {
    for mut row in a.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = f(k, *v);
        }
    }
}
