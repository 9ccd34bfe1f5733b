//! Griffin-Lim phase reconstruction started from a given phase estimate.

use ndarray::Array2;

use crate::dsp::{compose, decompose, StftConfig, StftProcessor, Waveform};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GlaConfig {
    /// Number of inverse transforms; 0 behaves like 1.
    pub iterations: usize,
    pub stft: StftConfig,
}

impl Default for GlaConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            stft: StftConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GlaTrace {
    pub waveform: Waveform,
    /// `|| |stft(x_i)| - magnitude ||_F` for each iterate `x_1 ..= x_K`.
    pub residuals: Vec<f64>,
}

/// Run `K` inverse transforms with `K - 1` magnitude replacements in between,
/// starting from `magnitude * exp(j phase)`.
pub fn griffin_lim(
    magnitude: &Array2<f64>,
    phase: &Array2<f64>,
    orig_len: usize,
    cfg: &GlaConfig,
) -> Result<Waveform> {
    run(magnitude, phase, orig_len, cfg, false).map(|t| t.waveform)
}

/// [`griffin_lim`] that also measures the magnitude residual of every iterate.
pub fn griffin_lim_trace(
    magnitude: &Array2<f64>,
    phase: &Array2<f64>,
    orig_len: usize,
    cfg: &GlaConfig,
) -> Result<GlaTrace> {
    run(magnitude, phase, orig_len, cfg, true)
}

fn run(
    magnitude: &Array2<f64>,
    phase: &Array2<f64>,
    orig_len: usize,
    cfg: &GlaConfig,
    trace: bool,
) -> Result<GlaTrace> {
    let proc = StftProcessor::new(&cfg.stft)?;
    let grid = (cfg.stft.num_frames(orig_len), cfg.stft.n_bins());
    if magnitude.dim() != grid {
        return Err(Error::shape(format!("{grid:?}"), format!("{:?}", magnitude.dim())));
    }
    let mut spec = compose(magnitude, phase, &cfg.stft, orig_len)?;
    let k = cfg.iterations.max(1);
    let mut residuals = Vec::new();
    for i in 1..=k {
        let x = proc.synthesize(&spec)?;
        if !trace && i == k {
            return Ok(GlaTrace {
                waveform: x,
                residuals,
            });
        }
        let (mag_i, phase_i) = decompose(&proc.analyze(&x)?);
        if trace {
            residuals.push((&mag_i - magnitude).mapv(|d| d * d).sum().sqrt());
            if i == k {
                return Ok(GlaTrace {
                    waveform: x,
                    residuals,
                });
            }
        }
        spec = compose(magnitude, &phase_i, &cfg.stft, orig_len)?;
    }
    unreachable!("loop returns at i = k")
}
