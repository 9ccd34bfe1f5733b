use ndarray::Array2;

use super::forward::infer;
use super::params::RtsnParams;
use crate::corpus::{denormalize, normalize, NormStats};
use crate::dsp::{decompose, lps_from_magnitude, magnitude_from_lps, stft, LpsSequence, StftConfig, Waveform, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::gla::{griffin_lim, GlaConfig};
use crate::neural::Scalar;

/// Maps a normalized noisy LPS sequence to a normalized enhanced one.
pub trait LpsEnhancer {
    fn stats(&self) -> Option<&NormStats>;

    fn enhance_normalized(&self, noisy: &Array2<f64>) -> Result<Array2<f64>>;
}

impl<F: Scalar> LpsEnhancer for RtsnParams<F> {
    fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    fn enhance_normalized(&self, noisy: &Array2<f64>) -> Result<Array2<f64>> {
        let x = noisy.mapv(F::of);
        Ok(infer(self, x.view())?.mapv(F::as_f64))
    }
}

#[derive(Clone, Debug)]
pub struct Enhanced {
    pub waveform: Waveform,
    /// Enhanced LPS before phase reconstruction.
    pub lps: LpsSequence,
}

/// Enhance an 8 kHz waveform. `gla_iters` of 0 or 1 resynthesizes with the noisy phase.
pub fn enhance_utterance<M: LpsEnhancer + ?Sized>(
    model: &M,
    noisy: &Waveform,
    gla_iters: usize,
) -> Result<Enhanced> {
    if noisy.sample_rate_hz != SAMPLE_RATE_HZ {
        return Err(Error::UnsupportedSampleRate(noisy.sample_rate_hz));
    }
    let stats = model.stats().ok_or(Error::MissingStats)?;
    let cfg = StftConfig::default();
    let (mag, phase) = decompose(&stft(noisy, &cfg)?);
    let lps = normalize(&lps_from_magnitude(&mag), stats)?;
    let enhanced = LpsSequence::new(model.enhance_normalized(&lps.values)?);
    if enhanced.values.dim() != lps.values.dim() {
        return Err(Error::shape(
            format!("{:?}", lps.values.dim()),
            format!("{:?}", enhanced.values.dim()),
        ));
    }
    let lps = denormalize(&enhanced, stats)?;
    let gla = GlaConfig {
        iterations: gla_iters,
        stft: cfg,
    };
    let waveform = griffin_lim(&magnitude_from_lps(&lps), &phase, noisy.len(), &gla)?;
    Ok(Enhanced { waveform, lps })
}
