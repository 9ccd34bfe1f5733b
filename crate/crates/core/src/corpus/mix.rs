use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Peak the mixture is scaled to when the sum would clip.
pub const CLIP_PEAK: f64 = 0.999;

#[derive(Clone, Debug)]
pub struct Mixture {
    pub noisy: Waveform,
    /// Speech reference, rescaled by the same factor as `noisy`.
    pub clean: Waveform,
    /// Gain applied to the noise segment.
    pub noise_gain: f64,
    /// Factor applied to both signals to avoid clipping (1.0 if none was needed).
    pub rescale: f64,
    /// `10 log10(P_speech / P_noise)` measured before rescaling.
    pub achieved_snr_db: f64,
    pub noise_offset: usize,
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Add a seeded, wrapped noise segment to `speech` at `snr_db` (RMS-based).
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64, seed: u64) -> Result<Mixture> {
    if !snr_db.is_finite() {
        return Err(Error::NonFinite("snr_db".into()));
    }
    if speech.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::UnsupportedSampleRate(noise.sample_rate_hz));
    }
    if speech.is_empty() || speech.rms() == 0.0 {
        return Err(Error::SilentSignal("speech"));
    }
    if noise.is_empty() || noise.rms() == 0.0 {
        return Err(Error::SilentSignal("noise"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.gen_range(0..noise.len());
    let segment: Vec<f64> = (0..speech.len())
        .map(|i| noise.samples[(offset + i) % noise.len()])
        .collect();
    let seg_power = power(&segment);
    if seg_power == 0.0 {
        return Err(Error::SilentSignal("noise segment"));
    }
    let speech_power = power(&speech.samples);
    let gain = (speech_power / seg_power).sqrt() * 10f64.powf(-snr_db / 20.0);
    let scaled: Vec<f64> = segment.iter().map(|n| gain * n).collect();
    let achieved_snr_db = 10.0 * (speech_power / power(&scaled)).log10();

    let sum: Vec<f64> = speech.samples.iter().zip(&scaled).map(|(s, n)| s + n).collect();
    let peak = sum.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rescale = if peak > 1.0 { CLIP_PEAK / peak } else { 1.0 };
    let apply = |x: &[f64]| x.iter().map(|v| v * rescale).collect::<Vec<_>>();
    Ok(Mixture {
        noisy: Waveform::new(apply(&sum), speech.sample_rate_hz),
        clean: Waveform::new(apply(&speech.samples), speech.sample_rate_hz),
        noise_gain: gain,
        rescale,
        achieved_snr_db,
        noise_offset: offset,
    })
}
