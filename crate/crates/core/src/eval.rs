//! Objective proxy metrics and spectrogram images.

use std::io::Write;
use std::path::Path;

use crate::dsp::{lps_of, LpsSequence, StftConfig, Waveform, POWER_FLOOR};
use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Reported in place of an infinite SNR.
pub const SNR_CAP_DB: f64 = 99.0;
pub const SEG_FRAME: usize = 200;
pub const SEG_HOP: usize = 80;
pub const SEG_MIN_DB: f64 = -10.0;
pub const SEG_MAX_DB: f64 = 35.0;
/// Frames with less reference energy are skipped by [`segmental_snr`].
pub const SEG_ENERGY_FLOOR: f64 = 1e-8;
pub const IMAGE_RANGE_DB: f64 = 80.0;

fn check_pair(reference: &Waveform, degraded: &Waveform) -> Result<()> {
    if reference.len() != degraded.len() {
        return Err(Error::shape(
            format!("{} samples", reference.len()),
            format!("{} samples", degraded.len()),
        ));
    }
    if reference.is_empty() {
        return Err(Error::EmptySignal);
    }
    Ok(())
}

fn energies(r: &[f64], d: &[f64]) -> (f64, f64) {
    r.iter().zip(d).fold((0.0, 0.0), |(s, n), (a, b)| (s + a * a, n + (b - a) * (b - a)))
}

/// `10 log10(sum ref^2 / sum (deg - ref)^2)`, capped at [`SNR_CAP_DB`].
pub fn global_snr(reference: &Waveform, degraded: &Waveform) -> Result<f64> {
    check_pair(reference, degraded)?;
    let (sig, noise) = energies(&reference.samples, &degraded.samples);
    if sig == 0.0 {
        return Err(Error::SilentSignal("reference"));
    }
    Ok((10.0 * (sig / noise).log10()).min(SNR_CAP_DB))
}

/// Mean of per-frame SNRs clamped to `[-10, 35]` dB over frames of 200 samples
/// with hop 80 whose reference energy exceeds `1e-8`. Signals shorter than one
/// frame are treated as a single frame.
pub fn segmental_snr(reference: &Waveform, degraded: &Waveform) -> Result<f64> {
    check_pair(reference, degraded)?;
    let len = reference.len();
    let frame = SEG_FRAME.min(len);
    let (mut sum, mut count) = (0.0, 0usize);
    for start in (0..=len - frame).step_by(SEG_HOP) {
        let r = &reference.samples[start..start + frame];
        let d = &degraded.samples[start..start + frame];
        let (sig, noise) = energies(r, d);
        if sig <= SEG_ENERGY_FLOOR {
            continue;
        }
        sum += (10.0 * (sig / noise).log10()).clamp(SEG_MIN_DB, SEG_MAX_DB);
        count += 1;
    }
    if count == 0 {
        return Err(Error::SilentSignal("reference"));
    }
    Ok(sum / count as f64)
}

/// Mean over frames of the RMS per-bin power difference in dB.
pub fn log_spectral_distance(reference: &LpsSequence, degraded: &LpsSequence) -> Result<f64> {
    if reference.values.dim() != degraded.values.dim() {
        return Err(Error::shape(
            format!("{:?}", reference.values.dim()),
            format!("{:?}", degraded.values.dim()),
        ));
    }
    if reference.num_frames() == 0 || reference.n_bins() == 0 {
        return Err(Error::EmptySignal);
    }
    let to_db = 10.0 / std::f64::consts::LN_10;
    let n = reference.n_bins() as f64;
    let total: f64 = reference
        .values
        .rows()
        .into_iter()
        .zip(degraded.values.rows())
        .map(|(r, d)| {
            let ms: f64 = r.iter().zip(d).map(|(a, b)| (to_db * (a - b)).powi(2)).sum::<f64>() / n;
            ms.sqrt()
        })
        .sum();
    Ok(total / reference.num_frames() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub snr: f64,
    pub seg_snr: f64,
    pub lsd: f64,
}

impl Metrics {
    pub fn compute(reference: &Waveform, degraded: &Waveform) -> Result<Self> {
        let cfg = StftConfig::default();
        Ok(Self {
            snr: global_snr(reference, degraded)?,
            seg_snr: segmental_snr(reference, degraded)?,
            lsd: log_spectral_distance(&lps_of(reference, &cfg)?, &lps_of(degraded, &cfg)?)?,
        })
    }

    /// `name=value` lines.
    pub fn report(&self) -> String {
        format!("snr={:?}\nseg_snr={:?}\nlsd={:?}\n", self.snr, self.seg_snr, self.lsd)
    }
}

/// Binary PGM of the power spectrogram in dB: one column per frame, the
/// highest bin in the top row, `[max - 80, max]` dB mapped onto `0..=255`.
/// The lower bound never goes below the power floor, so silence is all zeros.
pub fn spectrogram_pgm(w: &Waveform) -> Result<Vec<u8>> {
    let lps = lps_of(w, &StftConfig::default())?;
    let to_db = 10.0 / std::f64::consts::LN_10;
    let db = lps.values.mapv(|v| to_db * v);
    let hi = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = (hi - IMAGE_RANGE_DB).max(to_db * POWER_FLOOR.ln());
    let (frames, bins) = db.dim();
    let mut out = format!("P5\n{frames} {bins}\n255\n").into_bytes();
    for b in (0..bins).rev() {
        for t in 0..frames {
            let px = if hi > lo {
                ((db[[t, b]] - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0
            } else {
                0.0
            };
            out.push(px.round() as u8);
        }
    }
    Ok(out)
}

pub fn emit_spectrogram_image(w: &Waveform, path: &Path) -> Result<()> {
    let bytes = spectrogram_pgm(w)?;
    write_atomic(path, |f| f.write_all(&bytes).map_err(|e| Error::io(path, e)))
}
