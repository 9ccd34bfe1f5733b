//! Deterministic synthetic signals for tests and demos.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{Waveform, SAMPLE_RATE_HZ};

/// Harmonic tone complex with a gliding pitch, a syllable-rate envelope, a
/// one-pole low-pass tilt and a faint noise bed, scaled to peak 0.5.
pub fn toy_utterance(len: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = SAMPLE_RATE_HZ as f64;
    let f_start = rng.gen_range(110.0..260.0);
    let f_end = f_start * rng.gen_range(0.7..1.4);
    let harmonics = rng.gen_range(6..14);
    let amps: Vec<f64> = (1..=harmonics).map(|h| rng.gen_range(0.3..1.0) / h as f64).collect();
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let syllable_hz = rng.gen_range(2.5..5.0);
    let env_phase = rng.gen_range(0.0..2.0 * PI);
    let pole = rng.gen_range(0.3..0.7);

    let mut phase = 0.0;
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(len);
    for n in 0..len {
        let frac = n as f64 / len.max(1) as f64;
        let f0 = f_start + (f_end - f_start) * frac;
        phase += 2.0 * PI * f0 / fs;
        let mut s = 0.0;
        for (h, (&a, &p)) in amps.iter().zip(&phases).enumerate() {
            if f0 * (h + 1) as f64 >= fs / 2.0 {
                break;
            }
            s += a * ((h + 1) as f64 * phase + p).sin();
        }
        let env = 0.05 + 0.95 * (0.5 - 0.5 * (2.0 * PI * syllable_hz * n as f64 / fs + env_phase).cos()).powi(2);
        prev = (1.0 - pole) * s * env + pole * prev;
        out.push(prev + 2e-3 * rng.gen_range(-1.0..1.0));
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    Waveform::new(out, SAMPLE_RATE_HZ)
}

/// Uniform white noise in `[-amplitude, amplitude)`.
pub fn white_noise(len: usize, amplitude: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new(
        (0..len).map(|_| rng.gen_range(-amplitude..amplitude)).collect(),
        SAMPLE_RATE_HZ,
    )
}

/// Sinusoid at `freq_hz` with amplitude `amplitude`.
pub fn tone(len: usize, freq_hz: f64, amplitude: f64) -> Waveform {
    let fs = SAMPLE_RATE_HZ as f64;
    Waveform::new(
        (0..len)
            .map(|n| amplitude * (2.0 * PI * freq_hz * n as f64 / fs).sin())
            .collect(),
        SAMPLE_RATE_HZ,
    )
}
