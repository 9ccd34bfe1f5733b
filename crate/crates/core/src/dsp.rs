//! Framing, windowed STFT/ISTFT and the magnitude/phase/LPS conversions.
//!
//! Signals are reflect-padded by `frame_len / 2` samples at both ends before
//! framing. The forward transform is the unnormalized DFT of the windowed
//! frame zero-padded to `fft_size`; the inverse is the least-squares
//! overlap-add (windowed overlap-add divided by the summed squared window).

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE_HZ: u32 = 8000;

/// Floor added to the power before taking the log.
pub const POWER_FLOOR: f64 = 1e-10;

const MIN_WINDOW_SUM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    PeriodicHann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::PeriodicHann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl Default for StftConfig {
    /// 25 ms frames with a 10 ms shift at 8 kHz and a 256-point transform.
    fn default() -> Self {
        Self {
            frame_len: 200,
            hop: 80,
            fft_size: 256,
            window: Window::PeriodicHann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 {
            return Err(Error::InvalidStftConfig("hop must be positive".into()));
        }
        if !(self.hop <= self.frame_len && self.frame_len <= self.fft_size) {
            return Err(Error::InvalidStftConfig(format!(
                "need hop <= frame_len <= fft_size, got {} / {} / {}",
                self.hop, self.frame_len, self.fft_size
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidStftConfig(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins.
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Reflect padding applied at each end of the signal.
    pub fn pad(&self) -> usize {
        self.frame_len / 2
    }

    /// Frame count for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        if padded < self.frame_len {
            1
        } else {
            1 + (padded - self.frame_len) / self.hop
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    /// T x N coefficients.
    pub coeffs: Array2<Complex64>,
    pub config: StftConfig,
    pub orig_len: usize,
}

impl ComplexSpectrogram {
    pub fn num_frames(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    fn check_shape(&self) -> Result<()> {
        self.config.validate()?;
        let expected = (self.config.num_frames(self.orig_len), self.config.n_bins());
        if self.coeffs.dim() != expected {
            return Err(Error::shape(
                format!("{}x{}", expected.0, expected.1),
                format!("{}x{}", self.coeffs.nrows(), self.coeffs.ncols()),
            ));
        }
        Ok(())
    }
}

/// T x N log-power spectra, `ln(|X|^2 + POWER_FLOOR)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LpsSequence {
    pub values: Array2<f64>,
}

impl LpsSequence {
    pub fn new(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.values.ncols()
    }
}

/// Reusable forward/inverse transform with cached FFT plans and window.
pub struct StftProcessor {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftProcessor {
    pub fn new(config: &StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            window: config.window.coefficients(config.frame_len),
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn analyze(&self, w: &Waveform) -> Result<ComplexSpectrogram> {
        if w.is_empty() {
            return Err(Error::EmptySignal);
        }
        if w.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::UnsupportedSampleRate(w.sample_rate_hz));
        }
        let cfg = &self.config;
        let len = w.len();
        let pad = cfg.pad() as isize;
        let frames = cfg.num_frames(len);
        let bins = cfg.n_bins();
        let mut coeffs = Array2::zeros((frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        for t in 0..frames {
            let start = (t * cfg.hop) as isize - pad;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < cfg.frame_len {
                    let src = reflect_index(start + i as isize, len);
                    Complex64::new(w.samples[src] * self.window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            self.forward.process(&mut buf);
            for (k, c) in coeffs.row_mut(t).iter_mut().enumerate() {
                *c = buf[k];
            }
        }
        Ok(ComplexSpectrogram {
            coeffs,
            config: cfg.clone(),
            orig_len: len,
        })
    }

    pub fn synthesize(&self, s: &ComplexSpectrogram) -> Result<Waveform> {
        if s.config != self.config {
            return Err(Error::InvalidStftConfig(
                "spectrogram was produced with a different configuration".into(),
            ));
        }
        s.check_shape()?;
        let cfg = &self.config;
        let fft = cfg.fft_size;
        let bins = cfg.n_bins();
        let pad = cfg.pad();
        let frames = s.num_frames();
        let covered = (frames - 1) * cfg.hop + cfg.frame_len;
        let mut acc = vec![0.0; covered];
        let mut norm = vec![0.0; covered];
        let mut buf = vec![Complex64::new(0.0, 0.0); fft];
        let scale = 1.0 / fft as f64;
        for t in 0..frames {
            let row = s.coeffs.row(t);
            // Hermitian extension of the one-sided spectrum.
            for k in 0..fft {
                buf[k] = if k < bins { row[k] } else { row[fft - k].conj() };
            }
            self.inverse.process(&mut buf);
            let start = t * cfg.hop;
            for i in 0..cfg.frame_len {
                let w = self.window[i];
                acc[start + i] += w * buf[i].re * scale;
                norm[start + i] += w * w;
            }
        }
        let mut samples = Vec::with_capacity(s.orig_len);
        for n in 0..s.orig_len {
            let p = n + pad;
            let d = norm.get(p).copied().unwrap_or(0.0);
            if d <= MIN_WINDOW_SUM {
                return Err(Error::ZeroWindowSum(n));
            }
            samples.push(acc[p] / d);
        }
        Ok(Waveform::new(samples, SAMPLE_RATE_HZ))
    }
}

/// Mirror an out-of-range index back into `[0, len)` without repeating the edge sample.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= len as isize {
        r = period - r;
    }
    r as usize
}

pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    StftProcessor::new(cfg)?.analyze(w)
}

pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    StftProcessor::new(&s.config)?.synthesize(s)
}

/// Split into magnitude and phase; the phase of a zero coefficient is 0.
pub fn decompose(s: &ComplexSpectrogram) -> (Array2<f64>, Array2<f64>) {
    let mag = s.coeffs.mapv(|c| c.norm());
    let phase = s
        .coeffs
        .mapv(|c| if c.re == 0.0 && c.im == 0.0 { 0.0 } else { c.arg() });
    (mag, phase)
}

pub fn compose(
    magnitude: &Array2<f64>,
    phase: &Array2<f64>,
    config: &StftConfig,
    orig_len: usize,
) -> Result<ComplexSpectrogram> {
    if magnitude.dim() != phase.dim() {
        return Err(Error::shape(
            format!("{:?}", magnitude.dim()),
            format!("{:?}", phase.dim()),
        ));
    }
    if let Some(((frame, bin), &value)) = magnitude.indexed_iter().find(|(_, &m)| m < 0.0) {
        return Err(Error::NegativeMagnitude { frame, bin, value });
    }
    let mut coeffs = Array2::zeros(magnitude.dim());
    Zip::from(&mut coeffs)
        .and(magnitude)
        .and(phase)
        .for_each(|c, &m, &p| *c = Complex64::from_polar(m, p));
    Ok(ComplexSpectrogram {
        coeffs,
        config: config.clone(),
        orig_len,
    })
}

pub fn lps_from_magnitude(m: &Array2<f64>) -> LpsSequence {
    LpsSequence::new(m.mapv(|v| (v * v + POWER_FLOOR).ln()))
}

pub fn magnitude_from_lps(l: &LpsSequence) -> Array2<f64> {
    l.values.mapv(|v| (v / 2.0).exp())
}

/// LPS of a waveform under the given framing.
pub fn lps_of(w: &Waveform, cfg: &StftConfig) -> Result<LpsSequence> {
    let (mag, _) = decompose(&stft(w, cfg)?);
    Ok(lps_from_magnitude(&mag))
}

/// `||stft(istft(s)) - s||_F / ||s||_F`, zero for an all-zero spectrogram.
pub fn consistency_error(s: &ComplexSpectrogram) -> Result<f64> {
    let norm = s.frobenius_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let proc = StftProcessor::new(&s.config)?;
    let back = proc.analyze(&proc.synthesize(s)?)?;
    let diff: f64 = back
        .coeffs
        .iter()
        .zip(s.coeffs.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(diff.sqrt() / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new(
            (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            SAMPLE_RATE_HZ,
        )
    }

    /// Direct O(N^2) one-sided DFT of a zero-padded windowed frame.
    fn naive_frame_dft(frame: &[f64], fft_size: usize) -> Vec<Complex64> {
        (0..fft_size / 2 + 1)
            .map(|k| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(n, &x)| {
                        let ang = -2.0 * PI * (k * n) as f64 / fft_size as f64;
                        Complex64::new(x * ang.cos(), x * ang.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn default_config_has_129_bins() {
        let cfg = StftConfig::default();
        assert_eq!(cfg.n_bins(), 129);
        assert_eq!(cfg.num_frames(8000), 101);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = StftConfig::default();
        cfg.fft_size = 250;
        assert!(cfg.validate().is_err());
        let cfg = StftConfig {
            hop: 300,
            ..StftConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_signal_gives_zero_coefficients() {
        let s = stft(&Waveform::new(vec![0.0; 8000], 8000), &StftConfig::default()).unwrap();
        assert!(s.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0));
    }

    #[test]
    fn rejects_empty_and_wrong_rate() {
        let cfg = StftConfig::default();
        assert!(matches!(
            stft(&Waveform::new(vec![], 8000), &cfg),
            Err(Error::EmptySignal)
        ));
        let err = stft(&Waveform::new(vec![0.0; 10], 16000), &cfg).unwrap_err();
        assert_eq!(err.to_string(), "sample rate 16000 unsupported");
    }

    #[test]
    fn impulse_gives_flat_magnitude() {
        let cfg = StftConfig::default();
        let win = cfg.window.coefficients(cfg.frame_len);
        // Sample 0 sits at the frame-0 center and has no mirror image in the padding.
        let mut x = vec![0.0; 8000];
        x[0] = 1.0;
        let s = stft(&Waveform::new(x, 8000), &cfg).unwrap();
        for c in s.coeffs.row(0) {
            assert!((c.norm() - win[100]).abs() < 1e-12);
        }
        // Interior frame 10 spans samples 700..900.
        for offset in [3usize, 57, 150] {
            let mut x = vec![0.0; 8000];
            x[700 + offset] = 1.0;
            let s = stft(&Waveform::new(x, 8000), &cfg).unwrap();
            for c in s.coeffs.row(10) {
                assert!((c.norm() - win[offset]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_naive_dft() {
        let cfg = StftConfig::default();
        let w = random_signal(8000, 7);
        let s = stft(&w, &cfg).unwrap();
        let win = cfg.window.coefficients(cfg.frame_len);
        for t in [2usize, 17, 50, 98] {
            let start = t * cfg.hop - cfg.pad();
            let frame: Vec<f64> = (0..cfg.frame_len)
                .map(|i| w.samples[start + i] * win[i])
                .collect();
            let oracle = naive_frame_dft(&frame, cfg.fft_size);
            let energy: f64 = frame.iter().map(|v| v * v).sum();
            // One-sided Parseval: full-spectrum energy equals fft_size * frame energy.
            let full: f64 = oracle
                .iter()
                .enumerate()
                .map(|(k, c)| if k == 0 || k == 128 { c.norm_sqr() } else { 2.0 * c.norm_sqr() })
                .sum();
            assert!((full - cfg.fft_size as f64 * energy).abs() < 1e-9 * full);
            for (k, c) in s.coeffs.row(t).iter().enumerate() {
                let rel = (c - oracle[k]).norm() / oracle[k].norm().max(1e-300);
                assert!(rel < 1e-10 || (c - oracle[k]).norm() < 1e-12, "t={t} k={k} rel={rel}");
            }
        }
    }

    #[test]
    fn round_trip_reconstructs_signal() {
        let cfg = StftConfig::default();
        for seed in 0..3 {
            let w = random_signal(8000 + 37 * seed as usize, seed);
            let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
            assert_eq!(back.len(), w.len());
            let err = w
                .samples
                .iter()
                .zip(&back.samples)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "err={err}");
        }
    }

    #[test]
    fn short_signals_round_trip() {
        let cfg = StftConfig::default();
        for len in [1usize, 5, 99, 150, 201] {
            let w = random_signal(len, len as u64);
            let back = istft(&stft(&w, &cfg).unwrap()).unwrap();
            for (a, b) in w.samples.iter().zip(&back.samples) {
                assert!((a - b).abs() < 1e-10, "len={len}");
            }
        }
    }

    #[test]
    fn zero_spectrogram_synthesizes_silence() {
        let cfg = StftConfig::default();
        let s = ComplexSpectrogram {
            coeffs: Array2::zeros((cfg.num_frames(800), 129)),
            config: cfg,
            orig_len: 800,
        };
        assert!(istft(&s).unwrap().samples.iter().all(|&v| v == 0.0));
        assert_eq!(consistency_error(&s).unwrap(), 0.0);
    }

    #[test]
    fn istft_rejects_wrong_frame_count() {
        let cfg = StftConfig::default();
        let s = ComplexSpectrogram {
            coeffs: Array2::zeros((3, 129)),
            config: cfg,
            orig_len: 8000,
        };
        assert!(matches!(istft(&s), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn random_spectrogram_is_inconsistent() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames = cfg.num_frames(1600);
        let coeffs = Array2::from_shape_fn((frames, 129), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let s = ComplexSpectrogram {
            coeffs,
            config: cfg,
            orig_len: 1600,
        };
        assert!(consistency_error(&s).unwrap() > 0.1);
    }

    #[test]
    fn true_stft_is_consistent_and_scale_invariant() {
        let s = stft(&random_signal(4000, 11), &StftConfig::default()).unwrap();
        assert!(consistency_error(&s).unwrap() < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noisy = ComplexSpectrogram {
            coeffs: s
                .coeffs
                .mapv(|c| c * Complex64::from_polar(1.0, rng.gen_range(-PI..PI))),
            ..s.clone()
        };
        let c1 = consistency_error(&noisy).unwrap();
        let scaled = ComplexSpectrogram {
            coeffs: noisy.coeffs.mapv(|c| c * 3.7),
            ..noisy.clone()
        };
        assert!((consistency_error(&scaled).unwrap() - c1).abs() < 1e-12);
    }

    #[test]
    fn decompose_compose() {
        let cfg = StftConfig::default();
        let mut coeffs = Array2::zeros((cfg.num_frames(80), 129));
        coeffs[[0, 0]] = Complex64::new(3.0, 4.0);
        let s = ComplexSpectrogram {
            coeffs,
            config: cfg.clone(),
            orig_len: 80,
        };
        let (m, p) = decompose(&s);
        assert_eq!(m[[0, 0]], 5.0);
        assert_eq!(p[[0, 0]], 4f64.atan2(3.0));
        assert_eq!((m[[0, 1]], p[[0, 1]]), (0.0, 0.0));

        let s = stft(&random_signal(2000, 9), &cfg).unwrap();
        let (m, p) = decompose(&s);
        let back = compose(&m, &p, &cfg, 2000).unwrap();
        let err = back
            .coeffs
            .iter()
            .zip(s.coeffs.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn compose_rejects_negative_magnitude() {
        let m = Array2::from_elem((2, 3), -1.0);
        let p = Array2::zeros((2, 3));
        assert!(matches!(
            compose(&m, &p, &StftConfig::default(), 10),
            Err(Error::NegativeMagnitude { .. })
        ));
    }

    #[test]
    fn lps_conversions() {
        let m = ndarray::arr2(&[[1.0, 0.0, 3.0]]);
        let l = lps_from_magnitude(&m);
        assert!(l.values[[0, 0]].abs() < 1e-9);
        assert_eq!(l.values[[0, 1]], POWER_FLOOR.ln());
        let back = magnitude_from_lps(&l);
        assert!((back[[0, 1]] - POWER_FLOOR.sqrt()).abs() < 1e-18);
        let l = LpsSequence::new(ndarray::arr2(&[[2.0 * 3f64.ln()]]));
        assert!((magnitude_from_lps(&l)[[0, 0]] - 3.0).abs() < 1e-12);
    }
}
