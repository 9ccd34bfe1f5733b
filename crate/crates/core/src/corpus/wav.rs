use std::io::BufWriter;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::{Waveform, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Read a 16-bit PCM mono 8 kHz WAV file; samples are `int16 / 32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels(spec.channels));
    }
    if spec.sample_format != SampleFormat::Int {
        return Err(Error::UnsupportedEncoding("sample_format=float".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding(format!(
            "bits_per_sample={}",
            spec.bits_per_sample
        )));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(Error::UnsupportedSampleRate(spec.sample_rate));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Quantize to int16 with round-half-away-from-zero and clipping.
pub fn quantize(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if let Some(i) = w.samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("waveform sample {i}")));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    write_atomic(path, |file| {
        let mut writer = WavWriter::new(BufWriter::new(file), spec).map_err(wav_err)?;
        for &s in &w.samples {
            writer.write_sample(quantize(s)).map_err(wav_err)?;
        }
        writer.finalize().map_err(wav_err)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_chunk(bytes: &[u8]) -> &[u8] {
        let mut pos = 12;
        while pos + 8 <= bytes.len() {
            let id = &bytes[pos..pos + 4];
            let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
            if id == b"data" {
                return &bytes[pos + 8..pos + 8 + len];
            }
            pos += 8 + len + (len & 1);
        }
        panic!("no data chunk");
    }

    fn write_raw(path: &Path, channels: u16, rate: u32, samples: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn scaling_and_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 1, 8000, &[16384, -32768, 32767, 0]);
        let w = read_wav(&p).unwrap();
        assert_eq!(w.samples, vec![0.5, -1.0, 32767.0 / 32768.0, 0.0]);
        assert_eq!(quantize(0.5), 16384);
        assert_eq!(quantize(1.5), 32767);
        assert_eq!(quantize(-2.0), -32768);
        assert_eq!(quantize(0.5 / 32768.0), 1);
        assert_eq!(quantize(-0.5 / 32768.0), -1);
    }

    #[test]
    fn round_trip_preserves_data_chunk() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.wav");
        let b = dir.path().join("b.wav");
        let samples: Vec<i16> = (0..4000).map(|i| ((i * 7919) % 65536 - 32768) as i16).collect();
        write_raw(&a, 1, 8000, &samples);
        write_wav(&b, &read_wav(&a).unwrap()).unwrap();
        let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(data_chunk(&ba), data_chunk(&bb));
    }

    #[test]
    fn rejects_unsupported_formats() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw(&p, 2, 8000, &[0, 0, 1, 1]);
        assert_eq!(read_wav(&p).unwrap_err().to_string(), "channels=2 unsupported");
        write_raw(&p, 1, 16000, &[0, 1]);
        assert_eq!(
            read_wav(&p).unwrap_err().to_string(),
            "sample rate 16000 unsupported"
        );
        assert!(read_wav(dir.path().join("missing.wav")).is_err());
    }
}
