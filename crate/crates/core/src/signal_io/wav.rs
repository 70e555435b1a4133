use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

const INT16_SCALE: f64 = 32768.0;

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(format!("{}: {other}", path.display())),
    }
}

/// Reads a mono 16 kHz RIFF/WAVE file, PCM 16-bit or IEEE float 32-bit.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate(spec.sample_rate));
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels(spec.channels));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / INT16_SCALE))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec(format!(
                "{fmt:?} {bits}-bit (expected Int 16-bit or Float 32-bit)"
            )))
        }
    };
    AudioBuffer::new(samples)
}

/// Saturating int16 encode; values outside [-1, 1 - 2^-15] clip.
pub(crate) fn encode_i16(v: f64) -> i16 {
    (v * INT16_SCALE)
        .round()
        .clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes 16-bit PCM mono 16 kHz.
pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in audio.samples() {
        writer
            .write_sample(encode_i16(s))
            .map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x = AudioBuffer::new(vec![0.0, 0.5, -0.5, 0.123456]).unwrap();
        write_wav(&p, &x).unwrap();
        let y = read_wav(&p).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn saturates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.wav");
        write_wav(&p, &AudioBuffer::new(vec![2.0, -2.0]).unwrap()).unwrap();
        let y = read_wav(&p).unwrap();
        assert_eq!(y.samples()[0], 32767.0 / 32768.0);
        assert!((y.samples()[0] - 0.99997).abs() < 1e-5);
        assert_eq!(y.samples()[1], -1.0);
    }

    fn write_with(p: &Path, spec: WavSpec) {
        let mut w = WavWriter::create(p, spec).unwrap();
        for _ in 0..4 * spec.channels {
            match spec.sample_format {
                SampleFormat::Int if spec.bits_per_sample == 16 => w.write_sample(100i16).unwrap(),
                SampleFormat::Int => w.write_sample(100i32).unwrap(),
                SampleFormat::Float => w.write_sample(0.25f32).unwrap(),
            }
        }
        w.finalize().unwrap();
    }

    #[test]
    fn rejects_wrong_formats() {
        let dir = tempfile::tempdir().unwrap();
        let base = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };

        let p = dir.path().join("8k.wav");
        write_with(
            &p,
            WavSpec {
                sample_rate: 8000,
                ..base
            },
        );
        let err = read_wav(&p).unwrap_err();
        assert!(err.to_string().contains("unsupported sample rate"), "{err}");

        let p = dir.path().join("stereo.wav");
        write_with(
            &p,
            WavSpec {
                channels: 2,
                ..base
            },
        );
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedChannels(2))));

        let p = dir.path().join("24.wav");
        write_with(
            &p,
            WavSpec {
                bits_per_sample: 24,
                ..base
            },
        );
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedCodec(_))));

        let p = dir.path().join("f32.wav");
        write_with(
            &p,
            WavSpec {
                bits_per_sample: 32,
                sample_format: SampleFormat::Float,
                ..base
            },
        );
        assert_eq!(read_wav(&p).unwrap().samples(), &[0.25; 4]);
    }
}
