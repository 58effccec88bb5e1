use std::fs::File;
use std::io::{BufReader, Cursor};
use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::atomic_write;
use crate::dsp::Waveform;
use crate::error::{Error, Result};

fn format_err(e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedFormat("wav codec".into()),
        hound::Error::IoError(e) => Error::FormatError(format!("wav data: {e}")),
        other => Error::FormatError(other.to_string()),
    }
}

/// Reads 16-bit PCM or 32-bit float WAV; multichannel input is averaged to mono.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let file = BufReader::new(File::open(path)?);
    let reader = hound::WavReader::new(file).map_err(format_err)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::FormatError("wav with zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(format_err)?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(format_err)?,
        (fmt, bits) => return Err(Error::UnsupportedFormat(format!("{bits}-bit {fmt:?} samples"))),
    };
    if !interleaved.len().is_multiple_of(channels) {
        return Err(Error::FormatError("partial sample frame".into()));
    }
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

/// Writes mono 16-bit PCM at the waveform's rate; samples are clipped to `[-1, 1]`.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut buf, spec).map_err(format_err)?;
        for &s in wave.samples() {
            let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(q).map_err(format_err)?;
        }
        w.finalize().map_err(format_err)?;
    }
    atomic_write(path, &buf.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut x: Vec<f32> = (0..5000).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        x[0] = 1.0;
        x[1] = -1.0;
        let w = Waveform::new(x.clone(), 11025).unwrap();
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate(), 11025);
        let err = x.iter().zip(r.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err <= 1.0 / 32768.0, "{err}");
    }

    #[test]
    fn stereo_and_float_input_are_downmixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 22050,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for (l, r) in [(0.5f32, -0.25f32), (1.0, 0.0), (-0.5, -0.5)] {
            w.write_sample(l).unwrap();
            w.write_sample(r).unwrap();
        }
        w.finalize().unwrap();
        let m = read_wav(&p).unwrap();
        assert_eq!(m.samples(), [0.125, 0.5, -0.5]);
        assert_eq!(m.sample_rate(), 22050);
    }

    #[test]
    fn truncated_and_unsupported_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_wav(&p, &Waveform::new(vec![0.1; 1000], 11025).unwrap()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..30]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::FormatError(_))));
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::FormatError(_))));
        std::fs::write(&p, b"not a wav file at all").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::FormatError(_))));

        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedFormat(_))));
    }
}
