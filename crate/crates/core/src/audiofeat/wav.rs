use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Reads a mono RIFF WAV with 16-bit PCM or 32-bit float samples.
pub fn read_wav<S: Real>(path: impl AsRef<Path>) -> Result<AudioClip<S>> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Audio(format!(
            "{}: {} channels, only mono audio is supported",
            path.display(),
            spec.channels
        )));
    }
    let bad = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let samples: Vec<S> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| S::lit(v as f64 / 32768.0)).map_err(bad))
            .collect::<Result<_>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| S::lit(v as f64)).map_err(bad))
            .collect::<Result<_>>()?,
        (fmt, bits) => {
            return Err(Error::Audio(format!(
                "{}: unsupported sample format {fmt:?} with {bits} bits",
                path.display()
            )))
        }
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav<S: Real>(clip: &AudioClip<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let err = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let mut w = WavWriter::create(path, spec).map_err(err)?;
    for &s in clip.samples() {
        w.write_sample(s.as_f64() as f32).map_err(err)?;
    }
    w.finalize().map_err(err)
}
