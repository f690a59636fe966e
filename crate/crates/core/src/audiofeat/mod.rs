//! Speaker audio front end: WAV ingestion, per-video-frame alignment,
//! MFCC + delta + delta-delta stacks, and the pluggable text-embedding stream.

mod mfcc;
mod text;
mod wav;

pub use mfcc::{delta, mfcc_stack, mfcc_stack_with, AudioFeatureStack, MfccConfig};
pub use text::{
    embed_text, frame_token_index, provider_from_spec, tokenize, FileEmbedder, ProviderRegistry,
    StubEmbedder, TextEmbedder, TextEmbeddingStream, DEFAULT_TEXT_DIM,
};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MIN_SAMPLE_RATE: u32 = 8000;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip<S> {
    samples: Vec<S>,
    sample_rate: u32,
}

impl<S: Real> AudioClip<S> {
    pub fn new(samples: Vec<S>, sample_rate: u32) -> Result<Self> {
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(Error::Audio(format!(
                "sample rate {sample_rate} Hz below minimum {MIN_SAMPLE_RATE} Hz"
            )));
        }
        if let Some(i) = samples
            .iter()
            .position(|v| !v.is_finite() || v.abs() > S::one())
        {
            return Err(Error::Audio(format!(
                "sample {i} is non-finite or outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[S] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Multiplies every sample by `gain`, clamping to `[-1, 1]`.
    pub fn scaled(&self, gain: S) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|&v| (v * gain).max(-S::one()).min(S::one()))
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Number of whole video frames covered by `n_samples` at `fps`.
///
/// A relative slack of 1e-9 absorbs the rounding of durations such as 64/30 s.
pub fn video_frame_count(n_samples: usize, sample_rate: u32, fps: f64) -> usize {
    (n_samples as f64 / sample_rate as f64 * fps * (1.0 + 1e-9)).floor() as usize
}

fn check_fps(fps: f64) -> Result<()> {
    if fps.is_finite() && fps > 0.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("fps must be positive, got {fps}")))
    }
}

/// Sample index range `[start, start + len)` of the window for video frame `t`,
/// which may extend outside the clip.
pub(crate) fn frame_window(t: usize, sample_rate: u32, fps: f64, len: usize) -> i64 {
    let center = (t as f64 + 0.5) / fps * sample_rate as f64;
    (center - len as f64 / 2.0).round() as i64
}

/// One window of samples per video frame, centred on the frame's midpoint
/// `(t + 0.5) / fps` and spanning `(1 + 2 * context_frames) / fps` seconds.
/// Samples outside the clip read as zero.
pub fn frame_audio<S: Real>(clip: &AudioClip<S>, fps: f64, context_frames: usize) -> Result<Vec<Vec<S>>> {
    check_fps(fps)?;
    let n_frames = video_frame_count(clip.samples.len(), clip.sample_rate, fps);
    if n_frames == 0 {
        return Err(Error::Audio(format!(
            "clip of {:.4} s is shorter than one video frame at {fps} fps",
            clip.duration()
        )));
    }
    let len = (clip.sample_rate as f64 * (1 + 2 * context_frames) as f64 / fps).round() as usize;
    Ok((0..n_frames)
        .map(|t| {
            let start = frame_window(t, clip.sample_rate, fps, len);
            (0..len as i64)
                .map(|i| {
                    let idx = start + i;
                    if idx >= 0 && (idx as usize) < clip.samples.len() {
                        clip.samples[idx as usize]
                    } else {
                        S::zero()
                    }
                })
                .collect()
        })
        .collect())
}
