use ndarray::{s, Array1, Array2, Axis};

use super::TrainConfig;
use crate::audiofeat::{mfcc_stack, AudioClip, StubEmbedder, TextEmbedder};
use crate::coeffspace::{CoefficientFrame, CoefficientSequence};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::synthdata::DyadicSample;

/// Model-ready tensors for one dyad.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample<S> {
    /// Normalized MFCC + deltas, `[T × 3 n_mfcc]`.
    pub audio: Array2<S>,
    /// Per-frame token embeddings, `[T × d_text]`.
    pub text: Array2<S>,
    /// Frames that carry a token.
    pub text_mask: Vec<bool>,
    pub speaker: Array2<S>,
    pub listener: Option<Array2<S>>,
    /// Listener's first frame, when supplied.
    pub reference: Option<Array1<S>>,
}

impl<S: Real> PreparedSample<S> {
    pub fn frames(&self) -> usize {
        self.audio.nrows()
    }
}

/// Per-column standardization of the audio feature rows, fitted on the
/// training set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

impl FeatureNorm {
    pub fn identity(width: usize) -> Self {
        Self { mean: vec![0.0; width], std: vec![1.0; width] }
    }

    pub fn fit(rows: &[Array2<f64>]) -> Result<Self> {
        let width = rows.first().map(|r| r.ncols()).ok_or(Error::EmptySequence)?;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let mut n = 0usize;
        for m in rows {
            if m.ncols() != width {
                return Err(Error::Shape("audio feature widths differ".into()));
            }
            for row in m.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n as f64 - m * m).max(0.0);
                if var.sqrt() < STD_FLOOR {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply<S: Real>(&self, rows: &Array2<f64>) -> Result<Array2<S>> {
        if rows.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "feature normalizer expects {} columns, got {}",
                self.mean.len(),
                rows.ncols()
            )));
        }
        Ok(Array2::from_shape_fn(rows.dim(), |(t, j)| S::lit((rows[[t, j]] - self.mean[j]) / self.std[j])))
    }
}

/// MFCC, delta and delta-delta rows of a clip, in `f64`.
pub fn audio_rows<S: Real>(clip: &AudioClip<S>, fps: f64, n_mfcc: usize) -> Result<Array2<f64>> {
    Ok(mfcc_stack(clip, fps, n_mfcc)?.concatenated().mapv(S::as_f64))
}

/// Matches audio rows to a coefficient sequence of `frames` rows. Rounding
/// of the audio length may leave one frame short; that frame repeats the
/// last row. Larger gaps are errors, surplus rows are dropped.
pub fn align_rows(rows: Array2<f64>, frames: usize) -> Result<Array2<f64>> {
    let n = rows.nrows();
    if n >= frames {
        return Ok(rows.slice(s![..frames, ..]).to_owned());
    }
    if n + 1 == frames && n > 0 {
        let last = rows.row(n - 1).insert_axis(Axis(0)).to_owned();
        return Ok(ndarray::concatenate(Axis(0), &[rows.view(), last.view()]).expect("same width"));
    }
    Err(Error::Shape(format!("audio covers {n} frames but the coefficient sequence has {frames}")))
}

fn text_stream<S: Real>(embedder: &dyn TextEmbedder<S>, tokens: &[String], frames: usize, d_text: usize) -> Result<(Array2<S>, Vec<bool>)> {
    if embedder.dim() != d_text {
        return Err(Error::Shape(format!(
            "text provider `{}` yields {}-d vectors, the model expects {d_text}",
            embedder.id(),
            embedder.dim()
        )));
    }
    let stream = embedder.embed(tokens, frames)?;
    let mask = stream.vectors.rows().into_iter().map(|r| r.iter().any(|v| *v != S::zero())).collect();
    Ok((stream.vectors, mask))
}

/// The text provider used in training.
pub fn training_embedder(cfg: &TrainConfig) -> StubEmbedder {
    StubEmbedder::new(cfg.d_text, 0)
}

/// Builds model inputs from raw streams. The first `max_frames` frames are
/// kept (all of them when `None`).
pub fn prepare_inputs<S: Real>(
    audio_rows: Array2<f64>,
    embedder: &dyn TextEmbedder<S>,
    tokens: &[String],
    speaker: &CoefficientSequence<S>,
    listener: Option<&CoefficientSequence<S>>,
    reference: Option<&CoefficientFrame<S>>,
    norm: &FeatureNorm,
    cfg: &TrainConfig,
    max_frames: Option<usize>,
) -> Result<PreparedSample<S>> {
    let full = speaker.len();
    if let Some(l) = listener {
        if l.len() != full {
            return Err(Error::Shape(format!("speaker has {full} frames, listener {}", l.len())));
        }
    }
    let frames = max_frames.map_or(full, |m| m.min(full));
    let audio = norm.apply(&align_rows(audio_rows, full)?.slice(s![..frames, ..]).to_owned())?;
    let (text, mask) = text_stream(embedder, tokens, full, cfg.d_text)?;
    let cut = |m: Array2<S>| m.slice(s![..frames, ..]).to_owned();
    let listener_m = listener.map(|l| cut(l.to_matrix()));
    let reference = match (reference, &listener_m) {
        (Some(r), _) => Some(Array1::from(r.to_vec()).slice(s![..crate::coeffspace::COEFF_DIM]).to_owned()),
        (None, Some(l)) => Some(l.row(0).to_owned()),
        (None, None) => None,
    };
    Ok(PreparedSample {
        audio,
        text: cut(text),
        text_mask: mask[..frames].to_vec(),
        speaker: cut(speaker.to_matrix()).slice(s![.., ..crate::coeffspace::COEFF_DIM]).to_owned(),
        listener: listener_m.map(|l| l.slice(s![.., ..crate::coeffspace::COEFF_DIM]).to_owned()),
        reference,
    })
}

/// Prepares training dyads, windowed to `cfg.t_train` frames.
pub fn prepare_dyads(samples: &[DyadicSample<f64>], norm: &FeatureNorm, cfg: &TrainConfig) -> Result<Vec<PreparedSample<f64>>> {
    samples
        .iter()
        .map(|d| {
            let rows = audio_rows(&d.speaker_audio, d.speaker_coeffs.fps(), cfg.n_mfcc)?;
            prepare_inputs(
                rows,
                &training_embedder(cfg),
                &d.transcript_tokens,
                &d.speaker_coeffs,
                Some(&d.listener_coeffs),
                None,
                norm,
                cfg,
                Some(cfg.t_train),
            )
        })
        .collect()
}

/// Fits the audio normalizer on the training dyads.
pub fn fit_norm(samples: &[DyadicSample<f64>], cfg: &TrainConfig) -> Result<FeatureNorm> {
    let rows = samples
        .iter()
        .map(|d| {
            let r = audio_rows(&d.speaker_audio, d.speaker_coeffs.fps(), cfg.n_mfcc)?;
            let frames = d.speaker_coeffs.len().min(cfg.t_train);
            Ok(align_rows(r, d.speaker_coeffs.len())?.slice(s![..frames, ..]).to_owned())
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureNorm::fit(&rows)
}
