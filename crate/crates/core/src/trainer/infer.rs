use super::{audio_rows, prepare_inputs, training_embedder, Checkpoint, FeatureNorm, ListenerModel, TrainConfig};
use crate::audiofeat::{AudioClip, TextEmbedder};
use crate::coeffspace::{CoefficientFrame, CoefficientSequence};
use crate::error::Result;
use crate::layers::convert_into;
use crate::scalar::Real;

/// A checkpoint's model converted to the working precision.
pub struct InferenceModel<S> {
    pub config: TrainConfig,
    pub model: ListenerModel<S>,
    pub norm: FeatureNorm,
}

impl<S: Real> InferenceModel<S> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        let mut model = ListenerModel::<S>::zeros(&ckpt.config);
        convert_into(&ckpt.model, &mut model);
        Self {
            config: ckpt.config.clone(),
            model,
            norm: ckpt.norm.clone(),
        }
    }

    /// Listener coefficients for every frame of `speaker`. `listener_init`
    /// is required when the model conditions on, or predicts offsets from,
    /// the listener's first frame, and ignored otherwise.
    pub fn infer(
        &self,
        audio: &AudioClip<S>,
        speaker: &CoefficientSequence<S>,
        tokens: &[String],
        listener_init: Option<&CoefficientFrame<S>>,
    ) -> Result<CoefficientSequence<S>> {
        self.infer_with(&training_embedder(&self.config), audio, speaker, tokens, listener_init)
    }

    /// As [`infer`](Self::infer) with another text provider of the same width.
    pub fn infer_with(
        &self,
        embedder: &dyn TextEmbedder<S>,
        audio: &AudioClip<S>,
        speaker: &CoefficientSequence<S>,
        tokens: &[String],
        listener_init: Option<&CoefficientFrame<S>>,
    ) -> Result<CoefficientSequence<S>> {
        let rows = audio_rows(audio, speaker.fps(), self.config.n_mfcc)?;
        let uses_init = self.config.init_conditioning || self.config.residual;
        let init = if uses_init { listener_init } else { None };
        let prepared = prepare_inputs(rows, embedder, tokens, speaker, None, init, &self.norm, &self.config, None)?;
        let y = self.model.predict(&prepared)?;
        CoefficientSequence::from_matrix(&y, speaker.fps())
    }
}

pub fn infer<S: Real>(
    ckpt: &Checkpoint,
    audio: &AudioClip<S>,
    speaker: &CoefficientSequence<S>,
    tokens: &[String],
    listener_init: Option<&CoefficientFrame<S>>,
) -> Result<CoefficientSequence<S>> {
    InferenceModel::from_checkpoint(ckpt).infer(audio, speaker, tokens, listener_init)
}
