use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{PreparedSample, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::{CrossModalCache, CrossModalParams, FusionCache, FusionDims, FusionParams};
use crate::hiercoder::{contrastive_batch_loss, ContrastivePlan, EncoderCache, EncoderDims, EncoderParams, FeaturePyramid};
use crate::layers::impl_params;
use crate::scalar::Real;
use crate::seqdecoder::{regression_loss_grad, DecoderCache, DecoderDims, DecoderOptions, DecoderParams, LossWeights, NormKind};

/// Encoder, audio fusion, cross-modal fusion and decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ListenerModel<S> {
    pub encoder: EncoderParams<S>,
    pub fusion: FusionParams<S>,
    pub cross_modal: CrossModalParams<S>,
    pub decoder: DecoderParams<S>,
}

impl_params!(ListenerModel { encoder, fusion, cross_modal, decoder });

struct Layout {
    encoder: EncoderDims,
    fusion: FusionDims,
    decoder: DecoderDims,
    options: DecoderOptions,
}

fn layout(cfg: &TrainConfig) -> Layout {
    let d_in = 3 * cfg.n_mfcc;
    Layout {
        encoder: EncoderDims {
            d_in,
            widths: [cfg.enc_width; 3],
            d_proj: cfg.d_proj,
            d_text: cfg.d_text,
            se_ratio: cfg.se_ratio,
        },
        fusion: FusionDims {
            d_proj: cfg.d_proj,
            d_text: cfg.d_text,
            d_mfcc_stack: d_in,
            d_fused: cfg.d_fused,
        },
        decoder: DecoderDims {
            d_in: cfg.d_xm,
            hidden: cfg.hidden,
            layers: cfg.layers,
        },
        options: DecoderOptions {
            init_conditioning: cfg.init_conditioning,
            residual: cfg.residual,
        },
    }
}

/// Caches from the non-encoder part of one sample's forward pass.
pub struct HeadCache<S> {
    fusion: FusionCache<S>,
    cross_modal: CrossModalCache<S>,
    decoder: DecoderCache<S>,
}

impl<S: Real> ListenerModel<S> {
    pub fn zeros(cfg: &TrainConfig) -> Self {
        let l = layout(cfg);
        Self {
            encoder: EncoderParams::zeros(l.encoder),
            fusion: FusionParams::zeros(l.fusion, cfg.se_ratio),
            cross_modal: CrossModalParams::zeros(cfg.d_fused, cfg.d_xm),
            decoder: DecoderParams::zeros(&l.decoder, l.options),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, cfg: &TrainConfig) -> Self {
        let l = layout(cfg);
        Self {
            encoder: EncoderParams::init(rng, l.encoder),
            fusion: FusionParams::init(rng, l.fusion, cfg.se_ratio),
            cross_modal: CrossModalParams::init(rng, cfg.d_fused, cfg.d_xm),
            decoder: DecoderParams::init(rng, &l.decoder, l.options),
        }
    }

    pub fn encode(&self, s: &PreparedSample<S>) -> Result<(FeaturePyramid<S>, Array2<S>, EncoderCache<S>)> {
        self.encoder.forward(&s.audio.view(), &s.text.view())
    }

    /// Fusion, cross-modal fusion and decoding on top of an encoded sample.
    pub fn head_forward(&self, s: &PreparedSample<S>, pyramid: &FeaturePyramid<S>) -> Result<(Array2<S>, HeadCache<S>)> {
        let (fused, fusion) = self.fusion.forward(
            &pyramid.high.view(),
            &pyramid.mid.view(),
            &pyramid.low.view(),
            &s.text.view(),
            &s.audio.view(),
        )?;
        let (xm, cross_modal) = self.cross_modal.forward(&s.speaker.view(), &fused.view())?;
        let (y, decoder) = self.decoder.forward(&xm.view(), s.reference.as_ref().map(|r| r.view()).as_ref())?;
        Ok((y, HeadCache { fusion, cross_modal, decoder }))
    }

    /// Returns gradients on the pyramid levels `(low, mid, high)`.
    fn head_backward(&self, cfg_fusion: FusionDims, cache: &HeadCache<S>, dy: &ArrayView2<S>, grad: &mut Self) -> [Array2<S>; 3] {
        let dxm = self.decoder.backward(&cache.decoder, dy, &mut grad.decoder);
        let (_, dfused) = self.cross_modal.backward(&cache.cross_modal, &dxm.view(), &mut grad.cross_modal);
        let g = self.fusion.backward(cfg_fusion, &cache.fusion, &dfused.view(), &mut grad.fusion);
        [g.low, g.mid, g.high]
    }

    /// Predicted listener coefficients, `[T × 70]`.
    pub fn predict(&self, s: &PreparedSample<S>) -> Result<Array2<S>> {
        let (pyramid, _, _) = self.encode(s)?;
        Ok(self.head_forward(s, &pyramid)?.0)
    }

    fn fusion_dims(&self) -> FusionDims {
        FusionDims {
            d_proj: self.encoder.heads[0].outputs(),
            d_text: self.encoder.d_text(),
            d_mfcc_stack: self.encoder.d_in(),
            d_fused: self.fusion.out.outputs(),
        }
    }
}

/// How the two losses enter one optimization step.
#[derive(Clone, Copy, Debug)]
pub struct Objective<S> {
    pub reg_weight: S,
    pub con_weight: S,
    pub loss: LossWeights<S>,
    pub norm: NormKind,
    pub tau: S,
    /// Whether encoder gradients are needed at all.
    pub train_encoder: bool,
}

impl<S: Real> Objective<S> {
    pub fn joint(cfg: &TrainConfig) -> Self {
        Self {
            reg_weight: S::one(),
            con_weight: S::lit(cfg.lambda_contrastive),
            loss: LossWeights {
                w1: S::lit(cfg.w1),
                w2: S::lit(cfg.w2),
            },
            norm: if cfg.squared_norm { NormKind::SquaredL2 } else { NormKind::L2 },
            tau: S::lit(cfg.tau),
            train_encoder: true,
        }
    }

    pub fn total(&self, parts: &LossParts) -> f64 {
        self.reg_weight.as_f64() * parts.reg + self.con_weight.as_f64() * parts.con
    }
}

/// Mean per-sample regression loss and the batch contrastive loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub reg: f64,
    pub con: f64,
}

/// Evaluates `reg_weight · mean regression + con_weight · contrastive` on a
/// batch; with `grad`, accumulates its gradient (in sample order).
pub fn batch_objective<S: Real>(
    model: &ListenerModel<S>,
    batch: &[&PreparedSample<S>],
    plan: &ContrastivePlan,
    obj: &Objective<S>,
    mut grad: Option<&mut ListenerModel<S>>,
) -> Result<LossParts> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut pyramids = Vec::with_capacity(batch.len());
    let mut texts = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for s in batch {
        let (p, t, c) = model.encode(s)?;
        pyramids.push(p);
        texts.push(t);
        caches.push(c);
    }
    let (con, con_grads) = contrastive_batch_loss(plan, &pyramids, &texts, obj.tau)?;
    let scale = obj.reg_weight / S::lit(batch.len() as f64);
    let fdims = model.fusion_dims();
    let mut reg_total = 0.0;
    for (i, s) in batch.iter().enumerate() {
        let target = s
            .listener
            .as_ref()
            .ok_or_else(|| Error::Invalid("training sample has no listener sequence".into()))?;
        let (y, head) = model.head_forward(s, &pyramids[i])?;
        let (reg, dy) = regression_loss_grad(&y.view(), &target.view(), obj.loss, obj.norm)?;
        reg_total += reg.as_f64();
        let Some(grad) = grad.as_deref_mut() else { continue };
        let mut dlevels = if obj.reg_weight != S::zero() {
            model.head_backward(fdims, &head, &(dy * scale).view(), grad)
        } else {
            let z = Array2::zeros(pyramids[i].high.raw_dim());
            [z.clone(), z.clone(), z]
        };
        if obj.train_encoder {
            let cg = &con_grads[i];
            dlevels[0].scaled_add(obj.con_weight, &cg.low);
            dlevels[1].scaled_add(obj.con_weight, &cg.mid);
            dlevels[2].scaled_add(obj.con_weight, &cg.high);
            let dtext = &cg.text * obj.con_weight;
            model.encoder.backward(
                &caches[i],
                &dlevels[0].view(),
                &dlevels[1].view(),
                &dlevels[2].view(),
                &dtext.view(),
                &mut grad.encoder,
            );
        }
    }
    Ok(LossParts {
        reg: reg_total / batch.len() as f64,
        con: con.as_f64(),
    })
}

/// Names of the parameter blocks that belong to the encoder.
pub fn is_encoder_block(name: &str) -> bool {
    name.starts_with("encoder.")
}

