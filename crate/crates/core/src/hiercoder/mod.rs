//! Hierarchical audio encoder and the multi-level contrastive objective that
//! aligns high-level audio features with text features.

mod contrastive;
mod encoder;

pub use contrastive::{
    alignment_stats, contrastive_batch_loss, contrastive_loss, contrastive_loss_grad, cosine_similarity, negative_pool_size,
    plan_contrastive, sample_negative_refs, sample_negatives, AlignmentStats, Anchor, ContrastiveGrads, ContrastivePlan, Level,
    PoolRef, DEFAULT_K_NEGATIVES, DEFAULT_TAU,
};
pub use encoder::{
    encode_audio, receptive_radius, ConvStage, EncoderCache, EncoderDims, EncoderParams, FeaturePyramid,
};
