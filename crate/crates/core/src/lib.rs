//! Listener head motion generation in 3DMM coefficient space.
//!
//! Speaker audio, transcript and facial coefficients go in; a listener's
//! expression and pose coefficients come out. Numeric code is generic over
//! [`Real`] (`f32` or `f64`); the aliases below fix the precision.

pub mod audiofeat;
pub mod coeffspace;
pub mod csvmat;
pub mod error;
pub mod fusion;
pub mod hiercoder;
pub mod layers;
pub mod metrics;
pub mod scalar;
pub mod seqdecoder;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Clip = audiofeat::AudioClip<f64>;
pub type Clip32 = audiofeat::AudioClip<f32>;
pub type Frame = coeffspace::CoefficientFrame<f64>;
pub type Frame32 = coeffspace::CoefficientFrame<f32>;
pub type Sequence = coeffspace::CoefficientSequence<f64>;
pub type Sequence32 = coeffspace::CoefficientSequence<f32>;
pub type Dyad = synthdata::DyadicSample<f64>;
pub type Dyad32 = synthdata::DyadicSample<f32>;
pub type Model = trainer::ListenerModel<f64>;
pub type Model32 = trainer::ListenerModel<f32>;
pub type Inference = trainer::InferenceModel<f64>;
pub type Inference32 = trainer::InferenceModel<f32>;
