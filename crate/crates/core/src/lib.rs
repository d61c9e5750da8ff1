//! Cross-modal text-to-video retrieval over learned common spaces.
//!
//! A retrieval model is an assembly of sentence encoders (bag-of-words,
//! mean-pooled word embeddings, GRU / bi-GRU, precomputed sentence vectors),
//! each feeding its own pair of affine+tanh projections — one for text, one
//! for video features — into an encoder-specific common space. The score of
//! a (sentence, video) pair is the average of per-space cosine similarities.
//! Training minimizes the sum of per-space triplet losses, each mining its
//! own hardest in-batch negative. Single-space fusion baselines
//! (concatenation, transformed concatenation, model averaging) share the
//! same machinery.

pub mod data;
pub mod encoders;
pub mod error;
pub mod fixture;
pub mod grad;
pub mod loss;
pub mod metrics;
pub mod spaces;
pub mod textproc;
pub mod trainer;

pub use error::{Error, Result};
pub use loss::LossMode;
pub use metrics::{JudgmentPool, RankedList};
pub use spaces::{EncoderKind, FusionMode, MultiSpaceModel};
pub use textproc::{TokenSeq, Vocabulary};
pub use trainer::{EncoderResources, EvalData, FitOutcome, TrainConfig, ValMetric};

/// Floating-point scalar usable throughout the library. Training runs at
/// `f32`; gradient checking instantiates the same code at `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Convert an `f64` constant into the active scalar type.
pub(crate) fn real<F: Real>(x: f64) -> F {
    F::from(x).expect("constant representable in scalar type")
}
