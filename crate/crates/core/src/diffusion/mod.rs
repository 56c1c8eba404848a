//! EDM-preconditioned masked latent diffusion at toy scale.
//!
//! The pieces mirror a two-stage lip-sync generator: a keyframe model that
//! produces `T` sparse frames spaced `S` apart, and an interpolation model
//! that fills each gap from a sequence of boundary keyframes and learned slot
//! embeddings. Both are trained with the same masked loss and sampled with
//! dual-condition (identity, audio) classifier-free guidance. The network is
//! a tiny two-layer map so the whole loop runs on one CPU core.

mod config;
mod edm;
mod fixture;
mod guidance;
mod loss;
mod sample;
mod schedule;
mod simulate;
mod tensor;
mod toy;
mod train;

use thiserror::Error;

pub use config::SimConfig;
pub use edm::{
    denoise, edm_coefficients, edm_loss_weight, karras_sigmas, Denoiser, EdmCoefficients,
    EdmParams, Network, Preconditioned,
};
pub use fixture::{
    default_latent_mask, read_clip, write_clip, ClipSidecar, SlidingBarConfig, SlidingBarFixture,
    SlidingBarVideo,
};
pub use guidance::{add_audio_to_timestep, guided_combine, GuidanceWeights};
pub use loss::{latent_loss, latent_loss_grad, rgb_loss, rgb_loss_grad, total_loss, TrainingLoss};
pub use sample::{toy_sample, SamplerConfig};
pub use schedule::{
    build_interpolation_input, interpolation_positions, keyframe_indices, stitch_segments,
    InterpolationInput, Schedule,
};
pub use simulate::{run_simulation, SimulationReport, StageReport};
pub use tensor::{ClipShape, FrameTensor, LatentClip};
pub use toy::{AudioFeatureTrack, Conditioning, Reference, ToyDenoiser, ToyDims};
pub use train::{toy_train, DropRates, LossHistory, Stage, TrainConfig, TrainedModel};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("sigma must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("sigma_data must be positive and finite, got {0}")]
    BadSigmaData(f64),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch {
        expected: ClipShape,
        found: ClipShape,
    },
    #[error("frame shape mismatch: expected {expected:?}, found {found:?}")]
    FrameShapeMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("vector length mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("buffer has {found} values, expected {expected}")]
    BadLength { expected: usize, found: usize },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("clip has no frames")]
    EmptyClip,
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("latent mask is {mask:?} but clip frames are {clip:?}")]
    MaskMismatch {
        mask: (usize, usize),
        clip: (usize, usize),
    },
    #[error("loss became non-finite at step {step} (sigma {sigma})")]
    NonFiniteLoss { step: usize, sigma: f64 },
    #[error("mask: {0}")]
    Mask(String),
    #[error("fixture format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
