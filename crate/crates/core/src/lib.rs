//! Continuous emotion conditioning for prompt-feature spaces.
//!
//! Maps a neutral text-prompt feature plus a Valence-Arousal coordinate to
//! an emotional prompt feature via an emotion injection transformer, trained
//! with a density-weighted scaled-residual loss. Ships the dataset pipeline,
//! a deterministic training loop, and the evaluation metric suite. Diffusion
//! backends and pretrained metric models sit behind ports; everything here
//! runs at desk scale on a CPU.

pub mod dataset;
pub mod density;
pub mod loss;
pub mod net;
pub mod training;
pub mod va;

pub mod eval;

pub use dataset::{EncodedSample, PairedSample, PromptEncoderPort, ToyHashEncoder};
pub use density::{fit_kde, DensityModel};
pub use loss::{batch_loss, scaled_target, weighted_sample_loss, LossConfig};
pub use net::{
    encode_va, eib_forward, eit_forward, EITConfig, EITParams, EmotionFeatures, PromptFeature,
};
pub use va::{preset_emotion, validate_va, VAPoint};
