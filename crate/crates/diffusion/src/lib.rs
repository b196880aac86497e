//! Drag-conditioned latent diffusion at desk scale.
//!
//! Two interchangeable backbones predict noise from a noisy latent, a
//! reference image and a drag set: a U-Net whose self-attention reads keys
//! and values from the reference image, and a DiT with adaLN-Zero blocks.
//! Drags enter both through zero-initialized weights, so an untrained model
//! ignores them exactly. The crate also holds the fixed linear codec,
//! training, classifier-free-guided DDIM sampling, feature extraction for
//! segmentation and the checkpoint format. All activations are
//! channels-last.

pub mod blocks;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod conv;
pub mod dit;
pub mod drags;
pub mod error;
pub mod features;
pub mod model;
pub mod nn;
pub mod sample;
pub mod train;
pub mod unet;

pub use codec::{Codec, Latent};
pub use config::{Backbone, DenoiserConfig, DragConditioning};
pub use error::{Error, Result};
pub use model::{Denoiser, DenoiserInput, DenoiserOutput};
pub use checkpoint::{Checkpoint, TrainingMeta};
pub use sample::{sample, SampleOptions};
pub use train::{train, TrainOptions, TrainReport};
