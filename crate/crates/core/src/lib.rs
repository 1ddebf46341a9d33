//! Guided diffusion sampling with visual and textual guidance and cumulative
//! region masks.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod denoiser;
pub mod discriminator;
pub mod error;
pub mod guidance;
pub mod lora;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod toy_data;
pub mod vocab;

pub use error::{Error, FieldError, Result};
pub use tensor::Tensor;
