//! High-resolution vision-language model at toy scale: a small tensor
//! engine with reverse-mode differentiation, sliding-window image
//! partitioning, a shared vision encoder with per-crop LoRA adapters, a
//! cross-attention resampler and a byte-level causal language model.

pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod image;
mod kernels;
pub mod lm;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod partition;
pub mod resampler;
pub mod tensor;
pub mod text;

pub use encoder::{adapter_param_count, EncoderConfig, TrainabilityPolicy, VisionEncoder};
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use image::ImageTensor;
pub use lm::{LanguageModel, LmConfig};
pub use model::{AdapterMode, ModelConfig, MonkeyModel, StepReport, TrainExample, Trainer, VisualMode};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use params::{ParamId, ParamStore};
pub use partition::{partition, partition_with, PartitionOptions, PatchGrid, Window, MAX_PATCHES};
pub use resampler::{Resampler, ResamplerConfig};
pub use tensor::Tensor;
pub use text::{format_instruction, InstructionSample, Task};
