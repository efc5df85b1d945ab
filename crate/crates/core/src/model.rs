//! The full pipeline: partition, per-crop encoding, shared resampling and
//! the language model, plus a single-writer trainer.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, TrainabilityPolicy, VisionEncoder};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::ImageTensor;
use crate::lm::{LanguageModel, LmConfig};
use crate::optim::{AdamW, AdamWConfig, LrSchedule};
use crate::params::ParamStore;
use crate::partition::{grid_dims, partition_with, PartitionOptions, MAX_PATCHES};
use crate::resampler::{Resampler, ResamplerConfig};
use crate::tensor::Tensor;
use crate::text::{self, format_instruction, InstructionSample, EOS};

/// How the image reaches the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualMode {
    /// Window-sized local crops plus an optional global view.
    Sliding,
    /// Only the image resized to the window.
    GlobalOnly,
    /// The whole image in one pass, with the positional table resized to
    /// its token grid.
    Interpolated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    None,
    SharedOne,
    PerPatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub resampler: ResamplerConfig,
    pub lm: LmConfig,
    /// Input resolution `(H, W)` the model is built for.
    pub resolution: (usize, usize),
    pub visual_mode: VisualMode,
    pub adapter_mode: AdapterMode,
    pub include_global: bool,
    /// Give the global crop an adapter of its own (per-patch mode) or the
    /// shared one (shared mode). Off by default.
    pub adapt_global: bool,
    pub max_patches: usize,
    pub policy: TrainabilityPolicy,
    pub seed: u64,
}

impl ModelConfig {
    /// Toy 2×2 + global configuration at 128×128.
    pub fn toy() -> Self {
        Self {
            encoder: EncoderConfig::toy(),
            resampler: ResamplerConfig::toy(),
            lm: LmConfig::toy(),
            resolution: (128, 128),
            visual_mode: VisualMode::Sliding,
            adapter_mode: AdapterMode::PerPatch,
            include_global: true,
            adapt_global: false,
            max_patches: MAX_PATCHES,
            policy: TrainabilityPolicy::default(),
            seed: 0,
        }
    }

    /// Local grid `(rows, cols)`; `(0, 0)` when no local crops are used.
    pub fn grid(&self) -> Result<(usize, usize)> {
        match self.visual_mode {
            VisualMode::Sliding => {
                let (h, w) = self.resolution;
                let win = self.encoder.window;
                let (rows, cols) = grid_dims(h.max(win.height), w.max(win.width), win)?;
                if rows * cols > self.max_patches {
                    return Err(Error::PatchCapacity {
                        patches: rows * cols,
                        limit: self.max_patches,
                    });
                }
                Ok((rows, cols))
            }
            VisualMode::GlobalOnly | VisualMode::Interpolated => Ok((0, 0)),
        }
    }

    pub fn n_locals(&self) -> Result<usize> {
        let (r, c) = self.grid()?;
        Ok(r * c)
    }

    /// Whether a global segment is produced.
    pub fn has_global(&self) -> bool {
        match self.visual_mode {
            VisualMode::Sliding => self.include_global,
            VisualMode::GlobalOnly => true,
            VisualMode::Interpolated => false,
        }
    }

    /// Number of crops passed through the encoder per image.
    pub fn n_crops(&self) -> Result<usize> {
        Ok(match self.visual_mode {
            VisualMode::Sliding => self.n_locals()? + usize::from(self.include_global),
            VisualMode::GlobalOnly | VisualMode::Interpolated => 1,
        })
    }

    /// Adapter sets allocated in the bank.
    pub fn n_adapters(&self) -> Result<usize> {
        let locals = self.n_locals()?;
        Ok(match self.adapter_mode {
            AdapterMode::None => 0,
            AdapterMode::SharedOne => 1,
            AdapterMode::PerPatch => {
                if locals == 0 {
                    usize::from(self.adapt_global)
                } else {
                    locals + usize::from(self.adapt_global && self.has_global())
                }
            }
        })
    }

    /// Token grid the encoder sees per pass.
    pub fn encoder_token_grid(&self) -> (usize, usize) {
        match self.visual_mode {
            VisualMode::Interpolated => {
                let ps = self.encoder.patch_size;
                (self.resolution.0.div_ceil(ps), self.resolution.1.div_ceil(ps))
            }
            _ => self.encoder.token_grid(),
        }
    }

    pub fn visual_tokens(&self) -> Result<usize> {
        Ok(self.n_crops()? * self.resampler.n_queries)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.resampler.validate()?;
        self.lm.validate()?;
        if self.resampler.d_model != self.encoder.d_model {
            return Err(Error::Validation(format!(
                "resampler width {} differs from encoder width {}",
                self.resampler.d_model, self.encoder.d_model
            )));
        }
        if self.resampler.d_out != self.lm.d_model {
            return Err(Error::Validation(format!(
                "resampler output width {} differs from lm width {}",
                self.resampler.d_out, self.lm.d_model
            )));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::Validation("resolution must be positive".into()));
        }
        if self.n_crops()? == 0 {
            return Err(Error::Validation("configuration produces no visual crops".into()));
        }
        Ok(())
    }
}

/// One image with one or more instructions about it.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub image: Arc<ImageTensor>,
    pub samples: Vec<InstructionSample>,
}

#[derive(Clone, Debug)]
pub struct MonkeyModel {
    cfg: ModelConfig,
    store: ParamStore,
    encoder: VisionEncoder,
    resampler: Resampler,
    lm: LanguageModel,
}

impl MonkeyModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let mut encoder = VisionEncoder::new(&mut store, cfg.encoder.clone(), cfg.n_adapters()?, &mut rng)?;
        if cfg.visual_mode == VisualMode::Interpolated {
            let (r, c) = cfg.encoder_token_grid();
            encoder.interpolate_pos_embed(&mut store, r, c)?;
        }
        let resampler = Resampler::new(&mut store, cfg.resampler.clone(), &mut rng)?;
        let lm = LanguageModel::new(&mut store, cfg.lm.clone(), &mut rng)?;
        encoder.set_trainability(&mut store, cfg.policy);
        Ok(Self {
            cfg,
            store,
            encoder,
            resampler,
            lm,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &VisionEncoder {
        &self.encoder
    }

    pub fn resampler(&self) -> &Resampler {
        &self.resampler
    }

    pub fn lm(&self) -> &LanguageModel {
        &self.lm
    }

    pub fn set_trainability(&mut self, policy: TrainabilityPolicy) {
        self.cfg.policy = policy;
        self.encoder.set_trainability(&mut self.store, policy);
    }

    /// Encodes and resamples `img` into ordered segments: locals row-major,
    /// then the global view.
    pub fn visual_segments(&self, g: &mut Graph, img: &ImageTensor) -> Result<Vec<Var>> {
        let cfg = &self.cfg;
        let win = cfg.encoder.window;
        let mut segments = Vec::new();
        match cfg.visual_mode {
            VisualMode::Sliding => {
                let grid = partition_with(
                    img,
                    win,
                    PartitionOptions {
                        max_patches: cfg.max_patches,
                    },
                )?;
                let expected = cfg.grid()?;
                if (grid.rows, grid.cols) != expected {
                    return Err(Error::Dimension {
                        op: "visual_segments",
                        lhs: vec![grid.rows, grid.cols],
                        rhs: vec![expected.0, expected.1],
                    });
                }
                for crop in &grid.locals {
                    let adapter = match cfg.adapter_mode {
                        AdapterMode::None => None,
                        AdapterMode::SharedOne => Some(0),
                        AdapterMode::PerPatch => Some(grid.adapter_index(crop.row, crop.col)),
                    };
                    let f = self.encoder.encode(g, &crop.image, adapter)?;
                    segments.push(self.resampler.forward(g, f)?);
                }
                if cfg.include_global {
                    let adapter = self.global_adapter(grid.len());
                    let f = self.encoder.encode(g, &grid.global, adapter)?;
                    segments.push(self.resampler.forward(g, f)?);
                }
            }
            VisualMode::GlobalOnly => {
                let view = fit(img, win.height, win.width)?;
                let f = self.encoder.encode(g, &view, self.global_adapter(0))?;
                segments.push(self.resampler.forward(g, f)?);
            }
            VisualMode::Interpolated => {
                let (h, w) = self.encoder.input_size();
                let view = fit(img, h, w)?;
                let adapter = match cfg.adapter_mode {
                    AdapterMode::None => None,
                    _ if self.encoder.n_adapters() > 0 => Some(0),
                    _ => None,
                };
                let f = self.encoder.encode(g, &view, adapter)?;
                segments.push(self.resampler.forward(g, f)?);
            }
        }
        Ok(segments)
    }

    fn global_adapter(&self, n_locals: usize) -> Option<usize> {
        if !self.cfg.adapt_global {
            return None;
        }
        match self.cfg.adapter_mode {
            AdapterMode::None => None,
            AdapterMode::SharedOne => Some(0),
            AdapterMode::PerPatch => Some(n_locals),
        }
    }

    /// Eager visual segments for inference.
    pub fn encode_image(&self, img: &ImageTensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::with_params(&self.store);
        let segs = self.visual_segments(&mut g, img)?;
        Ok(segs.into_iter().map(|s| g.tensor(s)).collect())
    }

    /// Mean target loss over `samples`, all conditioned on one image.
    pub fn loss(&self, g: &mut Graph, img: &ImageTensor, samples: &[InstructionSample]) -> Result<Var> {
        if samples.is_empty() {
            return Err(Error::Validation("no samples to score".into()));
        }
        let segs = self.visual_segments(g, img)?;
        let mut losses = Vec::with_capacity(samples.len());
        for s in samples {
            let (prompt, target) = format_instruction(s)?;
            let mut t = text::encode(&target);
            t.push(EOS);
            losses.push(self.lm.loss(g, &segs, &text::encode(&prompt), &t)?);
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = g.add(total, l)?;
        }
        Ok(if losses.len() == 1 {
            total
        } else {
            g.scale(total, 1.0 / losses.len() as f64)
        })
    }

    /// Scalar loss without building gradients into the store.
    pub fn eval_loss(&self, img: &ImageTensor, samples: &[InstructionSample]) -> Result<f64> {
        let mut g = Graph::with_params(&self.store);
        let l = self.loss(&mut g, img, samples)?;
        Ok(g.scalar(l))
    }

    /// Greedy answer text for the prompt of `sample` given precomputed segments.
    pub fn generate(&self, segments: &[Tensor], prompt: &str, max_new: usize) -> Result<String> {
        let toks = self
            .lm
            .decode_greedy(&self.store, segments, &text::encode(prompt), max_new)?;
        Ok(text::decode(&toks))
    }

    pub fn answer(&self, img: &ImageTensor, sample: &InstructionSample, max_new: usize) -> Result<String> {
        let segs = self.encode_image(img)?;
        let (prompt, _) = format_instruction(sample)?;
        self.generate(&segs, &prompt, max_new)
    }
}

/// Resizes `img` to `h × w` unless it already has that size.
fn fit(img: &ImageTensor, h: usize, w: usize) -> Result<ImageTensor> {
    if img.height() == h && img.width() == w {
        Ok(img.clone())
    } else {
        img.resize_bilinear(h, w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Mean loss of the batch before the update.
    pub loss: f64,
    /// Optimizer step counter after the update (1-based).
    pub step: u64,
    pub lr: f64,
}

/// AdamW plus a schedule, stepping one batch at a time.
#[derive(Clone, Debug)]
pub struct Trainer {
    optimizer: AdamW,
    schedule: LrSchedule,
}

impl Trainer {
    pub fn new(optim: AdamWConfig, schedule: LrSchedule) -> Self {
        Self {
            optimizer: AdamW::new(optim),
            schedule,
        }
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    /// One update over `batch`. Step `t` (1-based) uses `lr_at(t)`.
    pub fn train_step(&mut self, model: &mut MonkeyModel, batch: &[TrainExample]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let t = self.optimizer.t() + 1;
        let lr = self.schedule.lr_at(t)?;
        let n_samples: usize = batch.iter().map(|e| e.samples.len()).sum();
        model.store.zero_grad();
        let mut total = 0.0;
        for ex in batch {
            let grads = {
                let mut g = Graph::with_params(&model.store);
                let loss = model.loss(&mut g, &ex.image, &ex.samples)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite { op: "train_step" });
                }
                total += value * ex.samples.len() as f64;
                g.backward(loss)?
            };
            model
                .store
                .accumulate(&grads, ex.samples.len() as f64 / n_samples as f64)?;
        }
        self.optimizer.step(&mut model.store, lr)?;
        Ok(StepReport {
            loss: total / n_samples as f64,
            step: self.optimizer.t(),
            lr,
        })
    }
}
