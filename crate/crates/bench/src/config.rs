//! Flat key/value run configuration read from a TOML file. Every key is
//! optional; unset keys take the toy defaults below. `reference_value`
//! lists the full-size setting for each key.

use std::path::Path;

use monkey_core::{AdapterMode, ModelConfig, TrainabilityPolicy, VisualMode, Window};
use serde::{Deserialize, Serialize};

use crate::ablation::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub patch_size: usize,
    pub visual_mode: VisualMode,
    pub adapter_mode: AdapterMode,
    pub include_global: bool,
    pub adapt_global: bool,
    pub encoder_depth: usize,
    pub encoder_width: usize,
    pub encoder_heads: usize,
    pub encoder_mlp: usize,
    pub lora_attn_rank: usize,
    pub lora_mlp_rank: usize,
    pub freeze_encoder: bool,
    pub resampler_queries: usize,
    pub resampler_heads: usize,
    pub resampler_depth: usize,
    pub lm_depth: usize,
    pub lm_width: usize,
    pub lm_heads: usize,
    pub lm_mlp: usize,
    pub max_seq: usize,
    pub steps: u64,
    pub batch_images: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self::from_parts(&ModelConfig::toy(), &TrainConfig::default())
    }
}

/// `(key, reference value)` for every key, in file order.
pub const REFERENCE_VALUES: &[(&str, &str)] = &[
    ("height", "896"),
    ("width", "896"),
    ("window", "448"),
    ("patch_size", "14"),
    ("visual_mode", "sliding"),
    ("adapter_mode", "per_patch"),
    ("include_global", "true"),
    ("adapt_global", "false"),
    ("encoder_depth", "48"),
    ("encoder_width", "1664"),
    ("encoder_heads", "16"),
    ("encoder_mlp", "8192"),
    ("lora_attn_rank", "16"),
    ("lora_mlp_rank", "32"),
    ("freeze_encoder", "true"),
    ("resampler_queries", "256"),
    ("resampler_heads", "16"),
    ("resampler_depth", "1"),
    ("lm_depth", "32"),
    ("lm_width", "4096"),
    ("lm_heads", "32"),
    ("lm_mlp", "16512"),
    ("max_seq", "2048"),
    ("steps", "1 epoch"),
    ("batch_images", "1024"),
    ("peak_lr", "1e-5"),
    ("warmup_steps", "100"),
    ("min_lr", "0"),
    ("weight_decay", "0.1"),
    ("seed", "-"),
];

impl Settings {
    pub fn from_parts(m: &ModelConfig, t: &TrainConfig) -> Self {
        Self {
            height: m.resolution.0,
            width: m.resolution.1,
            window: m.encoder.window.height,
            patch_size: m.encoder.patch_size,
            visual_mode: m.visual_mode,
            adapter_mode: m.adapter_mode,
            include_global: m.include_global,
            adapt_global: m.adapt_global,
            encoder_depth: m.encoder.depth,
            encoder_width: m.encoder.d_model,
            encoder_heads: m.encoder.n_heads,
            encoder_mlp: m.encoder.d_mlp,
            lora_attn_rank: m.encoder.attn_rank,
            lora_mlp_rank: m.encoder.mlp_rank,
            freeze_encoder: m.policy.base_frozen,
            resampler_queries: m.resampler.n_queries,
            resampler_heads: m.resampler.n_heads,
            resampler_depth: m.resampler.depth,
            lm_depth: m.lm.depth,
            lm_width: m.lm.d_model,
            lm_heads: m.lm.n_heads,
            lm_mlp: m.lm.d_mlp,
            max_seq: m.lm.max_seq,
            steps: t.steps,
            batch_images: t.batch_images,
            peak_lr: t.peak_lr,
            warmup_steps: t.warmup_steps,
            min_lr: t.min_lr,
            weight_decay: t.weight_decay,
            seed: m.seed,
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn model(&self) -> anyhow::Result<ModelConfig> {
        let mut m = ModelConfig::toy();
        m.resolution = (self.height, self.width);
        m.encoder.window = Window::square(self.window);
        m.encoder.patch_size = self.patch_size;
        m.visual_mode = self.visual_mode;
        m.adapter_mode = self.adapter_mode;
        m.include_global = self.include_global;
        m.adapt_global = self.adapt_global;
        m.encoder.depth = self.encoder_depth;
        m.encoder.d_model = self.encoder_width;
        m.encoder.n_heads = self.encoder_heads;
        m.encoder.d_mlp = self.encoder_mlp;
        m.encoder.attn_rank = self.lora_attn_rank;
        m.encoder.mlp_rank = self.lora_mlp_rank;
        m.policy = TrainabilityPolicy {
            base_frozen: self.freeze_encoder,
            adapters_trainable: true,
        };
        m.resampler.n_queries = self.resampler_queries;
        m.resampler.n_heads = self.resampler_heads;
        m.resampler.depth = self.resampler_depth;
        m.resampler.d_model = self.encoder_width;
        m.resampler.d_out = self.lm_width;
        m.lm.depth = self.lm_depth;
        m.lm.d_model = self.lm_width;
        m.lm.n_heads = self.lm_heads;
        m.lm.d_mlp = self.lm_mlp;
        m.lm.max_seq = self.max_seq;
        m.seed = self.seed;
        m.validate()?;
        Ok(m)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_images: self.batch_images,
            peak_lr: self.peak_lr,
            warmup_steps: self.warmup_steps,
            min_lr: self.min_lr,
            weight_decay: self.weight_decay,
        }
    }

    /// The settings as a commented TOML file.
    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("settings serialize");
        body.lines()
            .map(|line| {
                let key = line.split(" = ").next().unwrap_or("");
                match REFERENCE_VALUES.iter().find(|(k, _)| *k == key) {
                    Some((_, r)) => format!("{line}  # reference: {r}\n"),
                    None => format!("{line}\n"),
                }
            })
            .collect()
    }
}
