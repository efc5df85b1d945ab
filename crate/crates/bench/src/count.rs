//! Analytic parameter and FLOP accounting.
//!
//! One multiply-add counts as 2 FLOPs. Counted: patch embedding, every
//! projection, attention scores and the weighted sum of values, MLPs, LoRA
//! branches, the resampler and the language model including its output head.
//! Layer norms, softmax and activations are not counted.

use monkey_core::{
    adapter_param_count, AdapterMode, EncoderConfig, LmConfig, ModelConfig, ResamplerConfig, VisualMode,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub encoder_base: u64,
    pub adapters: u64,
    pub resampler: u64,
    pub lm: u64,
    pub total: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub patch_embed: u64,
    pub encoder: u64,
    pub lora: u64,
    pub resampler: u64,
    pub lm: u64,
    pub total: u64,
}

/// Full-size configuration at `resolution`: ViT-bigG encoder with a 448 px
/// window and ranks 16/32, 256 resampler queries, and a 7B-class decoder
/// (32 layers, width 4096, Qwen vocabulary). The decoder's gated MLP with
/// hidden size 11008 is modelled as a plain MLP of width 16512, which has
/// the same matrix sizes in total.
pub fn reference_config(resolution: (usize, usize)) -> ModelConfig {
    let encoder = EncoderConfig::reference();
    let lm = LmConfig {
        vocab: 151_936,
        depth: 32,
        d_model: 4096,
        n_heads: 32,
        d_mlp: 16_512,
        max_seq: 2048,
        separator: true,
    };
    ModelConfig {
        resampler: ResamplerConfig {
            n_queries: 256,
            d_model: encoder.d_model,
            n_heads: 16,
            depth: 1,
            d_out: lm.d_model,
        },
        encoder,
        lm,
        resolution,
        ..ModelConfig::toy()
    }
}

fn linear(d_in: usize, d_out: usize) -> u64 {
    (d_in * d_out + d_out) as u64
}

pub fn count_params(cfg: &ModelConfig) -> monkey_core::Result<ParamBreakdown> {
    let e = &cfg.encoder;
    let (pr, pc) = cfg.encoder_token_grid();
    let d = e.d_model;
    let enc_layer = 4 * d as u64 + 4 * linear(d, d) + linear(d, e.d_mlp) + linear(e.d_mlp, d);
    let encoder_base = linear(e.patch_dim(), d) + (pr * pc * d) as u64 + e.depth as u64 * enc_layer + 2 * d as u64;
    let adapters = adapter_param_count(e, cfg.n_adapters()?) as u64;

    let r = &cfg.resampler;
    let rd = r.d_model;
    let resampler = (r.n_queries * rd) as u64
        + r.depth as u64 * (4 * rd as u64 + 4 * linear(rd, rd))
        + 2 * rd as u64
        + if r.d_out != rd { linear(rd, r.d_out) } else { 0 };

    let l = &cfg.lm;
    let ld = l.d_model;
    let lm_layer = 4 * ld as u64 + 4 * linear(ld, ld) + linear(ld, l.d_mlp) + linear(l.d_mlp, ld);
    let lm = ((l.vocab + l.max_seq + l.separator_len()) * ld) as u64
        + l.depth as u64 * lm_layer
        + 2 * ld as u64
        + linear(ld, l.vocab);

    Ok(ParamBreakdown {
        encoder_base,
        adapters,
        resampler,
        lm,
        total: encoder_base + adapters + resampler + lm,
    })
}

/// `2·m·k·n`.
pub fn matmul_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * (m as u64) * (k as u64) * (n as u64)
}

/// FLOPs of one forward pass over an image with no text tokens.
pub fn count_flops(cfg: &ModelConfig) -> monkey_core::Result<FlopBreakdown> {
    count_flops_with_text(cfg, 0)
}

/// FLOPs of one forward pass over an image followed by `text_tokens` text
/// tokens, with logits computed at every position.
pub fn count_flops_with_text(cfg: &ModelConfig, text_tokens: usize) -> monkey_core::Result<FlopBreakdown> {
    let e = &cfg.encoder;
    let (pr, pc) = cfg.encoder_token_grid();
    let n = pr * pc;
    let d = e.d_model;
    let crops = cfg.n_crops()?;
    let locals = cfg.n_locals()?;

    let patch_embed = crops as u64 * matmul_flops(n, e.patch_dim(), d);
    let layer = 4 * matmul_flops(n, d, d)
        + 2 * matmul_flops(n, d, n)
        + matmul_flops(n, d, e.d_mlp)
        + matmul_flops(n, e.d_mlp, d);
    let encoder = crops as u64 * e.depth as u64 * layer;

    let adapted_crops = match cfg.adapter_mode {
        AdapterMode::None => 0,
        _ => {
            let global = cfg.adapt_global && cfg.has_global() && cfg.n_adapters()? > 0;
            match cfg.visual_mode {
                VisualMode::Sliding => locals + usize::from(global),
                _ => usize::from(cfg.n_adapters()? > 0 && (global || cfg.visual_mode == VisualMode::Interpolated)),
            }
        }
    };
    let lora_layer: u64 = e
        .adapted_matrices()
        .iter()
        .map(|&(d_in, d_out, r)| 2 * (r * (d_in + d_out) * n) as u64)
        .sum();
    let lora = adapted_crops as u64 * e.depth as u64 * lora_layer;

    let r = &cfg.resampler;
    let (q, rd) = (r.n_queries, r.d_model);
    let block = 2 * matmul_flops(q, rd, rd) + 2 * matmul_flops(n, rd, rd) + 2 * matmul_flops(q, rd, n);
    let proj = if r.d_out != rd { matmul_flops(q, rd, r.d_out) } else { 0 };
    let resampler = crops as u64 * (r.depth as u64 * block + proj);

    let l = &cfg.lm;
    let len = l.sequence_len(crops * q, text_tokens);
    let ld = l.d_model;
    let lm_layer = 4 * matmul_flops(len, ld, ld)
        + 2 * matmul_flops(len, ld, len)
        + matmul_flops(len, ld, l.d_mlp)
        + matmul_flops(len, l.d_mlp, ld);
    let lm = l.depth as u64 * lm_layer + matmul_flops(len, ld, l.vocab);

    Ok(FlopBreakdown {
        patch_embed,
        encoder,
        lora,
        resampler,
        lm,
        total: patch_embed + encoder + lora + resampler + lm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_definition() {
        assert_eq!(matmul_flops(3, 4, 5), 120);
    }
}
