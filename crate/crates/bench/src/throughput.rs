//! Wall-clock forward throughput.

use std::time::Instant;

use monkey_core::graph::Graph;
use monkey_core::text::{encode, CAPTION_PROMPT};
use monkey_core::{ImageTensor, ModelConfig, MonkeyModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const WARMUP_IMAGES: usize = 3;
pub const MIN_IMAGES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub n_images: usize,
    pub seconds: f64,
    pub images_per_second: f64,
    /// Sum of every next-token logit produced; identical across runs.
    pub checksum: f64,
}

/// Forward pass over one image and the caption prompt; returns the sum of
/// the final-position logits.
pub fn forward_once(model: &MonkeyModel, img: &ImageTensor) -> monkey_core::Result<f64> {
    let mut g = Graph::with_params(model.store());
    let segs = model.visual_segments(&mut g, img)?;
    let x = model.lm().assemble(&mut g, &segs, &encode(CAPTION_PROMPT))?;
    let len = g.dims(x).0;
    let h = model.lm().hidden(&mut g, x)?;
    let logits = model.lm().logits(&mut g, h, len - 1, 1)?;
    Ok(g.value(logits).iter().sum())
}

/// Times `n_images` forward passes on seeded noise images after discarding
/// [`WARMUP_IMAGES`] warmup passes.
pub fn measure_throughput(cfg: &ModelConfig, n_images: usize) -> anyhow::Result<ThroughputReport> {
    anyhow::ensure!(
        n_images >= MIN_IMAGES,
        "throughput needs at least {MIN_IMAGES} images, got {n_images}"
    );
    let model = MonkeyModel::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = cfg.resolution;
    let images: Vec<ImageTensor> = (0..n_images + WARMUP_IMAGES)
        .map(|_| ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.random()).collect()))
        .collect::<monkey_core::Result<_>>()?;
    for img in &images[..WARMUP_IMAGES] {
        forward_once(&model, img)?;
    }
    let start = Instant::now();
    let mut checksum = 0.0;
    for img in &images[WARMUP_IMAGES..] {
        checksum += forward_once(&model, img)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(ThroughputReport {
        n_images,
        seconds,
        images_per_second: n_images as f64 / seconds.max(f64::MIN_POSITIVE),
        checksum,
    })
}
