//! Resolution / adapter / global-view sweep on the synthetic glyph task.

use std::sync::Arc;
use std::time::Instant;

use monkey_core::{
    AdamWConfig, AdapterMode, ImageTensor, InstructionSample, LrSchedule, ModelConfig, MonkeyModel, TrainExample,
    TrainabilityPolicy, Trainer, VisualMode,
};
use monkey_data::glyph::{GlyphSceneSpec, GlyphTaskParams, BANNER_QUESTION};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::count::{count_flops, count_params, ParamBreakdown};
use crate::throughput::measure_throughput;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    /// Scenes per step; every question of a scene is used.
    pub batch_images: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub min_lr: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_images: 16,
            peak_lr: 3e-3,
            warmup_steps: 30,
            min_lr: 3e-4,
            weight_decay: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn trainer(&self) -> monkey_core::Result<Trainer> {
        let optim = AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        };
        Ok(Trainer::new(
            optim,
            LrSchedule::new(self.peak_lr, self.warmup_steps, self.steps, self.min_lr)?,
        ))
    }
}

/// One arm of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Which generator records a sweep trains and evaluates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordKinds {
    /// Row-major transcription of the grid (the caption record).
    pub caption: bool,
    /// "What is the glyph at row r, col c?" records.
    pub cells: bool,
    /// The large-glyph question, when a scene has one.
    pub banner: bool,
}

impl RecordKinds {
    pub const ALL: RecordKinds = RecordKinds {
        caption: true,
        cells: true,
        banner: true,
    };
    pub const CAPTION: RecordKinds = RecordKinds {
        caption: true,
        cells: false,
        banner: false,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Caption,
    Cell,
    Banner,
}

pub const ARM_PATCHED: &str = "patched_2x2_global";
pub const ARM_NO_GLOBAL: &str = "patched_2x2_no_global";
pub const ARM_GLOBAL_ONLY: &str = "global_only";
pub const ARM_INTERPOLATED: &str = "interpolated";

/// The four reference arms at one pixel budget (128×128, 64-pixel window):
/// 2×2 crops with per-crop adapters and the global view, the same without
/// the global view, the global view alone, and one pass over the full image
/// with an interpolated positional table and an unfrozen encoder.
pub fn reference_sweep(base: &ModelConfig, train: &TrainConfig) -> Vec<RunConfig> {
    let arm = |name: &str, f: &dyn Fn(&mut ModelConfig)| {
        let mut model = base.clone();
        f(&mut model);
        RunConfig {
            name: name.to_string(),
            model,
            train: train.clone(),
        }
    };
    vec![
        arm(ARM_PATCHED, &|m| {
            m.visual_mode = VisualMode::Sliding;
            m.adapter_mode = AdapterMode::PerPatch;
            m.include_global = true;
        }),
        arm(ARM_NO_GLOBAL, &|m| {
            m.visual_mode = VisualMode::Sliding;
            m.adapter_mode = AdapterMode::PerPatch;
            m.include_global = false;
        }),
        arm(ARM_GLOBAL_ONLY, &|m| {
            m.visual_mode = VisualMode::GlobalOnly;
            m.adapter_mode = AdapterMode::None;
        }),
        arm(ARM_INTERPOLATED, &|m| {
            m.visual_mode = VisualMode::Interpolated;
            m.adapter_mode = AdapterMode::None;
            m.policy = TrainabilityPolicy {
                base_frozen: false,
                adapters_trainable: true,
            };
        }),
    ]
}

/// A rendered scene with the records selected for the sweep.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: GlyphSceneSpec,
    pub image: Arc<ImageTensor>,
    pub records: Vec<(RecordKind, InstructionSample)>,
}

impl Scene {
    pub fn new(spec: GlyphSceneSpec, kinds: RecordKinds) -> monkey_data::Result<Self> {
        let image = Arc::new(spec.render()?);
        let mut records = Vec::new();
        if kinds.caption {
            records.push((RecordKind::Caption, InstructionSample::caption(spec.caption())));
        }
        for (q, a) in spec.questions() {
            let kind = if q == BANNER_QUESTION {
                RecordKind::Banner
            } else {
                RecordKind::Cell
            };
            let keep = match kind {
                RecordKind::Banner => kinds.banner,
                _ => kinds.cells,
            };
            if keep {
                records.push((kind, InstructionSample::vqa(q, a)));
            }
        }
        Ok(Self { spec, image, records })
    }
}

/// Glyph parameters of the reference sweep: white unit-scale glyphs on
/// black, and in half the scenes a 15×21 grey glyph centred on the image
/// so that it straddles every crop seam.
pub fn sweep_task_params() -> GlyphTaskParams {
    GlyphTaskParams {
        colors: vec!["white".into()],
        banner_prob: 0.5,
        banner_scale: 3,
        ..GlyphTaskParams::default()
    }
}

/// Training scenes are drawn on the fly from `params` with `train_seed +
/// run seed`; evaluation uses a fixed held-out set.
#[derive(Clone, Debug)]
pub struct AblationData {
    pub params: GlyphTaskParams,
    pub kinds: RecordKinds,
    pub train_seed: u64,
    pub test: Vec<Scene>,
}

impl AblationData {
    pub fn new(
        params: GlyphTaskParams,
        kinds: RecordKinds,
        n_test: usize,
        test_seed: u64,
        train_seed: u64,
    ) -> monkey_data::Result<Self> {
        if !(kinds.caption || kinds.cells || kinds.banner) {
            return Err(monkey_data::DataError::Invalid("no record kinds selected".into()));
        }
        let test = monkey_data::generate_scenes(&params, n_test, test_seed)?
            .into_iter()
            .map(|s| Scene::new(s, kinds))
            .collect::<monkey_data::Result<_>>()?;
        Ok(Self {
            params,
            kinds,
            train_seed,
            test,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += usize::from(ok);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub caption: Accuracy,
    pub cells: Accuracy,
    pub banner: Accuracy,
    pub overall: Accuracy,
}

/// Exact-match accuracy of greedy answers over every test record.
pub fn evaluate(model: &MonkeyModel, scenes: &[Scene]) -> monkey_core::Result<EvalResult> {
    let mut out = EvalResult::default();
    for scene in scenes {
        let segs = model.encode_image(&scene.image)?;
        for (kind, rec) in &scene.records {
            let (prompt, target) = monkey_core::format_instruction(rec)?;
            let max_new = target.len() + 1;
            let ok = model.generate(&segs, &prompt, max_new)? == target;
            out.overall.add(ok);
            match kind {
                RecordKind::Caption => out.caption.add(ok),
                RecordKind::Cell => out.cells.add(ok),
                RecordKind::Banner => out.banner.add(ok),
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub final_loss: f64,
    pub eval: EvalResult,
    pub train_seconds: f64,
}

/// Trains a fresh model for `run` under `seed` and evaluates it.
pub fn train_and_eval(run: &RunConfig, data: &AblationData, seed: u64) -> anyhow::Result<SeedResult> {
    let mut cfg = run.model.clone();
    cfg.seed = seed;
    let mut model = MonkeyModel::new(cfg)?;
    let mut trainer = run.train.trainer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(data.train_seed.wrapping_add(seed));
    let start = Instant::now();
    let mut last = Vec::new();
    for step in 0..run.train.steps {
        let mut batch = Vec::with_capacity(run.train.batch_images);
        for _ in 0..run.train.batch_images {
            let scene = Scene::new(data.params.sample(&mut rng)?, data.kinds)?;
            let mut samples: Vec<InstructionSample> = scene.records.into_iter().map(|(_, r)| r).collect();
            samples.shuffle(&mut rng);
            batch.push(TrainExample {
                image: scene.image,
                samples,
            });
        }
        let report = trainer.train_step(&mut model, &batch)?;
        if step + 10 >= run.train.steps {
            last.push(report.loss);
        }
    }
    let train_seconds = start.elapsed().as_secs_f64();
    let eval = evaluate(&model, &data.test)?;
    Ok(SeedResult {
        seed,
        final_loss: last.iter().sum::<f64>() / last.len().max(1) as f64,
        eval,
        train_seconds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub resolution: (usize, usize),
    pub visual_mode: String,
    pub adapters: usize,
    pub include_global: bool,
    pub params: ParamBreakdown,
    pub flops: u64,
    pub throughput: Option<f64>,
    pub seeds: Vec<SeedResult>,
    pub mean_overall: f64,
    pub mean_caption: f64,
    pub mean_cells: f64,
    pub mean_banner: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

#[derive(Clone, Debug)]
pub struct AblationOptions {
    pub seeds: Vec<u64>,
    /// Images timed per arm; `None` skips throughput.
    pub throughput_images: Option<usize>,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            throughput_images: None,
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs every arm over every seed. A failing arm is recorded with its error
/// and the sweep continues.
pub fn run_ablation(sweep: &[RunConfig], data: &AblationData, opts: &AblationOptions) -> AblationReport {
    let mut report = AblationReport::default();
    for run in sweep {
        let cfg = &run.model;
        let mut row = AblationRow {
            name: run.name.clone(),
            resolution: cfg.resolution,
            visual_mode: format!("{:?}", cfg.visual_mode).to_lowercase(),
            adapters: cfg.n_adapters().unwrap_or(0),
            include_global: cfg.has_global(),
            params: count_params(cfg).unwrap_or_default(),
            flops: count_flops(cfg).map(|f| f.total).unwrap_or(0),
            throughput: None,
            seeds: Vec::new(),
            mean_overall: 0.0,
            mean_caption: 0.0,
            mean_cells: 0.0,
            mean_banner: 0.0,
            error: None,
        };
        let outcome = (|| -> anyhow::Result<()> {
            cfg.validate()?;
            if let Some(n) = opts.throughput_images {
                row.throughput = Some(measure_throughput(cfg, n)?.images_per_second);
            }
            for &seed in &opts.seeds {
                row.seeds.push(train_and_eval(run, data, seed)?);
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            row.error = Some(format!("{e:#}"));
        }
        row.mean_overall = mean(row.seeds.iter().map(|s| s.eval.overall.percent()));
        row.mean_caption = mean(row.seeds.iter().map(|s| s.eval.caption.percent()));
        row.mean_cells = mean(row.seeds.iter().map(|s| s.eval.cells.percent()));
        row.mean_banner = mean(row.seeds.iter().map(|s| s.eval.banner.percent()));
        report.rows.push(row);
    }
    report
}

impl AblationReport {
    /// Aligned text table.
    pub fn table(&self) -> String {
        let header = [
            "arm",
            "resolution",
            "mode",
            "lora",
            "global",
            "params",
            "flops",
            "img/s",
            "caption%",
            "cells%",
            "banner%",
            "all%",
        ];
        let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            lines.push(vec![
                r.name.clone(),
                format!("{}x{}", r.resolution.0, r.resolution.1),
                r.visual_mode.clone(),
                r.adapters.to_string(),
                if r.include_global { "on" } else { "off" }.to_string(),
                r.params.total.to_string(),
                r.flops.to_string(),
                r.throughput.map_or("-".into(), |t| format!("{t:.2}")),
                format!("{:.1}", r.mean_caption),
                format!("{:.1}", r.mean_cells),
                format!("{:.1}", r.mean_banner),
                match &r.error {
                    Some(_) => "error".to_string(),
                    None => format!("{:.1}", r.mean_overall),
                },
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// One JSON object per row.
    pub fn jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }

    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}
