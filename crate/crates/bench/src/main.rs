use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use monkey_bench::ablation::{
    reference_sweep, run_ablation, sweep_task_params, AblationData, AblationOptions, RecordKinds,
};
use monkey_bench::config::Settings;
use monkey_bench::count::{count_flops_with_text, count_params, reference_config};
use monkey_bench::throughput::measure_throughput;
use monkey_core::dataset::{load_records, save_records, DatasetRecord};
use monkey_core::{checkpoint, ImageTensor, ModelConfig, MonkeyModel, TrainExample};
use monkey_data::caption::{fixture_corpus, run_corpus, AnnotatorPorts, PipelineParams};
use monkey_data::mixer::load_corpora;
use monkey_data::{plan_counts, reference_specs, sample_mixture, synth_dataset, MixturePlan, Scale};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CHECKPOINT: &str = "model.ckpt";

#[derive(Parser)]
#[command(
    name = "monkey",
    version,
    about = "Toy patch-based multimodal model: training, data tools and accounting"
)]
struct Cli {
    /// Flat TOML settings file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` setting.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset file and write a checkpoint.
    Train {
        /// `dataset.jsonl` as written by `synth-data`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Exact-match accuracy of a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the resolution / adapter / global-view sweep.
    Ablate(AblateArgs),
    /// Run the caption pipeline with the built-in annotators.
    GenCaptions(CaptionArgs),
    /// Sample a multi-task mixture.
    MixData(MixArgs),
    /// Write a glyph-scene dataset.
    SynthData {
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Parameter breakdown as JSON.
    CountParams {
        /// Use the full-size configuration at the configured resolution.
        #[arg(long)]
        reference: bool,
    },
    /// Forward FLOP breakdown as JSON.
    CountFlops {
        #[arg(long)]
        reference: bool,
        /// Text tokens after the visual segments.
        #[arg(long, default_value_t = 0)]
        text_tokens: usize,
    },
    /// Forward-only images per second.
    Throughput {
        #[arg(long, default_value_t = 20)]
        images: usize,
    },
    /// Print the effective settings as TOML.
    ShowConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kinds {
    Caption,
    All,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 50)]
    test_scenes: usize,
    #[arg(long, value_enum, default_value_t = Kinds::Caption)]
    kinds: Kinds,
    /// Also time each arm over this many images.
    #[arg(long)]
    throughput: Option<usize>,
}

#[derive(Args)]
struct CaptionArgs {
    /// JSON lines of `{id, image, original_caption}`.
    #[arg(long, conflicts_with = "fixtures")]
    input: Option<PathBuf>,
    /// Generate this many synthetic records under `<out>/fixtures` and use them.
    #[arg(long)]
    fixtures: Option<usize>,
    /// Stop after this many new records.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    itm_threshold: f64,
    #[arg(long, default_value_t = 0.88)]
    seg_iou_threshold: f64,
}

#[derive(Args)]
struct MixArgs {
    /// Plan file; without it the reference table is used.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Corpus directory for the reference table (`<name>.jsonl`).
    #[arg(long, default_value = "corpora")]
    corpora: PathBuf,
    /// Overrides the plan scale, e.g. `1/1000`.
    #[arg(long)]
    scale: Option<Scale>,
    /// Only print the per-dataset counts.
    #[arg(long)]
    dry_run: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(s) = cli.seed {
        settings.seed = s;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Train { data } => train(&settings, &data, out),
        Command::Eval { data, checkpoint } => eval(&settings, &data, &checkpoint, out),
        Command::Ablate(a) => ablate(&settings, &a, out),
        Command::GenCaptions(a) => gen_captions(&a, out),
        Command::MixData(a) => mix_data(&settings, &a, out),
        Command::SynthData { n } => {
            let params = monkey_data::GlyphTaskParams {
                height: settings.height,
                width: settings.width,
                ..sweep_task_params()
            };
            let recs = synth_dataset(&params, n, settings.seed, out)?;
            println!("wrote {n} scenes and {} records to {}", recs.len(), out.display());
            Ok(())
        }
        Command::CountParams { reference } => {
            let cfg = model_for(&settings, reference)?;
            println!("{}", serde_json::to_string_pretty(&count_params(&cfg)?)?);
            Ok(())
        }
        Command::CountFlops { reference, text_tokens } => {
            let cfg = model_for(&settings, reference)?;
            let f = count_flops_with_text(&cfg, text_tokens)?;
            println!("{}", serde_json::to_string_pretty(&f)?);
            Ok(())
        }
        Command::Throughput { images } => {
            let r = measure_throughput(&settings.model()?, images)?;
            println!("{}", serde_json::to_string(&r)?);
            Ok(())
        }
        Command::ShowConfig => {
            print!("{}", settings.to_toml());
            Ok(())
        }
    }
}

fn model_for(settings: &Settings, reference: bool) -> Result<ModelConfig> {
    if reference {
        let mut cfg = reference_config((settings.height, settings.width));
        cfg.adapter_mode = settings.adapter_mode;
        cfg.include_global = settings.include_global;
        cfg.visual_mode = settings.visual_mode;
        cfg.validate()?;
        Ok(cfg)
    } else {
        settings.model()
    }
}

/// Records grouped by image, in first-appearance order.
fn load_examples(data: &Path) -> Result<Vec<(Arc<ImageTensor>, Vec<DatasetRecord>)>> {
    let records = load_records(data).with_context(|| format!("reading {}", data.display()))?;
    let dir = data.parent().unwrap_or(Path::new("."));
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<DatasetRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(&r.image) {
            order.push(r.image.clone());
        }
        groups.entry(r.image.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let recs = groups.remove(&k).expect("grouped");
            let img = ImageTensor::load(&recs[0].image_path(dir)).with_context(|| format!("loading {k}"))?;
            Ok((Arc::new(img), recs))
        })
        .collect()
}

fn train(settings: &Settings, data: &Path, out: &Path) -> Result<()> {
    let examples = load_examples(data)?;
    if examples.is_empty() {
        bail!("{} has no records", data.display());
    }
    let tc = settings.train();
    let mut model = MonkeyModel::new(settings.model()?)?;
    let mut trainer = tc.trainer()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    std::fs::create_dir_all(out)?;
    let mut log = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    let mut order: Vec<usize> = Vec::new();
    for _ in 0..tc.steps {
        let mut batch = Vec::with_capacity(tc.batch_images);
        for _ in 0..tc.batch_images {
            if order.is_empty() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng);
            }
            let (img, recs) = &examples[order.pop().expect("refilled")];
            batch.push(TrainExample {
                image: img.clone(),
                samples: recs.iter().map(DatasetRecord::sample).collect(),
            });
        }
        let r = trainer.train_step(&mut model, &batch)?;
        writeln!(
            log,
            "{}",
            serde_json::json!({"step": r.step, "loss": r.loss, "lr": r.lr})
        )?;
        if r.step % 10 == 0 || r.step == tc.steps {
            println!("step {:>5}  loss {:.4}  lr {:.2e}", r.step, r.loss, r.lr);
        }
    }
    log.flush()?;
    checkpoint::save(model.store(), "", &out.join(CHECKPOINT))?;
    std::fs::write(out.join("settings.toml"), settings.to_toml())?;
    println!("checkpoint written to {}", out.join(CHECKPOINT).display());
    Ok(())
}

fn eval(settings: &Settings, data: &Path, ckpt: &Path, out: &Path) -> Result<()> {
    let mut model = MonkeyModel::new(settings.model()?)?;
    checkpoint::load(model.store_mut(), ckpt)?;
    let (mut correct, mut total) = (0usize, 0usize);
    let mut per_task: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (img, recs) in load_examples(data)? {
        let segs = model.encode_image(&img)?;
        for r in recs {
            let (prompt, target) = monkey_core::format_instruction(&r.sample())?;
            let ok = model.generate(&segs, &prompt, target.len() + 1)? == target;
            let e = per_task.entry(format!("{:?}", r.task).to_lowercase()).or_default();
            e.0 += usize::from(ok);
            e.1 += 1;
            correct += usize::from(ok);
            total += 1;
        }
    }
    let pct = |c: usize, t: usize| if t == 0 { 0.0 } else { 100.0 * c as f64 / t as f64 };
    for (task, (c, t)) in &per_task {
        println!("{task:>16}  {c}/{t}  {:.1}%", pct(*c, *t));
    }
    println!("{:>16}  {correct}/{total}  {:.1}%", "all", pct(correct, total));
    std::fs::create_dir_all(out)?;
    let summary = serde_json::json!({"correct": correct, "total": total, "per_task": per_task});
    std::fs::write(out.join("eval.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn ablate(settings: &Settings, a: &AblateArgs, out: &Path) -> Result<()> {
    let kinds = match a.kinds {
        Kinds::Caption => RecordKinds::CAPTION,
        Kinds::All => RecordKinds::ALL,
    };
    let data = AblationData::new(
        sweep_task_params(),
        kinds,
        a.test_scenes,
        settings.seed + 1000,
        settings.seed + 7,
    )?;
    let sweep = reference_sweep(&settings.model()?, &settings.train());
    let opts = AblationOptions {
        seeds: a.seeds.clone(),
        throughput_images: a.throughput,
    };
    let report = run_ablation(&sweep, &data, &opts);
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("ablation.txt"), report.table())?;
    std::fs::write(out.join("ablation.jsonl"), report.jsonl())?;
    print!("{}", report.table());
    Ok(())
}

fn gen_captions(a: &CaptionArgs, out: &Path) -> Result<()> {
    let input = match (&a.input, a.fixtures) {
        (Some(p), _) => p.clone(),
        (None, Some(n)) => {
            let dir = out.join("fixtures");
            fixture_corpus(&dir, n, 0)?;
            dir.join("records.jsonl")
        }
        (None, None) => bail!("pass --input or --fixtures"),
    };
    let params = PipelineParams {
        itm_threshold: a.itm_threshold,
        seg_iou_threshold: a.seg_iou_threshold,
    };
    let s = run_corpus(&input, out, &AnnotatorPorts::stubs(), &params, a.limit)?;
    println!(
        "processed {}  failed {}  skipped {}  remaining {}",
        s.processed, s.failed, s.skipped, s.remaining
    );
    Ok(())
}

fn mix_data(settings: &Settings, a: &MixArgs, out: &Path) -> Result<()> {
    let mut plan = match &a.plan {
        Some(p) => MixturePlan::load(p)?,
        None => MixturePlan {
            specs: reference_specs(&a.corpora),
            scale: Scale::new(1, 1000)?,
            seed: settings.seed,
        },
    };
    if let Some(s) = a.scale {
        plan.scale = s;
    }
    let counts = plan_counts(&plan);
    for (name, c) in &counts.per_dataset {
        println!("{name:>18}  {c}");
    }
    println!("{:>18}  {}", "total", counts.total);
    if a.dry_run {
        return Ok(());
    }
    let mix = sample_mixture(&plan, &load_corpora(&plan)?)?;
    for w in &mix.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(out)?;
    save_records(&out.join("mixture.jsonl"), &mix.records)?;
    std::fs::write(out.join("plan.toml"), plan.to_toml())?;
    println!(
        "wrote {} records to {}",
        mix.records.len(),
        out.join("mixture.jsonl").display()
    );
    Ok(())
}
