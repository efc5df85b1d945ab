//! Runs the reference sweep with a chosen step count and seed list.
//!
//! `cargo run --release -p monkey-bench --example tune -- 300 0,1,2`

use monkey_bench::ablation::{
    reference_sweep, run_ablation, sweep_task_params, AblationData, AblationOptions, RecordKinds, TrainConfig,
};
use monkey_core::ModelConfig;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).map_or(Ok(300), |s| s.parse())?;
    let seeds: Vec<u64> = match args.get(2) {
        Some(s) => s.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None => vec![0, 1, 2],
    };
    let data = AblationData::new(sweep_task_params(), RecordKinds::CAPTION, 50, 1000, 7)?;
    let train = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let sweep = reference_sweep(&ModelConfig::toy(), &train);
    let report = run_ablation(
        &sweep,
        &data,
        &AblationOptions {
            seeds,
            throughput_images: None,
        },
    );
    print!("{}", report.table());
    for row in &report.rows {
        for s in &row.seeds {
            println!(
                "{} seed {} loss {:.3} {:.1}s caption {:.1}",
                row.name,
                s.seed,
                s.final_loss,
                s.train_seconds,
                s.eval.caption.percent()
            );
        }
        if let Some(e) = &row.error {
            println!("{}: {e}", row.name);
        }
    }
    Ok(())
}
