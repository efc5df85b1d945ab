use monkey_bench::ablation::{
    reference_sweep, run_ablation, sweep_task_params, AblationData, AblationOptions, RecordKinds, TrainConfig,
    ARM_GLOBAL_ONLY, ARM_PATCHED,
};
use monkey_bench::throughput::measure_throughput;
use monkey_core::{AdapterMode, ModelConfig};

/// Best rate over a few interleaved attempts, to damp scheduler noise.
fn best_rates(cfgs: &[ModelConfig], n: usize) -> Vec<f64> {
    let mut best = vec![0.0f64; cfgs.len()];
    for _ in 0..3 {
        for (b, c) in best.iter_mut().zip(cfgs) {
            *b = b.max(measure_throughput(c, n).unwrap().images_per_second);
        }
    }
    best
}

#[test]
fn one_or_four_adapters_run_at_similar_speed() {
    let four = ModelConfig::toy();
    let one = ModelConfig {
        adapter_mode: AdapterMode::SharedOne,
        ..four.clone()
    };
    let r = best_rates(&[one, four], 20);
    let gap = (r[0] - r[1]).abs() / r[0].max(r[1]);
    assert!(gap < 0.15, "1 adapter {:.1}/s vs 4 adapters {:.1}/s", r[0], r[1]);
}

#[test]
fn six_crops_are_slower_than_four() {
    let four = ModelConfig::toy();
    let six = ModelConfig {
        resolution: (128, 192),
        ..four.clone()
    };
    assert_eq!(six.n_locals().unwrap(), 6);
    let r = best_rates(&[four, six], 10);
    assert!(r[1] < r[0], "{r:?}");
}

#[test]
fn throughput_outputs_are_deterministic() {
    let cfg = ModelConfig::toy();
    let a = measure_throughput(&cfg, 10).unwrap();
    let b = measure_throughput(&cfg, 10).unwrap();
    assert_eq!(a.checksum.to_bits(), b.checksum.to_bits());
    assert!(a.checksum.is_finite());
    assert!(measure_throughput(&cfg, 9).is_err());
}

fn short_train() -> TrainConfig {
    TrainConfig {
        steps: 4,
        batch_images: 2,
        warmup_steps: 1,
        ..TrainConfig::default()
    }
}

fn small_data() -> AblationData {
    AblationData::new(sweep_task_params(), RecordKinds::ALL, 3, 100, 1).unwrap()
}

#[test]
fn empty_sweep_gives_empty_report() {
    let r = run_ablation(&[], &small_data(), &AblationOptions::default());
    assert!(r.rows.is_empty());
    assert_eq!(r.table().lines().count(), 1);
    assert_eq!(r.jsonl(), "");
}

#[test]
fn sweep_rows_are_reproducible_and_failures_isolated() {
    let mut sweep = reference_sweep(&ModelConfig::toy(), &short_train());
    sweep.retain(|r| r.name == ARM_PATCHED || r.name == ARM_GLOBAL_ONLY);
    let mut broken = sweep[0].clone();
    broken.name = "too_many_patches".into();
    broken.model.resolution = (192, 192);
    sweep.insert(1, broken);

    let opts = AblationOptions {
        seeds: vec![0, 1],
        throughput_images: None,
    };
    let data = small_data();
    let a = run_ablation(&sweep, &data, &opts);
    let b = run_ablation(&sweep, &data, &opts);
    assert_eq!(a.rows.len(), 3);
    assert!(a.rows[1].error.as_deref().unwrap().contains("patches"));
    assert!(a.rows[1].seeds.is_empty());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.error, y.error);
        assert_eq!(x.seeds.len(), y.seeds.len());
        for (sx, sy) in x.seeds.iter().zip(&y.seeds) {
            assert_eq!(sx.final_loss.to_bits(), sy.final_loss.to_bits());
            assert_eq!(sx.eval, sy.eval);
        }
    }
    let patched = a.row(ARM_PATCHED).unwrap();
    assert_eq!((patched.adapters, patched.include_global), (4, true));
    assert!(patched.flops > a.row(ARM_GLOBAL_ONLY).unwrap().flops);
    let table = a.table();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().nth(2).unwrap().ends_with("error"));
    assert_eq!(a.jsonl().lines().count(), 3);
}

#[test]
fn reference_arms_share_one_pixel_budget() {
    let sweep = reference_sweep(&ModelConfig::toy(), &TrainConfig::default());
    assert_eq!(sweep.len(), 4);
    for r in &sweep {
        assert_eq!(r.model.resolution, (128, 128), "{}", r.name);
        r.model.validate().unwrap();
    }
}
