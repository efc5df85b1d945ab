use monkey_bench::count::{count_flops, count_params, matmul_flops, reference_config};
use monkey_core::encoder::{ADAPTER_PREFIX, BASE_PREFIX};
use monkey_core::{adapter_param_count, AdapterMode, ModelConfig, MonkeyModel, VisualMode};

fn enumerated(cfg: &ModelConfig) -> [u64; 4] {
    let m = MonkeyModel::new(cfg.clone()).unwrap();
    let s = m.store();
    let total: usize = s.iter().map(|(_, _, t)| t.numel()).sum();
    let parts = [
        BASE_PREFIX,
        ADAPTER_PREFIX,
        monkey_core::resampler::PREFIX,
        monkey_core::lm::PREFIX,
    ]
    .map(|p| s.numel_with_prefix(p) as u64);
    assert_eq!(
        parts.iter().sum::<u64>(),
        total as u64,
        "every tensor lives under a known prefix"
    );
    parts
}

fn toy_variants() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for adapter_mode in [AdapterMode::None, AdapterMode::SharedOne, AdapterMode::PerPatch] {
        for visual_mode in [VisualMode::Sliding, VisualMode::GlobalOnly, VisualMode::Interpolated] {
            for (include_global, adapt_global) in [(true, false), (true, true), (false, false)] {
                let mut c = ModelConfig::toy();
                c.adapter_mode = adapter_mode;
                c.visual_mode = visual_mode;
                c.include_global = include_global;
                c.adapt_global = adapt_global;
                out.push(c);
            }
        }
    }
    let mut projected = ModelConfig::toy();
    projected.lm.d_model = 48;
    projected.lm.n_heads = 4;
    projected.resampler.d_out = 48;
    projected.resolution = (128, 192);
    out.push(projected);
    out
}

#[test]
fn params_match_an_exhaustive_tensor_walk() {
    for cfg in toy_variants() {
        let b = count_params(&cfg).unwrap();
        let [base, adapters, resampler, lm] = enumerated(&cfg);
        assert_eq!(
            (b.encoder_base, b.adapters, b.resampler, b.lm),
            (base, adapters, resampler, lm),
            "{cfg:?}"
        );
        assert_eq!(b.total, base + adapters + resampler + lm);
        assert_eq!(
            b.adapters,
            adapter_param_count(&cfg.encoder, cfg.n_adapters().unwrap()) as u64
        );
    }
}

#[test]
fn no_adapters_means_zero_adapter_params_and_flops() {
    let mut cfg = ModelConfig::toy();
    cfg.adapter_mode = AdapterMode::None;
    assert_eq!(count_params(&cfg).unwrap().adapters, 0);
    assert_eq!(count_flops(&cfg).unwrap().lora, 0);
}

#[test]
fn adapter_params_are_linear_in_count() {
    let mut cfg = ModelConfig::toy();
    cfg.adapter_mode = AdapterMode::SharedOne;
    let one = count_params(&cfg).unwrap().adapters;
    for (res, n) in [((128, 128), 4), ((128, 192), 6), ((64, 128), 2)] {
        cfg.adapter_mode = AdapterMode::PerPatch;
        cfg.resolution = res;
        assert_eq!(count_params(&cfg).unwrap().adapters, n * one);
    }
}

#[test]
fn zero_depth_everywhere_counts_only_stems() {
    let mut cfg = ModelConfig::toy();
    cfg.encoder.depth = 0;
    cfg.resampler.depth = 0;
    cfg.lm.depth = 0;
    let f = count_flops(&cfg).unwrap();
    assert_eq!((f.encoder, f.lora, f.resampler), (0, 0, 0));
    // With no layers the remaining terms are the patch stem and output head.
    let tokens = 16 * 5;
    assert_eq!(f.patch_embed, matmul_flops(tokens, 16 * 16 * 3, 32));
    assert_eq!(f.lm, matmul_flops(5 * 8 + 1, 32, cfg.lm.vocab));
}

#[test]
fn single_layer_encoder_flops_by_hand() {
    let mut cfg = ModelConfig::toy();
    cfg.adapter_mode = AdapterMode::None;
    cfg.encoder.depth = 1;
    let (n, d, m) = (16u64, 32u64, 64u64);
    let per_crop = 2 * (4 * n * d * d + 2 * n * n * d + 2 * n * d * m);
    assert_eq!(count_flops(&cfg).unwrap().encoder, 5 * per_crop);
}

#[test]
fn lora_flops_follow_rank_formula() {
    let cfg = ModelConfig::toy();
    let (n, d, m, ra, rm) = (16u64, 32u64, 64u64, 4u64, 8u64);
    let per_layer = 2 * n * (4 * ra * 2 * d + 2 * rm * (d + m));
    assert_eq!(count_flops(&cfg).unwrap().lora, 4 * 2 * per_layer);
}

#[test]
fn flops_are_monotone() {
    let base = ModelConfig::toy();
    let t = |c: &ModelConfig| count_flops(c).unwrap().total;
    let mut prev = 0;
    for res in [(64, 64), (64, 128), (128, 128), (128, 192)] {
        let c = ModelConfig {
            resolution: res,
            ..base.clone()
        };
        assert!(t(&c) > prev, "{res:?}");
        prev = t(&c);
    }
    type Bump = Box<dyn Fn(&mut ModelConfig)>;
    let bumps: Vec<Bump> = vec![
        Box::new(|c| c.encoder.attn_rank += 4),
        Box::new(|c| c.encoder.mlp_rank += 4),
        Box::new(|c| c.encoder.depth += 1),
        Box::new(|c| c.encoder.d_mlp += 16),
        Box::new(|c| c.resampler.depth += 1),
        Box::new(|c| c.resampler.n_queries += 1),
        Box::new(|c| c.lm.depth += 1),
        Box::new(|c| c.lm.d_mlp += 16),
        Box::new(|c| {
            c.encoder.d_model += 8;
            c.resampler.d_model += 8;
        }),
        Box::new(|c| {
            c.lm.d_model += 8;
            c.resampler.d_out += 8;
        }),
    ];
    for (i, bump) in bumps.iter().enumerate() {
        let mut c = base.clone();
        bump(&mut c);
        c.validate().unwrap();
        assert!(t(&c) > t(&base), "bump {i}");
    }
}

#[test]
fn reference_lora_overhead_is_small() {
    let with = reference_config((896, 896));
    assert_eq!(with.n_crops().unwrap(), 5);
    let without = ModelConfig {
        adapter_mode: AdapterMode::None,
        ..with.clone()
    };
    let ratio = count_flops(&with).unwrap().total as f64 / count_flops(&without).unwrap().total as f64;
    assert!((1.0..=1.01).contains(&ratio), "{ratio}");
    let p = count_params(&with).unwrap();
    // Four adapter sets of 48 layers at ranks 16/32.
    assert_eq!(p.adapters, 4 * 48 * (4 * 16 * 2 * 1664 + 2 * 32 * (1664 + 8192)));
}
