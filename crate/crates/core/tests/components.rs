use monkey_core::encoder::{
    adapter_param_count, interpolate_grid, CropSource, EncoderConfig, PatchFeatures, VisionEncoder, ADAPTER_PREFIX,
    BASE_PREFIX,
};
use monkey_core::graph::Graph;
use monkey_core::lm::{lm_loss, LanguageModel, LmConfig};
use monkey_core::resampler::{Resampler, ResamplerConfig};
use monkey_core::text::{format_instruction, InstructionSample, Task, EOS};
use monkey_core::{checkpoint, AdapterMode, ImageTensor, ModelConfig, MonkeyModel, ParamStore, Tensor, VisualMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(seed: u64, h: usize, w: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::new(h, w, (0..h * w * 3).map(|_| rng.random()).collect()).unwrap()
}

fn encoder(n_adapters: usize, seed: u64) -> (ParamStore, VisionEncoder) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let enc = VisionEncoder::new(&mut store, EncoderConfig::toy(), n_adapters, &mut rng).unwrap();
    (store, enc)
}

#[test]
fn templates_render_byte_exact() {
    let (p, t) = format_instruction(&InstructionSample::caption("a cat")).unwrap();
    assert_eq!(p, "Generate the caption in English:");
    assert_eq!(t, "a cat");
    let detailed = InstructionSample {
        task: Task::DetailedCaption,
        question: None,
        answer: "long".into(),
    };
    assert_eq!(
        format_instruction(&detailed).unwrap().0,
        "Generate the detailed caption in English:"
    );
    let (p, t) = format_instruction(&InstructionSample::vqa("What color is the car?", "red")).unwrap();
    assert_eq!(format!("{p}{t}"), "What color is the car? Answer: red");
}

#[test]
fn adapter_count_matches_allocated_tensors() {
    let cfg = EncoderConfig::toy();
    assert_eq!(
        (cfg.d_model, cfg.d_mlp, cfg.depth, cfg.attn_rank, cfg.mlp_rank),
        (32, 64, 2, 4, 8)
    );
    let (store, enc) = encoder(4, 0);
    let enumerated: usize = store
        .iter()
        .filter(|(_, name, _)| name.starts_with(ADAPTER_PREFIX))
        .map(|(_, _, t)| t.numel())
        .sum();
    assert_eq!(enumerated, adapter_param_count(&cfg, 4));
    assert_eq!(enc.bank().param_ids().len(), 4 * 2 * 6 * 2);
    // 4 adapters · 2 layers · (4·4·(32+32) + 8·(32+64) + 8·(64+32))
    assert_eq!(enumerated, 4 * 2 * (4 * 4 * 64 + 2 * 8 * 96));
}

#[test]
fn base_is_shared_and_adapters_grow_linearly() {
    let base: Vec<usize> = [0, 1, 4, 6]
        .iter()
        .map(|&n| encoder(n, 0).0.numel_with_prefix(BASE_PREFIX))
        .collect();
    assert!(base.windows(2).all(|w| w[0] == w[1]));
    let per = encoder(1, 0).0.numel_with_prefix(ADAPTER_PREFIX);
    for n in [0, 4, 6] {
        assert_eq!(encoder(n, 0).0.numel_with_prefix(ADAPTER_PREFIX), n * per);
    }
}

#[test]
fn encoding_is_pure_and_zero_adapters_are_inert() {
    let (store, enc) = encoder(4, 7);
    let img = noise(1, 64, 64);
    let a = enc
        .encode_patch(&store, &img, Some(2), CropSource::Local { row: 1, col: 0 })
        .unwrap();
    let b = enc
        .encode_patch(&store, &img.clone(), Some(2), CropSource::Global)
        .unwrap();
    assert_eq!(a.tokens, b.tokens);
    assert_eq!(a.tokens.shape(), &[16, 32]);
    let none = enc.encode_patch(&store, &img, None, CropSource::Global).unwrap();
    for id in 0..4 {
        let f = enc.encode_patch(&store, &img, Some(id), CropSource::Global).unwrap();
        assert_eq!(f.tokens.to_le_bytes(), none.tokens.to_le_bytes());
    }
    // Same seed without adapters allocates identical base weights.
    let (store0, enc0) = encoder(0, 7);
    let bare = enc0.encode_patch(&store0, &img, None, CropSource::Global).unwrap();
    assert_eq!(store0.snapshot_bytes(BASE_PREFIX), store.snapshot_bytes(BASE_PREFIX));
    assert_eq!(bare.tokens.to_le_bytes(), none.tokens.to_le_bytes());
}

#[test]
fn interpolating_a_linear_ramp_is_exact() {
    // Column 0 = row index, column 1 = col index.
    let table = Tensor::new(vec![4, 2], vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
    let out = interpolate_grid(&table, (2, 2), (3, 3)).unwrap();
    let center = &out.data()[8..10];
    let mean: Vec<f64> = (0..2)
        .map(|k| (0..4).map(|r| table.data()[r * 2 + k]).sum::<f64>() / 4.0)
        .collect();
    assert_eq!(center, mean.as_slice());

    let (mut store, mut enc) = encoder(0, 1);
    let rows = store.get(enc.pos_embed_id()).dims2().0;
    enc.interpolate_pos_embed(&mut store, 8, 8).unwrap();
    assert_eq!(store.get(enc.pos_embed_id()).dims2().0, 4 * rows);
    assert_eq!(enc.input_size(), (128, 128));
    let f = enc
        .encode_patch(&store, &noise(2, 128, 128), None, CropSource::Global)
        .unwrap();
    assert_eq!(f.tokens.shape(), &[64, 32]);
}

#[test]
fn single_key_attention_ignores_query_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let r = Resampler::new(&mut store, ResamplerConfig::toy(), &mut rng).unwrap();
    let feats = PatchFeatures {
        tokens: Tensor::randn(&[1, 32], 1.0, &mut rng),
        source: CropSource::Global,
    };
    let before = r.resample(&store, &feats).unwrap();
    let q = store.id("resampler.block0.q.weight").unwrap();
    for v in store.get_mut(q).data_mut() {
        *v = rng.random::<f64>() * 5.0;
    }
    let after = r.resample(&store, &feats).unwrap();
    assert!(before.max_abs_diff(&after) < 1e-12);
    // The same weights serve every crop: changing them moves all segments.
    let v = store.id("resampler.block0.v.weight").unwrap();
    store.get_mut(v).data_mut()[0] += 1.0;
    let segs = r
        .resample_all(&store, &[feats.clone(), feats.clone()], Some(&feats))
        .unwrap();
    assert_eq!(segs.len(), 3);
    for s in &segs {
        assert!(s.max_abs_diff(&after) > 0.0);
        assert_eq!(s, &segs[0]);
    }
}

#[test]
fn segment_counts_follow_the_grid() {
    let mut cfg = ModelConfig::toy();
    let count = |cfg: &ModelConfig| {
        let m = MonkeyModel::new(cfg.clone()).unwrap();
        m.encode_image(&noise(3, cfg.resolution.0, cfg.resolution.1))
            .unwrap()
            .len()
    };
    assert_eq!(count(&cfg), 5);
    cfg.include_global = false;
    assert_eq!(count(&cfg), 4);
    cfg.include_global = true;
    cfg.resolution = (64, 128);
    assert_eq!(count(&cfg), 3);
    cfg.resolution = (64, 64);
    assert_eq!(count(&cfg), 2);
    cfg.visual_mode = VisualMode::GlobalOnly;
    cfg.adapter_mode = AdapterMode::None;
    assert_eq!(count(&cfg), 1);
}

#[test]
fn reference_grid_visual_token_counts() {
    let mut cfg = ModelConfig::toy();
    cfg.encoder = EncoderConfig::reference();
    cfg.resampler.n_queries = 256;
    cfg.resolution = (896, 896);
    assert_eq!(cfg.visual_tokens().unwrap(), 1280);
    cfg.resolution = (1344, 896);
    assert_eq!(cfg.n_locals().unwrap(), 6);
    assert_eq!(cfg.visual_tokens().unwrap(), 1792);
    assert_eq!(cfg.n_adapters().unwrap(), 6);
    cfg.adapter_mode = AdapterMode::SharedOne;
    assert_eq!(cfg.n_adapters().unwrap(), 1);
    cfg.resolution = (1344, 1344);
    assert!(cfg.n_locals().is_err());
}

#[test]
fn assembled_length_and_empty_prompt() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let lm = LanguageModel::new(&mut store, LmConfig::toy(), &mut rng).unwrap();
    let mut g = Graph::with_params(&store);
    let segs: Vec<_> = (0..5).map(|_| g.input(Tensor::zeros(&[8, 32]))).collect();
    let x = lm.assemble(&mut g, &segs, &[65; 10]).unwrap();
    assert_eq!(g.dims(x), (51, 32));
    let x = lm.assemble(&mut g, &segs, &[]).unwrap();
    assert_eq!(g.dims(x).0, 41);
    assert!(lm.loss(&mut g, &segs, &[1], &[]).is_err());
}

#[test]
fn loss_ignores_non_target_rows_and_reaches_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let targets = [3usize, 7, EOS];
    let mut logits = Tensor::randn(&[9, 257], 1.0, &mut rng);
    let base = lm_loss(&logits, &targets).unwrap();
    for v in &mut logits.data_mut()[..6 * 257] {
        *v += rng.random::<f64>() * 100.0;
    }
    assert_eq!(lm_loss(&logits, &targets).unwrap(), base);

    let mut sharp = Tensor::zeros(&[3, 257]);
    for (j, &t) in targets.iter().enumerate() {
        sharp.data_mut()[j * 257 + t] = 1e3;
    }
    assert_eq!(lm_loss(&sharp, &targets).unwrap(), 0.0);
}

#[test]
fn adapters_ship_separately() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ModelConfig::toy();
    let mut trained = MonkeyModel::new(cfg.clone()).unwrap();
    let ids: Vec<_> = trained.store().with_prefix(ADAPTER_PREFIX).collect();
    for id in ids {
        for v in trained.store_mut().get_mut(id).data_mut() {
            *v += 0.5;
        }
    }
    let path = dir.path().join("adapters.ckpt");
    checkpoint::save(trained.store(), ADAPTER_PREFIX, &path).unwrap();
    let full = dir.path().join("all.ckpt");
    checkpoint::save(trained.store(), "", &full).unwrap();

    cfg.seed = 99;
    let mut fresh = MonkeyModel::new(cfg.clone()).unwrap();
    let n = checkpoint::load(fresh.store_mut(), &path).unwrap();
    assert_eq!(n, trained.store().with_prefix(ADAPTER_PREFIX).count());
    assert_eq!(
        fresh.store().snapshot_bytes(ADAPTER_PREFIX),
        trained.store().snapshot_bytes(ADAPTER_PREFIX)
    );
    assert_ne!(
        fresh.store().snapshot_bytes(BASE_PREFIX),
        trained.store().snapshot_bytes(BASE_PREFIX)
    );
    checkpoint::load(fresh.store_mut(), &full).unwrap();
    assert_eq!(fresh.store().snapshot_bytes(""), trained.store().snapshot_bytes(""));

    cfg.adapter_mode = AdapterMode::SharedOne;
    let mut other = MonkeyModel::new(cfg).unwrap();
    assert!(checkpoint::load(other.store_mut(), &path).is_err());
}
