//! Autograd checked against central finite differences.

use monkey_core::graph::Graph;
use monkey_core::nn::{Linear, LoraPair};
use monkey_core::resampler::{Resampler, ResamplerConfig};
use monkey_core::{
    AdapterMode, InstructionSample, ModelConfig, MonkeyModel, ParamId, ParamStore, Tensor, TrainabilityPolicy,
    VisualMode,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

// Below this norm a gradient is indistinguishable from difference noise
// (1e-11 to 1e-10 for losses of order 1 to 10 with H = 1e-5).
const FLOOR: f64 = 1e-5;

/// ‖a − n‖ / max(‖a‖, ‖n‖, FLOOR) over the checked entries.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(FLOOR)
}

/// Checks up to `k` entries of every trainable tensor (half of them drawn
/// from entries with a nonzero analytic gradient). Returns the worst error.
fn check_store<F>(store: &mut ParamStore, k: usize, seed: u64, loss: F) -> f64
where
    F: Fn(&ParamStore, bool) -> (f64, Option<Vec<(ParamId, Vec<f64>)>>),
{
    let (_, grads) = loss(store, true);
    let grads = grads.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let ids: Vec<ParamId> = store.trainable().collect();
    assert!(!ids.is_empty());
    for id in ids {
        let analytic_full = grads
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| vec![0.0; store.get(id).numel()]);
        let n = analytic_full.len();
        let mut idx: Vec<usize> = if n <= k {
            (0..n).collect()
        } else {
            sample(&mut rng, n, k / 2).into_vec()
        };
        if n > k {
            let nonzero: Vec<usize> = (0..n).filter(|&i| analytic_full[i] != 0.0).collect();
            if !nonzero.is_empty() {
                for j in sample(&mut rng, nonzero.len(), (k - k / 2).min(nonzero.len())) {
                    idx.push(nonzero[j]);
                }
            }
        }
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for i in idx {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + H;
            let up = loss(store, false).0;
            store.get_mut(id).data_mut()[i] = orig - H;
            let down = loss(store, false).0;
            store.get_mut(id).data_mut()[i] = orig;
            analytic.push(analytic_full[i]);
            numeric.push((up - down) / (2.0 * H));
        }
        let e = rel_err(&analytic, &numeric);
        assert!(e < TOL, "{}: relative error {e:.3e}", store.name(id));
        worst = worst.max(e);
    }
    worst
}

fn randomize(store: &mut ParamStore, seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += std * (rng.random::<f64>() * 2.0 - 1.0);
        }
    }
}

fn collect(grads: &monkey_core::Gradients) -> Vec<(ParamId, Vec<f64>)> {
    grads.params().map(|(id, g)| (id, g.to_vec())).collect()
}

#[test]
fn graph_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::randn(&[3, 4], 1.0, &mut rng)).unwrap();
    let b = store.add("b", Tensor::randn(&[4, 5], 1.0, &mut rng)).unwrap();
    let c = store.add("c", Tensor::randn(&[6, 4], 1.0, &mut rng)).unwrap();
    let gain = store.add("gain", Tensor::randn(&[5], 1.0, &mut rng)).unwrap();
    let bias = store.add("bias", Tensor::randn(&[5], 1.0, &mut rng)).unwrap();
    let table = store.add("table", Tensor::randn(&[7, 5], 1.0, &mut rng)).unwrap();

    let f = |s: &ParamStore, want: bool| {
        let mut g = Graph::with_params(s);
        let (a, b, c) = (g.param(a), g.param(b), g.param(c));
        let ab = g.matmul(a, b).unwrap(); // 3×5
        let act = g.matmul_t(c, a).unwrap(); // 6×3
        let act = g.softmax_rows_causal(act).unwrap();
        let tr = g.transpose(act); // 3×6
        let ln = {
            let gn = g.param(gain);
            let bs = g.param(bias);
            g.layer_norm(ab, gn, bs).unwrap()
        };
        let ge = g.gelu(ln);
        let t = g.param(table);
        let rows = g.gather_rows(t, &[2, 0, 2]).unwrap();
        let prod = g.mul(ge, rows).unwrap();
        let sl = g.slice_cols(prod, 1, 3).unwrap();
        let cat = g.concat_cols(&[sl, tr]).unwrap(); // 3×9
        let sm = g.softmax_rows(cat).unwrap();
        let top = g.slice_rows(sm, 0, 2).unwrap();
        let both = g.concat_rows(&[top, sm]).unwrap(); // 5×9
        let bias_row = g.slice_rows(both, 4, 1).unwrap();
        let shifted = g.add_row(both, bias_row).unwrap();
        let sc = g.scale(shifted, 3.0);
        let ce = g.cross_entropy(sc, &[Some(1), None, Some(8), Some(0), None]).unwrap();
        let s = g.sum(prod);
        let s = g.scale(s, 0.1);
        let total = g.add(ce, s).unwrap();
        let v = g.scalar(total);
        (v, want.then(|| collect(&g.backward(total).unwrap())))
    };
    check_store(&mut store, 1000, 1, f);
}

#[test]
fn lora_gradients_reach_factors_not_frozen_base() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "enc.q", 6, 4, true, &mut rng).unwrap();
    let pair = LoraPair::new(&mut store, "ad.q", 6, 4, 2, 3.0, &mut rng).unwrap();
    store.set_trainable_prefix("enc.", false);
    randomize(&mut store, 9, 0.5);
    let x = Tensor::randn(&[3, 6], 1.0, &mut rng);
    let f = |s: &ParamStore, want: bool| {
        let mut g = Graph::with_params(s);
        let xv = g.input(x.clone());
        let y = lin.forward_lora(&mut g, xv, Some(&pair)).unwrap();
        let y2 = g.mul(y, y).unwrap();
        let l = g.sum(y2);
        (g.scalar(l), want.then(|| collect(&g.backward(l).unwrap())))
    };
    let (_, grads) = f(&store, true);
    let grads = grads.unwrap();
    assert!(grads.iter().all(|(id, _)| !store.name(*id).starts_with("enc.")));
    assert!(grads.iter().any(|(id, _)| *id == pair.a));
    check_store(&mut store, 100, 2, f);
}

#[test]
fn resampler_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let cfg = ResamplerConfig {
        n_queries: 3,
        d_model: 8,
        n_heads: 2,
        depth: 2,
        d_out: 6,
    };
    let r = Resampler::new(&mut store, cfg, &mut rng).unwrap();
    randomize(&mut store, 4, 0.3);
    let feats = Tensor::randn(&[5, 8], 1.0, &mut rng);
    let w = Tensor::randn(&[3, 6], 1.0, &mut rng);
    let f = |s: &ParamStore, want: bool| {
        let mut g = Graph::with_params(s);
        let x = g.input(feats.clone());
        let y = r.forward(&mut g, x).unwrap();
        let wv = g.input(w.clone());
        let y = g.mul(y, wv).unwrap();
        let l = g.sum(y);
        (g.scalar(l), want.then(|| collect(&g.backward(l).unwrap())))
    };
    check_store(&mut store, 200, 3, f);
}

fn tiny_model(mode: VisualMode, policy: TrainabilityPolicy) -> MonkeyModel {
    let mut cfg = ModelConfig::toy();
    cfg.encoder.depth = 1;
    cfg.encoder.d_model = 8;
    cfg.encoder.n_heads = 2;
    cfg.encoder.d_mlp = 12;
    cfg.encoder.attn_rank = 2;
    cfg.encoder.mlp_rank = 3;
    cfg.encoder.patch_size = 32;
    cfg.resampler = ResamplerConfig {
        n_queries: 2,
        d_model: 8,
        n_heads: 2,
        depth: 1,
        d_out: 8,
    };
    cfg.lm.depth = 1;
    cfg.lm.d_model = 8;
    cfg.lm.n_heads = 2;
    cfg.lm.d_mlp = 12;
    cfg.lm.max_seq = 64;
    cfg.resolution = (96, 128);
    cfg.visual_mode = mode;
    cfg.adapter_mode = if mode == VisualMode::Sliding {
        AdapterMode::PerPatch
    } else {
        AdapterMode::None
    };
    cfg.policy = policy;
    MonkeyModel::new(cfg).unwrap()
}

fn image(seed: u64, h: usize, w: usize) -> monkey_core::ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..h * w * 3).map(|_| rng.random::<f64>()).collect();
    monkey_core::ImageTensor::new(h, w, px).unwrap()
}

#[test]
fn small_model_end_to_end_with_interpolated_base() {
    let policy = TrainabilityPolicy {
        base_frozen: false,
        adapters_trainable: true,
    };
    let mut model = tiny_model(VisualMode::Interpolated, policy);
    randomize(model.store_mut(), 21, 0.2);
    let img = image(3, 96, 128);
    let samples = vec![InstructionSample::vqa("Q?", "ab")];
    let m = model.clone();
    let f = |s: &ParamStore, want: bool| {
        let mut g = Graph::with_params(s);
        let l = m.loss(&mut g, &img, &samples).unwrap();
        (g.scalar(l), want.then(|| collect(&g.backward(l).unwrap())))
    };
    assert!(model
        .store()
        .trainable()
        .any(|id| model.store().name(id) == "encoder.base.pos_embed"));
    check_store(model.store_mut(), 6, 4, f);
}

#[test]
fn small_sliding_model_skips_frozen_base() {
    let mut model = tiny_model(VisualMode::Sliding, TrainabilityPolicy::default());
    randomize(model.store_mut(), 22, 0.2);
    let img = image(4, 96, 128);
    let samples = vec![InstructionSample::caption("xy"), InstructionSample::vqa("Z", "w")];
    let m = model.clone();
    let f = |s: &ParamStore, want: bool| {
        let mut g = Graph::with_params(s);
        let l = m.loss(&mut g, &img, &samples).unwrap();
        (g.scalar(l), want.then(|| collect(&g.backward(l).unwrap())))
    };
    let (_, grads) = f(model.store(), true);
    for (id, _) in grads.unwrap() {
        assert!(!model.store().name(id).starts_with("encoder.base."));
    }
    check_store(model.store_mut(), 6, 5, f);
}
