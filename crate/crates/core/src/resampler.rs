//! Cross-attention resampler: a fixed table of learned queries attends over
//! the token features of one crop and yields `n_queries` output rows no
//! matter how many tokens came in. One instance serves every crop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::PatchFeatures;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{multi_head_attention, LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const PREFIX: &str = "resampler.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplerConfig {
    /// Learned queries per crop. Reference value 256.
    pub n_queries: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Stacked cross-attention blocks, each re-reading the crop features.
    pub depth: usize,
    /// Width of the language model; a projection is added when it differs.
    pub d_out: usize,
}

impl ResamplerConfig {
    pub fn toy() -> Self {
        Self {
            n_queries: 8,
            d_model: 32,
            n_heads: 4,
            depth: 1,
            d_out: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0 {
            return Err(Error::Validation("resampler needs at least one query".into()));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Validation(format!(
                "resampler d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_out == 0 {
            return Err(Error::Validation("resampler output width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct CrossBlock {
    ln_q: LayerNorm,
    ln_kv: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Debug)]
pub struct Resampler {
    cfg: ResamplerConfig,
    queries: ParamId,
    blocks: Vec<CrossBlock>,
    ln_out: LayerNorm,
    proj: Option<Linear>,
}

impl Resampler {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: ResamplerConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let p = |s: &str| format!("{PREFIX}{s}");
        let queries = store.add(p("queries"), Tensor::randn(&[cfg.n_queries, d], 0.02, rng))?;
        let mut blocks = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let b = |s: &str| p(&format!("block{l}.{s}"));
            blocks.push(CrossBlock {
                ln_q: LayerNorm::new(store, &b("ln_q"), d)?,
                ln_kv: LayerNorm::new(store, &b("ln_kv"), d)?,
                q: Linear::new(store, &b("q"), d, d, true, rng)?,
                k: Linear::new(store, &b("k"), d, d, true, rng)?,
                v: Linear::new(store, &b("v"), d, d, true, rng)?,
                o: Linear::new(store, &b("o"), d, d, true, rng)?,
            });
        }
        let ln_out = LayerNorm::new(store, &p("ln_out"), d)?;
        let proj = if cfg.d_out != d {
            Some(Linear::new(store, &p("proj"), d, cfg.d_out, true, rng)?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            queries,
            blocks,
            ln_out,
            proj,
        })
    }

    pub fn config(&self) -> &ResamplerConfig {
        &self.cfg
    }

    pub fn queries_id(&self) -> ParamId {
        self.queries
    }

    /// Compresses `feats` (`n_tokens × d_model`) into `n_queries × d_out`.
    pub fn forward(&self, g: &mut Graph, feats: Var) -> Result<Var> {
        let (_, d) = g.dims(feats);
        if d != self.cfg.d_model {
            return Err(Error::Dimension {
                op: "resample",
                lhs: g.shape(feats).to_vec(),
                rhs: vec![self.cfg.n_queries, self.cfg.d_model],
            });
        }
        let mut x = g.param(self.queries);
        for b in &self.blocks {
            let hq = b.ln_q.forward(g, x)?;
            let hkv = b.ln_kv.forward(g, feats)?;
            let q = b.q.forward(g, hq)?;
            let k = b.k.forward(g, hkv)?;
            let v = b.v.forward(g, hkv)?;
            let att = multi_head_attention(g, q, k, v, self.cfg.n_heads, false)?;
            let att = b.o.forward(g, att)?;
            x = g.add(x, att)?;
        }
        let x = self.ln_out.forward(g, x)?;
        match &self.proj {
            Some(p) => p.forward(g, x),
            None => Ok(x),
        }
    }

    /// Eager resampling of one crop's features.
    pub fn resample(&self, store: &ParamStore, feats: &PatchFeatures) -> Result<Tensor> {
        let mut g = Graph::with_params(store);
        let x = g.input(feats.tokens.clone());
        let out = self.forward(&mut g, x)?;
        Ok(g.tensor(out))
    }

    /// One segment per local crop in order, then one for the global crop if
    /// given. The same weights serve every call.
    pub fn resample_all(
        &self,
        store: &ParamStore,
        locals: &[PatchFeatures],
        global: Option<&PatchFeatures>,
    ) -> Result<Vec<Tensor>> {
        locals.iter().chain(global).map(|f| self.resample(store, f)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::CropSource;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feats(n: usize, d: usize, seed: u64) -> PatchFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PatchFeatures {
            tokens: Tensor::randn(&[n, d], 1.0, &mut rng),
            source: CropSource::Global,
        }
    }

    #[test]
    fn output_length_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let r = Resampler::new(&mut store, ResamplerConfig::toy(), &mut rng).unwrap();
        for n in [1, 16, 1024] {
            let out = r.resample(&store, &feats(n, 32, n as u64)).unwrap();
            assert_eq!(out.shape(), &[8, 32]);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let r = Resampler::new(&mut store, ResamplerConfig::toy(), &mut rng).unwrap();
        assert!(matches!(
            r.resample(&store, &feats(4, 16, 0)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn projection_only_when_widths_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cfg = ResamplerConfig {
            d_out: 48,
            ..ResamplerConfig::toy()
        };
        let r = Resampler::new(&mut store, cfg, &mut rng).unwrap();
        assert!(store.id("resampler.proj.weight").is_some());
        assert_eq!(r.resample(&store, &feats(5, 32, 1)).unwrap().shape(), &[8, 48]);

        let mut store = ParamStore::new();
        Resampler::new(&mut store, ResamplerConfig::toy(), &mut rng).unwrap();
        assert!(store.id("resampler.proj.weight").is_none());
    }
}
