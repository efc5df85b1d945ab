//! Toy vision transformer shared by every crop, with a bank of per-position
//! low-rank adapters on its attention and MLP projections.
//!
//! Base weights live under `encoder.base.` and adapters under
//! `encoder.adapter.<i>.`, so either namespace can be frozen, saved or
//! shipped independently. Only one copy of the base weights exists no matter
//! how many crops are encoded.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::{ImageTensor, CHANNELS};
use crate::nn::{multi_head_attention, LayerNorm, Linear, LoraPair};
use crate::params::{ParamId, ParamStore};
use crate::partition::Window;
use crate::tensor::Tensor;

pub const BASE_PREFIX: &str = "encoder.base.";
pub const ADAPTER_PREFIX: &str = "encoder.adapter.";

/// Attention projections adapted per layer (Q, K, V, output).
pub const ADAPTED_ATTN_MATRICES: usize = 4;
/// MLP matrices adapted per layer (up and down projections).
pub const ADAPTED_MLP_MATRICES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub window: Window,
    /// Side of the square sub-patch turned into one token.
    pub patch_size: usize,
    pub depth: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    /// LoRA rank for Q/K/V/O; 0 leaves attention unadapted. Reference value 16.
    pub attn_rank: usize,
    /// LoRA rank for the MLP matrices; 0 leaves them unadapted. Reference value 32.
    pub mlp_rank: usize,
    /// Scaling numerator; `None` means alpha = rank (scale 1).
    pub lora_alpha: Option<f64>,
}

impl EncoderConfig {
    /// Desk-scale defaults: 64 px window, 16 px patches, 16 tokens per crop.
    pub fn toy() -> Self {
        Self {
            window: Window::square(64),
            patch_size: 16,
            depth: 2,
            d_model: 32,
            n_heads: 4,
            d_mlp: 64,
            attn_rank: 4,
            mlp_rank: 8,
            lora_alpha: None,
        }
    }

    /// Reference sizes: 448 px window with 14 px patches and ranks 16/32.
    /// Width, depth and MLP size follow the public ViT-bigG configuration.
    pub fn reference() -> Self {
        Self {
            window: Window::square(448),
            patch_size: 14,
            depth: 48,
            d_model: 1664,
            n_heads: 16,
            d_mlp: 8192,
            attn_rank: 16,
            mlp_rank: 32,
            lora_alpha: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Validation(format!(
                "encoder d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.patch_size == 0
            || !self.window.height.is_multiple_of(self.patch_size)
            || !self.window.width.is_multiple_of(self.patch_size)
        {
            return Err(Error::Validation(format!(
                "window {}x{} is not divisible by patch size {}",
                self.window.height, self.window.width, self.patch_size
            )));
        }
        if self.d_mlp == 0 {
            return Err(Error::Validation("encoder d_mlp must be positive".into()));
        }
        Ok(())
    }

    /// Token grid `(rows, cols)` of one window-sized crop.
    pub fn token_grid(&self) -> (usize, usize) {
        (
            self.window.height / self.patch_size,
            self.window.width / self.patch_size,
        )
    }

    pub fn tokens_per_crop(&self) -> usize {
        let (r, c) = self.token_grid();
        r * c
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }

    fn scale_alpha(&self, rank: usize) -> f64 {
        self.lora_alpha.unwrap_or(rank as f64)
    }

    /// `(d_in, d_out, rank)` of every adapted matrix in one layer.
    pub fn adapted_matrices(&self) -> Vec<(usize, usize, usize)> {
        let d = self.d_model;
        let mut out = Vec::new();
        if self.attn_rank > 0 {
            out.extend(std::iter::repeat_n((d, d, self.attn_rank), ADAPTED_ATTN_MATRICES));
        }
        if self.mlp_rank > 0 {
            out.push((d, self.d_mlp, self.mlp_rank));
            out.push((self.d_mlp, d, self.mlp_rank));
        }
        out
    }
}

/// Element count of `n_adapters` adapter sets:
/// `n_adapters · depth · Σ rank·(d_in + d_out)` over adapted matrices.
pub fn adapter_param_count(cfg: &EncoderConfig, n_adapters: usize) -> usize {
    let per_layer: usize = cfg
        .adapted_matrices()
        .iter()
        .map(|(d_in, d_out, r)| r * (d_in + d_out))
        .sum();
    n_adapters * cfg.depth * per_layer
}

/// Adapters of one transformer layer. `None` marks an unadapted group.
#[derive(Clone, Debug)]
pub struct LayerAdapters {
    pub q: Option<LoraPair>,
    pub k: Option<LoraPair>,
    pub v: Option<LoraPair>,
    pub o: Option<LoraPair>,
    pub fc1: Option<LoraPair>,
    pub fc2: Option<LoraPair>,
}

#[derive(Clone, Debug, Default)]
pub struct AdapterBank {
    sets: Vec<Vec<LayerAdapters>>,
}

impl AdapterBank {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn layers(&self, id: usize) -> Result<&[LayerAdapters]> {
        self.sets.get(id).map(Vec::as_slice).ok_or(Error::UnknownAdapter {
            id,
            n_adapters: self.sets.len(),
        })
    }

    /// Every adapter tensor id, in allocation order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for set in &self.sets {
            for layer in set {
                for pair in [&layer.q, &layer.k, &layer.v, &layer.o, &layer.fc1, &layer.fc2]
                    .into_iter()
                    .flatten()
                {
                    out.push(pair.a);
                    out.push(pair.b);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

/// Token features of one crop.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchFeatures {
    /// `n_tokens × d_model`.
    pub tokens: Tensor,
    pub source: CropSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropSource {
    Local { row: usize, col: usize },
    Global,
}

/// Which parts of the encoder receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainabilityPolicy {
    pub base_frozen: bool,
    pub adapters_trainable: bool,
}

impl Default for TrainabilityPolicy {
    fn default() -> Self {
        Self {
            base_frozen: true,
            adapters_trainable: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct VisionEncoder {
    cfg: EncoderConfig,
    patch_embed: Linear,
    pos_embed: ParamId,
    pos_grid: (usize, usize),
    blocks: Vec<EncoderBlock>,
    ln_final: LayerNorm,
    bank: AdapterBank,
}

impl VisionEncoder {
    /// Allocates base weights and `n_adapters` zero-delta adapter sets.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: EncoderConfig,
        n_adapters: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let p = |s: &str| format!("{BASE_PREFIX}{s}");
        let patch_embed = Linear::new(store, &p("patch_embed"), cfg.patch_dim(), d, true, rng)?;
        let pos_grid = cfg.token_grid();
        let pos_embed = store.add(p("pos_embed"), Tensor::randn(&[pos_grid.0 * pos_grid.1, d], 0.02, rng))?;
        let mut blocks = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let b = |s: &str| p(&format!("block{l}.{s}"));
            blocks.push(EncoderBlock {
                ln1: LayerNorm::new(store, &b("ln1"), d)?,
                q: Linear::new(store, &b("q"), d, d, true, rng)?,
                k: Linear::new(store, &b("k"), d, d, true, rng)?,
                v: Linear::new(store, &b("v"), d, d, true, rng)?,
                o: Linear::new(store, &b("o"), d, d, true, rng)?,
                ln2: LayerNorm::new(store, &b("ln2"), d)?,
                fc1: Linear::new(store, &b("fc1"), d, cfg.d_mlp, true, rng)?,
                fc2: Linear::new(store, &b("fc2"), cfg.d_mlp, d, true, rng)?,
            });
        }
        let ln_final = LayerNorm::new(store, &p("ln_final"), d)?;

        let mut sets = Vec::with_capacity(n_adapters);
        for i in 0..n_adapters {
            let mut layers = Vec::with_capacity(cfg.depth);
            for l in 0..cfg.depth {
                let name = |s: &str| format!("{ADAPTER_PREFIX}{i}.block{l}.{s}");
                let mut pair = |s: &str, d_in: usize, d_out: usize, rank: usize| {
                    if rank == 0 {
                        Ok(None)
                    } else {
                        let alpha = cfg.scale_alpha(rank);
                        LoraPair::new(store, &name(s), d_in, d_out, rank, alpha, rng).map(Some)
                    }
                };
                layers.push(LayerAdapters {
                    q: pair("q", d, d, cfg.attn_rank)?,
                    k: pair("k", d, d, cfg.attn_rank)?,
                    v: pair("v", d, d, cfg.attn_rank)?,
                    o: pair("o", d, d, cfg.attn_rank)?,
                    fc1: pair("fc1", d, cfg.d_mlp, cfg.mlp_rank)?,
                    fc2: pair("fc2", cfg.d_mlp, d, cfg.mlp_rank)?,
                });
            }
            sets.push(layers);
        }

        Ok(Self {
            cfg,
            patch_embed,
            pos_embed,
            pos_grid,
            blocks,
            ln_final,
            bank: AdapterBank { sets },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &AdapterBank {
        &self.bank
    }

    pub fn n_adapters(&self) -> usize {
        self.bank.len()
    }

    pub fn pos_grid(&self) -> (usize, usize) {
        self.pos_grid
    }

    pub fn pos_embed_id(&self) -> ParamId {
        self.pos_embed
    }

    /// Input size accepted by [`Self::encode`] given the current positional grid.
    pub fn input_size(&self) -> (usize, usize) {
        (
            self.pos_grid.0 * self.cfg.patch_size,
            self.pos_grid.1 * self.cfg.patch_size,
        )
    }

    pub fn set_trainability(&self, store: &mut ParamStore, policy: TrainabilityPolicy) {
        store.set_trainable_prefix(BASE_PREFIX, !policy.base_frozen);
        store.set_trainable_prefix(ADAPTER_PREFIX, policy.adapters_trainable);
    }

    /// Flattens `img` into `n_tokens × patch_dim` rows, each a square
    /// sub-patch in (y, x, channel) order.
    pub fn patchify(&self, img: &ImageTensor) -> Result<Tensor> {
        let (h, w) = self.input_size();
        if img.height() != h || img.width() != w {
            return Err(Error::Dimension {
                op: "patchify",
                lhs: vec![img.height(), img.width()],
                rhs: vec![h, w],
            });
        }
        let ps = self.cfg.patch_size;
        let (gr, gc) = self.pos_grid;
        let mut data = Vec::with_capacity(gr * gc * self.cfg.patch_dim());
        for ty in 0..gr {
            for tx in 0..gc {
                for y in ty * ps..(ty + 1) * ps {
                    let start = (y * w + tx * ps) * CHANNELS;
                    data.extend_from_slice(&img.pixels()[start..start + ps * CHANNELS]);
                }
            }
        }
        Tensor::new(vec![gr * gc, self.cfg.patch_dim()], data)
    }

    /// Encodes one crop inside `g`. `adapter` selects an adapter set; `None`
    /// runs the bare base encoder.
    pub fn encode(&self, g: &mut Graph, img: &ImageTensor, adapter: Option<usize>) -> Result<Var> {
        let adapters = match adapter {
            Some(id) => Some(self.bank.layers(id)?),
            None => None,
        };
        let tokens = self.patchify(img)?;
        let x = g.input(tokens);
        let x = self.patch_embed.forward(g, x)?;
        let pos = g.param(self.pos_embed);
        let mut x = g.add(x, pos)?;
        for (l, block) in self.blocks.iter().enumerate() {
            let ad = adapters.map(|a| &a[l]);
            x = self.block_forward(g, block, x, ad)?;
        }
        self.ln_final.forward(g, x)
    }

    fn block_forward(&self, g: &mut Graph, b: &EncoderBlock, x: Var, ad: Option<&LayerAdapters>) -> Result<Var> {
        let pick = |f: fn(&LayerAdapters) -> &Option<LoraPair>| ad.and_then(|a| f(a).as_ref());
        let h = b.ln1.forward(g, x)?;
        let q = b.q.forward_lora(g, h, pick(|a| &a.q))?;
        let k = b.k.forward_lora(g, h, pick(|a| &a.k))?;
        let v = b.v.forward_lora(g, h, pick(|a| &a.v))?;
        let att = multi_head_attention(g, q, k, v, self.cfg.n_heads, false)?;
        let att = b.o.forward_lora(g, att, pick(|a| &a.o))?;
        let x = g.add(x, att)?;
        let h = b.ln2.forward(g, x)?;
        let h = b.fc1.forward_lora(g, h, pick(|a| &a.fc1))?;
        let h = g.gelu(h);
        let h = b.fc2.forward_lora(g, h, pick(|a| &a.fc2))?;
        g.add(x, h)
    }

    /// Inference-only encoding of one crop.
    pub fn encode_patch(
        &self,
        store: &ParamStore,
        img: &ImageTensor,
        adapter: Option<usize>,
        source: CropSource,
    ) -> Result<PatchFeatures> {
        let mut g = Graph::with_params(store);
        let out = self.encode(&mut g, img, adapter)?;
        Ok(PatchFeatures {
            tokens: g.tensor(out),
            source,
        })
    }

    /// Bilinearly resizes the positional table to a `rows × cols` token grid
    /// (corner-aligned), so the encoder accepts `rows·patch × cols·patch`
    /// inputs.
    pub fn interpolate_pos_embed(&mut self, store: &mut ParamStore, rows: usize, cols: usize) -> Result<()> {
        if rows == 0 || cols == 0 {
            return Err(Error::Validation("positional grid must be at least 1x1".into()));
        }
        let table = store.get(self.pos_embed);
        let resized = interpolate_grid(table, self.pos_grid, (rows, cols))?;
        store.replace(self.pos_embed, resized);
        self.pos_grid = (rows, cols);
        Ok(())
    }
}

/// Corner-aligned bilinear resampling of a `(rows·cols) × d` table laid out
/// row-major over a 2-D grid.
pub fn interpolate_grid(table: &Tensor, from: (usize, usize), to: (usize, usize)) -> Result<Tensor> {
    let (n, d) = table.dims2();
    if n != from.0 * from.1 {
        return Err(Error::Dimension {
            op: "interpolate_grid",
            lhs: table.shape().to_vec(),
            rhs: vec![from.0, from.1],
        });
    }
    if from == to {
        return Ok(table.clone());
    }
    let src = table.data();
    let axis = |src_n: usize, dst_n: usize, i: usize| -> (usize, usize, f64) {
        if src_n == 1 || dst_n == 1 {
            return (0, 0, 0.0);
        }
        let num = i * (src_n - 1);
        let den = dst_n - 1;
        let lo = num / den;
        ((lo), (lo + 1).min(src_n - 1), (num % den) as f64 / den as f64)
    };
    let mut out = Vec::with_capacity(to.0 * to.1 * d);
    for r in 0..to.0 {
        let (r0, r1, fr) = axis(from.0, to.0, r);
        for c in 0..to.1 {
            let (c0, c1, fc) = axis(from.1, to.1, c);
            let at = |rr: usize, cc: usize, k: usize| src[(rr * from.1 + cc) * d + k];
            for k in 0..d {
                let top = at(r0, c0, k) * (1.0 - fc) + at(r0, c1, k) * fc;
                let bottom = at(r1, c0, k) * (1.0 - fc) + at(r1, c1, k) * fc;
                out.push(top * (1.0 - fr) + bottom * fr);
            }
        }
    }
    Tensor::new(vec![to.0 * to.1, d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_adapted_attention_matrix_count() {
        let cfg = EncoderConfig {
            depth: 1,
            d_model: 64,
            n_heads: 4,
            attn_rank: 16,
            mlp_rank: 0,
            ..EncoderConfig::toy()
        };
        assert_eq!(adapter_param_count(&cfg, 1), ADAPTED_ATTN_MATRICES * 16 * (64 + 64));
        let cfg0 = EncoderConfig {
            attn_rank: 0,
            mlp_rank: 0,
            ..EncoderConfig::toy()
        };
        assert_eq!(adapter_param_count(&cfg0, 4), 0);
    }

    #[test]
    fn unknown_adapter_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let enc = VisionEncoder::new(&mut store, EncoderConfig::toy(), 2, &mut rng).unwrap();
        let img = ImageTensor::filled(64, 64, [0.5; 3]);
        let err = enc.encode_patch(&store, &img, Some(2), CropSource::Global);
        assert!(matches!(err, Err(Error::UnknownAdapter { id: 2, n_adapters: 2 })));
    }

    #[test]
    fn pos_interpolation_center_is_corner_mean() {
        let table = Tensor::new(vec![4, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let out = interpolate_grid(&table, (2, 2), (3, 3)).unwrap();
        assert_eq!(out.shape(), &[9, 2]);
        let center = &out.data()[4 * 2..5 * 2];
        assert!((center[0] - 3.0).abs() < 1e-12);
        assert!((center[1] - 4.0).abs() < 1e-12);
        assert_eq!(interpolate_grid(&table, (2, 2), (2, 2)).unwrap(), table);
    }
}
