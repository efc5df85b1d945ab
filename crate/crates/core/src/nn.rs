//! Layers shared by the encoder, resampler and language model.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// `y = x·Wᵀ + b` with `W` stored as `d_out × d_in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let std = 1.0 / (d_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::randn(&[d_out, d_in], std, rng))?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward_lora(g, x, None)
    }

    /// Base projection plus an optional low-rank delta `scale·(x·Aᵀ)·Bᵀ`.
    pub fn forward_lora(&self, g: &mut Graph, x: Var, lora: Option<&LoraPair>) -> Result<Var> {
        let w = g.param(self.weight);
        let mut y = g.matmul_t(x, w)?;
        if let Some(b) = self.bias {
            let b = g.param(b);
            y = g.add_row(y, b)?;
        }
        if let Some(l) = lora {
            let delta = l.delta(g, x)?;
            y = g.add(y, delta)?;
        }
        Ok(y)
    }

    pub fn numel(&self) -> usize {
        self.d_in * self.d_out + if self.bias.is_some() { self.d_out } else { 0 }
    }
}

/// Low-rank factors for one adapted matrix: `A` is `rank × d_in`, `B` is
/// `d_out × rank`, and the delta is scaled by `alpha / rank`.
#[derive(Clone, Debug)]
pub struct LoraPair {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub scale: f64,
}

impl LoraPair {
    /// `A ~ normal(0, 0.02)`, `B = 0`, so a fresh pair adds nothing.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Validation("LoRA rank must be positive".into()));
        }
        let a = store.add(
            format!("{name}.lora_a"),
            Tensor::randn(&[rank, d_in], 1.0 / (d_in as f64).sqrt(), rng),
        )?;
        let b = store.add(format!("{name}.lora_b"), Tensor::zeros(&[d_out, rank]))?;
        Ok(Self {
            a,
            b,
            rank,
            scale: alpha / rank as f64,
        })
    }

    pub fn delta(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let a = g.param(self.a);
        let b = g.param(self.b);
        let down = g.matmul_t(x, a)?;
        let up = g.matmul_t(down, b)?;
        Ok(if self.scale == 1.0 { up } else { g.scale(up, self.scale) })
    }
}

/// Eager form of a LoRA-adapted projection for row inputs `x[n×d_in]`:
/// `x·baseᵀ + (alpha/rank)·(x·Aᵀ)·Bᵀ`. With no adapter the result is exactly
/// `x·baseᵀ`.
pub fn lora_apply(base: &Tensor, adapter: Option<(&Tensor, &Tensor)>, alpha: f64, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let w = g.input(base.clone());
    let xv = g.input(x.clone());
    let mut y = g.matmul_t(xv, w)?;
    if let Some((a, b)) = adapter {
        let rank = a.dims2().0;
        if b.dims2().1 != rank {
            return Err(Error::Dimension {
                op: "lora_apply",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let av = g.input(a.clone());
        let bv = g.input(b.clone());
        let down = g.matmul_t(xv, av)?;
        let up = g.matmul_t(down, bv)?;
        let up = g.scale(up, alpha / rank as f64);
        y = g.add(y, up)?;
    }
    Ok(g.tensor(y))
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]))?;
        Ok(Self { gain, bias, dim })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Scaled dot-product attention over `n_heads` column groups of `q`, `k`, `v`.
pub fn multi_head_attention(g: &mut Graph, q: Var, k: Var, v: Var, n_heads: usize, causal: bool) -> Result<Var> {
    let (_, d) = g.dims(q);
    if d % n_heads != 0 || g.dims(k).1 != d || g.dims(v).1 != d {
        return Err(Error::Dimension {
            op: "attention",
            lhs: g.shape(q).to_vec(),
            rhs: g.shape(k).to_vec(),
        });
    }
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_t(qh, kh)?;
        let scores = g.scale(scores, scale);
        let probs = if causal {
            g.softmax_rows_causal(scores)?
        } else {
            g.softmax_rows(scores)?
        };
        heads.push(g.matmul(probs, vh)?);
    }
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        g.concat_cols(&heads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn lora_zero_b_is_identity_delta() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let base = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let a = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let b = Tensor::zeros(&[3, 2]);
        let x = Tensor::randn(&[5, 4], 1.0, &mut rng);
        let with = lora_apply(&base, Some((&a, &b)), 2.0, &x).unwrap();
        let without = lora_apply(&base, None, 2.0, &x).unwrap();
        assert_eq!(with, without);
        let plain = x.matmul(&base.transpose().unwrap()).unwrap();
        assert_eq!(without, plain);
    }

    #[test]
    fn lora_identity_factors_reproduce_input() {
        let base = Tensor::zeros(&[3, 3]);
        let eye = Tensor::eye(3);
        let x = Tensor::from_rows(&[&[1.0, -2.0, 0.5], &[0.25, 4.0, -1.0]]).unwrap();
        let y = lora_apply(&base, Some((&eye, &eye)), 3.0, &x).unwrap();
        assert_eq!(y, x);
    }
}
