//! Toy causal decoder over byte tokens, conditioned on resampled visual
//! segments.
//!
//! Sequence layout: `[segment 0] .. [segment n-1] [separator] [prompt] [target]`.
//! Positions run continuously over the whole sequence. The loss covers target
//! tokens only: row `base + j` predicts target token `j`, where `base` is the
//! index of the last prompt token (or of the separator for an empty prompt).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels;
use crate::nn::{multi_head_attention, LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::text::{EOS, VOCAB};

pub const PREFIX: &str = "lm.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab: usize,
    pub depth: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    /// Hard cap on assembled sequence length.
    pub max_seq: usize,
    /// Insert one learned separator embedding between visual and text spans.
    pub separator: bool,
}

impl LmConfig {
    pub fn toy() -> Self {
        Self {
            vocab: VOCAB,
            depth: 2,
            d_model: 32,
            n_heads: 4,
            d_mlp: 64,
            max_seq: 160,
            separator: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Validation(format!(
                "lm d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab <= EOS {
            return Err(Error::Validation(format!(
                "vocab {} must include the end-of-text id {EOS}",
                self.vocab
            )));
        }
        if self.max_seq == 0 || self.d_mlp == 0 {
            return Err(Error::Validation("lm max_seq and d_mlp must be positive".into()));
        }
        Ok(())
    }

    pub fn separator_len(&self) -> usize {
        usize::from(self.separator)
    }

    /// Length of the assembled sequence: `segments·queries + sep + prompt`.
    pub fn sequence_len(&self, n_visual: usize, n_prompt: usize) -> usize {
        n_visual + self.separator_len() + n_prompt
    }
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct LanguageModel {
    cfg: LmConfig,
    tok_embed: ParamId,
    pos_embed: ParamId,
    separator: Option<ParamId>,
    blocks: Vec<DecoderBlock>,
    ln_final: LayerNorm,
    head: Linear,
}

impl LanguageModel {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: LmConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let p = |s: &str| format!("{PREFIX}{s}");
        let tok_embed = store.add(p("tok_embed"), Tensor::randn(&[cfg.vocab, d], 1.0, rng))?;
        let pos_embed = store.add(p("pos_embed"), Tensor::randn(&[cfg.max_seq, d], 1.0, rng))?;
        let separator = if cfg.separator {
            Some(store.add(p("separator"), Tensor::randn(&[1, d], 1.0, rng))?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let b = |s: &str| p(&format!("block{l}.{s}"));
            blocks.push(DecoderBlock {
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
        let head = Linear::new(store, &p("head"), d, cfg.vocab, true, rng)?;
        Ok(Self {
            cfg,
            tok_embed,
            pos_embed,
            separator,
            blocks,
            ln_final,
            head,
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.cfg
    }

    /// Embeds `[segments][separator][tokens]` and adds positions.
    pub fn assemble(&self, g: &mut Graph, segments: &[Var], tokens: &[usize]) -> Result<Var> {
        let d = self.cfg.d_model;
        let mut n_visual = 0;
        for &s in segments {
            let (rows, cols) = g.dims(s);
            if cols != d {
                return Err(Error::Dimension {
                    op: "assemble",
                    lhs: g.shape(s).to_vec(),
                    rhs: vec![rows, d],
                });
            }
            n_visual += rows;
        }
        let len = self.cfg.sequence_len(n_visual, tokens.len());
        if len > self.cfg.max_seq {
            return Err(Error::SequenceOverflow {
                len,
                max_seq: self.cfg.max_seq,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.cfg.vocab) {
            return Err(Error::OutOfRange {
                what: "token id",
                value: bad,
                max: self.cfg.vocab - 1,
            });
        }
        let mut parts: Vec<Var> = segments.to_vec();
        if let Some(sep) = self.separator {
            parts.push(g.param(sep));
        }
        if !tokens.is_empty() {
            let table = g.param(self.tok_embed);
            parts.push(g.gather_rows(table, tokens)?);
        }
        if parts.is_empty() {
            return Err(Error::Validation("cannot assemble an empty sequence".into()));
        }
        let x = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_rows(&parts)?
        };
        let pos = g.param(self.pos_embed);
        let pos = g.slice_rows(pos, 0, len)?;
        g.add(x, pos)
    }

    /// Runs the decoder stack over an assembled sequence.
    pub fn hidden(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut x = x;
        for b in &self.blocks {
            let h = b.ln1.forward(g, x)?;
            let q = b.q.forward(g, h)?;
            let k = b.k.forward(g, h)?;
            let v = b.v.forward(g, h)?;
            let att = multi_head_attention(g, q, k, v, self.cfg.n_heads, true)?;
            let att = b.o.forward(g, att)?;
            x = g.add(x, att)?;
            let h = b.ln2.forward(g, x)?;
            let h = b.fc1.forward(g, h)?;
            let h = g.gelu(h);
            let h = b.fc2.forward(g, h)?;
            x = g.add(x, h)?;
        }
        self.ln_final.forward(g, x)
    }

    /// Vocabulary logits for rows `start..start+len` of the hidden states.
    pub fn logits(&self, g: &mut Graph, hidden: Var, start: usize, len: usize) -> Result<Var> {
        let rows = if start == 0 && len == g.dims(hidden).0 {
            hidden
        } else {
            g.slice_rows(hidden, start, len)?
        };
        self.head.forward(g, rows)
    }

    /// Mean next-token cross-entropy of `target` given visual segments and a
    /// prompt. `target` should already end with [`EOS`].
    pub fn loss(&self, g: &mut Graph, segments: &[Var], prompt: &[usize], target: &[usize]) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::Validation("target must contain at least one token".into()));
        }
        let mut fed = prompt.to_vec();
        fed.extend_from_slice(&target[..target.len() - 1]);
        let x = self.assemble(g, segments, &fed)?;
        let h = self.hidden(g, x)?;
        let n_visual: usize = segments.iter().map(|&s| g.dims(s).0).sum();
        let base = self.cfg.sequence_len(n_visual, prompt.len()) - 1;
        let logits = self.logits(g, h, base, target.len())?;
        let targets: Vec<Option<usize>> = target.iter().map(|&t| Some(t)).collect();
        g.cross_entropy(logits, &targets)
    }

    /// Greedy continuation: appends the argmax token until [`EOS`] or
    /// `max_new` tokens. The returned tokens exclude the prompt and end with
    /// the EOS if one was produced.
    pub fn decode_greedy(
        &self,
        store: &ParamStore,
        segments: &[Tensor],
        prompt: &[usize],
        max_new: usize,
    ) -> Result<Vec<usize>> {
        if max_new == 0 {
            return Err(Error::Validation("max_new must be at least 1".into()));
        }
        let mut tokens = prompt.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_new {
            let mut g = Graph::with_params(store);
            let segs: Vec<Var> = segments.iter().map(|s| g.input(s.clone())).collect();
            let x = self.assemble(&mut g, &segs, &tokens)?;
            let len = g.dims(x).0;
            let h = self.hidden(&mut g, x)?;
            let logits = self.logits(&mut g, h, len - 1, 1)?;
            let next = argmax(g.value(logits));
            out.push(next);
            if next == EOS {
                break;
            }
            tokens.push(next);
        }
        Ok(out)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of `targets` against the last `targets.len()` rows of
/// `logits` (`n × vocab`). Earlier rows are ignored.
pub fn lm_loss(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let (n, v) = logits.dims2();
    if targets.is_empty() {
        return Err(Error::Validation("target must contain at least one token".into()));
    }
    if targets.len() > n {
        return Err(Error::Dimension {
            op: "lm_loss",
            lhs: logits.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    let base = n - targets.len();
    let mut total = 0.0;
    for (j, &t) in targets.iter().enumerate() {
        if t >= v {
            return Err(Error::OutOfRange {
                what: "target id",
                value: t,
                max: v - 1,
            });
        }
        let row = &logits.data()[(base + j) * v..(base + j + 1) * v];
        total += kernels::log_sum_exp(row) - row[t];
    }
    Ok(total / targets.len() as f64)
}
