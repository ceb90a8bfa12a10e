//! Physics attention with adaptive temperature, plain and AdaLN-Zero
//! Transolver blocks, and the sinusoidal denoising-time embedding.
//!
//! Physics attention softly assigns every node to a small fixed set of slice
//! tokens per head, runs ordinary self-attention among the slices, and
//! scatters the result back to the nodes. Cost is linear in the node count.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{Activation, LayerNorm, Linear, Mlp, ParamBuilder, ParamId, Tape, Var};

#[derive(Debug, Error, PartialEq)]
pub enum TransolverError {
    #[error("embedding width must be even and nonzero, got {0}")]
    OddWidth(usize),
    #[error("width {width} is not divisible by {heads} heads")]
    HeadSplit { width: usize, heads: usize },
    #[error("at least one slice is required")]
    NoSlices,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub width: usize,
    pub heads: usize,
    pub slices: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), TransolverError> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(TransolverError::HeadSplit {
                width: self.width,
                heads: self.heads,
            });
        }
        if self.slices == 0 {
            return Err(TransolverError::NoSlices);
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone)]
pub struct PhysicsAttention {
    pub config: AttentionConfig,
    pub split: Linear,
    pub slice_logits: Vec<Linear>,
    /// Zero-initialized, so every temperature starts at exp(0) = 1.
    pub temperature: Linear,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub merge: Linear,
}

impl PhysicsAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, config: AttentionConfig) -> Result<Self, TransolverError> {
        config.validate()?;
        let (w, dh, p) = (config.width, config.head_dim(), config.slices);
        let mut sub = pb.sub(name);
        let slice_logits = (0..config.heads)
            .map(|h| Linear::new(&mut sub, &format!("slice{h}"), dh, p))
            .collect();
        Ok(Self {
            config,
            split: Linear::new(&mut sub, "split", w, w),
            slice_logits,
            temperature: Linear::zeros(&mut sub, "temperature", dh, 1),
            query: Linear::no_bias(&mut sub, "query", dh, dh),
            key: Linear::no_bias(&mut sub, "key", dh, dh),
            value: Linear::no_bias(&mut sub, "value", dh, dh),
            merge: Linear::new(&mut sub, "merge", w, w),
        })
    }

    /// Per-node soft slice assignment of head `h`: `softmax(logits / tau)`.
    pub fn slice_weights(&self, t: &Tape, head_feats: Var, h: usize) -> Var {
        let logits = self.slice_logits[h].forward(t, head_feats);
        // 1 / tau = exp(-Linear(v))
        let inv_tau = t.exp(t.neg(self.temperature.forward(t, head_feats)));
        t.softmax_rows(t.mul_col(logits, inv_tau))
    }

    pub fn forward(&self, t: &Tape, x: Var) -> Var {
        let dh = self.config.head_dim();
        let v = self.split.forward(t, x);
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.config.heads)
            .map(|h| {
                let vh = t.slice_cols(v, h * dh, dh);
                let w = self.slice_weights(t, vh, h);
                let wt = t.transpose(w);
                let num = t.matmul(wt, vh);
                let den = t.transpose(t.col_sum(w));
                let slices = t.div_col_guarded(num, den);
                let q = self.query.forward(t, slices);
                let k = self.key.forward(t, slices);
                let val = self.value.forward(t, slices);
                let att = t.softmax_rows(t.scale(t.matmul(q, t.transpose(k)), scale));
                let updated = t.matmul(att, val);
                t.matmul(w, updated)
            })
            .collect();
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            t.concat_cols(&heads)
        };
        self.merge.forward(t, merged)
    }
}

/// `V += Attn(LN(V)); V += MLP(LN(V))`.
#[derive(Debug, Clone)]
pub struct TransolverBlock {
    pub norm1: LayerNorm,
    pub attention: PhysicsAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl TransolverBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, config: AttentionConfig) -> Result<Self, TransolverError> {
        let mut sub = pb.sub(name);
        let w = config.width;
        Ok(Self {
            norm1: LayerNorm::new(&mut sub, "norm1", w),
            attention: PhysicsAttention::new(&mut sub, "attn", config)?,
            norm2: LayerNorm::new(&mut sub, "norm2", w),
            mlp: Mlp::new(&mut sub, "mlp", w, w, w, Activation::Gelu),
        })
    }

    pub fn forward(&self, t: &Tape, x: Var) -> Var {
        let x = t.add(x, self.attention.forward(t, self.norm1.forward(t, x)));
        t.add(x, self.mlp.forward(t, self.norm2.forward(t, x)))
    }
}

/// Token mixer of a conditioned block. `Nodewise` replaces attention with a
/// per-node MLP, removing all interaction between nodes.
#[derive(Debug, Clone)]
pub enum Mixer {
    Attention(PhysicsAttention),
    Nodewise(Mlp),
}

impl Mixer {
    fn forward(&self, t: &Tape, x: Var) -> Var {
        match self {
            Mixer::Attention(a) => a.forward(t, x),
            Mixer::Nodewise(m) => m.forward(t, x),
        }
    }
}

/// Shift, scale and gate for one sub-layer: `base + MLP(emb)`, where the
/// base starts at `(alpha, beta, gamma) = (0, 0, 1)` and the MLP output
/// layer at zero.
#[derive(Debug, Clone)]
pub struct Modulation {
    pub base: ParamId,
    pub mlp: Mlp,
    width: usize,
}

impl Modulation {
    fn new(pb: &mut ParamBuilder, name: &str, emb_width: usize, width: usize) -> Self {
        let mut sub = pb.sub(name);
        let mut init = Array2::zeros((1, 3 * width));
        init.slice_mut(ndarray::s![.., 2 * width..]).fill(1.0);
        let base = sub.param_value("base", init);
        let mlp = Mlp::zero_output(&mut sub, "mlp", emb_width, width, 3 * width, Activation::Gelu);
        Self { base, mlp, width }
    }

    /// Returns `(alpha, beta, gamma)` as `1 x width` rows.
    pub fn forward(&self, t: &Tape, emb: Var) -> (Var, Var, Var) {
        let m = t.add(t.param(self.base), self.mlp.forward(t, emb));
        let w = self.width;
        (t.slice_cols(m, 0, w), t.slice_cols(m, w, w), t.slice_cols(m, 2 * w, w))
    }
}

/// AdaLN-Zero conditioned block; the identity map at initialization.
#[derive(Debug, Clone)]
pub struct AdaLnBlock {
    pub mixer: Mixer,
    pub mlp: Mlp,
    pub mod_mixer: Modulation,
    pub mod_mlp: Modulation,
}

impl AdaLnBlock {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        config: AttentionConfig,
        emb_width: usize,
        nodewise: bool,
    ) -> Result<Self, TransolverError> {
        let mut sub = pb.sub(name);
        let w = config.width;
        let mixer = if nodewise {
            Mixer::Nodewise(Mlp::new(&mut sub, "mixer", w, w, w, Activation::Gelu))
        } else {
            Mixer::Attention(PhysicsAttention::new(&mut sub, "attn", config)?)
        };
        let mod_mixer = Modulation::new(&mut sub, "mod_mixer", emb_width, w);
        Ok(Self {
            mixer,
            mlp: Mlp::new(&mut sub, "mlp", w, w, w, Activation::Gelu),
            mod_mixer,
            mod_mlp: Modulation::new(&mut sub, "mod_mlp", emb_width, w),
        })
    }

    fn modulate(t: &Tape, x: Var, beta: Var, gamma: Var) -> Var {
        t.add_row(t.mul_row(t.layer_norm(x), gamma), beta)
    }

    /// `emb` is a `1 x emb_width` row shared by all nodes.
    pub fn forward(&self, t: &Tape, x: Var, emb: Var) -> Var {
        let (alpha, beta, gamma) = self.mod_mixer.forward(t, emb);
        let h = self.mixer.forward(t, Self::modulate(t, x, beta, gamma));
        let x = t.add(x, t.mul_row(h, alpha));
        let (alpha, beta, gamma) = self.mod_mlp.forward(t, emb);
        let h = self.mlp.forward(t, Self::modulate(t, x, beta, gamma));
        t.add(x, t.mul_row(h, alpha))
    }
}

/// Linear lift, plain Transolver blocks, linear projection.
#[derive(Debug, Clone)]
pub struct Transolver {
    pub lift: Linear,
    pub blocks: Vec<TransolverBlock>,
    pub out: Linear,
}

impl Transolver {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        depth: usize,
        config: AttentionConfig,
    ) -> Result<Self, TransolverError> {
        let mut sub = pb.sub(name);
        let lift = Linear::new(&mut sub, "lift", in_dim, config.width);
        let blocks = (0..depth)
            .map(|i| TransolverBlock::new(&mut sub, &format!("block{i}"), config))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            lift,
            blocks,
            out: Linear::new(&mut sub, "out", config.width, out_dim),
        })
    }

    pub fn forward(&self, t: &Tape, x: Var) -> Var {
        let mut h = self.lift.forward(t, x);
        for b in &self.blocks {
            h = b.forward(t, h);
        }
        self.out.forward(t, h)
    }
}

/// Linear lift, AdaLN-Zero blocks, linear projection.
#[derive(Debug, Clone)]
pub struct AdaTransolver {
    pub lift: Linear,
    pub blocks: Vec<AdaLnBlock>,
    pub out: Linear,
}

impl AdaTransolver {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        depth: usize,
        config: AttentionConfig,
        emb_width: usize,
        nodewise: bool,
    ) -> Result<Self, TransolverError> {
        let mut sub = pb.sub(name);
        let lift = Linear::new(&mut sub, "lift", in_dim, config.width);
        let blocks = (0..depth)
            .map(|i| AdaLnBlock::new(&mut sub, &format!("block{i}"), config, emb_width, nodewise))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            lift,
            blocks,
            out: Linear::new(&mut sub, "out", config.width, out_dim),
        })
    }

    /// Lifted features after all blocks, before the output projection.
    pub fn trunk(&self, t: &Tape, x: Var, emb: Var) -> Var {
        let mut h = self.lift.forward(t, x);
        for b in &self.blocks {
            h = b.forward(t, h, emb);
        }
        h
    }

    pub fn forward(&self, t: &Tape, x: Var, emb: Var) -> Var {
        let h = self.trunk(t, x, emb);
        self.out.forward(t, h)
    }
}

/// `[sin(w_0 r) .. sin(w_{M-1} r), cos(w_0 r) .. cos(w_{M-1} r)]` with
/// `M = width / 2` and `w_n = exp(-ln(10000) n / (M - 1))`.
pub fn sinusoidal_embedding(r: f64, width: usize) -> Result<Array2<f64>, TransolverError> {
    if width == 0 || !width.is_multiple_of(2) {
        return Err(TransolverError::OddWidth(width));
    }
    let m = width / 2;
    let mut out = Array2::zeros((1, width));
    for n in 0..m {
        let w = frequency(n, m);
        out[[0, n]] = (w * r).sin();
        out[[0, m + n]] = (w * r).cos();
    }
    Ok(out)
}

/// `w_n`; with a single frequency the only value is `w_0 = 1`.
pub fn frequency(n: usize, m: usize) -> f64 {
    if n == 0 || m < 2 {
        return 1.0;
    }
    (-(10000f64.ln()) / (m - 1) as f64 * n as f64).exp()
}
