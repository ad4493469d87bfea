//! Transformer building blocks shared by the text-to-semantic and acoustic models.

use rand::Rng;

use super::params::fan_in_uniform;
use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::Scalar;

/// Sinusoidal features of a flow step `t ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeEmbedding<T> {
    pub t: f64,
    pub embedding: Vec<T>,
}

impl<T: Scalar> TimeEmbedding<T> {
    /// `[sin(1000·t·f_i), cos(1000·t·f_i)]` with `f_i = 10000^(−i/half)`.
    pub fn new(t: f64, dim: usize) -> Self {
        let half = dim / 2;
        let mut embedding = vec![T::zero(); dim];
        for i in 0..half {
            let f = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let a = 1000.0 * t * f;
            embedding[i] = T::lit(a.sin());
            embedding[half + i] = T::lit(a.cos());
        }
        Self { t, embedding }
    }

    pub fn tensor(&self) -> Tensor<T> {
        Tensor::matrix(1, self.embedding.len(), self.embedding.clone()).expect("nonempty")
    }
}

/// Inserts `{prefix}.w` (`[fan_in×fan_out]`) and optionally `{prefix}.b`.
pub fn init_linear<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    bias: bool,
    zero: bool,
) -> Result<()> {
    let w = if zero {
        Tensor::zeros(&[fan_in, fan_out])
    } else {
        fan_in_uniform(&[fan_in, fan_out], fan_in, rng)
    };
    store.insert(format!("{prefix}.w"), w)?;
    if bias {
        let b = if zero {
            Tensor::zeros(&[1, fan_out])
        } else {
            fan_in_uniform(&[1, fan_out], fan_in, rng)
        };
        store.insert(format!("{prefix}.b"), b)?;
    }
    Ok(())
}

/// `x·W + b` (bias only when the store has one).
pub fn linear<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let y = g.matmul(x, w)?;
    let bname = format!("{prefix}.b");
    if store.contains(&bname) {
        let b = g.param(store, &bname)?;
        g.add_row(y, b)
    } else {
        Ok(y)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub causal: bool,
    /// Width of the cross-attention memory, when the block attends to one.
    pub cross_dim: Option<usize>,
    /// Width of the time features driving adaptive RMSNorm.
    pub time_dim: Option<usize>,
    pub rope_base: f64,
    pub eps: f64,
    /// Zero-initialize the attention and feed-forward output projections.
    pub zero_out: bool,
}

impl BlockConfig {
    pub fn new(dim: usize, heads: usize) -> Self {
        Self {
            dim,
            heads,
            ffn_dim: 4 * dim,
            causal: false,
            cross_dim: None,
            time_dim: None,
            rope_base: 10000.0,
            eps: 1e-6,
            zero_out: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.dim % self.heads != 0 || (self.dim / self.heads) % 2 != 0 {
            return shape_err(format!(
                "model width {} must split into {} heads of even width",
                self.dim, self.heads
            ));
        }
        Ok(())
    }
}

fn init_norm<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    prefix: &str,
    cfg: &BlockConfig,
) -> Result<()> {
    match cfg.time_dim {
        Some(td) => init_linear(
            store,
            rng,
            &format!("{prefix}.ada"),
            td,
            2 * cfg.dim,
            true,
            false,
        ),
        None => store.insert(format!("{prefix}.g"), Tensor::full(&[1, cfg.dim], T::one())),
    }
}

/// RMSNorm with a learned gain, or, when `time` is given, adaptive RMSNorm:
/// `rms(x)·(1 + scale(t)) + shift(t)` with `[scale | shift]` a linear map of
/// the time features.
pub fn norm<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    time: Option<Var>,
    eps: f64,
) -> Result<Var> {
    let y = g.rms_norm(x, T::lit(eps));
    match time {
        Some(tf) => {
            let d = g.shape(x)[1];
            let ss = linear(g, store, &format!("{prefix}.ada"), tf)?;
            let scale = g.slice_cols(ss, 0, d)?;
            let scale = g.add_scalar(scale, T::one());
            let shift = g.slice_cols(ss, d, d)?;
            let y = g.mul_row(y, scale)?;
            g.add_row(y, shift)
        }
        None => {
            let gain = g.param(store, &format!("{prefix}.g"))?;
            g.mul_row(y, gain)
        }
    }
}

pub fn init_block<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    prefix: &str,
    cfg: &BlockConfig,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.dim;
    init_norm(store, rng, &format!("{prefix}.norm1"), cfg)?;
    for p in ["wq", "wk", "wv"] {
        init_linear(
            store,
            rng,
            &format!("{prefix}.attn.{p}"),
            d,
            d,
            false,
            false,
        )?;
    }
    init_linear(
        store,
        rng,
        &format!("{prefix}.attn.wo"),
        d,
        d,
        false,
        cfg.zero_out,
    )?;
    if let Some(md) = cfg.cross_dim {
        init_norm(store, rng, &format!("{prefix}.norm_x"), cfg)?;
        init_linear(
            store,
            rng,
            &format!("{prefix}.xattn.wq"),
            d,
            d,
            false,
            false,
        )?;
        init_linear(
            store,
            rng,
            &format!("{prefix}.xattn.wk"),
            md,
            d,
            false,
            false,
        )?;
        init_linear(
            store,
            rng,
            &format!("{prefix}.xattn.wv"),
            md,
            d,
            false,
            false,
        )?;
        init_linear(
            store,
            rng,
            &format!("{prefix}.xattn.wo"),
            d,
            d,
            false,
            cfg.zero_out,
        )?;
    }
    init_norm(store, rng, &format!("{prefix}.norm2"), cfg)?;
    init_linear(
        store,
        rng,
        &format!("{prefix}.ffn.w1"),
        d,
        cfg.ffn_dim,
        true,
        false,
    )?;
    init_linear(
        store,
        rng,
        &format!("{prefix}.ffn.w2"),
        cfg.ffn_dim,
        d,
        true,
        cfg.zero_out,
    )?;
    Ok(())
}

/// Pre-norm transformer block: self-attention with rotary positions, optional
/// cross-attention to `memory`, then a SiLU feed-forward, each residual.
///
/// `time` holds time features of width `cfg.time_dim`; it switches every norm
/// to adaptive RMSNorm.
pub fn transformer_block<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    cfg: &BlockConfig,
    x: Var,
    time: Option<Var>,
    memory: Option<Var>,
) -> Result<Var> {
    cfg.validate()?;
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || shape[1] != cfg.dim {
        return shape_err(format!(
            "block {prefix} expects [frames×{}], got {shape:?}",
            cfg.dim
        ));
    }
    if time.is_some() != cfg.time_dim.is_some() {
        return shape_err(format!("block {prefix}: time conditioning mismatch"));
    }
    let h = norm(g, store, &format!("{prefix}.norm1"), x, time, cfg.eps)?;
    let q = linear(g, store, &format!("{prefix}.attn.wq"), h)?;
    let k = linear(g, store, &format!("{prefix}.attn.wk"), h)?;
    let v = linear(g, store, &format!("{prefix}.attn.wv"), h)?;
    let q = g.rope(q, cfg.heads, 0, cfg.rope_base)?;
    let k = g.rope(k, cfg.heads, 0, cfg.rope_base)?;
    let a = g.attention(q, k, v, cfg.heads, cfg.causal)?;
    let a = linear(g, store, &format!("{prefix}.attn.wo"), a)?;
    let mut x = g.add(x, a)?;

    match (cfg.cross_dim, memory) {
        (Some(md), Some(mem)) => {
            if g.shape(mem)[1] != md {
                return shape_err(format!("block {prefix}: memory width {:?}", g.shape(mem)));
            }
            let h = norm(g, store, &format!("{prefix}.norm_x"), x, time, cfg.eps)?;
            let q = linear(g, store, &format!("{prefix}.xattn.wq"), h)?;
            let k = linear(g, store, &format!("{prefix}.xattn.wk"), mem)?;
            let v = linear(g, store, &format!("{prefix}.xattn.wv"), mem)?;
            let a = g.attention(q, k, v, cfg.heads, false)?;
            let a = linear(g, store, &format!("{prefix}.xattn.wo"), a)?;
            x = g.add(x, a)?;
        }
        (None, None) => {}
        _ => return shape_err(format!("block {prefix}: cross-attention memory mismatch")),
    }

    let h = norm(g, store, &format!("{prefix}.norm2"), x, time, cfg.eps)?;
    let f = linear(g, store, &format!("{prefix}.ffn.w1"), h)?;
    let f = g.silu(f);
    let f = linear(g, store, &format!("{prefix}.ffn.w2"), f)?;
    g.add(x, f)
}
