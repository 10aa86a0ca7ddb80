//! Transformer encoder block applied over the whole sequence: every residue
//! attends to every other residue, with post-norm residual connections.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, FeedForward, LayerNorm, Linear, ParamStore};

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ffn: FeedForward,
    pub norm_attn: LayerNorm,
    pub norm_ffn: LayerNorm,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::invalid(
                "attention",
                format!("model width {d} is not divisible by {heads} heads"),
            ));
        }
        Ok(Self {
            heads,
            query: Linear::new(store, &format!("{name}.query"), d, d, rng),
            key: Linear::new(store, &format!("{name}.key"), d, d, rng),
            value: Linear::new(store, &format!("{name}.value"), d, d, rng),
            output: Linear::new(store, &format!("{name}.output"), d, d, rng),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), (d, 4 * d, d), Activation::Relu, rng),
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), d),
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), d),
        })
    }
}

/// Multi-head scaled dot-product self-attention without masking.
pub fn multi_head_attention(p: &Bound, params: &AttentionParams, h: &Var) -> Result<Var> {
    let d = h.shape()[1];
    let dh = d / params.heads;
    let q = params.query.forward(p, h)?;
    let k = params.key.forward(p, h)?;
    let v = params.value.forward(p, h)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(params.heads);
    for head in 0..params.heads {
        let (lo, hi) = (head * dh, (head + 1) * dh);
        let qh = q.slice(1, lo, hi)?;
        let kh = k.slice(1, lo, hi)?;
        let vh = v.slice(1, lo, hi)?;
        let weights = qh.matmul(&kh.transpose()?)?.scale(scale).softmax(1)?;
        heads.push(weights.matmul(&vh)?);
    }
    params.output.forward(p, &Var::concat(&heads, 1)?)
}

/// `LayerNorm(FFN(h~) + h~)` with `h~ = LayerNorm(MHA(h) + h)`.
pub fn attention_sublayer(p: &Bound, params: &AttentionParams, h: &Var) -> Result<Var> {
    let attended = multi_head_attention(p, params, h)?;
    let mid = params.norm_attn.forward(p, &attended.add(h)?)?;
    let ff = params.ffn.forward(p, &mid)?;
    params.norm_ffn.forward(p, &ff.add(&mid)?)
}
