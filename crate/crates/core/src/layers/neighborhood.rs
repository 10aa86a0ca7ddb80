//! The neighborhood equivariant sub-layer: messages over the neighbor
//! graph, the radial coordinate update and the gated residue update.
//!
//! All geometric dependence enters through neighbor distances and relative
//! differences `x_i - x_j`, so features are invariant and coordinates
//! equivariant under rotations, reflections and translations.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::geometry::NeighborGraph;
use crate::layers::Variant;
use crate::nn::{Activation, Bound, FeedForward, Linear, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum MessageParams {
    /// `SiLU(FFN([h_i, h_j, d_ij]))` scored by a `1×d` attention row.
    Ffn { ffn: FeedForward, score: Linear },
    /// Single-head scaled dot-product attention: query from `h_i`, key and
    /// value from `[h_j, d_ij]`.
    DotAttention {
        query: Linear,
        key: Linear,
        value: Linear,
    },
}

#[derive(Clone, Debug)]
pub struct EquivariantParams {
    pub message: MessageParams,
    /// Per-edge coordinate scalar; absent when the attention weight stands
    /// in for it.
    pub coord: Option<FeedForward>,
    pub gate: FeedForward,
}

impl EquivariantParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        variant: Variant,
        rng: &mut R,
    ) -> Self {
        let message = if variant.attention_messages() {
            MessageParams::DotAttention {
                query: Linear::new(store, &format!("{name}.msg.query"), d, d, rng),
                key: Linear::new(store, &format!("{name}.msg.key"), d + 1, d, rng),
                value: Linear::new(store, &format!("{name}.msg.value"), d + 1, d, rng),
            }
        } else {
            MessageParams::Ffn {
                ffn: FeedForward::new(
                    store,
                    &format!("{name}.msg.ffn"),
                    (2 * d + 1, d, d),
                    Activation::Silu,
                    rng,
                ),
                score: Linear::new(store, &format!("{name}.msg.score"), d, 1, rng),
            }
        };
        let coord = (variant != Variant::NoMcffn).then(|| {
            FeedForward::with_zero_output(
                store,
                &format!("{name}.coord"),
                (d, d, 1),
                Activation::Silu,
                rng,
            )
        });
        let gate = FeedForward::new(store, &format!("{name}.gate"), (d, d, d), Activation::Relu, rng);
        Self {
            message,
            coord,
            gate,
        }
    }
}

/// Messages along the edges of a neighbor graph, in edge order (residue
/// `i` owns rows `i*k .. (i+1)*k`).
#[derive(Clone)]
pub struct Messages {
    pub graph: NeighborGraph,
    /// Pre-weighting messages, `E×d`.
    pub raw: Var,
    /// Softmax weights over each residue's neighbors, `N×k`.
    pub weights: Var,
    /// Weighted messages `w_ij * m_ij`, `E×d`.
    pub weighted: Var,
}

/// Relative differences `x_i - x_j` for every edge, `E×3`.
pub fn relative_positions(x: &Var, graph: &NeighborGraph) -> Result<Var> {
    x.gather_rows(&graph.centers())?
        .sub(&x.gather_rows(&graph.targets())?)
}

pub fn message_update(
    p: &Bound,
    params: &EquivariantParams,
    h: &Var,
    x: &Var,
    graph: &NeighborGraph,
) -> Result<Messages> {
    let (n, k) = (graph.num_nodes(), graph.degree());
    let edges = n * k;
    let centers = graph.centers();
    let targets = graph.targets();
    let dist = relative_positions(x, graph)?.norm2()?.reshape(&[edges, 1])?;
    let h_j = h.gather_rows(&targets)?;
    let (raw, scores) = match &params.message {
        MessageParams::Ffn { ffn, score } => {
            let input = Var::concat(&[h.gather_rows(&centers)?, h_j, dist], 1)?;
            let raw = ffn.forward(p, &input)?.silu();
            let scores = score.forward(p, &raw)?;
            (raw, scores)
        }
        MessageParams::DotAttention { query, key, value } => {
            let d = h.shape()[1];
            let input = Var::concat(&[h_j, dist], 1)?;
            let keys = key.forward(p, &input)?;
            let raw = value.forward(p, &input)?;
            let queries = query.forward(p, h)?.gather_rows(&centers)?;
            let scores = queries
                .mul(&keys)?
                .sum_axis(1)?
                .scale(1.0 / (d as f64).sqrt());
            (raw, scores)
        }
    };
    let weights = scores.reshape(&[n, k])?.softmax(1)?;
    let weighted = raw.mul(&weights.reshape(&[edges, 1])?)?;
    Ok(Messages {
        graph: graph.clone(),
        raw,
        weights,
        weighted,
    })
}

/// `x_i + sum_j (x_i - x_j) * s_ij` where `s_ij` is the coordinate FFN of
/// the weighted message, or the attention weight itself when the variant
/// drops that FFN.
pub fn coordinate_update(
    p: &Bound,
    params: &EquivariantParams,
    x: &Var,
    messages: &Messages,
) -> Result<Var> {
    let graph = &messages.graph;
    let (n, k) = (graph.num_nodes(), graph.degree());
    let scalars = match &params.coord {
        Some(ffn) => ffn.forward(p, &messages.weighted)?,
        None => messages.weights.reshape(&[n * k, 1])?,
    };
    let shift = relative_positions(x, graph)?
        .mul(&scalars)?
        .reshape(&[n, k, 3])?
        .sum_axis(1)?;
    x.add(&shift)
}

/// `h_i + sigmoid(FFN(c_i)) * c_i` with `c_i` the sum of weighted messages;
/// without the gate, `h_i + FFN(c_i)`.
pub fn residue_update(
    p: &Bound,
    params: &EquivariantParams,
    h: &Var,
    messages: &Messages,
    variant: Variant,
) -> Result<Var> {
    let graph = &messages.graph;
    let d = h.shape()[1];
    let context = messages
        .weighted
        .reshape(&[graph.num_nodes(), graph.degree(), d])?
        .sum_axis(1)?;
    let out = params.gate.forward(p, &context)?;
    if variant == Variant::NoGate {
        h.add(&out)
    } else {
        h.add(&out.sigmoid().mul(&context)?)
    }
}

/// Replaces rows selected by `mask` with `anchor` rows, leaving the others
/// untouched.
pub fn reanchor(x: &Var, mask: &[bool], anchor: &[[f64; 3]]) -> Result<Var> {
    let keep: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
    let fixed: Vec<f64> = mask
        .iter()
        .zip(anchor)
        .flat_map(|(&m, a)| if m { *a } else { [0.0; 3] })
        .collect();
    let keep = Var::constant(Tensor::matrix(mask.len(), 1, keep)?);
    let fixed = Var::constant(Tensor::matrix(mask.len(), 3, fixed)?);
    x.mul(&keep)?.add(&fixed)
}
