//! Equivariant graph convolutional layer (EGNN) on the complete graph,
//! kept as a reference point for the neighborhood sub-layer. Edge
//! attributes are not used.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::geometry::complete_graph;
use crate::layers::neighborhood::relative_positions;
use crate::layers::LayerState;
use crate::nn::{Activation, Bound, FeedForward, Linear, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct EgclParams {
    /// `phi_e`: `[h_i, h_j, d_ij^2] -> m_ij`, SiLU after both layers.
    pub edge: FeedForward,
    /// `phi_x`: `m_ij -> scalar`.
    pub coord: FeedForward,
    /// `phi_inf`: `m_ij -> e_ij` in (0, 1).
    pub infer: Linear,
    /// `phi_h`: `[h_i, sum_j e_ij m_ij] -> h_i'`.
    pub node: FeedForward,
}

impl EgclParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            edge: FeedForward::new(store, &format!("{name}.edge"), (2 * d + 1, d, d), Activation::Silu, rng),
            coord: FeedForward::new(store, &format!("{name}.coord"), (d, d, 1), Activation::Silu, rng),
            infer: Linear::new(store, &format!("{name}.infer"), d, 1, rng),
            node: FeedForward::new(store, &format!("{name}.node"), (2 * d, d, d), Activation::Silu, rng),
        }
    }
}

pub fn egcl_forward(p: &Bound, params: &EgclParams, state: &LayerState) -> Result<LayerState> {
    let (h, x) = (&state.h, &state.x);
    let graph = complete_graph(&x.value().to_points()?)?;
    let (n, k) = (graph.num_nodes(), graph.degree());
    let d = h.shape()[1];
    let edges = n * k;

    let rel = relative_positions(x, &graph)?;
    let dist = rel.norm2()?.reshape(&[edges, 1])?;
    let dist_sq = rel.mul(&rel)?.sum_axis(1)?.reshape(&[edges, 1])?;
    let input = Var::concat(
        &[
            h.gather_rows(&graph.centers())?,
            h.gather_rows(&graph.targets())?,
            dist_sq,
        ],
        1,
    )?;
    let m = params.edge.forward(p, &input)?.silu();

    let one = Var::constant(Tensor::vector(vec![1.0]));
    let coef = params.coord.forward(p, &m)?.div(&dist.add(&one)?)?;
    let shift = rel.mul(&coef)?.reshape(&[n, k, 3])?.sum_axis(1)?;
    let x_next = x.add(&shift)?;

    let e = params.infer.forward(p, &m)?.sigmoid();
    let agg = m.mul(&e)?.reshape(&[n, k, d])?.sum_axis(1)?;
    let h_next = params.node.forward(p, &Var::concat(&[h.clone(), agg], 1)?)?;
    Ok(LayerState::new(h_next, x_next))
}
