//! Neighborhood attentive equivariant layers (NAELs) and the EGCL reference
//! layer.
//!
//! A NAEL runs a global attention sub-layer over residue features, builds
//! a neighbor graph from the current coordinates, and then updates
//! messages, coordinates and residue features over that graph.

pub mod attention;
pub mod egcl;
pub mod neighborhood;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::geometry::{complete_graph, knn, NeighborGraph};
use crate::nn::{Bound, ParamStore};

pub use attention::{attention_sublayer, AttentionParams};
pub use neighborhood::{
    coordinate_update, message_update, residue_update, EquivariantParams, Messages,
};

/// Architecture ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    #[serde(rename = "default")]
    Default,
    /// Plain FFN of the aggregated message instead of the sigmoid gate.
    #[serde(rename = "wo-gate")]
    NoGate,
    /// Complete pairwise graph instead of k nearest neighbors.
    #[serde(rename = "wo-knn")]
    NoKnn,
    /// Dot-product attention messages instead of the concat FFN.
    #[serde(rename = "wo-mffn")]
    NoMffn,
    /// As `NoMffn`, and the attention weight replaces the coordinate FFN.
    #[serde(rename = "wo-mcffn")]
    NoMcffn,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Default,
        Variant::NoGate,
        Variant::NoKnn,
        Variant::NoMffn,
        Variant::NoMcffn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::NoGate => "wo-gate",
            Variant::NoKnn => "wo-knn",
            Variant::NoMffn => "wo-mffn",
            Variant::NoMcffn => "wo-mcffn",
        }
    }

    pub(crate) fn attention_messages(self) -> bool {
        matches!(self, Variant::NoMffn | Variant::NoMcffn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace("w/o", "wo").replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Debug)]
pub struct NaelParams {
    pub attention: AttentionParams,
    pub equivariant: EquivariantParams,
}

impl NaelParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        variant: Variant,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attention: AttentionParams::new(store, &format!("{name}.attn"), d, heads, rng)?,
            equivariant: EquivariantParams::new(store, &format!("{name}.equi"), d, variant, rng),
        })
    }
}

/// Residue features `h` (`N×d`) and coordinates `x` (`N×3`) between layers.
#[derive(Clone)]
pub struct LayerState {
    pub h: Var,
    pub x: Var,
    /// Messages computed by the layer that produced this state.
    pub messages: Option<Messages>,
}

impl LayerState {
    pub fn new(h: Var, x: Var) -> Self {
        Self {
            h,
            x,
            messages: None,
        }
    }
}

/// Neighbor graph for a layer: k nearest neighbors of the current
/// coordinates, or the complete graph for [`Variant::NoKnn`].
pub fn layer_graph(x: &Var, k: usize, variant: Variant) -> Result<NeighborGraph> {
    let points = x.value().to_points()?;
    if variant == Variant::NoKnn {
        complete_graph(&points)
    } else {
        knn(&points, k)
    }
}

pub fn nael_forward(
    p: &Bound,
    params: &NaelParams,
    state: &LayerState,
    k: usize,
    variant: Variant,
) -> Result<LayerState> {
    let h_mid = attention_sublayer(p, &params.attention, &state.h)?;
    let graph = layer_graph(&state.x, k, variant)?;
    let messages = message_update(p, &params.equivariant, &h_mid, &state.x, &graph)?;
    let x = coordinate_update(p, &params.equivariant, &state.x, &messages)?;
    let h = residue_update(p, &params.equivariant, &h_mid, &messages, variant)?;
    Ok(LayerState {
        h,
        x,
        messages: Some(messages),
    })
}

/// The neighborhood half of a NAEL on its own (graph construction and the
/// three updates), as timed by the graph benchmark.
pub fn neighborhood_sublayer(
    p: &Bound,
    params: &EquivariantParams,
    state: &LayerState,
    k: usize,
    variant: Variant,
) -> Result<LayerState> {
    let graph = layer_graph(&state.x, k, variant)?;
    let messages = message_update(p, params, &state.h, &state.x, &graph)?;
    let x = coordinate_update(p, params, &state.x, &messages)?;
    let h = residue_update(p, params, &state.h, &messages, variant)?;
    Ok(LayerState {
        h,
        x,
        messages: Some(messages),
    })
}
