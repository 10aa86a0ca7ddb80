//! Flat TOML run configuration. Keys mirror the model and training field
//! names; a single `seed` seeds both. Unknown keys are rejected.
//!
//! ```toml
//! layers = 2
//! d_model = 32
//! variant = "wo-gate"
//! epochs = 50
//! seed = 7
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::layers::Variant;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatConfig {
    layers: Option<usize>,
    d_model: Option<usize>,
    heads: Option<usize>,
    k: Option<usize>,
    lambda_half: Option<f64>,
    variant: Option<String>,
    freeze_fragments: Option<bool>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    anneal_epochs: Option<usize>,
    anneal_max_fraction: Option<f64>,
    grad_clip_norm: Option<f64>,
    anneal_literal: Option<bool>,
    fixed_layouts: Option<bool>,
    split: Option<[f64; 3]>,
    seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

macro_rules! apply {
    ($flat:ident, $target:expr, $($field:ident),*) => {
        $(if let Some(v) = $flat.$field { $target.$field = v; })*
    };
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let flat: FlatConfig = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
        let mut out = RunConfig::default();
        apply!(flat, out.model, layers, d_model, heads, k, lambda_half, freeze_fragments);
        apply!(
            flat,
            out.train,
            epochs,
            batch_size,
            learning_rate,
            anneal_epochs,
            anneal_max_fraction,
            grad_clip_norm,
            anneal_literal,
            fixed_layouts,
            split
        );
        if let Some(v) = flat.variant {
            out.model.variant = v.parse::<Variant>()?;
        }
        if let Some(seed) = flat.seed {
            out.model.seed = seed;
            out.train.seed = seed;
        }
        out.model.validate()?;
        out.train.validate()?;
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
