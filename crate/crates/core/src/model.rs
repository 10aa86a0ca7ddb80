//! The full network: residue/mask embeddings, `L` stacked NAELs and a
//! softmax head tied to the residue embedding matrix, plus the joint
//! sequence/coordinate loss and greedy decoding.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alphabet::{self, NUM_AMINO_ACIDS};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::geometry::{init_coordinates, Point};
use crate::io::records::ProteinRecord;
use crate::layers::neighborhood::reanchor;
use crate::layers::{nael_forward, LayerState, NaelParams, Variant};
use crate::nn::{uniform, Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Probabilities below this are clamped before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub k: usize,
    /// Weight of the squared coordinate error (λ/2).
    pub lambda_half: f64,
    pub variant: Variant,
    /// Re-anchor fragment coordinates to their inputs after every layer.
    pub freeze_fragments: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            d_model: 64,
            heads: 4,
            k: 30,
            lambda_half: 1.0,
            variant: Variant::Default,
            freeze_fragments: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers < 1 {
            return fail("layers must be at least 1".into());
        }
        if self.heads < 1 || self.d_model < self.heads {
            return fail(format!(
                "need d_model >= heads >= 1 (d_model={}, heads={})",
                self.d_model, self.heads
            ));
        }
        if self.d_model % self.heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.k < 1 {
            return fail("k must be at least 1".into());
        }
        if !(self.lambda_half >= 0.0 && self.lambda_half.is_finite()) {
            return fail(format!("lambda_half must be finite and >= 0, got {}", self.lambda_half));
        }
        Ok(())
    }
}

/// Sinusoidal positional encodings, `N×d`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for pos in 0..n {
        for j in 0..d {
            let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![n, d], data).expect("n*d values")
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    residue_embedding: ParamId,
    mask_embedding: ParamId,
    layers: Vec<NaelParams>,
}

/// Graph handles for one forward pass.
pub struct ForwardVars {
    pub logits: Var,
    pub probs: Var,
    pub coords: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub probs: Tensor,
    pub coords: Vec<Point>,
    pub sequence: String,
}

/// Loss terms summed over non-fragment residues.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub nll: f64,
    pub coord: f64,
    /// How many true-residue probabilities fell below [`PROB_FLOOR`].
    pub clamped: usize,
}

impl Model {
    /// Randomly initialized model (embeddings and linear layers uniform in
    /// ±1/sqrt(fan_in), layer norms at identity, coordinate heads at zero).
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let mut params = ParamStore::new();
        let bound = 1.0 / (d as f64).sqrt();
        let residue_embedding = params.add(
            "embed.residues",
            uniform(&mut rng, &[NUM_AMINO_ACIDS, d], bound),
        );
        let mask_embedding = params.add("embed.mask", uniform(&mut rng, &[d], bound));
        let layers = (0..config.layers)
            .map(|l| {
                NaelParams::new(
                    &mut params,
                    &format!("layers.{l}"),
                    d,
                    config.heads,
                    config.variant,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            params,
            residue_embedding,
            mask_embedding,
            layers,
        })
    }

    pub fn bind(&self, trainable: bool) -> Bound {
        self.params.bind(trainable)
    }

    /// Initial coordinates: fragment positions copied from the record, the
    /// rest laid out on spheres around their left neighbors.
    pub fn initial_coordinates<R: Rng + ?Sized>(
        &self,
        record: &ProteinRecord,
        fragments: &[usize],
        rng: &mut R,
    ) -> Result<Vec<Point>> {
        let given: Vec<Point> = fragments.iter().map(|&i| record.coords[i]).collect();
        init_coordinates(record.len(), fragments, &given, rng)
    }

    /// `h0` from residue embeddings at fragments and the mask embedding
    /// elsewhere, plus positional encodings; `x0` as given.
    pub fn embed(
        &self,
        p: &Bound,
        record: &ProteinRecord,
        fragments: &[usize],
        x0: &[Point],
    ) -> Result<LayerState> {
        let n = record.len();
        if x0.len() != n {
            return Err(Error::invalid(
                "embed",
                format!("{} initial coordinates for {n} residues", x0.len()),
            ));
        }
        let residues = record.residue_indices();
        let mut rows = vec![NUM_AMINO_ACIDS; n];
        for &i in fragments {
            if i >= n {
                return Err(Error::invalid(
                    "embed",
                    format!("fragment index {} out of range for {n} residues", i + 1),
                ));
            }
            rows[i] = residues[i];
        }
        let d = self.config.d_model;
        let table = Var::concat(
            &[
                p.var(self.residue_embedding).clone(),
                p.var(self.mask_embedding).reshape(&[1, d])?,
            ],
            0,
        )?;
        let rows: Rc<[usize]> = rows.into();
        let h = table
            .gather_rows(&rows)?
            .add(&Var::constant(positional_encoding(n, d)))?;
        Ok(LayerState::new(h, Var::constant(Tensor::from_points(x0))))
    }

    pub fn forward_vars(
        &self,
        p: &Bound,
        record: &ProteinRecord,
        fragments: &[usize],
        x0: &[Point],
    ) -> Result<ForwardVars> {
        let mut state = self.embed(p, record, fragments, x0)?;
        let mut mask = vec![false; record.len()];
        for &i in fragments {
            mask[i] = true;
        }
        for (l, layer) in self.layers.iter().enumerate() {
            state = nael_forward(p, layer, &state, self.config.k, self.config.variant)?;
            if self.config.freeze_fragments {
                state.x = reanchor(&state.x, &mask, x0)?;
            }
            if !state.h.value().is_finite() || !state.x.value().is_finite() {
                return Err(Error::NonFinite { layer: l + 1 });
            }
        }
        let logits = state
            .h
            .matmul(&p.var(self.residue_embedding).transpose()?)?;
        let probs = logits.softmax(1)?;
        Ok(ForwardVars {
            logits,
            probs,
            coords: state.x,
        })
    }

    /// Inference from explicit initial coordinates.
    pub fn predict_from(
        &self,
        record: &ProteinRecord,
        fragments: &[usize],
        x0: &[Point],
    ) -> Result<Prediction> {
        let p = self.bind(false);
        let out = self.forward_vars(&p, record, fragments, x0)?;
        let probs = out.probs.value().clone();
        let sequence = decode(&probs, record, fragments);
        Ok(Prediction {
            logits: out.logits.value().clone(),
            probs,
            coords: out.coords.value().to_points()?,
            sequence,
        })
    }

    /// Inference conditioned on the record's own fragments.
    pub fn predict<R: Rng + ?Sized>(&self, record: &ProteinRecord, rng: &mut R) -> Result<Prediction> {
        let fragments = record.fragment_positions();
        let x0 = self.initial_coordinates(record, &fragments, rng)?;
        self.predict_from(record, &fragments, &x0)
    }

    /// Differentiable loss for one record given the forward outputs.
    pub fn loss_var(
        &self,
        out: &ForwardVars,
        record: &ProteinRecord,
        fragments: &[usize],
    ) -> Result<(Var, usize)> {
        let n = record.len();
        let mut in_fragment = vec![false; n];
        for &i in fragments {
            in_fragment[i] = true;
        }
        let targets: Vec<usize> = (0..n).filter(|&i| !in_fragment[i]).collect();
        if targets.is_empty() {
            return Ok((Var::constant(Tensor::scalar(0.0)), 0));
        }
        let residues = record.residue_indices();
        let picks: Rc<[usize]> = targets
            .iter()
            .map(|&i| i * NUM_AMINO_ACIDS + residues[i])
            .collect();
        let p_true = out.probs.gather(&picks)?;
        let clamped = p_true.value().data().iter().filter(|&&v| v < PROB_FLOOR).count();
        if clamped > 0 {
            log::warn!("record {}: {clamped} probabilities clamped at {PROB_FLOOR}", record.id);
        }
        let nll = p_true.ln_clamped(PROB_FLOOR).sum()?.scale(-1.0);

        let rows: Rc<[usize]> = targets.clone().into();
        let truth: Vec<Point> = targets.iter().map(|&i| record.coords[i]).collect();
        let diff = out
            .coords
            .gather_rows(&rows)?
            .sub(&Var::constant(Tensor::from_points(&truth)))?;
        let coord = diff.mul(&diff)?.sum()?.scale(self.config.lambda_half);
        Ok((nll.add(&coord)?, clamped))
    }

    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect()
    }
}

/// Negative log-likelihood of the true residues plus `lambda_half` times
/// the squared coordinate error, both over residues outside `fragments`.
pub fn loss(
    record: &ProteinRecord,
    pred: &Prediction,
    fragments: &[usize],
    lambda_half: f64,
) -> LossBreakdown {
    let n = record.len();
    let mut in_fragment = vec![false; n];
    for &i in fragments {
        in_fragment[i] = true;
    }
    let residues = record.residue_indices();
    let mut out = LossBreakdown {
        total: 0.0,
        nll: 0.0,
        coord: 0.0,
        clamped: 0,
    };
    for i in (0..n).filter(|&i| !in_fragment[i]) {
        let p = pred.probs.at2(i, residues[i]);
        if p < PROB_FLOOR {
            out.clamped += 1;
        }
        out.nll -= p.max(PROB_FLOOR).ln();
        let (a, b) = (&record.coords[i], &pred.coords[i]);
        out.coord += (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
    }
    out.coord *= lambda_half;
    out.total = out.nll + out.coord;
    out
}

/// Greedy decoding: argmax per non-fragment residue (lowest alphabet index
/// on ties); fragment residues are copied from the record.
pub fn decode(probs: &Tensor, record: &ProteinRecord, fragments: &[usize]) -> String {
    let seq = record.sequence.as_bytes();
    let mut out: Vec<char> = (0..record.len())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (a, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = a;
                }
            }
            alphabet::letter(best)
        })
        .collect();
    for &i in fragments {
        out[i] = seq[i] as char;
    }
    out.into_iter().collect()
}
