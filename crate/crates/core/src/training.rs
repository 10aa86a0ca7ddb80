//! Adam training on the joint loss with the pseudo-fragment annealing
//! schedule, seeded shuffling and best-validation retention.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::io::records::ProteinRecord;
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub anneal_epochs: usize,
    pub anneal_max_fraction: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip_norm: f64,
    /// Use the schedule `max * (anneal_epochs - e) / e` (clamped to [0, 1])
    /// instead of the linear ramp.
    pub anneal_literal: bool,
    /// Draw each record's starting layout once (as used for validation)
    /// instead of afresh every epoch.
    pub fixed_layouts: bool,
    /// Train/validation/test proportions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            learning_rate: 5e-4,
            anneal_epochs: 10,
            anneal_max_fraction: 0.85,
            grad_clip_norm: 1.0,
            anneal_literal: false,
            fixed_layouts: false,
            split: [8.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.anneal_max_fraction) {
            return fail(format!(
                "anneal_max_fraction must lie in [0, 1], got {}",
                self.anneal_max_fraction
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.grad_clip_norm >= 0.0) {
            return fail(format!("grad_clip_norm must be >= 0, got {}", self.grad_clip_norm));
        }
        Ok(())
    }
}

/// The printed form `max * (anneal_epochs - epoch) / epoch`, unclamped.
pub fn literal_anneal_value(epoch: usize, config: &TrainConfig) -> f64 {
    assert!(epoch >= 1, "epochs are 1-based");
    config.anneal_max_fraction * (config.anneal_epochs as f64 - epoch as f64) / epoch as f64
}

/// Share of extra residues revealed as pseudo fragments in `epoch`
/// (1-based). Zero once the annealing phase is over.
pub fn anneal_fraction(epoch: usize, config: &TrainConfig) -> f64 {
    assert!(epoch >= 1, "epochs are 1-based");
    if epoch > config.anneal_epochs {
        return 0.0;
    }
    if config.anneal_literal {
        return literal_anneal_value(epoch, config).clamp(0.0, 1.0);
    }
    config.anneal_max_fraction * (config.anneal_epochs - epoch) as f64 / config.anneal_epochs as f64
}

/// `fragments` (0-based, sorted) plus `floor(fraction * n)` residues drawn
/// without replacement from the rest, capped at all of them.
pub fn sample_pseudo_fragments<R: Rng + ?Sized>(
    n: usize,
    fragments: &[usize],
    fraction: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut visible = vec![false; n];
    for &i in fragments {
        visible[i] = true;
    }
    let hidden: Vec<usize> = (0..n).filter(|&i| !visible[i]).collect();
    let extra = ((fraction.clamp(0.0, 1.0) * n as f64).floor() as usize).min(hidden.len());
    for j in index::sample(rng, hidden.len(), extra) {
        visible[hidden[j]] = true;
    }
    (0..n).filter(|&i| visible[i]).collect()
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                if lr != 0.0 {
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                }
            }
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Scales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// One record prepared for a step: visible residues and starting layout.
#[derive(Clone, Debug)]
pub struct Example<'a> {
    pub record: &'a ProteinRecord,
    /// 0-based visible residues.
    pub fragments: Vec<usize>,
    pub x0: Vec<Point>,
}

/// FNV-1a over the seed, epoch and record id; stable across platforms.
pub fn record_seed(seed: u64, epoch: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let bytes = seed
        .to_le_bytes()
        .into_iter()
        .chain(epoch.to_le_bytes())
        .chain(id.bytes());
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Keeps layout draws apart from pseudo-fragment draws.
const LAYOUT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Builds the example for `record`: pseudo fragments at `fraction` drawn
/// for `epoch`, then the spherical layout drawn for `layout_epoch`. Both
/// come from streams keyed by the record id, so equal records see equal
/// noise.
pub fn prepare<'a>(
    model: &Model,
    record: &'a ProteinRecord,
    fraction: f64,
    seed: u64,
    epoch: u64,
    layout_epoch: u64,
) -> Result<Example<'a>> {
    let mut rng = ChaCha8Rng::seed_from_u64(record_seed(seed, epoch, &record.id));
    let fragments = sample_pseudo_fragments(record.len(), &record.fragment_positions(), fraction, &mut rng);
    let mut layout_rng =
        ChaCha8Rng::seed_from_u64(record_seed(seed ^ LAYOUT_STREAM, layout_epoch, &record.id));
    let x0 = model.initial_coordinates(record, &fragments, &mut layout_rng)?;
    Ok(Example {
        record,
        fragments,
        x0,
    })
}

/// Loss and per-parameter gradients for one example.
pub fn loss_and_gradients(model: &Model, example: &Example) -> Result<(f64, Vec<Tensor>)> {
    let p = model.bind(true);
    let out = model.forward_vars(&p, example.record, &example.fragments, &example.x0)?;
    let (loss, _) = model.loss_var(&out, example.record, &example.fragments)?;
    let value = loss.value().item().expect("scalar loss");
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            record: example.record.id.clone(),
        });
    }
    let grads = loss.backward()?;
    Ok((value, p.gradients(&grads)))
}

/// Loss of one example without building gradients.
pub fn example_loss(model: &Model, example: &Example) -> Result<f64> {
    let p = model.bind(false);
    let out = model.forward_vars(&p, example.record, &example.fragments, &example.x0)?;
    let (loss, _) = model.loss_var(&out, example.record, &example.fragments)?;
    Ok(loss.value().item().expect("scalar loss"))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub mean_loss: f64,
    pub grad_norm: f64,
}

/// Mean loss over the batch, gradients averaged in batch order, optional
/// clipping, then one Adam update. Nothing is changed if any record fails.
pub fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    batch: &[Example],
    config: &TrainConfig,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::invalid("train_step", "empty batch"));
    }
    let mut total = 0.0;
    let mut sum: Option<Vec<Tensor>> = None;
    for example in batch {
        let (loss, grads) = loss_and_gradients(model, example)?;
        total += loss;
        sum = Some(match sum {
            None => grads,
            Some(mut acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(a, g)| *a += g);
                }
                acc
            }
        });
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = sum.expect("non-empty batch");
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    let grad_norm = clip_global_norm(&mut grads, config.grad_clip_norm);
    opt.update(model.params.tensors_mut(), &grads, config.learning_rate);
    Ok(StepReport {
        mean_loss: total * scale,
        grad_norm,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when there is no validation data.
    pub val_loss: Option<f64>,
    pub anneal_fraction: f64,
    pub steps: u64,
    pub wall_time_s: f64,
}

/// Mean loss over `records` using only their real fragments and a fixed
/// layout per record.
pub fn evaluate_loss(model: &Model, records: &[ProteinRecord], seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        total += example_loss(model, &prepare(model, r, 0.0, seed, 0, 0)?)?;
    }
    Ok(total / records.len().max(1) as f64)
}

pub struct FitOutcome {
    pub log: Vec<EpochLog>,
    /// Model with the lowest validation loss (training loss when there is
    /// no validation data).
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
}

pub fn fit(
    model: Model,
    train: &[ProteinRecord],
    validation: &[ProteinRecord],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("fit", "training split is empty"));
    }
    let mut model = model;
    let mut opt = Adam::new(model.params.tensors());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, model.clone(), 0);
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let fraction = anneal_fraction(epoch, config);
        let layout_epoch = if config.fixed_layouts { 0 } else { epoch as u64 };
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| prepare(&model, &train[i], fraction, config.seed, epoch as u64, layout_epoch))
                .collect::<Result<Vec<_>>>()?;
            let step = train_step(&mut model, &mut opt, &batch, config)?;
            total += step.mean_loss * batch.len() as f64;
            count += batch.len();
        }
        let train_loss = total / count as f64;
        let val_loss = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, validation, config.seed)?)
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            val_loss,
            anneal_fraction: fraction,
            steps: opt.step,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.4} val {:?} fraction {fraction:.3}",
            val_loss
        );
        let score = val_loss.unwrap_or(train_loss);
        if score < best.0 {
            best = (score, model.clone(), epoch);
        }
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(FitOutcome {
        log,
        best: best.1,
        best_epoch: best.2,
        last: model,
    })
}
