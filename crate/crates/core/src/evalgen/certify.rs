//! Empirical check that the full model is invariant in its residue
//! probabilities and equivariant in its coordinates under rigid motions,
//! reflections included.
//!
//! Each trial runs the model twice: once from a sampled starting layout and
//! once from the same layout moved by the transform, so the comparison sees
//! no initialization noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::io::records::ProteinRecord;
use crate::model::Model;
use crate::synthetic::random_record;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    /// `max |f(Tx) - T f(x)| / (1 + max |f(x)|)` over coordinates.
    pub coords: f64,
    /// Largest absolute probability difference.
    pub probs: f64,
}

/// Compares the model on `record` against the same record moved by `t`,
/// starting from a shared layout drawn with `seed`.
pub fn transform_deviation(
    model: &Model,
    record: &ProteinRecord,
    t: &RigidTransform,
    seed: u64,
) -> Result<Deviation> {
    let fragments = record.fragment_positions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = model.initial_coordinates(record, &fragments, &mut rng)?;
    let base = model.predict_from(record, &fragments, &x0)?;

    let moved = ProteinRecord {
        coords: t.apply_all(&record.coords),
        ..record.clone()
    };
    let other = model.predict_from(&moved, &fragments, &t.apply_all(&x0))?;

    let expected = t.apply_all(&base.coords);
    let scale = 1.0
        + base
            .coords
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()));
    let coords = expected
        .iter()
        .flatten()
        .zip(other.coords.iter().flatten())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale;
    let probs = base
        .probs
        .data()
        .iter()
        .zip(other.probs.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(Deviation { coords, probs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub passed: bool,
    pub trials: usize,
    pub tolerance: f64,
    pub max_coord_deviation: f64,
    pub max_prob_deviation: f64,
}

/// Runs `trials` random records (8 to 32 residues) under random transforms,
/// alternating rotations and reflections. Passes when both deviations stay
/// within `tolerance`.
pub fn certify_equivariance(
    model: &Model,
    trials: usize,
    tolerance: f64,
    seed: u64,
) -> Result<Certificate> {
    if trials == 0 {
        return Err(Error::invalid("certify_equivariance", "need at least one trial"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut coords, mut probs) = (0.0f64, 0.0f64);
    for trial in 0..trials {
        let n = rng.gen_range(8..=32);
        let n_fragments = rng.gen_range(0..=n / 2);
        let record = random_record(format!("trial{trial}"), n, n_fragments, &mut rng);
        let t = RigidTransform::random(&mut rng, trial % 2 == 0);
        let dev = transform_deviation(model, &record, &t, rng.gen())?;
        coords = coords.max(dev.coords);
        probs = probs.max(dev.probs);
    }
    Ok(Certificate {
        passed: coords <= tolerance && probs <= tolerance,
        trials,
        tolerance,
        max_coord_deviation: coords,
        max_prob_deviation: probs,
    })
}
