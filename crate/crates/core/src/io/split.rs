//! Seeded train/validation/test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::records::ProteinRecord;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Shuffles ids with `seed`, then cuts contiguous validation and test
/// blocks of `floor(ratio * n)` records (at least one for a nonzero
/// ratio); every leftover record goes to train.
pub fn split_dataset(
    records: &[ProteinRecord],
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || ratios[0] <= 0.0 {
        return Err(Error::Config(format!(
            "split ratios must be finite and non-negative with a positive train share, got {ratios:?}"
        )));
    }
    let parts = ratios.iter().filter(|&&r| r > 0.0).count();
    let n = records.len();
    if n < parts {
        return Err(Error::Config(format!(
            "{n} records cannot fill {parts} non-empty split parts"
        )));
    }
    let total: f64 = ratios.iter().sum();
    let share = |r: f64| {
        if r > 0.0 {
            ((r / total * n as f64).floor() as usize).max(1)
        } else {
            0
        }
    };
    let (n_val, n_test) = (share(ratios[1]), share(ratios[2]));
    let mut ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = ids.split_off(n - n_test);
    let validation = ids.split_off(n - n_test - n_val);
    Ok(DatasetSplit {
        train: ids,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize) -> Vec<ProteinRecord> {
        (0..n)
            .map(|i| ProteinRecord {
                id: format!("p{i}"),
                sequence: "AC".into(),
                coords: vec![[0.0; 3], [3.8, 0.0, 0.0]],
                fragments: vec![],
            })
            .collect()
    }

    #[test]
    fn eight_one_one() {
        let s = split_dataset(&records(10), [8.0, 1.0, 1.0], 7).unwrap();
        assert_eq!(s.sizes(), (8, 1, 1));
        let s = split_dataset(&records(12), [8.0, 1.0, 1.0], 7).unwrap();
        assert_eq!(s.sizes(), (10, 1, 1));
    }

    #[test]
    fn seeded_and_disjoint() {
        let recs = records(25);
        let a = split_dataset(&recs, [8.0, 1.0, 1.0], 3).unwrap();
        assert_eq!(a, split_dataset(&recs, [8.0, 1.0, 1.0], 3).unwrap());
        let mut all: Vec<_> = a.train.iter().chain(&a.validation).chain(&a.test).cloned().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 25);
    }

    #[test]
    fn too_few_records() {
        assert!(split_dataset(&records(2), [8.0, 1.0, 1.0], 0).is_err());
        assert_eq!(split_dataset(&records(2), [8.0, 0.0, 1.0], 0).unwrap().sizes(), (1, 0, 1));
    }
}
