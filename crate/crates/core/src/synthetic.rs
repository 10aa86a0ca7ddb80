//! Seeded synthetic proteins: self-avoiding Cα chains with fixed step
//! length and uniformly random sequences.

use rand::seq::index;
use rand::Rng;

use crate::alphabet::{self, NUM_AMINO_ACIDS};
use crate::geometry::{dist, spherical_step, Point, CA_STEP};
use crate::io::records::ProteinRecord;

/// Minimum distance kept between residues that are not chain neighbors.
pub const MIN_NONBONDED: f64 = 4.0;

/// A chain of `n` points starting at the origin where consecutive points
/// are `CA_STEP` apart and all others at least [`MIN_NONBONDED`] apart.
pub fn self_avoiding_chain<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Point> {
    'restart: loop {
        let mut chain: Vec<Point> = vec![[0.0; 3]];
        while chain.len() < n {
            let prev = *chain.last().expect("non-empty");
            let placed = (0..200).find_map(|_| {
                let p = spherical_step(&prev, rng.gen_range(0.0..std::f64::consts::PI), rng.gen_range(0.0..std::f64::consts::TAU));
                let clear = chain[..chain.len() - 1]
                    .iter()
                    .all(|q| dist(q, &p) >= MIN_NONBONDED);
                clear.then_some(p)
            });
            match placed {
                Some(p) => chain.push(p),
                None => continue 'restart,
            }
        }
        debug_assert!(chain.windows(2).all(|w| (dist(&w[0], &w[1]) - CA_STEP).abs() < 1e-9));
        return chain;
    }
}

/// Random record with `n` residues and `n_fragments` fragment positions.
pub fn random_record<R: Rng + ?Sized>(
    id: impl Into<String>,
    n: usize,
    n_fragments: usize,
    rng: &mut R,
) -> ProteinRecord {
    let sequence = (0..n)
        .map(|_| alphabet::letter(rng.gen_range(0..NUM_AMINO_ACIDS)))
        .collect();
    let coords = self_avoiding_chain(n, rng);
    let mut fragments: Vec<usize> = index::sample(rng, n, n_fragments.min(n))
        .into_iter()
        .map(|i| i + 1)
        .collect();
    fragments.sort_unstable();
    ProteinRecord {
        id: id.into(),
        sequence,
        coords,
        fragments,
    }
}
