//! Timing of the neighborhood sub-layer on k-nearest-neighbor graphs
//! against the complete graph.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::{layer_graph, neighborhood_sublayer, EquivariantParams, LayerState, Variant};
use crate::nn::{uniform, ParamStore};
use crate::synthetic::self_avoiding_chain;
use crate::tensor::Tensor;

pub const DEFAULT_SIZES: [usize; 5] = [50, 100, 200, 500, 1000];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub n: usize,
    pub k: usize,
    pub variant: Variant,
    pub edges: usize,
    pub median_s: f64,
    pub runs_s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub d_model: usize,
    pub repetitions: usize,
    pub entries: Vec<BenchEntry>,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:>6} {:>4} {:>9} {:>9} {:>12}\n",
            "n", "k", "variant", "edges", "median_ms"
        );
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:>6} {:>4} {:>9} {:>9} {:>12.3}",
                e.n,
                e.k,
                e.variant.name(),
                e.edges,
                e.median_s * 1e3
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,k,variant,edges,median_s\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{},{},{}", e.n, e.k, e.variant, e.edges, e.median_s);
        }
        s
    }

    pub fn find(&self, n: usize, k: usize, variant: Variant) -> Option<&BenchEntry> {
        self.entries
            .iter()
            .find(|e| e.n == n && e.k == k && e.variant == variant)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    if s.len() % 2 == 1 {
        s[mid]
    } else {
        0.5 * (s[mid - 1] + s[mid])
    }
}

/// Times `repetitions` forward passes (after one discarded warm-up) for
/// every `(n, k)` in the grid, on the kNN graph and on the complete graph.
pub fn bench_graphs(
    grid: &[(usize, usize)],
    d_model: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::invalid("bench_graphs", "need at least 3 repetitions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for &(n, k) in grid {
        let mut store = ParamStore::new();
        let params = EquivariantParams::new(&mut store, "bench", d_model, Variant::Default, &mut rng);
        let p = store.bind(false);
        let h = Var::constant(uniform(&mut rng, &[n, d_model], 1.0));
        let x = Var::constant(Tensor::from_points(&self_avoiding_chain(n, &mut rng)));
        let state = LayerState::new(h, x);
        for variant in [Variant::Default, Variant::NoKnn] {
            let edges = layer_graph(&state.x, k, variant)?.edge_count();
            neighborhood_sublayer(&p, &params, &state, k, variant)?;
            let runs_s = (0..repetitions)
                .map(|_| {
                    let start = Instant::now();
                    let out = neighborhood_sublayer(&p, &params, &state, k, variant)?;
                    std::hint::black_box(out.h.value());
                    Ok(start.elapsed().as_secs_f64())
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push(BenchEntry {
                n,
                k,
                variant,
                edges,
                median_s: median(&runs_s),
                runs_s,
            });
        }
    }
    Ok(BenchReport {
        d_model,
        repetitions,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_counts_follow_the_formulas() {
        let r = bench_graphs(&[(31, 30), (40, 30), (12, 5)], 8, 3, 0).unwrap();
        assert_eq!(r.find(31, 30, Variant::Default).unwrap().edges, 930);
        assert_eq!(r.find(31, 30, Variant::NoKnn).unwrap().edges, 930);
        assert_eq!(r.find(40, 30, Variant::Default).unwrap().edges, 1200);
        assert_eq!(r.find(40, 30, Variant::NoKnn).unwrap().edges, 1560);
        assert_eq!(r.find(12, 5, Variant::Default).unwrap().edges, 60);
        assert!(bench_graphs(&[(10, 3)], 8, 2, 0).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
