//! Plain nested-loop reimplementations of the layers, written without the
//! tensor or autodiff code, used as independent oracles.
#![allow(dead_code)]

use naepro::geometry::Point;
use naepro::layers::neighborhood::MessageParams;
use naepro::layers::{AttentionParams, EquivariantParams, Variant};
use naepro::nn::{Activation, FeedForward, LayerNorm, Linear, ParamStore, LAYER_NORM_EPS};
use naepro::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(|r| r.to_vec()).collect()
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn linear(store: &ParamStore, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.get(l.weight);
    let b = store.get(l.bias).data();
    let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), fan_in);
    (0..fan_out)
        .map(|o| {
            let mut acc = b[o];
            for i in 0..fan_in {
                acc += x[i] * w.data()[i * fan_out + o];
            }
            acc
        })
        .collect()
}

pub fn ffn(store: &ParamStore, f: &FeedForward, x: &[f64]) -> Vec<f64> {
    let hidden: Vec<f64> = linear(store, &f.first, x)
        .into_iter()
        .map(|v| match f.activation {
            Activation::Relu => v.max(0.0),
            Activation::Silu => silu(v),
        })
        .collect();
    linear(store, &f.second, &hidden)
}

pub fn layer_norm(store: &ParamStore, ln: &LayerNorm, x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let (g, b) = (store.get(ln.gain).data(), store.get(ln.bias).data());
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) * inv * g[i] + b[i])
        .collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn attention(store: &ParamStore, p: &AttentionParams, h: &Mat) -> Mat {
    let n = h.len();
    let d = h[0].len();
    let dh = d / p.heads;
    let q: Mat = h.iter().map(|r| linear(store, &p.query, r)).collect();
    let k: Mat = h.iter().map(|r| linear(store, &p.key, r)).collect();
    let v: Mat = h.iter().map(|r| linear(store, &p.value, r)).collect();
    let mut concat = vec![vec![0.0; d]; n];
    for head in 0..p.heads {
        let lo = head * dh;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..dh).map(|c| q[i][lo + c] * k[j][lo + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let w = softmax(&scores);
            for c in 0..dh {
                concat[i][lo + c] = (0..n).map(|j| w[j] * v[j][lo + c]).sum();
            }
        }
    }
    (0..n)
        .map(|i| {
            let o = linear(store, &p.output, &concat[i]);
            let mid: Vec<f64> = layer_norm(
                store,
                &p.norm_attn,
                &o.iter().zip(&h[i]).map(|(a, b)| a + b).collect::<Vec<_>>(),
            );
            let f = ffn(store, &p.ffn, &mid);
            layer_norm(
                store,
                &p.norm_ffn,
                &f.iter().zip(&mid).map(|(a, b)| a + b).collect::<Vec<_>>(),
            )
        })
        .collect()
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Messages for every residue over the given neighbor lists: (weights,
/// weighted messages) indexed `[i][slot]`.
pub fn messages(
    store: &ParamStore,
    p: &EquivariantParams,
    h: &Mat,
    x: &[Point],
    neighbors: &[Vec<usize>],
) -> (Mat, Vec<Mat>) {
    let mut weights = Vec::new();
    let mut weighted = Vec::new();
    for (i, nbrs) in neighbors.iter().enumerate() {
        let mut raw = Vec::new();
        let mut scores = Vec::new();
        for &j in nbrs {
            let dij = distance(&x[i], &x[j]);
            match &p.message {
                MessageParams::Ffn { ffn: f, score } => {
                    let input: Vec<f64> = h[i].iter().chain(&h[j]).cloned().chain([dij]).collect();
                    let m: Vec<f64> = ffn(store, f, &input).into_iter().map(silu).collect();
                    scores.push(linear(store, score, &m)[0]);
                    raw.push(m);
                }
                MessageParams::DotAttention { query, key, value } => {
                    let input: Vec<f64> = h[j].iter().cloned().chain([dij]).collect();
                    let q = linear(store, query, &h[i]);
                    let k = linear(store, key, &input);
                    let d = q.len() as f64;
                    scores.push(q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / d.sqrt());
                    raw.push(linear(store, value, &input));
                }
            }
        }
        let w = softmax(&scores);
        weighted.push(
            raw.iter()
                .zip(&w)
                .map(|(m, wj)| m.iter().map(|v| v * wj).collect())
                .collect(),
        );
        weights.push(w);
    }
    (weights, weighted)
}

pub fn coordinates(
    store: &ParamStore,
    p: &EquivariantParams,
    x: &[Point],
    neighbors: &[Vec<usize>],
    weights: &Mat,
    weighted: &[Mat],
) -> Vec<Point> {
    (0..x.len())
        .map(|i| {
            let mut out = x[i];
            for (slot, &j) in neighbors[i].iter().enumerate() {
                let s = match &p.coord {
                    Some(f) => ffn(store, f, &weighted[i][slot])[0],
                    None => weights[i][slot],
                };
                for c in 0..3 {
                    out[c] += (x[i][c] - x[j][c]) * s;
                }
            }
            out
        })
        .collect()
}

pub fn residues(
    store: &ParamStore,
    p: &EquivariantParams,
    h: &Mat,
    weighted: &[Mat],
    variant: Variant,
) -> Mat {
    (0..h.len())
        .map(|i| {
            let d = h[i].len();
            let mut c = vec![0.0; d];
            for m in &weighted[i] {
                for t in 0..d {
                    c[t] += m[t];
                }
            }
            let g = ffn(store, &p.gate, &c);
            (0..d)
                .map(|t| {
                    if variant == Variant::NoGate {
                        h[i][t] + g[t]
                    } else {
                        h[i][t] + sigmoid(g[t]) * c[t]
                    }
                })
                .collect()
        })
        .collect()
}

/// Neighbor lists by full sort on (distance, index).
pub fn brute_knn(x: &[Point], k: usize) -> Vec<Vec<usize>> {
    (0..x.len())
        .map(|i| {
            let mut others: Vec<usize> = (0..x.len()).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                distance(&x[i], &x[a])
                    .partial_cmp(&distance(&x[i], &x[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            others.truncate(k);
            others
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().cloned().collect()
}

pub fn flat_points(p: &[Point]) -> Vec<f64> {
    p.iter().flatten().cloned().collect()
}

/// Overwrites every value of a parameter with small random numbers, so
/// zero-initialized layers take part in a test.
pub fn randomize<R: rand::Rng>(store: &mut ParamStore, l: &Linear, scale: f64, rng: &mut R) {
    for id in [l.weight, l.bias] {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// Gives every zero-initialized coordinate head small random weights so
/// the coordinates actually move.
pub fn perturb_coordinate_heads<R: rand::Rng>(model: &mut naepro::model::Model, scale: f64, rng: &mut R) {
    let ids: Vec<_> = model
        .params
        .ids()
        .filter(|&id| model.params.name(id).contains(".coord.1."))
        .collect();
    for id in ids {
        for v in model.params.get_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub struct GradientCheck {
    pub name: String,
    /// `|a - f|` over the whole tensor.
    pub diff: f64,
    pub analytic_norm: f64,
    pub fd_norm: f64,
}

impl GradientCheck {
    pub fn relative(&self) -> f64 {
        self.diff / self.fd_norm.max(1e-8)
    }

    /// Gradients that vanish identically (a key bias shifts every score of
    /// a query equally) have no meaningful relative error; they must then
    /// stay below the round-off level of the differences instead.
    pub fn passes(&self, tol: f64) -> bool {
        if self.analytic_norm < 1e-12 {
            self.fd_norm < 1e-7
        } else {
            self.relative() <= tol
        }
    }
}

/// Analytic gradient against central differences with step `h`, per
/// parameter tensor.
pub fn gradient_errors(
    model: &naepro::model::Model,
    example: &naepro::training::Example,
    h: f64,
) -> Vec<GradientCheck> {
    let (_, analytic) = naepro::training::loss_and_gradients(model, example).unwrap();
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (t, grad) in analytic.iter().enumerate() {
        let mut diff = 0.0;
        let mut norm = 0.0;
        let mut a_norm = 0.0;
        for e in 0..grad.numel() {
            let orig = probe.params.tensors()[t].data()[e];
            probe.params.tensors_mut()[t].data_mut()[e] = orig + h;
            let up = naepro::training::example_loss(&probe, example).unwrap();
            probe.params.tensors_mut()[t].data_mut()[e] = orig - h;
            let down = naepro::training::example_loss(&probe, example).unwrap();
            probe.params.tensors_mut()[t].data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * h);
            diff += (grad.data()[e] - fd).powi(2);
            norm += fd * fd;
            a_norm += grad.data()[e] * grad.data()[e];
        }
        out.push(GradientCheck {
            name: model.params.iter().nth(t).unwrap().0.to_string(),
            diff: diff.sqrt(),
            analytic_norm: a_norm.sqrt(),
            fd_norm: norm.sqrt(),
        });
    }
    out
}
