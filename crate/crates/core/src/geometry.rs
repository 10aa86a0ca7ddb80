//! Euclidean utilities on Cα point sets: distances, neighbor graphs, the
//! spherical chain initializer, rigid transforms and Kabsch superposition.

use std::f64::consts::PI;
use std::rc::Rc;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Distance between consecutive Cα atoms used to lay out non-fragment
/// residues.
pub const CA_STEP: f64 = 3.75;

pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dist(a: &Point, b: &Point) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

pub fn pairwise_distances(x: &[Point]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist(&x[i], &x[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Fixed-degree neighbor lists: every residue has exactly `degree`
/// neighbors, ordered by ascending (distance, index).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    degree: usize,
    neighbors: Vec<usize>,
}

impl NeighborGraph {
    pub fn num_nodes(&self) -> usize {
        self.neighbors.len().checked_div(self.degree).unwrap_or(0)
    }

    /// Neighbors per residue, `min(k, N - 1)`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.degree..(i + 1) * self.degree]
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Edge sources `i`, each repeated `degree` times, in edge order.
    pub fn centers(&self) -> Rc<[usize]> {
        (0..self.num_nodes())
            .flat_map(|i| std::iter::repeat_n(i, self.degree))
            .collect()
    }

    /// Edge targets `j` in edge order.
    pub fn targets(&self) -> Rc<[usize]> {
        self.neighbors.as_slice().into()
    }
}

/// Squared distances (Å²) closer than this count as ties.
pub const TIE_RESOLUTION: f64 = 1e-9;

/// Brute-force k-nearest neighbors ordered by (distance, index).
///
/// Squared distances are snapped to a [`TIE_RESOLUTION`] grid before
/// comparison. Chains laid out with a fixed step contain exact ties
/// (residue `i` sits equally far from `i - 1` and `i + 1`), and without
/// snapping the round-off of a rigid motion would decide which of them is
/// kept.
pub fn knn(x: &[Point], k: usize) -> Result<NeighborGraph> {
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("knn", format!("need at least 2 points, got {n}")));
    }
    if k == 0 {
        return Err(Error::invalid("knn", "k must be positive"));
    }
    let degree = k.min(n - 1);
    let mut neighbors = Vec::with_capacity(n * degree);
    let mut cand: Vec<(u64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        for j in 0..n {
            if j != i {
                let d = sub(&x[i], &x[j]);
                let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                cand.push(((d2 / TIE_RESOLUTION).round() as u64, j));
            }
        }
        if degree < cand.len() {
            cand.select_nth_unstable(degree - 1);
            cand.truncate(degree);
        }
        cand.sort_unstable();
        neighbors.extend(cand.iter().map(|c| c.1));
    }
    Ok(NeighborGraph { degree, neighbors })
}

/// The complete pairwise graph, ordered like [`knn`] so the two coincide
/// exactly when `k >= N - 1`.
pub fn complete_graph(x: &[Point]) -> Result<NeighborGraph> {
    knn(x, x.len().saturating_sub(1).max(1))
}

/// Point at distance `CA_STEP` from `prev` in the direction given by polar
/// angle `omega1` (from +z) and azimuth `omega2` (from +x).
pub fn spherical_step(prev: &Point, omega1: f64, omega2: f64) -> Point {
    let (s1, c1) = omega1.sin_cos();
    let (s2, c2) = omega2.sin_cos();
    [
        prev[0] + CA_STEP * s1 * c2,
        prev[1] + CA_STEP * s1 * s2,
        prev[2] + CA_STEP * c1,
    ]
}

/// Initial coordinates for an `n`-residue chain. Fragment residues keep
/// their given coordinates; every other residue is placed on the sphere of
/// radius [`CA_STEP`] around its left neighbor (the origin for residue 0).
/// `fragments` holds 0-based indices in increasing order.
pub fn init_coordinates<R: Rng + ?Sized>(
    n: usize,
    fragments: &[usize],
    fragment_coords: &[Point],
    rng: &mut R,
) -> Result<Vec<Point>> {
    if fragments.len() != fragment_coords.len() {
        return Err(Error::invalid(
            "init_coordinates",
            format!(
                "{} fragment indices but {} coordinates",
                fragments.len(),
                fragment_coords.len()
            ),
        ));
    }
    let mut fixed: Vec<Option<Point>> = vec![None; n];
    for (&i, c) in fragments.iter().zip(fragment_coords) {
        if i >= n {
            return Err(Error::invalid(
                "init_coordinates",
                format!("fragment index {i} out of range for {n} residues"),
            ));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "init_coordinates",
                format!("non-finite coordinate for fragment {i}"),
            ));
        }
        fixed[i] = Some(*c);
    }
    let mut out: Vec<Point> = Vec::with_capacity(n);
    for (i, f) in fixed.into_iter().enumerate() {
        let p = match f {
            Some(c) => c,
            None => {
                let prev = if i == 0 { [0.0; 3] } else { out[i - 1] };
                let omega1 = rng.gen_range(0.0..PI);
                let omega2 = rng.gen_range(0.0..2.0 * PI);
                spherical_step(&prev, omega1, omega2)
            }
        };
        out.push(p);
    }
    Ok(out)
}

/// `x -> R x + t` with `R` orthogonal.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Point,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn translation(t: Point) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Uniformly random rotation (from a uniform unit quaternion), an
    /// optional reflection, and a translation in [-10, 10)^3 Å.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, proper: bool) -> Self {
        let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let (x, y) = (a * (2.0 * PI * u2).sin(), a * (2.0 * PI * u2).cos());
        let (z, w) = (b * (2.0 * PI * u3).sin(), b * (2.0 * PI * u3).cos());
        let mut r = [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - z * w),
                2.0 * (x * z + y * w),
            ],
            [
                2.0 * (x * y + z * w),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - x * w),
            ],
            [
                2.0 * (x * z - y * w),
                2.0 * (y * z + x * w),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ];
        if !proper {
            for row in &mut r {
                row[0] = -row[0];
            }
        }
        let translation = [
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        ];
        Self {
            rotation: r,
            translation,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }

    pub fn is_proper(&self) -> bool {
        self.determinant() > 0.0
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn apply(&self, p: &Point) -> Point {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
        ]
    }

    pub fn apply_all(&self, points: &[Point]) -> Vec<Point> {
        points.iter().map(|p| self.apply(p)).collect()
    }
}

fn centroid(points: &[Point]) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    for p in points {
        c += Vector3::new(p[0], p[1], p[2]);
    }
    c / points.len() as f64
}

/// Optimal proper rotation taking `mobile` onto `target` after both are
/// centered, with the resulting RMSD.
#[derive(Clone, Debug)]
pub struct Superposition {
    pub rotation: Matrix3<f64>,
    pub rmsd: f64,
}

pub fn kabsch(mobile: &[Point], target: &[Point]) -> Result<Superposition> {
    if mobile.len() != target.len() {
        return Err(Error::invalid(
            "kabsch",
            format!("point counts differ: {} vs {}", mobile.len(), target.len()),
        ));
    }
    if mobile.len() < 3 {
        return Err(Error::invalid("kabsch", "need at least 3 points"));
    }
    let (ca, cb) = (centroid(mobile), centroid(target));
    let a: Vec<Vector3<f64>> = mobile
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]) - ca)
        .collect();
    let b: Vec<Vector3<f64>> = target
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]) - cb)
        .collect();
    let mut h = Matrix3::zeros();
    for (p, q) in a.iter().zip(&b) {
        h += p * q.transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::invalid("kabsch", "SVD did not converge")),
    };
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let sq: f64 = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (rotation * p - q).norm_squared())
        .sum();
    Ok(Superposition {
        rotation,
        rmsd: (sq / a.len() as f64).sqrt(),
    })
}

pub fn kabsch_rmsd(a: &[Point], b: &[Point]) -> Result<f64> {
    kabsch(a, b).map(|s| s.rmsd)
}
