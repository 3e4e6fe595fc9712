//! K-means partition of the training pool.
//!
//! The partition provides the cluster indicator matrix `C` and the squared
//! centroid-distance matrix `D` used by the representativity and diversity
//! terms of the display objective.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{ItemId, Pool};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 32,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    /// Row ids, ascending.
    ids: Vec<ItemId>,
    centroids: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    /// n x K squared Euclidean distances.
    dist: Array2<f64>,
    /// Within-cluster sum of squares after each Lloyd update.
    wcss_trace: Vec<f64>,
}

/// Row-submatrices of `C` and `D` over a candidate set, in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Restricted {
    pub ids: Vec<ItemId>,
    pub c: Array2<f64>,
    pub d: Array2<f64>,
}

impl Restricted {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn k(&self) -> usize {
        self.c.ncols()
    }
}

impl Partition {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Cluster index per row (ascending id order).
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_of(&self, id: ItemId) -> Option<usize> {
        self.row(id).map(|r| self.assignment[r])
    }

    pub fn distances(&self) -> &Array2<f64> {
        &self.dist
    }

    pub fn indicator(&self) -> Array2<f64> {
        let mut c = Array2::zeros((self.ids.len(), self.k()));
        for (i, &k) in self.assignment.iter().enumerate() {
            c[[i, k]] = 1.0;
        }
        c
    }

    pub fn wcss_trace(&self) -> &[f64] {
        &self.wcss_trace
    }

    pub fn wcss(&self) -> f64 {
        self.assignment
            .iter()
            .enumerate()
            .map(|(i, &k)| self.dist[[i, k]])
            .sum()
    }

    fn row(&self, id: ItemId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Rows of `C` and `D` for `ids`, sorted ascending and deduplicated.
    pub fn restrict<I: IntoIterator<Item = ItemId>>(&self, ids: I) -> Result<Restricted> {
        let mut ids: Vec<ItemId> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        let k = self.k();
        let mut c = Array2::zeros((ids.len(), k));
        let mut d = Array2::zeros((ids.len(), k));
        for (r, &id) in ids.iter().enumerate() {
            let src = self.row(id).ok_or(Error::UnknownId(id))?;
            c[[r, self.assignment[src]]] = 1.0;
            d.row_mut(r).assign(&self.dist.row(src));
        }
        Ok(Restricted { ids, c, d })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// First index of the minimum.
fn argmin(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, v) in row.enumerate() {
        if v < best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// K-means over the whole pool, rows keyed by pool id.
pub fn kmeans_pool(pool: &Pool, params: &KMeansParams, seed: u64) -> Result<Partition> {
    let features: Vec<&[f64]> = pool
        .items()
        .iter()
        .map(|it| it.features.as_slice())
        .collect();
    let mut p = kmeans(&features, params.k, seed, params.max_iters, params.tol)?;
    p.ids = pool.ids();
    Ok(p)
}

/// Lloyd's algorithm with k-means++ seeding. Rows are keyed `0..n`.
///
/// Empty clusters are repaired by moving the point farthest from its centroid
/// (among clusters with more than one member) into the empty one. Assignment
/// ties go to the lowest cluster index.
pub fn kmeans(
    features: &[&[f64]],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<Partition> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::param(format!("K must lie in [1, {n}], got {k}")));
    }
    if max_iters == 0 {
        return Err(Error::param("max_iters must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol must be positive"));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Shape("feature rows differ in length".into()));
    }
    if features.iter().any(|f| f.iter().any(|v| !v.is_finite())) {
        return Err(Error::param("non-finite feature value"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = plus_plus_seeds(features, k, &mut rng);
    lloyd(features, centroids, max_iters, tol)
}

/// Lloyd iterations from the given initial centroids.
pub fn lloyd(
    features: &[&[f64]],
    init: Vec<Vec<f64>>,
    max_iters: usize,
    tol: f64,
) -> Result<Partition> {
    let n = features.len();
    let k = init.len();
    if k == 0 || k > n {
        return Err(Error::param(format!("K must lie in [1, {n}], got {k}")));
    }
    let d = features[0].len();
    if init.iter().any(|c| c.len() != d) {
        return Err(Error::Shape(
            "centroid length differs from feature length".into(),
        ));
    }
    let mut centroids = init;
    let mut assignment = vec![0usize; n];
    let mut wcss_trace = Vec::new();

    for _ in 0..max_iters {
        for (i, f) in features.iter().enumerate() {
            assignment[i] = argmin(centroids.iter().map(|c| sq_dist(f, c)));
        }
        repair_empty(features, &mut centroids, &mut assignment);

        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (f, &a) in features.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(f.iter()) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for ((c, s), &m) in centroids.iter_mut().zip(sums).zip(&counts) {
            if m == 0 {
                continue;
            }
            let next: Vec<f64> = s.into_iter().map(|v| v / m as f64).collect();
            shift = shift.max(sq_dist(c, &next).sqrt());
            *c = next;
        }
        wcss_trace.push(
            features
                .iter()
                .zip(&assignment)
                .map(|(f, &a)| sq_dist(f, &centroids[a]))
                .sum(),
        );
        if shift < tol {
            break;
        }
    }

    let mut dist = Array2::zeros((n, k));
    for (i, f) in features.iter().enumerate() {
        for (j, c) in centroids.iter().enumerate() {
            dist[[i, j]] = sq_dist(f, c);
        }
        assignment[i] = argmin(dist.row(i).iter().copied());
    }

    Ok(Partition {
        ids: (0..n as ItemId).collect(),
        centroids,
        assignment,
        dist,
        wcss_trace,
    })
}

fn plus_plus_seeds(features: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![features[first].to_vec()];
    let mut nearest: Vec<f64> = features
        .iter()
        .map(|f| sq_dist(f, features[first]))
        .collect();

    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` a hair short of `target`
            pick.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every remaining point duplicates a seed
            chosen.iter().position(|&c| !c).unwrap()
        };
        chosen[pick] = true;
        centroids.push(features[pick].to_vec());
        for (w, f) in nearest.iter_mut().zip(features) {
            *w = w.min(sq_dist(f, features[pick]));
        }
    }
    centroids
}

fn repair_empty(features: &[&[f64]], centroids: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, f) in features.iter().enumerate() {
            let a = assignment[i];
            if counts[a] < 2 {
                continue;
            }
            let d = sq_dist(f, &centroids[a]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        assignment[i] = empty;
        centroids[empty] = features[i].to_vec();
    }
}
