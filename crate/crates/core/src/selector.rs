//! Display selection.
//!
//! Relevances `mu` over the unlabeled candidates minimise
//!
//! ```text
//! eta * sum_i mu_i (D o C 1)_i  +  alpha * sum_k m_k log m_k
//!   + beta * sum_i mu_i (F o log F 1)_i  +  sum_i mu_i log mu_i,     m = C' mu
//! ```
//!
//! on the probability simplex. The minimiser is the fixed point of the
//! multiplicative update
//!
//! ```text
//! mu_i  <-  exp(-eta (D o C 1)_i) * exp(-alpha (log m_k(i) + 1)) * exp(-beta (F o log F 1)_i)
//! ```
//!
//! followed by l1 normalisation. For `alpha >= 1` the plain update cycles
//! (cluster masses flip between two states), so the solver relaxes it
//! geometrically with weight `1 / (1 + alpha)`: the fixed points are the same
//! and for `alpha = 0` it is the plain update.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::Restricted;
use crate::error::{Error, Result};
use crate::pool::{ItemId, Pool};
use crate::scorer::FMatrix;

/// Lower clamp for log arguments.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionWeights {
    /// representativity
    pub eta: f64,
    /// diversity
    pub alpha: f64,
    /// ambiguity
    pub beta: f64,
}

impl CriterionWeights {
    pub fn new(eta: f64, alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { eta, alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta", self.eta),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub ids: Vec<ItemId>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub iterations: usize,
    /// l1 distance between the last two iterates.
    pub final_gap: f64,
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

fn check_shapes(r: &Restricted, f: &FMatrix) -> Result<()> {
    if r.c.dim() != r.d.dim() || r.c.nrows() != r.ids.len() {
        return Err(Error::Shape(format!(
            "C is {:?}, D is {:?}, {} ids",
            r.c.dim(),
            r.d.dim(),
            r.ids.len()
        )));
    }
    if f.nrows() != r.ids.len() || f.0.ncols() != 2 {
        return Err(Error::Shape(format!(
            "F is {:?}, expected ({}, 2)",
            f.0.dim(),
            r.ids.len()
        )));
    }
    Ok(())
}

/// `(D o C) 1_K` per row: squared distance to the item's own centroid.
fn own_centroid_distance(r: &Restricted) -> Vec<f64> {
    (&r.d * &r.c)
        .rows()
        .into_iter()
        .map(|row| row.sum())
        .collect()
}

fn cluster_of_rows(r: &Restricted) -> Vec<usize> {
    r.c.rows()
        .into_iter()
        .map(|row| row.iter().position(|&v| v > 0.5).unwrap_or(0))
        .collect()
}

/// Value of the display objective at `mu`.
pub fn objective(mu: &[f64], r: &Restricted, f: &FMatrix, w: &CriterionWeights) -> Result<f64> {
    check_shapes(r, f)?;
    if mu.len() != r.ids.len() {
        return Err(Error::Shape(format!(
            "mu has {} entries, candidates {}",
            mu.len(),
            r.ids.len()
        )));
    }
    let rep = own_centroid_distance(r);
    let amb = f.neg_entropy();
    let mass = r.c.t().dot(&ndarray::ArrayView1::from(mu));
    let mut value = w.alpha * mass.iter().map(|&m| xlogx(m)).sum::<f64>();
    for i in 0..mu.len() {
        value += mu[i] * (w.eta * rep[i] + w.beta * amb[i]) + xlogx(mu[i]);
    }
    Ok(value)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Fixed-point solve for the relevance vector, starting from uniform.
pub fn solve_relevance(
    r: &Restricted,
    f: &FMatrix,
    w: &CriterionWeights,
    params: &SolverParams,
) -> Result<(RelevanceVector, SolverTrace)> {
    if r.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    check_shapes(r, f)?;
    w.validate()?;
    if params.max_iters == 0 || !(params.tol > 0.0) {
        return Err(Error::param("solver needs max_iters >= 1 and tol > 0"));
    }

    let n = r.len();
    let cluster = cluster_of_rows(r);
    let amb = f.neg_entropy();
    // the mu-independent part of the log update
    let base: Vec<f64> = own_centroid_distance(r)
        .iter()
        .zip(&amb)
        .map(|(rep, a)| -w.eta * rep - w.beta * a)
        .collect();
    let relax = 1.0 / (1.0 + w.alpha);

    let mut log_mu = vec![-(n as f64).ln(); n];
    let mut mu = vec![1.0 / n as f64; n];
    let mut mass = vec![0.0; r.k()];
    let mut next_log = vec![0.0; n];
    let mut trace = SolverTrace {
        iterations: 0,
        final_gap: f64::INFINITY,
    };

    while trace.iterations < params.max_iters {
        trace.iterations += 1;
        mass.iter_mut().for_each(|m| *m = 0.0);
        for (m, &k) in mu.iter().zip(&cluster) {
            mass[k] += m;
        }
        for i in 0..n {
            let div = -w.alpha * (mass[cluster[i]].max(LOG_FLOOR).ln() + 1.0);
            next_log[i] = (1.0 - relax) * log_mu[i] + relax * (base[i] + div);
        }
        let z = log_sum_exp(&next_log);
        let mut gap = 0.0;
        for i in 0..n {
            log_mu[i] = next_log[i] - z;
            let m = log_mu[i].exp();
            gap += (m - mu[i]).abs();
            mu[i] = m;
        }
        trace.final_gap = gap;
        // without diversity the update does not depend on mu
        if w.alpha == 0.0 || gap < params.tol {
            break;
        }
    }

    let total: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|m| *m /= total);
    Ok((
        RelevanceVector {
            ids: r.ids.clone(),
            mu,
        },
        trace,
    ))
}

/// Ids of the `size` largest relevances, by descending mu then ascending id.
pub fn select_display(mu: &RelevanceVector, size: usize) -> Result<Vec<ItemId>> {
    let n = mu.ids.len();
    if size == 0 || size > n {
        return Err(Error::param(format!(
            "display size {size} outside [1, {n}]"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        mu.mu[b]
            .total_cmp(&mu.mu[a])
            .then_with(|| mu.ids[a].cmp(&mu.ids[b]))
    });
    Ok(order[..size].iter().map(|&i| mu.ids[i]).collect())
}

/// Uniform draw without replacement.
pub fn random_display<R: Rng + ?Sized>(
    candidates: &[ItemId],
    size: usize,
    rng: &mut R,
) -> Result<Vec<ItemId>> {
    if size > candidates.len() {
        return Err(Error::param(format!(
            "display size {size} exceeds {} candidates",
            candidates.len()
        )));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    Ok(rand::seq::index::sample(rng, sorted.len(), size)
        .into_iter()
        .map(|i| sorted[i])
        .collect())
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Greedy farthest-point selection: each pick maximises its minimum
/// Euclidean distance to the labeled items and earlier picks. With nothing
/// labeled the first pick is the lowest candidate id.
pub fn maxmin_display(
    candidates: &[ItemId],
    labeled: &[ItemId],
    size: usize,
    pool: &Pool,
) -> Result<Vec<ItemId>> {
    if size > candidates.len() {
        return Err(Error::param(format!(
            "display size {size} exceeds {} candidates",
            candidates.len()
        )));
    }
    let mut cands = candidates.to_vec();
    cands.sort_unstable();
    let feats = cands
        .iter()
        .map(|&id| pool.features(id))
        .collect::<Result<Vec<_>>>()?;
    let mut min_dist = vec![f64::INFINITY; cands.len()];
    for &id in labeled {
        let x = pool.features(id)?;
        for (m, f) in min_dist.iter_mut().zip(&feats) {
            *m = m.min(euclid(f, x));
        }
    }
    let mut taken = vec![false; cands.len()];
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        let mut best: Option<usize> = None;
        for i in 0..cands.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("size <= candidates");
        taken[b] = true;
        out.push(cands[b]);
        let x = feats[b];
        for (m, f) in min_dist.iter_mut().zip(&feats) {
            *m = m.min(euclid(f, x));
        }
    }
    Ok(out)
}

/// Candidates ordered by `|g_hat - 0.5|` ascending, ties by id.
pub fn uncertainty_display(ids: &[ItemId], normalized: &[f64], size: usize) -> Result<Vec<ItemId>> {
    if ids.len() != normalized.len() {
        return Err(Error::Shape(format!(
            "{} ids vs {} scores",
            ids.len(),
            normalized.len()
        )));
    }
    if size > ids.len() {
        return Err(Error::param(format!(
            "display size {size} exceeds {} candidates",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (normalized[a] - 0.5).abs();
        let db = (normalized[b] - 0.5).abs();
        da.partial_cmp(&db)
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    Ok(order[..size].iter().map(|&i| ids[i]).collect())
}
