//! Binary scorers, the two-column scoring matrix and equal-error-rate.
//!
//! The shipped classifier is L2-regularised logistic regression trained by
//! batch gradient descent with step halving. Features are standardised with
//! statistics of the whole pool, since the unlabeled pool is always
//! available to the learner.

use std::fmt::Debug;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::{ItemId, Label, LabeledSet, Pool};

/// Clamp for normalised scores and log arguments.
pub const SCORE_EPS: f64 = 1e-12;

pub fn logistic(g: f64) -> f64 {
    if g >= 0.0 {
        1.0 / (1.0 + (-g).exp())
    } else {
        let e = g.exp();
        e / (1.0 + e)
    }
}

/// `logistic(g)` clamped to `[SCORE_EPS, 1 - SCORE_EPS]`.
pub fn normalize(g: f64) -> f64 {
    logistic(g).clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// A trained decision function.
pub trait Scorer: Debug + Send + Sync {
    /// Raw decision value `g(x)`; positive means change.
    fn decision(&self, x: &[f64]) -> f64;

    fn normalized(&self, x: &[f64]) -> f64 {
        normalize(self.decision(x))
    }
}

/// Something that turns labeled examples into a [`Scorer`].
pub trait Classifier: Debug + Send + Sync {
    fn fit(&self, labeled: &LabeledSet, pool: &Pool) -> Result<Arc<dyn Scorer>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub step_size: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub grad_tol: f64,
    /// Weight both classes equally in the loss.
    pub class_balanced: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            l2: 1e-2,
            max_epochs: 500,
            grad_tol: 1e-6,
            class_balanced: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.l2 >= 0.0) || !(self.grad_tol > 0.0) {
            return Err(Error::param(
                "classifier step_size and grad_tol must be positive, l2 non-negative",
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::param("classifier max_epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Per-feature affine standardisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(pool: &Pool) -> Self {
        let d = pool.dim();
        let n = pool.len() as f64;
        let mut mean = vec![0.0; d];
        for it in pool.items() {
            for (m, v) in mean.iter_mut().zip(&it.features) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for it in pool.items() {
            for ((s, v), m) in var.iter_mut().zip(&it.features).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Weighted logistic loss with L2 penalty on the weights (not the bias).
/// Parameters are laid out as `[w_0, .., w_{d-1}, b]`.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Label>,
    pub sample_weight: Vec<f64>,
    pub l2: f64,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LogisticObjective {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<Label>, l2: f64, class_balanced: bool) -> Self {
        let n = y.len();
        let pos = y.iter().filter(|&&v| v == 1).count();
        let sample_weight = if class_balanced && pos > 0 && pos < n {
            y.iter()
                .map(|&v| {
                    if v == 1 {
                        0.5 / pos as f64
                    } else {
                        0.5 / (n - pos) as f64
                    }
                })
                .collect()
        } else {
            vec![1.0 / n as f64; n]
        };
        Self {
            x,
            y,
            sample_weight,
            l2,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    fn margin(&self, params: &[f64], i: usize) -> f64 {
        let d = self.dim();
        params[d]
            + self.x[i]
                .iter()
                .zip(&params[..d])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let d = self.dim();
        let data: f64 = (0..self.y.len())
            .map(|i| {
                let z = self.margin(params, i);
                self.sample_weight[i] * (softplus(z) - f64::from(self.y[i]) * z)
            })
            .sum();
        data + 0.5 * self.l2 * params[..d].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d + 1];
        for i in 0..self.y.len() {
            let r =
                self.sample_weight[i] * (logistic(self.margin(params, i)) - f64::from(self.y[i]));
            for (gj, xj) in g.iter_mut().zip(&self.x[i]) {
                *gj += r * xj;
            }
            g[d] += r;
        }
        for (gj, wj) in g.iter_mut().zip(&params[..d]) {
            *gj += self.l2 * wj;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub epochs: usize,
    pub loss_trace: Vec<f64>,
    pub final_step: f64,
}

impl Scorer for LogisticModel {
    fn decision(&self, x: &[f64]) -> f64 {
        let z = self.standardizer.apply(x);
        self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Batch gradient descent; the step is halved whenever it would raise the
/// loss, so the loss trace never increases.
pub fn train_classifier(
    labeled: &LabeledSet,
    pool: &Pool,
    config: &TrainingConfig,
) -> Result<LogisticModel> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled set"));
    }
    config.validate()?;
    let standardizer = Standardizer::fit(pool);
    let mut x = Vec::with_capacity(labeled.len());
    let mut y = Vec::with_capacity(labeled.len());
    for e in labeled.entries() {
        x.push(standardizer.apply(pool.features(e.id)?));
        y.push(e.label);
    }
    let objective = LogisticObjective::new(x, y, config.l2, config.class_balanced);
    let d = pool.dim();
    let mut params = vec![0.0; d + 1];
    let mut loss = objective.loss(&params);
    let mut loss_trace = vec![loss];
    let mut step = config.step_size;
    let mut epochs = 0;
    while epochs < config.max_epochs {
        let grad = objective.gradient(&params);
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < config.grad_tol {
            break;
        }
        epochs += 1;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = params
                .iter()
                .zip(&grad)
                .map(|(p, g)| p - step * g)
                .collect();
            let cand_loss = objective.loss(&cand);
            if cand_loss <= loss {
                params = cand;
                loss = cand_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        loss_trace.push(loss);
        if !accepted {
            break;
        }
    }
    let bias = params.pop().unwrap_or(0.0);
    Ok(LogisticModel {
        weights: params,
        bias,
        standardizer,
        epochs,
        loss_trace,
        final_step: step,
    })
}

/// The reference [`Classifier`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LogisticRegression(pub TrainingConfig);

impl Classifier for LogisticRegression {
    fn fit(&self, labeled: &LabeledSet, pool: &Pool) -> Result<Arc<dyn Scorer>> {
        Ok(Arc::new(train_classifier(labeled, pool, &self.0)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchScores {
    pub ids: Vec<ItemId>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Scores `ids` (returned in ascending order).
pub fn score_batch(
    scorer: &dyn Scorer,
    ids: impl IntoIterator<Item = ItemId>,
    pool: &Pool,
) -> Result<BatchScores> {
    let mut ids: Vec<ItemId> = ids.into_iter().collect();
    ids.sort_unstable();
    ids.dedup();
    let mut raw = Vec::with_capacity(ids.len());
    for &id in &ids {
        raw.push(scorer.decision(pool.features(id)?));
    }
    let normalized = raw.iter().map(|&g| normalize(g)).collect();
    Ok(BatchScores {
        ids,
        raw,
        normalized,
    })
}

/// n x 2 matrix with rows `(p, 1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FMatrix(pub Array2<f64>);

impl FMatrix {
    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    /// Row-wise `sum_c F_ic log F_ic` (negative binary entropy).
    pub fn neg_entropy(&self) -> Vec<f64> {
        self.0
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&p| p * p.ln()).sum())
            .collect()
    }
}

pub fn build_f(normalized: &[f64]) -> Result<FMatrix> {
    let mut f = Array2::zeros((normalized.len(), 2));
    for (i, &p) in normalized.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(format!(
                "normalised score {p} at row {i} is outside [0, 1]"
            )));
        }
        let p = p.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
        f[[i, 0]] = p;
        f[[i, 1]] = 1.0 - p;
    }
    Ok(FMatrix(f))
}

/// One operating point of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub fpr: f64,
    pub fnr: f64,
}

/// EER from operating points ordered by increasing threshold (FPR falling
/// from 1, FNR rising to 1). Returns the first exact crossing, otherwise a
/// linear interpolation between the two points that bracket it.
pub fn eer_crossing(points: &[OperatingPoint]) -> f64 {
    let mut prev: Option<&OperatingPoint> = None;
    for p in points {
        let diff = p.fpr - p.fnr;
        if diff == 0.0 {
            return p.fpr;
        }
        if diff < 0.0 {
            let Some(q) = prev else { return p.fpr };
            let dq = q.fpr - q.fnr;
            let lambda = dq / (dq - diff);
            return q.fpr + lambda * (p.fpr - q.fpr);
        }
        prev = Some(p);
    }
    prev.map_or(0.5, |p| p.fpr)
}

/// Equal error rate of `scores` against binary `truths`. Thresholds are
/// -inf, +inf and the midpoints between consecutive distinct scores; an item
/// is predicted positive when its score exceeds the threshold.
pub fn eer(scores: &[f64], truths: &[Label]) -> Result<f64> {
    if scores.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} truths",
            scores.len(),
            truths.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("NaN score"));
    }
    let pos = truths.iter().filter(|&&t| t == 1).count();
    let neg = truths.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let (pos_f, neg_f) = (pos as f64, neg as f64);
    let mut fp = neg;
    let mut fneg = 0usize;
    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push(OperatingPoint { fpr: 1.0, fnr: 0.0 });
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truths[order[i]] == 1 {
                fneg += 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        points.push(OperatingPoint {
            fpr: fp as f64 / neg_f,
            fnr: fneg as f64 / pos_f,
        });
    }
    Ok(eer_crossing(&points))
}

/// Fraction of `labels` that `scorer` gets wrong at the `g > 0` threshold.
pub fn error_rate(scorer: &dyn Scorer, pool: &Pool, labels: &[(ItemId, Label)]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut wrong = 0usize;
    for &(id, label) in labels {
        let predicted = u8::from(scorer.decision(pool.features(id)?) > 0.0);
        if predicted != label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / labels.len() as f64)
}

/// Test-pool EER of `scorer`, if the pool carries truths of both classes.
pub fn pool_eer(scorer: &dyn Scorer, pool: &Pool) -> Option<f64> {
    let truths = pool.truths()?;
    let scores: Vec<f64> = pool
        .items()
        .iter()
        .map(|it| scorer.decision(&it.features))
        .collect();
    eer(&scores, &truths).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{generate_synthetic, PoolItem, Provenance};
    use proptest::prelude::*;

    fn toy_pool(points: &[(f64, f64, Label)]) -> Pool {
        let items = points
            .iter()
            .enumerate()
            .map(|(i, &(a, b, t))| PoolItem {
                id: i as ItemId,
                features: vec![a, b],
                truth: Some(t),
                image_refs: None,
            })
            .collect();
        Pool::new(
            items,
            2,
            Provenance {
                name: "toy".into(),
                seed: None,
                source: "test".into(),
            },
        )
        .unwrap()
    }

    fn label_all(pool: &Pool) -> LabeledSet {
        let mut s = LabeledSet::new();
        for it in pool.items() {
            s.insert(it.id, it.truth.unwrap(), 0).unwrap();
        }
        s
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(), 0.0);
        assert_eq!(eer(&[0.9, 0.6, 0.4, 0.1], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(eer(&[0.4, 0.6], &[1, 0]).unwrap(), 1.0);
        assert!(matches!(eer(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass)));
        // all tied: only the two infinite thresholds exist
        assert_eq!(eer(&[0.3; 5], &[1, 0, 0, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn eer_interpolates() {
        // (fpr, fnr) by threshold: (1,0) (2/3,0) (2/3,1/2) (1/3,1/2) (1/3,1) (0,1)
        // fpr - fnr changes sign between the 3rd and 4th points, halfway
        let e = eer(&[0.1, 0.2, 0.3, 0.4, 0.5], &[0, 1, 0, 1, 0]).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
    }

    #[test]
    fn score_normalisation() {
        assert_eq!(normalize(0.0), 0.5);
        assert_eq!(normalize(1e6), 1.0 - SCORE_EPS);
        assert_eq!(normalize(-1e6), SCORE_EPS);
    }

    #[test]
    fn f_matrix_rows() {
        let f = build_f(&[0.5]).unwrap();
        assert_eq!(f.0.row(0).to_vec(), vec![0.5, 0.5]);
        assert!((f.neg_entropy()[0] + std::f64::consts::LN_2).abs() < 1e-15);
        let f = build_f(&[1.0]).unwrap();
        assert_eq!(f.0[[0, 0]], 1.0 - SCORE_EPS);
        assert!((f.0[[0, 1]] - SCORE_EPS).abs() < 1e-16);
        let f = build_f(&[0.3, 0.7]).unwrap();
        let h = f.neg_entropy();
        assert!((h[0] - h[1]).abs() < 1e-15);
        assert!(build_f(&[1.2]).is_err());
        assert!(build_f(&[f64::NAN]).is_err());
    }

    #[test]
    fn separable_set_is_learned() {
        let pool = toy_pool(&[
            (0.0, 0.0, 0),
            (0.5, 1.0, 0),
            (1.0, 0.2, 0),
            (0.2, 0.8, 0),
            (0.9, 0.9, 0),
            (3.0, 3.0, 1),
            (3.5, 2.8, 1),
            (4.0, 3.9, 1),
            (2.9, 4.2, 1),
            (3.3, 3.1, 1),
        ]);
        let model = train_classifier(&label_all(&pool), &pool, &TrainingConfig::default()).unwrap();
        assert_eq!(pool_eer(&model, &pool), Some(0.0));
        let err = error_rate(
            &model,
            &pool,
            &pool
                .items()
                .iter()
                .map(|it| (it.id, it.truth.unwrap()))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn single_class_leans_to_observed_side() {
        let pool = toy_pool(&[(0.0, 0.0, 0), (1.0, 0.0, 0), (0.0, 1.0, 0), (5.0, 5.0, 1)]);
        let mut s = LabeledSet::new();
        for id in 0..3 {
            s.insert(id, 0, 0).unwrap();
        }
        let model = train_classifier(&s, &pool, &TrainingConfig::default()).unwrap();
        for id in 0..3 {
            assert!(model.normalized(pool.features(id).unwrap()) < 0.5);
        }
        assert!(model.weights.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn empty_labeled_set_rejected() {
        let pool = toy_pool(&[(0.0, 0.0, 0), (1.0, 1.0, 1)]);
        assert!(matches!(
            train_classifier(&LabeledSet::new(), &pool, &TrainingConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn loss_never_increases() {
        for seed in 0..5 {
            let pool = generate_synthetic(200, 6, 0.2, 1.5, seed).unwrap();
            let model =
                train_classifier(&label_all(&pool), &pool, &TrainingConfig::default()).unwrap();
            for w in model.loss_trace.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn separated_synthetic_reaches_zero_eer() {
        let pool = generate_synthetic(100, 2, 0.5, 10.0, 0).unwrap();
        let model = train_classifier(&label_all(&pool), &pool, &TrainingConfig::default()).unwrap();
        assert_eq!(pool_eer(&model, &pool), Some(0.0));
    }

    #[test]
    fn score_batch_orders_and_rejects_unknown() {
        let pool = toy_pool(&[(0.0, 0.0, 0), (1.0, 1.0, 1), (2.0, 2.0, 1)]);
        let model = train_classifier(&label_all(&pool), &pool, &TrainingConfig::default()).unwrap();
        let b = score_batch(&model, [2, 0, 1], &pool).unwrap();
        assert_eq!(b.ids, vec![0, 1, 2]);
        assert!(b.raw[0] < b.raw[2]);
        assert!(score_batch(&model, [7], &pool).is_err());
    }

    proptest! {
        #[test]
        fn eer_invariant_under_monotone_transform(
            pairs in proptest::collection::vec((-5.0f64..5.0, 0u8..2), 2..40)
        ) {
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let truths: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(truths.contains(&0) && truths.contains(&1));
            let e = eer(&scores, &truths).unwrap();
            let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(e, eer(&warped, &truths).unwrap());
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let flip: Vec<u8> = truths.iter().map(|t| 1 - t).collect();
            prop_assert!((e - eer(&neg, &flip).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&e));
        }

        #[test]
        fn normalized_scores_are_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            if a < b {
                prop_assert!(normalize(a) <= normalize(b));
            }
        }

        #[test]
        fn f_rows_sum_to_one(p in 0.0f64..=1.0) {
            let f = build_f(&[p]).unwrap();
            prop_assert_eq!(f.0[[0, 0]] + f.0[[0, 1]], 1.0);
        }
    }
}
