//! Weighted empirical risk minimization: an exact weighted least-squares
//! solver, a seeded SGD logistic trainer, and the weighted-loss
//! decomposition diagnostic.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core::{
    sigmoid, softmax, Hypothesis, HypothesisKind, LabeledDataset, WeightVector,
};
use crate::error::{Result, ShiftError};
use crate::seeding::rng_for;

const STREAM_SGD: u64 = 0x5347;

/// Mini-batch gradient-descent settings. The defaults are the
/// classification-benchmark settings (batch 32, 10 epochs, rate 0.005);
/// the matching trainer has its own defaults (see `matching_gd_defaults`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl GdConfig {
    pub fn new(learning_rate: f64, epochs: usize, batch_size: usize, seed: u64) -> Result<Self> {
        let gd = Self {
            learning_rate,
            epochs,
            batch_size,
            seed,
        };
        gd.validate()?;
        Ok(gd)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(ShiftError::InvalidParam {
                name: "learning_rate",
                reason: format!("must be positive and finite, got {}", self.learning_rate),
            });
        }
        if self.epochs == 0 {
            return Err(ShiftError::InvalidParam {
                name: "epochs",
                reason: "must be at least 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(ShiftError::InvalidParam {
                name: "batch_size",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Default gradient-descent settings for the set-matching trainer.
pub fn matching_gd_defaults() -> GdConfig {
    GdConfig {
        learning_rate: 0.001,
        epochs: 32,
        batch_size: 32,
        seed: 0,
    }
}

/// Exact minimizer of sum_i w_i (y_i - theta . [x_i;1])^2 + ridge |theta|^2
/// via the weighted normal equations. With ridge = 0 the solution is the
/// minimum-norm least-squares solution (SVD), so singular designs are fine.
pub fn fit_weighted_linear(
    data: &LabeledDataset,
    w: &WeightVector,
    ridge: f64,
) -> Result<Hypothesis> {
    if data.n() == 0 {
        return Err(ShiftError::EmptyDataset);
    }
    if w.len() != data.n() {
        return Err(ShiftError::LengthMismatch {
            expected: data.n(),
            got: w.len(),
        });
    }
    if !(ridge >= 0.0) {
        return Err(ShiftError::InvalidParam {
            name: "ridge",
            reason: format!("must be >= 0, got {ridge}"),
        });
    }
    let n = data.n();
    let d = data.dim();
    let p = d + 1;

    // Rows scaled by sqrt(w): solving min |M theta - v|^2 (+ ridge)
    let mut m = DMatrix::<f64>::zeros(n, p);
    let mut v = DVector::<f64>::zeros(n);
    for i in 0..n {
        let (x, y) = data.row(i);
        let s = w.values()[i].sqrt();
        for j in 0..d {
            m[(i, j)] = s * x[j];
        }
        m[(i, d)] = s;
        v[i] = s * y;
    }

    let theta = if ridge > 0.0 {
        let mut a = m.transpose() * &m;
        for j in 0..p {
            a[(j, j)] += ridge;
        }
        let b = m.transpose() * &v;
        a.cholesky()
            .map(|ch| ch.solve(&b))
            .ok_or(ShiftError::NonFinite {
                context: "ridge normal equations not positive definite".into(),
            })?
    } else {
        let svd = m.svd(true, true);
        let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let eps = (max_sv * 1e-12).max(f64::MIN_POSITIVE);
        svd.solve(&v, eps).map_err(|e| ShiftError::NonFinite {
            context: format!("least-squares solve failed: {e}"),
        })?
    };

    let params: Vec<f64> = theta.iter().copied().collect();
    Hypothesis::new(HypothesisKind::Linear, params, d)
}

/// Gradient of the weighted mean cross-entropy over `data` with respect to
/// the flat logistic parameter vector of `h` (same layout, same length).
///
/// Binary models (one parameter block) use the sigmoid likelihood; models
/// with K blocks use the softmax likelihood over classes 0..K-1.
pub fn analytic_logistic_gradient(
    h: &Hypothesis,
    data: &LabeledDataset,
    w: &WeightVector,
) -> Result<Vec<f64>> {
    if h.kind() != HypothesisKind::Logistic {
        return Err(ShiftError::InvalidParam {
            name: "hypothesis",
            reason: "gradient is defined for logistic hypotheses".into(),
        });
    }
    if data.n() == 0 {
        return Err(ShiftError::EmptyDataset);
    }
    if w.len() != data.n() {
        return Err(ShiftError::LengthMismatch {
            expected: data.n(),
            got: w.len(),
        });
    }
    if h.dim() != data.dim() {
        return Err(ShiftError::DimMismatch {
            expected: data.dim(),
            got: h.dim(),
        });
    }
    let idx: Vec<usize> = (0..data.n()).collect();
    logistic_grad_raw(h.params(), h.n_blocks(), data, &idx, w.values())
}

/// Shared gradient core over a batch given by row indices. The objective is
/// (1/|batch|) sum_{i in batch} w_i * ce(y_i, model(x_i)).
pub(crate) fn logistic_grad_raw(
    params: &[f64],
    m_blocks: usize,
    data: &LabeledDataset,
    batch: &[usize],
    w: &[f64],
) -> Result<Vec<f64>> {
    let d = data.dim();
    let classes = if m_blocks == 1 { 2 } else { m_blocks };
    let mut grad = vec![0.0; params.len()];
    let inv_b = 1.0 / batch.len() as f64;

    for &i in batch {
        let (x, y) = data.row(i);
        let id = y.round();
        if (y - id).abs() > 1e-9 || id < 0.0 || id as usize >= classes {
            return Err(ShiftError::BadClassId {
                id: id as i64,
                classes,
            });
        }
        let label = id as usize;
        let wi = w[i] * inv_b;
        if m_blocks == 1 {
            let z = affine(params, 0, d, x);
            let residual = sigmoid(z) - label as f64;
            accumulate(&mut grad, 0, d, x, wi * residual);
        } else {
            let scores: Vec<f64> = (0..m_blocks).map(|k| affine(params, k, d, x)).collect();
            let probs = softmax(&scores);
            for (k, &pk) in probs.iter().enumerate() {
                let residual = pk - if k == label { 1.0 } else { 0.0 };
                accumulate(&mut grad, k, d, x, wi * residual);
            }
        }
    }
    Ok(grad)
}

fn affine(params: &[f64], block: usize, d: usize, x: &[f64]) -> f64 {
    let start = block * (d + 1);
    crate::core::dot(&params[start..start + d], x) + params[start + d]
}

fn accumulate(grad: &mut [f64], block: usize, d: usize, x: &[f64], scale: f64) {
    let start = block * (d + 1);
    for j in 0..d {
        grad[start + j] += scale * x[j];
    }
    grad[start + d] += scale;
}

fn logistic_objective(
    params: &[f64],
    m_blocks: usize,
    data: &LabeledDataset,
    w: &[f64],
) -> f64 {
    let d = data.dim();
    let mut total = 0.0;
    for i in 0..data.n() {
        let (x, y) = data.row(i);
        let label = y.round() as usize;
        let nll = if m_blocks == 1 {
            // -ln sigmoid(zy) = softplus(-zy), stable form
            let z = affine(params, 0, d, x);
            let zy = if label == 1 { z } else { -z };
            (-zy).max(0.0) + (-zy.abs()).exp().ln_1p()
        } else {
            let scores: Vec<f64> = (0..m_blocks).map(|k| affine(params, k, d, x)).collect();
            crate::core::log_sum_exp(&scores) - scores[label]
        };
        total += w[i] * nll;
    }
    total / data.n() as f64
}

/// Fit a (possibly multiclass) logistic model by seeded mini-batch SGD on
/// the weighted cross-entropy. Targets must be dense class ids 0..K-1 with
/// at least two classes present; K = 2 yields a single sigmoid block,
/// K >= 3 a softmax with one parameter block per class.
pub fn fit_weighted_logistic(
    data: &LabeledDataset,
    w: &WeightVector,
    gd: &GdConfig,
) -> Result<Hypothesis> {
    if data.n() == 0 {
        return Err(ShiftError::EmptyDataset);
    }
    if w.len() != data.n() {
        return Err(ShiftError::LengthMismatch {
            expected: data.n(),
            got: w.len(),
        });
    }
    let classes = data.n_classes()?;
    let distinct: std::collections::HashSet<i64> =
        data.targets().iter().map(|&y| y.round() as i64).collect();
    if classes < 2 || distinct.len() < 2 {
        return Err(ShiftError::DegenerateLabels);
    }
    gd.validate()?;
    let d = data.dim();
    let m_blocks = if classes == 2 { 1 } else { classes };
    let mut params = vec![0.0; m_blocks * (d + 1)];
    let lr = gd.learning_rate;
    let mut rng = rng_for(gd.seed, STREAM_SGD, 0);
    let mut order: Vec<usize> = (0..data.n()).collect();

    for epoch in 0..gd.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(gd.batch_size) {
            let grad = logistic_grad_raw(&params, m_blocks, data, batch, w.values())?;
            for (pj, gj) in params.iter_mut().zip(&grad) {
                *pj -= lr * gj;
            }
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(ShiftError::NonFiniteLoss { epoch });
        }
    }
    let obj = logistic_objective(&params, m_blocks, data, w.values());
    if !obj.is_finite() {
        return Err(ShiftError::NonFiniteLoss { epoch: gd.epochs });
    }
    Hypothesis::new(HypothesisKind::Logistic, params, d)
}

/// Split the weighted squared error three ways: with squared errors
/// e_i = (h(x_i) - y_i)^2,
///
///   lhs      = mean(true_w * e)          (the ideally weighted loss)
///   term_hat = mean(est_w * e)           (the loss actually optimized)
///   term_gap = mean((true_w - est_w) * e) (the approximation penalty)
///
/// and lhs = term_hat + term_gap holds identically.
pub fn risk_decomposition_check(
    data: &LabeledDataset,
    true_w: &WeightVector,
    est_w: &WeightVector,
    h: &Hypothesis,
) -> Result<(f64, f64, f64)> {
    if true_w.len() != data.n() {
        return Err(ShiftError::LengthMismatch {
            expected: data.n(),
            got: true_w.len(),
        });
    }
    if est_w.len() != data.n() {
        return Err(ShiftError::LengthMismatch {
            expected: data.n(),
            got: est_w.len(),
        });
    }
    if data.n() == 0 {
        return Err(ShiftError::EmptyDataset);
    }
    let mut lhs = 0.0;
    let mut term_hat = 0.0;
    let mut term_gap = 0.0;
    for i in 0..data.n() {
        let (x, y) = data.row(i);
        let e = h.predict_value(x)? - y;
        let sq = e * e;
        lhs += true_w.values()[i] * sq;
        term_hat += est_w.values()[i] * sq;
        term_gap += (true_w.values()[i] - est_w.values()[i]) * sq;
    }
    let n = data.n() as f64;
    Ok((lhs / n, term_hat / n, term_gap / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{empirical_risk, weighted_empirical_risk, FeatureMatrix, LossKind};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_dataset(n: usize, d: usize, seed: u64) -> (LabeledDataset, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let coef: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let noise: f64 = rng.sample(StandardNormal);
                crate::core::dot(&coef, r) + 0.3 + 0.2 * noise
            })
            .collect();
        (
            LabeledDataset::new(FeatureMatrix::from_rows(&rows).unwrap(), y, None).unwrap(),
            coef,
        )
    }

    /// Independent dense solve of the unweighted normal equations (LU),
    /// valid for well-conditioned designs.
    fn ols_oracle(data: &LabeledDataset) -> Vec<f64> {
        let n = data.n();
        let d = data.dim();
        let mut m = DMatrix::<f64>::zeros(n, d + 1);
        let mut v = DVector::<f64>::zeros(n);
        for i in 0..n {
            let (x, y) = data.row(i);
            for j in 0..d {
                m[(i, j)] = x[j];
            }
            m[(i, d)] = 1.0;
            v[i] = y;
        }
        let a = m.transpose() * &m;
        let b = m.transpose() * &v;
        a.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn linear_matches_ols_with_unit_weights() {
        let (data, _) = random_dataset(60, 3, 1);
        let h = fit_weighted_linear(&data, &WeightVector::ones(60), 0.0).unwrap();
        let oracle = ols_oracle(&data);
        for (a, b) in h.params().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_interpolates_two_points() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let data = LabeledDataset::new(x, vec![0.0, 1.0], None).unwrap();
        let h = fit_weighted_linear(&data, &WeightVector::ones(2), 0.0).unwrap();
        assert!((h.params()[0] - 1.0).abs() < 1e-10);
        assert!(h.params()[1].abs() < 1e-10);
    }

    #[test]
    fn linear_integer_weights_equal_duplication() {
        let (data, _) = random_dataset(25, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mult: Vec<usize> = (0..25).map(|_| rng.gen_range(1..5)).collect();
        let w = WeightVector::new(mult.iter().map(|&m| m as f64).collect()).unwrap();
        let h_weighted = fit_weighted_linear(&data, &w, 0.0).unwrap();

        let mut dup_idx = Vec::new();
        for (i, &m) in mult.iter().enumerate() {
            for _ in 0..m {
                dup_idx.push(i);
            }
        }
        let dup = data.select(&dup_idx);
        let h_dup =
            fit_weighted_linear(&dup, &WeightVector::ones(dup.n()), 0.0).unwrap();
        for (a, b) in h_weighted.params().iter().zip(h_dup.params()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_weight_rescaling_invariance() {
        let (data, _) = random_dataset(40, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..40).map(|_| rng.gen_range(0.1..3.0)).collect();
        let wv = WeightVector::new(w.clone()).unwrap();
        let scaled = WeightVector::new(w.iter().map(|v| v * 3.7).collect()).unwrap();
        let h1 = fit_weighted_linear(&data, &wv, 0.0).unwrap();
        let h2 = fit_weighted_linear(&data, &scaled, 0.0).unwrap();
        for (a, b) in h1.params().iter().zip(h2.params()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_singular_design_min_norm() {
        // both rows have the same feature value: Gram matrix is singular,
        // solutions satisfy coef + intercept = 3; min-norm picks (1.5, 1.5)
        let x = FeatureMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let data = LabeledDataset::new(x, vec![2.0, 4.0], None).unwrap();
        let h = fit_weighted_linear(&data, &WeightVector::ones(2), 0.0).unwrap();
        assert!((h.params()[0] - 1.5).abs() < 1e-9, "{:?}", h.params());
        assert!((h.params()[1] - 1.5).abs() < 1e-9);
        // small ridge stays near the min-norm answer
        let hr = fit_weighted_linear(&data, &WeightVector::ones(2), 1e-8).unwrap();
        assert!((hr.params()[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn linear_zero_weights_and_ridge_shrinkage() {
        // zero weight removes a point's influence entirely
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let data = LabeledDataset::new(x, vec![0.0, 1.0, 100.0], None).unwrap();
        let w = WeightVector::new(vec![1.0, 1.0, 0.0]).unwrap();
        let h = fit_weighted_linear(&data, &w, 0.0).unwrap();
        assert!((h.params()[0] - 1.0).abs() < 1e-9);
        assert!(h.params()[1].abs() < 1e-9);
        // huge ridge shrinks everything toward zero
        let h = fit_weighted_linear(&data, &WeightVector::ones(3), 1e12).unwrap();
        assert!(h.params().iter().all(|p| p.abs() < 1e-6));
    }

    fn two_gaussian_classes(
        n_per: usize,
        gap: f64,
        seed: u64,
    ) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for label in 0..2 {
            let center = label as f64 * gap;
            for _ in 0..n_per {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                rows.push(vec![center + a, center + b]);
                ys.push(label as f64);
            }
        }
        LabeledDataset::new(FeatureMatrix::from_rows(&rows).unwrap(), ys, None).unwrap()
    }

    #[test]
    fn logistic_separable_reaches_high_accuracy() {
        let data = two_gaussian_classes(200, 4.0, 10);
        let gd = GdConfig::new(0.05, 60, 32, 0).unwrap();
        let h = fit_weighted_logistic(&data, &WeightVector::ones(400), &gd).unwrap();
        let mut hits = 0;
        for i in 0..data.n() {
            let (x, y) = data.row(i);
            if h.predict_class(x).unwrap() == y as usize {
                hits += 1;
            }
        }
        assert!(hits as f64 / 400.0 >= 0.99, "accuracy {}", hits as f64 / 400.0);
    }

    #[test]
    fn logistic_zeroed_class_predicts_other_class() {
        let data = two_gaussian_classes(100, 2.0, 11);
        let w: Vec<f64> = data
            .targets()
            .iter()
            .map(|&y| if y == 0.0 { 0.0 } else { 1.0 })
            .collect();
        let gd = GdConfig::new(0.1, 40, 32, 1).unwrap();
        let h = fit_weighted_logistic(&data, &WeightVector::new(w).unwrap(), &gd).unwrap();
        let ones = |h: &Hypothesis| -> usize {
            (0..data.n())
                .filter(|&i| h.predict_class(data.row(i).0).unwrap() == 1)
                .count()
        };
        for i in 0..data.n() {
            let (x, y) = data.row(i);
            if y == 1.0 {
                assert_eq!(
                    h.predict_class(x).unwrap(),
                    1,
                    "a weighted point must be classified correctly"
                );
            }
        }
        // The zero-weighted class exerts no pull, so the boundary drifts
        // well past the midpoint (the drift toward infinity is only
        // logarithmic, so distant stragglers may remain).
        let drifted = ones(&h);
        assert!(
            drifted as f64 / data.n() as f64 >= 0.8,
            "only {drifted}/{} predicted as the weighted class",
            data.n()
        );
        let balanced = fit_weighted_logistic(&data, &WeightVector::ones(data.n()), &gd).unwrap();
        let baseline = ones(&balanced);
        assert!(
            drifted >= baseline + data.n() / 5,
            "zeroing one class should move far more points to the other side \
             ({drifted} vs baseline {baseline})"
        );
    }

    #[test]
    fn logistic_deterministic_and_degenerate_errors() {
        let data = two_gaussian_classes(50, 3.0, 12);
        let gd = GdConfig::default().with_seed(77);
        let a = fit_weighted_logistic(&data, &WeightVector::ones(100), &gd).unwrap();
        let b = fit_weighted_logistic(&data, &WeightVector::ones(100), &gd).unwrap();
        assert_eq!(a.params(), b.params());

        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let single = LabeledDataset::new(x, vec![1.0, 1.0], None).unwrap();
        assert!(matches!(
            fit_weighted_logistic(&single, &WeightVector::ones(2), &GdConfig::default()),
            Err(ShiftError::DegenerateLabels)
        ));
    }

    #[test]
    fn logistic_multiclass_learns_three_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let centers = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]];
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for (label, c) in centers.iter().enumerate() {
            for _ in 0..80 {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                rows.push(vec![c[0] + a, c[1] + b]);
                ys.push(label as f64);
            }
        }
        let data =
            LabeledDataset::new(FeatureMatrix::from_rows(&rows).unwrap(), ys, None).unwrap();
        let gd = GdConfig::new(0.05, 60, 32, 2).unwrap();
        let h = fit_weighted_logistic(&data, &WeightVector::ones(240), &gd).unwrap();
        assert_eq!(h.n_blocks(), 3);
        let mut hits = 0;
        for i in 0..data.n() {
            let (x, y) = data.row(i);
            if h.predict_class(x).unwrap() == y as usize {
                hits += 1;
            }
        }
        assert!(hits as f64 / 240.0 >= 0.97, "accuracy {}", hits as f64 / 240.0);
    }

    /// Central finite difference of the weighted CE objective.
    fn fd_gradient(h: &Hypothesis, data: &LabeledDataset, w: &WeightVector) -> Vec<f64> {
        let eps = 1e-6;
        let m_blocks = h.n_blocks();
        let mut g = vec![0.0; h.params().len()];
        for j in 0..h.params().len() {
            let mut plus = h.params().to_vec();
            plus[j] += eps;
            let mut minus = h.params().to_vec();
            minus[j] -= eps;
            let fp = logistic_objective(&plus, m_blocks, data, w.values());
            let fm = logistic_objective(&minus, m_blocks, data, w.values());
            g[j] = (fp - fm) / (2.0 * eps);
        }
        g
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for trial in 0..25 {
            let binary = trial % 2 == 0;
            let d = rng.gen_range(1..4);
            let n = rng.gen_range(3..12);
            let classes = if binary { 2 } else { rng.gen_range(3..5) };
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect())
                .collect();
            let ys: Vec<f64> = (0..n)
                .map(|_| f64::from(rng.gen_range(0..classes as i32)))
                .collect();
            let data =
                LabeledDataset::new(FeatureMatrix::from_rows(&rows).unwrap(), ys, None).unwrap();
            let w = WeightVector::new((0..n).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap();
            let m_blocks = if classes == 2 { 1 } else { classes };
            let params: Vec<f64> = (0..m_blocks * (d + 1))
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let h = Hypothesis::new(HypothesisKind::Logistic, params, d).unwrap();
            let analytic = analytic_logistic_gradient(&h, &data, &w).unwrap();
            let fd = fd_gradient(&h, &data, &w);
            for (a, f) in analytic.iter().zip(&fd) {
                let scale = a.abs().max(f.abs()).max(1e-3);
                assert!(
                    (a - f).abs() / scale < 1e-4,
                    "trial {trial}: {a} vs {f}"
                );
            }
        }
    }

    #[test]
    fn logistic_single_sample_closed_form_gradient() {
        // one sample x=2, y=1, params (coef 0.5, intercept -0.25):
        // z = 0.75, grad = (sigmoid(z) - 1) * [x, 1]
        let x = FeatureMatrix::from_rows(&[vec![2.0]]).unwrap();
        let data = LabeledDataset::new(x, vec![1.0], None).unwrap();
        let h = Hypothesis::new(HypothesisKind::Logistic, vec![0.5, -0.25], 1).unwrap();
        let w = WeightVector::ones(1);
        let g = analytic_logistic_gradient(&h, &data, &w).unwrap();
        let r = sigmoid(0.75) - 1.0;
        assert!((g[0] - 2.0 * r).abs() < 1e-12);
        assert!((g[1] - r).abs() < 1e-12);
        let fd = fd_gradient(&h, &data, &w);
        for (a, f) in g.iter().zip(&fd) {
            assert!((a - f).abs() / a.abs().max(1e-3) < 1e-5);
        }
        // zero weights kill the gradient
        let g0 =
            analytic_logistic_gradient(&h, &data, &WeightVector::new(vec![0.0]).unwrap()).unwrap();
        assert!(g0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn logistic_full_batch_converges_to_stationary_point() {
        // overlapping classes: the optimum is finite; full-batch descent
        // should drive the gradient norm to ~0
        let data = two_gaussian_classes(20, 1.0, 15);
        let gd = GdConfig::new(0.5, 40_000, 40, 3).unwrap();
        let h = fit_weighted_logistic(&data, &WeightVector::ones(40), &gd).unwrap();
        let g = analytic_logistic_gradient(&h, &data, &WeightVector::ones(40)).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn decomposition_identity_and_edge_cases() {
        let (data, _) = random_dataset(100, 2, 20);
        let h = Hypothesis::linear(&[0.4, -0.3], 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let tw =
            WeightVector::new((0..100).map(|_| rng.gen_range(0.0..3.0)).collect()).unwrap();
        let ew =
            WeightVector::new((0..100).map(|_| rng.gen_range(0.0..3.0)).collect()).unwrap();
        let (lhs, hat, gap) = risk_decomposition_check(&data, &tw, &ew, &h).unwrap();
        assert!((lhs - (hat + gap)).abs() < 1e-10);

        // est = true -> gap 0
        let (lhs2, hat2, gap2) = risk_decomposition_check(&data, &tw, &tw, &h).unwrap();
        assert!(gap2.abs() < 1e-15);
        assert!((lhs2 - hat2).abs() < 1e-15);

        // est = 0 -> hat 0, lhs = gap
        let zeros = WeightVector::new(vec![0.0; 100]).unwrap();
        let (lhs3, hat3, gap3) = risk_decomposition_check(&data, &tw, &zeros, &h).unwrap();
        assert_eq!(hat3, 0.0);
        assert!((lhs3 - gap3).abs() < 1e-15);
    }

    #[test]
    fn true_ratio_weighting_is_unbiased_for_test_risk() {
        // fixed hypothesis, 1-D covariate shift with known density ratio:
        // mean weighted train loss tracks mean test loss across seeds
        let h = Hypothesis::linear(&[0.7], -0.2).unwrap();
        let mut weighted = Vec::new();
        let mut test = Vec::new();
        for seed in 0..50 {
            let (pair, ratio) = crate::samplers::make_synthetic_covariate_shift(
                2000,
                2000,
                &[0.0],
                &[1.0],
                1.0,
                &[1.0],
                0.5,
                seed,
            )
            .unwrap();
            let w = ratio.eval_rows(pair.train.features()).unwrap();
            weighted.push(
                weighted_empirical_risk(&h, &pair.train, &w, LossKind::Squared).unwrap(),
            );
            test.push(empirical_risk(&h, &pair.test, LossKind::Squared).unwrap());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let se = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
                / (v.len() as f64 - 1.0)
                / v.len() as f64)
                .sqrt()
        };
        let gap = (mean(&weighted) - mean(&test)).abs();
        let tol = 3.0 * (se(&weighted) + se(&test));
        assert!(gap <= tol, "gap {gap} tol {tol}");
    }
}
