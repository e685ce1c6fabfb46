//! Evaluation metrics: 1-D Wasserstein distance, regression error, accuracy,
//! and rank-based AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShiftError};

/// A named metric value together with the number of samples behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, n: usize) -> Result<Self> {
        if !value.is_finite() {
            return Err(ShiftError::NonFinite {
                context: "metric value".into(),
            });
        }
        if n == 0 {
            return Err(ShiftError::EmptyInput);
        }
        Ok(Self {
            name: name.into(),
            value,
            n,
        })
    }

    /// Aggregate raw per-seed samples into (mean report, sample std).
    /// The std uses the n-1 denominator and is 0 for a single sample.
    pub fn from_samples(name: impl Into<String>, samples: &[f64]) -> Result<(Self, f64)> {
        if samples.is_empty() {
            return Err(ShiftError::EmptyInput);
        }
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok((Self::new(name, mean, n)?, std))
    }
}

/// First Wasserstein distance between the empirical distributions of two
/// 1-D samples (equal total mass 1 each, possibly different sizes).
///
/// Computed exactly as the integral of |F^{-1}_a(q) - F^{-1}_b(q)| over
/// q in [0,1], evaluated piecewise on the merged quantile grid. For equal
/// sizes this reduces to the mean absolute difference of the sorted samples.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(ShiftError::EmptyInput);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(ShiftError::NonFinite {
            context: "wasserstein input".into(),
        });
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let na = sa.len() as f64;
    let nb = sb.len() as f64;

    // Walk the merged grid of quantile breakpoints {i/na} U {j/nb}.
    let mut total = 0.0;
    let mut q = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < sa.len() && j < sb.len() {
        let qa = (i + 1) as f64 / na;
        let qb = (j + 1) as f64 / nb;
        let q_next = qa.min(qb);
        total += (q_next - q) * (sa[i] - sb[j]).abs();
        if qa <= q_next + 1e-15 {
            // floating-point guard: advance whichever breakpoint we hit
            i += 1;
        }
        if qb <= q_next + 1e-15 {
            j += 1;
        }
        q = q_next;
    }
    Ok(total)
}

/// Mean absolute error between predictions and targets.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(ShiftError::EmptyInput);
    }
    if pred.len() != truth.len() {
        return Err(ShiftError::LengthMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// Fraction of positions where the predicted class id equals the true id.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(ShiftError::EmptyInput);
    }
    if pred.len() != truth.len() {
        return Err(ShiftError::LengthMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Area under the ROC curve from scores and binary labels, computed via
/// the rank statistic with midranks for tied scores:
/// AUC = (sum of positive ranks - n_pos(n_pos+1)/2) / (n_pos * n_neg).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.is_empty() {
        return Err(ShiftError::EmptyInput);
    }
    if scores.len() != labels.len() {
        return Err(ShiftError::LengthMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(ShiftError::NonFinite {
            context: "auc scores".into(),
        });
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(ShiftError::InvalidParam {
            name: "labels",
            reason: "auc labels must be 0 or 1".into(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(ShiftError::SingleClassAuc);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // midranks over tied blocks (1-based ranks)
    let mut rank = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            rank[k] = mid;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = labels
        .iter()
        .zip(&rank)
        .filter(|(&l, _)| l == 1)
        .map(|(_, &r)| r)
        .sum();
    let np = n_pos as f64;
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Spearman rank correlation between two equal-length samples (midranks
/// for ties). Used in tests and diagnostics for monotone-trend checks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ShiftError::LengthMismatch {
            expected: b.len(),
            got: a.len(),
        });
    }
    if a.len() < 2 {
        return Err(ShiftError::EmptyInput);
    }
    let ra = midranks(a);
    let rb = midranks(b);
    let mean = (a.len() + 1) as f64 / 2.0;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        let x = ra[i] - mean;
        let y = rb[i] - mean;
        num += x * y;
        da += x * x;
        db += y * y;
    }
    if da == 0.0 || db == 0.0 {
        return Err(ShiftError::NonFinite {
            context: "spearman with constant input".into(),
        });
    }
    Ok(num / (da * db).sqrt())
}

fn midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut rank = vec![0.0f64; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            rank[k] = mid;
        }
        i = j + 1;
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Exact optimal-transport cost between two equal-size point sets by
    /// enumerating all assignments (feasible for n <= 8). For 1-D cost
    /// |x-y| the optimum matches the sorted pairing, which is what the
    /// closed-form routine integrates.
    fn transport_oracle(a: &[f64], b: &[f64]) -> f64 {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for p in perms(n - 1) {
                for k in 0..n {
                    let mut q = p.clone();
                    q.insert(k, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let n = a.len();
        perms(n)
            .into_iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(i, &j)| (a[i] - b[j]).abs())
                    .sum::<f64>()
                    / n as f64
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn wasserstein_simple_values() {
        // {0,1} vs {1,2}: every point moves by 1
        let d = wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        // identical samples
        let d = wasserstein_1d(&[3.0, -1.0, 2.0], &[2.0, 3.0, -1.0]).unwrap();
        assert!(d.abs() < 1e-12);
        // point masses
        let d = wasserstein_1d(&[0.0], &[5.0]).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_unequal_sizes() {
        // {0} vs {0,1}: half the mass moves distance 1 -> 0.5
        let d = wasserstein_1d(&[0.0], &[0.0, 1.0]).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        // {0,0,0} vs {0,3}: grid {1/3,1/2,2/3,1}; mass 1/2 pairs with 3
        let d = wasserstein_1d(&[0.0, 0.0, 0.0], &[0.0, 3.0]).unwrap();
        assert!((d - 1.5).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_matches_assignment_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let n = rng.gen_range(1..7);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let fast = wasserstein_1d(&a, &b).unwrap();
            let slow = transport_oracle(&a, &b);
            assert!(
                (fast - slow).abs() < 1e-9,
                "n={n} fast={fast} slow={slow}"
            );
        }
    }

    #[test]
    fn wasserstein_metric_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n = rng.gen_range(1..10);
            let m = rng.gen_range(1..10);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let ab = wasserstein_1d(&a, &b).unwrap();
            let ba = wasserstein_1d(&b, &a).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-12, "symmetry");
            // translation shifts distance by at most |delta| (exactly for equal sizes)
            let delta = 2.5;
            let a_shift: Vec<f64> = a.iter().map(|v| v + delta).collect();
            let aa = wasserstein_1d(&a, &a_shift).unwrap();
            assert!((aa - delta).abs() < 1e-12);
        }
    }

    #[test]
    fn wasserstein_errors() {
        assert!(matches!(
            wasserstein_1d(&[], &[1.0]),
            Err(ShiftError::EmptyInput)
        ));
        assert!(wasserstein_1d(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn mae_and_accuracy() {
        let m = mae(&[1.0, 2.0, 3.0], &[2.0, 2.0, 1.0]).unwrap();
        assert!((m - 1.0).abs() < 1e-15);
        let a = accuracy(&[0, 1, 2, 1], &[0, 1, 1, 1]).unwrap();
        assert!((a - 0.75).abs() < 1e-15);
        assert!(mae(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn auc_known_values() {
        // perfect separation
        let a = auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert!((a - 1.0).abs() < 1e-15);
        // perfectly wrong
        let a = auc(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]).unwrap();
        assert!(a.abs() < 1e-15);
        // one inversion among 2x2 pairs -> 3/4
        let a = auc(&[0.9, 0.8, 0.7, 0.1], &[1, 0, 1, 0]).unwrap();
        assert!((a - 0.75).abs() < 1e-15);
        // all scores tied -> 0.5
        let a = auc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap();
        assert!((a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auc_matches_pair_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let n = rng.gen_range(2..40);
            let scores: Vec<f64> = (0..n)
                .map(|_| f64::from(rng.gen_range(0..6)) / 5.0) // coarse grid forces ties
                .collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            let n_pos = labels.iter().filter(|&&l| l == 1).count();
            if n_pos == 0 || n_pos == n {
                continue;
            }
            // direct definition: P(score_pos > score_neg) + 0.5 P(tie)
            let mut num = 0.0;
            let mut cnt = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] == 1 && labels[j] == 0 {
                        cnt += 1.0;
                        if scores[i] > scores[j] {
                            num += 1.0;
                        } else if scores[i] == scores[j] {
                            num += 0.5;
                        }
                    }
                }
            }
            let oracle = num / cnt;
            let fast = auc(&scores, &labels).unwrap();
            assert!((fast - oracle).abs() < 1e-12, "fast={fast} oracle={oracle}");
        }
    }

    #[test]
    fn auc_single_class_is_error() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1]),
            Err(ShiftError::SingleClassAuc)
        ));
    }

    #[test]
    fn spearman_basic() {
        let s = spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let s = spearman(&[1.0, 2.0, 3.0], &[5.0, 0.0, -5.0]).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn metric_report_aggregates_mean_and_std() {
        let (report, std) = MetricReport::from_samples("mae", &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(report.n, 3);
        assert!((report.value - 2.0).abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-12);
        let (single, std) = MetricReport::from_samples("mae", &[4.5]).unwrap();
        assert_eq!(single.n, 1);
        assert_eq!(std, 0.0);
        assert!(MetricReport::new("x", f64::NAN, 1).is_err());
        assert!(MetricReport::new("x", 0.0, 0).is_err());
        assert!(MetricReport::from_samples("x", &[]).is_err());
    }
}
