//! Construction of train/test pairs exhibiting a chosen shift type at a
//! controllable magnitude.
//!
//! Two families live here: samplers that carve a pair out of an existing
//! labeled pool (target shift via rejection sampling, covariate shift via
//! group keys) and fully synthetic generators whose ground-truth densities
//! are known in closed form.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::core::{FeatureMatrix, LabeledDataset, ShiftSpec, ShiftType, WeightVector};
use crate::error::{Result, ShiftError};
use crate::metrics::wasserstein_1d;
use crate::seeding::rng_for;

/// Stream tags for seed derivation (frozen; see the seeding module).
const STREAM_TARGET: u64 = 0x5453; // target-shift rejection sampler
const STREAM_GROUPS: u64 = 0x4753; // group subsampler
const STREAM_COV: u64 = 0x4353; // synthetic covariate shift
const STREAM_DRIFT: u64 = 0x4453; // synthetic concept drift

/// Maximum number of full passes the rejection sampler makes over the
/// not-yet-accepted pool before declaring the request unsatisfiable.
const MAX_REJECTION_ROUNDS: usize = 64;

/// A matched train/test pair, the shift description that produced it, and
/// the realized shift magnitude: the 1-D Wasserstein distance between the
/// train and test target samples (or, for the synthetic covariate-shift
/// generator, between the first feature coordinate of the two sides).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPair {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub spec: ShiftSpec,
    pub realized_magnitude: f64,
}

/// Closed-form density ratio p_test(x)/p_train(x) between two isotropic
/// Gaussians sharing one scale parameter. Exposed by the synthetic
/// covariate-shift generator so benchmarks can run with oracle weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianRatio {
    train_mean: Vec<f64>,
    test_mean: Vec<f64>,
    sigma: f64,
}

impl GaussianRatio {
    pub fn new(train_mean: Vec<f64>, test_mean: Vec<f64>, sigma: f64) -> Result<Self> {
        if train_mean.len() != test_mean.len() {
            return Err(ShiftError::LengthMismatch {
                expected: train_mean.len(),
                got: test_mean.len(),
            });
        }
        if !(sigma > 0.0) {
            return Err(ShiftError::InvalidParam {
                name: "sigma",
                reason: format!("must be > 0, got {sigma}"),
            });
        }
        Ok(Self {
            train_mean,
            test_mean,
            sigma,
        })
    }

    /// Ratio at a single point, evaluated in log space:
    /// exp((|x - mu_train|^2 - |x - mu_test|^2) / (2 sigma^2)).
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.train_mean.len() {
            return Err(ShiftError::DimMismatch {
                expected: self.train_mean.len(),
                got: x.len(),
            });
        }
        let mut log_r = 0.0;
        for j in 0..x.len() {
            let dt = x[j] - self.train_mean[j];
            let de = x[j] - self.test_mean[j];
            log_r += (dt * dt - de * de) / (2.0 * self.sigma * self.sigma);
        }
        Ok(log_r.exp())
    }

    /// Ratio at every row of a matrix.
    pub fn eval_rows(&self, x: &FeatureMatrix) -> Result<WeightVector> {
        let mut w = Vec::with_capacity(x.n_rows());
        for row in x.rows() {
            w.push(self.eval(row)?);
        }
        WeightVector::new(w)
    }
}

/// Draw `size` pool indices, accepting each candidate with probability
/// exp(-(y - mu)^2 / (2 sigma^2)) — i.e. proportional to a Gaussian density
/// over the target value — and removing accepted rows from `remaining`.
/// Makes repeated shuffled passes so modest pools can still fill a quota.
fn rejection_draw(
    remaining: &mut Vec<usize>,
    y: &[f64],
    mu: f64,
    sigma: f64,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut accepted = Vec::with_capacity(size);
    for _ in 0..MAX_REJECTION_ROUNDS {
        if accepted.len() == size {
            break;
        }
        remaining.shuffle(rng);
        let mut kept = Vec::with_capacity(remaining.len());
        for &i in remaining.iter() {
            if accepted.len() < size {
                let z = (y[i] - mu) / sigma;
                if rng.gen::<f64>() < (-0.5 * z * z).exp() {
                    accepted.push(i);
                    continue;
                }
            }
            kept.push(i);
        }
        *remaining = kept;
    }
    if accepted.len() < size {
        return Err(ShiftError::InsufficientPool {
            requested: size,
            accepted: accepted.len(),
        });
    }
    accepted.sort_unstable();
    Ok(accepted)
}

/// Carve a target-shifted train/test pair out of `pool` by rejection
/// sampling the target values against Gaussian acceptance profiles
/// N(train_mu, train_sigma^2) and N(test_mu, test_sigma^2). Rows are taken
/// whole and without replacement (the two splits are index-disjoint), so
/// the feature-given-target conditional is untouched.
pub fn sample_target_shift(
    pool: &LabeledDataset,
    spec: &ShiftSpec,
    train_size: usize,
    test_size: usize,
) -> Result<SplitPair> {
    spec.validate()?;
    if spec.shift_type != ShiftType::Target {
        return Err(ShiftError::InvalidParam {
            name: "spec",
            reason: format!("expected target shift, got {:?}", spec.shift_type),
        });
    }
    if train_size == 0 || test_size == 0 {
        return Err(ShiftError::InvalidParam {
            name: "size",
            reason: "split sizes must be at least 1".into(),
        });
    }
    if pool.n() < train_size + test_size {
        return Err(ShiftError::NotEnoughRows {
            requested: train_size + test_size,
            available: pool.n(),
        });
    }
    let (mu_tr, s_tr) = (spec.train_mu.unwrap(), spec.train_sigma.unwrap());
    let (mu_te, s_te) = (spec.test_mu.unwrap(), spec.test_sigma.unwrap());

    let mut rng = rng_for(spec.seed, STREAM_TARGET, 0);
    let mut remaining: Vec<usize> = (0..pool.n()).collect();
    let train_idx = rejection_draw(&mut remaining, pool.targets(), mu_tr, s_tr, train_size, &mut rng)?;
    let test_idx = rejection_draw(&mut remaining, pool.targets(), mu_te, s_te, test_size, &mut rng)?;

    let train = pool.select(&train_idx);
    let test = pool.select(&test_idx);
    let realized_magnitude = wasserstein_1d(train.targets(), test.targets())?;
    Ok(SplitPair {
        train,
        test,
        spec: spec.clone(),
        realized_magnitude,
    })
}

/// Uniform random subsamples of the rows whose group key falls in
/// `train_groups` / `test_groups` respectively. The two splits are always
/// index-disjoint, so overlapping (even identical) group lists are allowed
/// and yield a no-shift pair.
pub fn sample_covariate_shift_groups(
    pool: &LabeledDataset,
    train_groups: &[i64],
    test_groups: &[i64],
    train_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<SplitPair> {
    let keys = pool.group_keys().ok_or(ShiftError::InvalidParam {
        name: "pool",
        reason: "pool has no group keys".into(),
    })?;
    if train_groups.is_empty() || test_groups.is_empty() {
        return Err(ShiftError::InvalidParam {
            name: "groups",
            reason: "group lists must be nonempty".into(),
        });
    }
    for &g in train_groups.iter().chain(test_groups) {
        if !keys.contains(&g) {
            return Err(ShiftError::EmptyGroup { group: g });
        }
    }

    let train_set: HashSet<i64> = train_groups.iter().copied().collect();
    let test_set: HashSet<i64> = test_groups.iter().copied().collect();
    let mut train_avail: Vec<usize> = (0..pool.n()).filter(|&i| train_set.contains(&keys[i])).collect();
    if train_size > train_avail.len() {
        return Err(ShiftError::NotEnoughRows {
            requested: train_size,
            available: train_avail.len(),
        });
    }
    let mut rng = rng_for(seed, STREAM_GROUPS, 0);
    train_avail.shuffle(&mut rng);
    let mut train_idx: Vec<usize> = train_avail[..train_size].to_vec();
    train_idx.sort_unstable();

    let taken: HashSet<usize> = train_idx.iter().copied().collect();
    let mut test_avail: Vec<usize> = (0..pool.n())
        .filter(|&i| test_set.contains(&keys[i]) && !taken.contains(&i))
        .collect();
    if test_size > test_avail.len() {
        return Err(ShiftError::NotEnoughRows {
            requested: test_size,
            available: test_avail.len(),
        });
    }
    test_avail.shuffle(&mut rng);
    let mut test_idx: Vec<usize> = test_avail[..test_size].to_vec();
    test_idx.sort_unstable();

    let disjoint = train_groups.iter().all(|g| !test_set.contains(g))
        && test_groups.iter().all(|g| !train_set.contains(g));
    let spec = if disjoint {
        ShiftSpec::covariate_groups(train_groups.to_vec(), test_groups.to_vec(), seed)
    } else {
        let mut s = ShiftSpec::none(seed);
        s.train_groups = Some(train_groups.to_vec());
        s.test_groups = Some(test_groups.to_vec());
        s
    };
    let train = pool.select(&train_idx);
    let test = pool.select(&test_idx);
    let realized_magnitude = wasserstein_1d(train.targets(), test.targets())?;
    Ok(SplitPair {
        train,
        test,
        spec,
        realized_magnitude,
    })
}

fn gaussian_rows(
    n: usize,
    mean: &[f64],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMatrix> {
    let d = mean.len();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for &m in mean {
            let z: f64 = rng.sample(StandardNormal);
            data.push(m + sigma * z);
        }
    }
    FeatureMatrix::from_vec(data, n, d)
}

fn linear_targets(x: &FeatureMatrix, coef: &[f64], noise_sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    x.rows()
        .map(|row| {
            let noise: f64 = if noise_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                noise_sigma * z
            } else {
                0.0
            };
            crate::core::dot(coef, row) + noise
        })
        .collect()
}

/// Synthetic covariate shift with a known ground truth: train features from
/// N(train_mean, sigma^2 I), test features from N(test_mean, sigma^2 I),
/// and one shared linear-Gaussian conditional y = coef . x + noise on both
/// sides. Returns the pair together with the exact density ratio.
#[allow(clippy::too_many_arguments)]
pub fn make_synthetic_covariate_shift(
    n_tr: usize,
    n_te: usize,
    train_mean: &[f64],
    test_mean: &[f64],
    sigma: f64,
    coef: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<(SplitPair, GaussianRatio)> {
    let d = train_mean.len();
    if d == 0 || n_tr == 0 || n_te == 0 {
        return Err(ShiftError::InvalidParam {
            name: "shape",
            reason: "need d >= 1 and nonzero split sizes".into(),
        });
    }
    if coef.len() != d {
        return Err(ShiftError::LengthMismatch {
            expected: d,
            got: coef.len(),
        });
    }
    if noise_sigma < 0.0 {
        return Err(ShiftError::InvalidParam {
            name: "noise_sigma",
            reason: format!("must be >= 0, got {noise_sigma}"),
        });
    }
    let ratio = GaussianRatio::new(train_mean.to_vec(), test_mean.to_vec(), sigma)?;

    let train_x = gaussian_rows(n_tr, train_mean, sigma, &mut rng_for(seed, STREAM_COV, 0))?;
    let test_x = gaussian_rows(n_te, test_mean, sigma, &mut rng_for(seed, STREAM_COV, 1))?;
    let train_y = linear_targets(&train_x, coef, noise_sigma, &mut rng_for(seed, STREAM_COV, 2));
    let test_y = linear_targets(&test_x, coef, noise_sigma, &mut rng_for(seed, STREAM_COV, 3));

    let realized_magnitude = wasserstein_1d(&train_x.column(0), &test_x.column(0))?;
    let pair = SplitPair {
        train: LabeledDataset::new(train_x, train_y, None)?,
        test: LabeledDataset::new(test_x, test_y, None)?,
        spec: ShiftSpec::covariate_synthetic(seed),
        realized_magnitude,
    };
    Ok((pair, ratio))
}

/// Synthetic concept drift: both sides share the standard-normal feature
/// marginal, but the linear conditional differs (coef_train vs coef_test).
pub fn make_synthetic_concept_drift(
    n_tr: usize,
    n_te: usize,
    coef_train: &[f64],
    coef_test: &[f64],
    noise_sigma: f64,
    seed: u64,
) -> Result<SplitPair> {
    let d = coef_train.len();
    if d == 0 || n_tr == 0 || n_te == 0 {
        return Err(ShiftError::InvalidParam {
            name: "shape",
            reason: "need d >= 1 and nonzero split sizes".into(),
        });
    }
    if coef_test.len() != d {
        return Err(ShiftError::LengthMismatch {
            expected: d,
            got: coef_test.len(),
        });
    }
    if noise_sigma < 0.0 {
        return Err(ShiftError::InvalidParam {
            name: "noise_sigma",
            reason: format!("must be >= 0, got {noise_sigma}"),
        });
    }
    let zeros = vec![0.0; d];
    let train_x = gaussian_rows(n_tr, &zeros, 1.0, &mut rng_for(seed, STREAM_DRIFT, 0))?;
    let test_x = gaussian_rows(n_te, &zeros, 1.0, &mut rng_for(seed, STREAM_DRIFT, 1))?;
    let train_y = linear_targets(&train_x, coef_train, noise_sigma, &mut rng_for(seed, STREAM_DRIFT, 2));
    let test_y = linear_targets(&test_x, coef_test, noise_sigma, &mut rng_for(seed, STREAM_DRIFT, 3));

    let realized_magnitude = wasserstein_1d(&train_y, &test_y)?;
    Ok(SplitPair {
        train: LabeledDataset::new(train_x, train_y, None)?,
        test: LabeledDataset::new(test_x, test_y, None)?,
        spec: ShiftSpec::concept(seed),
        realized_magnitude,
    })
}
