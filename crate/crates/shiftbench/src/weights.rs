//! Importance-weight estimation: closed-form Gaussian density ratios, a
//! train-vs-test source discriminator, and the exponent/mixture transforms
//! applied to raw ratios before weighting a loss.

use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core::{sigmoid, FeatureMatrix, LabeledDataset, WeightVector};
use crate::error::{Result, ShiftError};
use crate::learn::{logistic_grad_raw, GdConfig};
use crate::seeding::rng_for;

const STREAM_DISC: u64 = 0x4449;

/// Floor applied to fitted per-coordinate variances so constant features
/// cannot produce infinite densities.
const VAR_FLOOR: f64 = 1e-9;

/// Linear classifier distinguishing training rows (s = 1) from test rows
/// (s = 0). Its predicted probability g(x) = p(s=1|x) is clipped into
/// [1/(1+beta), 1] before any use, which bounds the implied density ratio
/// (1-g)/g by beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDiscriminator {
    params: Vec<f64>,
    dim: usize,
    beta: f64,
}

impl SourceDiscriminator {
    pub fn new(params: Vec<f64>, beta: f64) -> Result<Self> {
        if params.len() < 2 {
            return Err(ShiftError::LengthMismatch {
                expected: 2,
                got: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(ShiftError::NonFinite {
                context: "discriminator params".into(),
            });
        }
        if !(beta > 0.0) {
            return Err(ShiftError::InvalidParam {
                name: "beta",
                reason: format!("must be > 0, got {beta}"),
            });
        }
        Ok(Self {
            dim: params.len() - 1,
            params,
            beta,
        })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(ShiftError::DimMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Unclipped p(s=1|x).
    pub fn g_raw(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let z = crate::core::dot(&self.params[..self.dim], x) + self.params[self.dim];
        Ok(sigmoid(z))
    }

    /// p(s=1|x) clipped into [1/(1+beta), 1].
    pub fn g_clipped(&self, x: &[f64]) -> Result<f64> {
        Ok(self.g_raw(x)?.clamp(1.0 / (1.0 + self.beta), 1.0))
    }

    /// Per-item probability of belonging to the test side, 1 - g(x) after
    /// clipping; always in [0, beta/(1+beta)] and hence in [0, 1].
    pub fn test_membership_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(1.0 - self.g_clipped(x)?)
    }
}

/// Which estimator produced a set of importance weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMethod {
    TrueRatio,
    GaussianFit,
    Discriminator,
}

/// Which reweighting transform was applied to the raw ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightTransform {
    Iw,
    Aiw,
    Riw,
}

/// A finished weight vector together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub method: RatioMethod,
    pub transform: WeightTransform,
    pub alpha: f64,
    pub weights: WeightVector,
}

impl RatioEstimate {
    pub fn new(
        method: RatioMethod,
        transform: WeightTransform,
        alpha: f64,
        weights: WeightVector,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ShiftError::InvalidParam {
                name: "alpha",
                reason: format!("must be in [0,1], got {alpha}"),
            });
        }
        if transform == WeightTransform::Iw && alpha != 0.0 {
            return Err(ShiftError::InvalidParam {
                name: "alpha",
                reason: "untransformed weights must carry alpha = 0".into(),
            });
        }
        Ok(Self {
            method,
            transform,
            alpha,
            weights,
        })
    }
}

/// Log-density parameters of a diagonal Gaussian fitted by maximum
/// likelihood (variances divided by n, floored at `VAR_FLOOR`).
struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    fn fit(x: &FeatureMatrix) -> Self {
        let n = x.n_rows() as f64;
        let d = x.n_cols();
        let mut mean = vec![0.0; d];
        for row in x.rows() {
            for j in 0..d {
                mean[j] += row[j];
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for row in x.rows() {
            for j in 0..d {
                let c = row[j] - mean[j];
                var[j] += c * c;
            }
        }
        for v in &mut var {
            *v = (*v / n).max(VAR_FLOOR);
        }
        Self { mean, var }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut lp = 0.0;
        for j in 0..x.len() {
            let c = x[j] - self.mean[j];
            lp += -0.5 * (2.0 * std::f64::consts::PI * self.var[j]).ln()
                - c * c / (2.0 * self.var[j]);
        }
        lp
    }
}

/// Direct density-ratio estimate: fit one diagonal Gaussian to each sample
/// and return p_test(q)/p_train(q) at every query row, evaluated in log
/// space so high dimensions do not underflow.
pub fn gaussian_density_ratio(
    train_x: &FeatureMatrix,
    test_x: &FeatureMatrix,
    query_x: &FeatureMatrix,
) -> Result<WeightVector> {
    for (side, m) in [("train", train_x), ("test", test_x)] {
        if m.n_rows() < 2 {
            return Err(ShiftError::NotEnoughRows {
                requested: 2,
                available: m.n_rows(),
            });
        }
        if m.n_cols() != query_x.n_cols() {
            return Err(ShiftError::DimMismatch {
                expected: query_x.n_cols(),
                got: m.n_cols(),
            });
        }
        let _ = side;
    }
    let g_tr = DiagGaussian::fit(train_x);
    let g_te = DiagGaussian::fit(test_x);
    let mut w = Vec::with_capacity(query_x.n_rows());
    for row in query_x.rows() {
        let log_r = g_te.log_density(row) - g_tr.log_density(row);
        let r = log_r.exp();
        if !r.is_finite() {
            return Err(ShiftError::NonFinite {
                context: "gaussian density ratio".into(),
            });
        }
        w.push(r);
    }
    WeightVector::new(w)
}

/// Fit the source discriminator with seeded mini-batch SGD on the
/// cross-entropy over stacked rows labeled s=1 (train) / s=0 (test). The
/// implied prior p(s) = 1/2 is enforced by subsampling the larger side to
/// the smaller side's size afresh each epoch.
pub fn fit_source_discriminator(
    train_x: &FeatureMatrix,
    test_x: &FeatureMatrix,
    beta: f64,
    gd: &GdConfig,
) -> Result<SourceDiscriminator> {
    if train_x.n_rows() == 0 || test_x.n_rows() == 0 {
        return Err(ShiftError::EmptyDataset);
    }
    if train_x.n_cols() != test_x.n_cols() {
        return Err(ShiftError::DimMismatch {
            expected: train_x.n_cols(),
            got: test_x.n_cols(),
        });
    }
    if !(beta > 0.0) {
        return Err(ShiftError::InvalidParam {
            name: "beta",
            reason: format!("must be > 0, got {beta}"),
        });
    }
    gd.validate()?;

    let n_tr = train_x.n_rows();
    let n_te = test_x.n_rows();
    let d = train_x.n_cols();
    let mut data = Vec::with_capacity((n_tr + n_te) * d);
    data.extend_from_slice(train_x.as_slice());
    data.extend_from_slice(test_x.as_slice());
    let features = FeatureMatrix::from_vec(data, n_tr + n_te, d)?;
    let mut labels = vec![1.0; n_tr];
    labels.extend(std::iter::repeat(0.0).take(n_te));
    let stacked = LabeledDataset::new(features, labels, None)?;
    let unit_w = vec![1.0; n_tr + n_te];

    let n_small = n_tr.min(n_te);
    let mut params = vec![0.0; d + 1];
    let mut rng = rng_for(gd.seed, STREAM_DISC, 0);
    for epoch in 0..gd.epochs {
        let mut tr_idx: Vec<usize> = (0..n_tr).collect();
        let mut te_idx: Vec<usize> = (n_tr..n_tr + n_te).collect();
        tr_idx.shuffle(&mut rng);
        te_idx.shuffle(&mut rng);
        let mut epoch_idx: Vec<usize> = tr_idx[..n_small]
            .iter()
            .chain(&te_idx[..n_small])
            .copied()
            .collect();
        epoch_idx.shuffle(&mut rng);
        for batch in epoch_idx.chunks(gd.batch_size) {
            let grad = logistic_grad_raw(&params, 1, &stacked, batch, &unit_w)?;
            for (pj, gj) in params.iter_mut().zip(&grad) {
                *pj -= gd.learning_rate * gj;
            }
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(ShiftError::NonFiniteLoss { epoch });
        }
    }
    SourceDiscriminator::new(params, beta)
}

/// Importance weights implied by a discriminator at each query row:
/// w(x) = (1 - g(x)) / g(x) with g clipped, so w in [0, beta].
pub fn weights_from_discriminator(
    disc: &SourceDiscriminator,
    query_x: &FeatureMatrix,
) -> Result<WeightVector> {
    let mut w = Vec::with_capacity(query_x.n_rows());
    for row in query_x.rows() {
        let g = disc.g_clipped(row)?;
        w.push((1.0 - g) / g);
    }
    WeightVector::new(w)
}

/// Exponent-flattened weights w^alpha (alpha in [0,1]); alpha = 0 recovers
/// uniform weighting, alpha = 1 the raw ratio. 0^0 is taken as 1.
pub fn transform_aiw(w: &WeightVector, alpha: f64) -> Result<WeightVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ShiftError::InvalidParam {
            name: "alpha",
            reason: format!("must be in [0,1], got {alpha}"),
        });
    }
    WeightVector::new(w.values().iter().map(|&v| v.powf(alpha)).collect())
}

/// Relative weights p_te / ((1-alpha) p_tr + alpha p_te) computed from the
/// two density vectors. Zero test density yields weight 0; a pair that is
/// zero on both sides is an error naming the index.
pub fn transform_riw(p_te: &[f64], p_tr: &[f64], alpha: f64) -> Result<WeightVector> {
    if p_te.len() != p_tr.len() {
        return Err(ShiftError::LengthMismatch {
            expected: p_tr.len(),
            got: p_te.len(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ShiftError::InvalidParam {
            name: "alpha",
            reason: format!("must be in [0,1], got {alpha}"),
        });
    }
    let mut w = Vec::with_capacity(p_te.len());
    for i in 0..p_te.len() {
        let (te, tr) = (p_te[i], p_tr[i]);
        if !(te >= 0.0) || !(tr >= 0.0) || !te.is_finite() || !tr.is_finite() {
            return Err(ShiftError::NonFinite {
                context: format!("density at index {i}"),
            });
        }
        if te == 0.0 && tr == 0.0 {
            return Err(ShiftError::ZeroDensityPair { index: i });
        }
        if te == 0.0 {
            w.push(0.0);
        } else {
            w.push(te / ((1.0 - alpha) * tr + alpha * te));
        }
    }
    WeightVector::new(w)
}

/// Relative weights written in terms of the raw ratio r = p_te/p_tr alone:
/// r / ((1-alpha) + alpha r). Equivalent to `transform_riw` with densities
/// (r, 1), usable whenever only the ratio is known.
pub fn riw_from_ratio(w: &WeightVector, alpha: f64) -> Result<WeightVector> {
    let ones = vec![1.0; w.len()];
    transform_riw(w.values(), &ones, alpha)
}

/// Rescale weights to mean 1 (multiply by n / sum). Marks the result as
/// normalized; idempotent.
pub fn self_normalize(w: &WeightVector) -> Result<WeightVector> {
    let sum: f64 = w.values().iter().sum();
    if sum <= 0.0 {
        return Err(ShiftError::AllZeroWeights);
    }
    let scale = w.len() as f64 / sum;
    Ok(WeightVector::with_normalized_flag(
        w.values().iter().map(|v| v * scale).collect(),
    ))
}
