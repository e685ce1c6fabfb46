//! Shared domain types and the elementary risk functionals.
//!
//! Everything here is immutable after construction and free of interior
//! mutability, so values can be shared across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Result, ShiftError};

/// Dense row-major matrix of feature values.
///
/// Construction validates that every entry is finite, so downstream numeric
/// code never has to re-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn from_vec(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if n_cols == 0 {
            return Err(ShiftError::InvalidParam {
                name: "n_cols",
                reason: "feature dimension must be at least 1".into(),
            });
        }
        if data.len() != n_rows * n_cols {
            return Err(ShiftError::LengthMismatch {
                expected: n_rows * n_cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ShiftError::NonFinite {
                context: "feature matrix".into(),
            });
        }
        Ok(Self { data, n_rows, n_cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(ShiftError::LengthMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(data, n_rows, n_cols.max(1))
    }

    /// Single-column matrix from a vector of values.
    pub fn from_column(values: &[f64]) -> Result<Self> {
        Self::from_vec(values.to_vec(), values.len(), 1)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix holding the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            data,
            n_rows: idx.len(),
            n_cols: self.n_cols,
        }
    }

    /// Column copy (handy for per-coordinate statistics).
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.row(i)[j]).collect()
    }
}

/// A labeled sample: features, targets, and optional integer group keys
/// (e.g. publish year) used by grouped shift samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: FeatureMatrix,
    targets: Vec<f64>,
    group_keys: Option<Vec<i64>>,
}

impl LabeledDataset {
    pub fn new(
        features: FeatureMatrix,
        targets: Vec<f64>,
        group_keys: Option<Vec<i64>>,
    ) -> Result<Self> {
        if targets.len() != features.n_rows() {
            return Err(ShiftError::LengthMismatch {
                expected: features.n_rows(),
                got: targets.len(),
            });
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(ShiftError::NonFinite {
                context: "targets".into(),
            });
        }
        if let Some(keys) = &group_keys {
            if keys.len() != features.n_rows() {
                return Err(ShiftError::LengthMismatch {
                    expected: features.n_rows(),
                    got: keys.len(),
                });
            }
        }
        Ok(Self {
            features,
            targets,
            group_keys,
        })
    }

    pub fn n(&self) -> usize {
        self.features.n_rows()
    }

    pub fn dim(&self) -> usize {
        self.features.n_cols()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn group_keys(&self) -> Option<&[i64]> {
        self.group_keys.as_deref()
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (self.features.row(i), self.targets[i])
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            group_keys: self
                .group_keys
                .as_ref()
                .map(|k| idx.iter().map(|&i| k[i]).collect()),
        }
    }

    /// Number of distinct class ids when targets are interpreted as dense
    /// integer labels `0..K-1`. Errors on non-integral or negative targets.
    pub fn n_classes(&self) -> Result<usize> {
        let mut max_id: i64 = -1;
        for &t in &self.targets {
            let id = t.round();
            if (t - id).abs() > 1e-9 || id < 0.0 {
                return Err(ShiftError::BadClassId {
                    id: id as i64,
                    classes: 0,
                });
            }
            max_id = max_id.max(id as i64);
        }
        Ok((max_id + 1) as usize)
    }
}

/// Per-instance importance weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
    normalized: bool,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(ShiftError::NonFinite {
                    context: format!("weight at index {i}"),
                });
            }
            if v < 0.0 {
                return Err(ShiftError::NegativeWeight { index: i });
            }
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    pub fn ones(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            normalized: false,
        }
    }

    pub(crate) fn with_normalized_flag(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: true,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// What family of model a parameter vector encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HypothesisKind {
    /// Affine regression: params = [coef; intercept], length d+1.
    Linear,
    /// Logistic model, params in blocks of d+1 ([coef; intercept] each).
    /// One block = binary sigmoid; K blocks = K-class softmax.
    Logistic,
    /// Set scorer: params = projection (d x e, row-major) then e biases.
    SetScorer,
}

/// A fitted model: flat parameter vector plus the input dimensionality it
/// expects. Parameter layout depends on [`HypothesisKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    kind: HypothesisKind,
    params: Vec<f64>,
    dim: usize,
}

impl Hypothesis {
    pub fn new(kind: HypothesisKind, params: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(ShiftError::InvalidParam {
                name: "dim",
                reason: "input dimensionality must be at least 1".into(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(ShiftError::NonFinite {
                context: "hypothesis params".into(),
            });
        }
        let block = dim + 1;
        let ok = match kind {
            HypothesisKind::Linear => params.len() == block,
            // m blocks of [coef; intercept]; m >= 1
            HypothesisKind::Logistic => !params.is_empty() && params.len() % block == 0,
            // e * d projection entries plus e biases = e * (d + 1)
            HypothesisKind::SetScorer => !params.is_empty() && params.len() % block == 0,
        };
        if !ok {
            return Err(ShiftError::LengthMismatch {
                expected: block,
                got: params.len(),
            });
        }
        Ok(Self { kind, params, dim })
    }

    pub fn linear(coef: &[f64], intercept: f64) -> Result<Self> {
        let mut params = coef.to_vec();
        params.push(intercept);
        Self::new(HypothesisKind::Linear, params, coef.len())
    }

    pub fn kind(&self) -> HypothesisKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of parameter blocks (1 for linear / binary logistic,
    /// K for softmax, e for the set scorer).
    pub fn n_blocks(&self) -> usize {
        self.params.len() / (self.dim + 1)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(ShiftError::DimMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn affine(&self, block: usize, x: &[f64]) -> f64 {
        let start = block * (self.dim + 1);
        let coef = &self.params[start..start + self.dim];
        let intercept = self.params[start + self.dim];
        dot(coef, x) + intercept
    }

    /// Scalar prediction: affine value for linear models, class-1
    /// probability for binary logistic models, argmax class id for
    /// multiclass models.
    pub fn predict_value(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        match self.kind {
            HypothesisKind::Linear => Ok(self.affine(0, x)),
            HypothesisKind::Logistic => {
                if self.n_blocks() == 1 {
                    Ok(sigmoid(self.affine(0, x)))
                } else {
                    let scores: Vec<f64> =
                        (0..self.n_blocks()).map(|k| self.affine(k, x)).collect();
                    Ok(argmax(&scores) as f64)
                }
            }
            HypothesisKind::SetScorer => Err(ShiftError::InvalidParam {
                name: "hypothesis",
                reason: "set scorer does not predict on single vectors".into(),
            }),
        }
    }

    /// Class probabilities for logistic hypotheses. Binary models return
    /// [1-p, p].
    pub fn class_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if self.kind != HypothesisKind::Logistic {
            return Err(ShiftError::InvalidParam {
                name: "hypothesis",
                reason: "class probabilities require a logistic hypothesis".into(),
            });
        }
        if self.n_blocks() == 1 {
            let p = sigmoid(self.affine(0, x));
            Ok(vec![1.0 - p, p])
        } else {
            let scores: Vec<f64> = (0..self.n_blocks()).map(|k| self.affine(k, x)).collect();
            Ok(softmax(&scores))
        }
    }

    /// Predicted class id for logistic hypotheses.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.class_probs(x)?))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|&x| (x - lse).exp()).collect()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Loss function tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Squared,
    Absolute,
    CrossEntropy,
}

const PROB_CLIP: f64 = 1e-12;

/// Loss of hypothesis `h` on a single example.
pub(crate) fn point_loss(h: &Hypothesis, x: &[f64], y: f64, loss: LossKind) -> Result<f64> {
    match loss {
        LossKind::Squared => {
            let e = h.predict_value(x)? - y;
            Ok(e * e)
        }
        LossKind::Absolute => Ok((h.predict_value(x)? - y).abs()),
        LossKind::CrossEntropy => {
            if h.kind() != HypothesisKind::Logistic {
                return Err(ShiftError::InvalidParam {
                    name: "loss",
                    reason: "cross-entropy requires a logistic hypothesis".into(),
                });
            }
            let id = y.round();
            let m = h.n_blocks();
            let classes = if m == 1 { 2 } else { m };
            if (y - id).abs() > 1e-9 || id < 0.0 || id as usize >= classes {
                return Err(ShiftError::BadClassId {
                    id: id as i64,
                    classes,
                });
            }
            let p = h.class_probs(x)?[id as usize].clamp(PROB_CLIP, 1.0);
            Ok(-p.ln())
        }
    }
}

/// Mean loss over the dataset: (1/n) sum_i l(y_i, h(x_i)).
pub fn empirical_risk(h: &Hypothesis, data: &LabeledDataset, loss: LossKind) -> Result<f64> {
    if data.n() == 0 {
        return Err(ShiftError::EmptyDataset);
    }
    if h.dim() != data.dim() {
        return Err(ShiftError::DimMismatch {
            expected: data.dim(),
            got: h.dim(),
        });
    }
    let mut total = 0.0;
    for i in 0..data.n() {
        let (x, y) = data.row(i);
        total += point_loss(h, x, y, loss)?;
    }
    Ok(total / data.n() as f64)
}

/// Weighted mean loss: (1/n) sum_i w_i l(y_i, h(x_i)).
pub fn weighted_empirical_risk(
    h: &Hypothesis,
    data: &LabeledDataset,
    w: &WeightVector,
    loss: LossKind,
) -> Result<f64> {
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
    let mut total = 0.0;
    for i in 0..data.n() {
        let (x, y) = data.row(i);
        total += w.values()[i] * point_loss(h, x, y, loss)?;
    }
    Ok(total / data.n() as f64)
}

/// Which of the four shift types a split is meant to exhibit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftType {
    None,
    Covariate,
    Target,
    Concept,
    General,
}

/// Declarative description of a train/test split inducing one shift type
/// with a controllable magnitude.
///
/// Exactly the fields required by `shift_type` may be set; everything else
/// must be `None`. The general-shift variable partition is descriptive
/// only: covariate and target shift are the two executable special cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub shift_type: ShiftType,
    pub train_mu: Option<f64>,
    pub train_sigma: Option<f64>,
    pub test_mu: Option<f64>,
    pub test_sigma: Option<f64>,
    pub train_groups: Option<Vec<i64>>,
    pub test_groups: Option<Vec<i64>>,
    pub mutable_vars: Option<Vec<String>>,
    pub immutable_vars: Option<Vec<String>>,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn none(seed: u64) -> Self {
        Self {
            shift_type: ShiftType::None,
            train_mu: None,
            train_sigma: None,
            test_mu: None,
            test_sigma: None,
            train_groups: None,
            test_groups: None,
            mutable_vars: None,
            immutable_vars: None,
            seed,
        }
    }

    pub fn target_shift(
        train_mu: f64,
        train_sigma: f64,
        test_mu: f64,
        test_sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            shift_type: ShiftType::Target,
            train_mu: Some(train_mu),
            train_sigma: Some(train_sigma),
            test_mu: Some(test_mu),
            test_sigma: Some(test_sigma),
            ..Self::none(seed)
        }
    }

    pub fn covariate_groups(train_groups: Vec<i64>, test_groups: Vec<i64>, seed: u64) -> Self {
        Self {
            shift_type: ShiftType::Covariate,
            train_groups: Some(train_groups),
            test_groups: Some(test_groups),
            ..Self::none(seed)
        }
    }

    pub fn covariate_synthetic(seed: u64) -> Self {
        Self {
            shift_type: ShiftType::Covariate,
            ..Self::none(seed)
        }
    }

    pub fn concept(seed: u64) -> Self {
        Self {
            shift_type: ShiftType::Concept,
            ..Self::none(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |reason: String| {
            Err(ShiftError::InvalidParam {
                name: "shift_spec",
                reason,
            })
        };
        for (name, sigma) in [("train_sigma", self.train_sigma), ("test_sigma", self.test_sigma)] {
            if let Some(s) = sigma {
                if !(s > 0.0) {
                    return err(format!("{name} must be > 0, got {s}"));
                }
            }
        }
        let has_mus = self.train_mu.is_some()
            || self.train_sigma.is_some()
            || self.test_mu.is_some()
            || self.test_sigma.is_some();
        let has_groups = self.train_groups.is_some() || self.test_groups.is_some();
        let has_vars = self.mutable_vars.is_some() || self.immutable_vars.is_some();
        match self.shift_type {
            ShiftType::Target => {
                if self.train_mu.is_none()
                    || self.train_sigma.is_none()
                    || self.test_mu.is_none()
                    || self.test_sigma.is_none()
                {
                    return err("target shift requires train/test mu and sigma".into());
                }
                if has_groups || has_vars {
                    return err("target shift takes only mu/sigma fields".into());
                }
            }
            ShiftType::Covariate => {
                if has_mus || has_vars {
                    return err("covariate shift takes only group fields".into());
                }
                if let (Some(tr), Some(te)) = (&self.train_groups, &self.test_groups) {
                    if tr.is_empty() || te.is_empty() {
                        return err("group lists must be nonempty".into());
                    }
                    if tr.iter().any(|g| te.contains(g)) {
                        return err(
                            "train and test groups may overlap only when shift_type is none"
                                .into(),
                        );
                    }
                }
            }
            ShiftType::Concept => {
                if has_mus || has_groups || has_vars {
                    return err("concept drift takes no extra fields".into());
                }
            }
            ShiftType::General => {
                if self.mutable_vars.is_none() || self.immutable_vars.is_none() {
                    return err("general shift requires the variable partition".into());
                }
                if has_mus || has_groups {
                    return err("general shift takes only the variable partition".into());
                }
            }
            ShiftType::None => {
                if has_mus || has_vars {
                    return err("no-shift spec takes at most group fields".into());
                }
            }
        }
        Ok(())
    }
}
