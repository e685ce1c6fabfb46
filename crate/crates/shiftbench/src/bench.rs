//! Benchmark protocols tying the samplers, weight estimators, learners,
//! and matcher together into reproducible experiment grids.
//!
//! Four protocols are provided:
//!
//! * `regression_target_shift` — magnitude-controlled target shift on a
//!   synthetic pool (or a catalog likes table), weighted linear
//!   regression, MAE per shift bucket.
//! * `category_covariate_shift` — year-pair grid over a drifting catalog,
//!   weighted multinomial logistic item classification, accuracy.
//! * `set_matching` — fill-in-the-blank set matching trained on the
//!   earliest catalog year and evaluated per year, with importance
//!   weighting driven by a year discriminator.
//! * `year_discrimination` — how well a linear discriminator separates an
//!   anchor year from each other year, as a function of the year gap.
//!
//! Every cell reports (mean, std, n_seeds) over the configured seed list.
//! Runs are deterministic: each (cell, seed) job derives its own RNG
//! streams from the seed and the cell index — never from the method, so
//! methods that ought to coincide (for example `aiwerm(0)` and `erm`)
//! coincide bit for bit. Jobs are pure, so the parallel and serial paths
//! produce identical bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::core::{FeatureMatrix, Hypothesis, LabeledDataset, ShiftSpec, WeightVector};
use crate::data::{
    gen_synthetic_corpus, parse_records, records_to_outfits, to_labeled_dataset, FeatureMode,
    FeatureStore, OutfitRecord, SyntheticCorpusSpec, TargetMode,
};
use crate::error::{Result, ShiftError};
use crate::learn::{fit_weighted_linear, fit_weighted_logistic, GdConfig};
use crate::matching::{
    build_fitnb_tasks, evaluate_fitnb, train_matcher, IwStrategy, MatchWeighting, Outfit,
};
use crate::metrics::{accuracy, auc, mae, MetricReport};
use crate::samplers::{sample_covariate_shift_groups, sample_target_shift, SplitPair};
use crate::seeding::{derive_seed, rng_for};
use crate::weights::{
    fit_source_discriminator, gaussian_density_ratio, riw_from_ratio, transform_aiw,
    weights_from_discriminator, RatioMethod,
};

const STREAM_REG_BENCH: u64 = 0x5242; // regression protocol
const STREAM_CAT_BENCH: u64 = 0x4342; // category protocol
const STREAM_MAT_BENCH: u64 = 0x4d42; // matching protocol
const STREAM_YD_BENCH: u64 = 0x5942; // year-discrimination protocol

/// The four experiment protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    RegressionTargetShift,
    CategoryCovariateShift,
    SetMatching,
    YearDiscrimination,
}

/// One learning method column: unweighted ERM, the raw importance-weight
/// estimator, its exponent-flattened and relative variants (with their
/// alpha), or the two per-pair weight aggregation rules used by the set
/// matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodSpec {
    Erm,
    Iwerm,
    Aiwerm(f64),
    Riwerm(f64),
    MeanIw,
    MaxIw,
}

impl MethodSpec {
    fn alpha_ok(alpha: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ShiftError::InvalidParam {
                name: "alpha",
                reason: format!("must be in [0,1], got {alpha}"),
            });
        }
        Ok(alpha)
    }

    /// Apply the method's reweighting to a raw density-ratio vector.
    /// Only the ratio-based methods support this; the matcher-only
    /// aggregation methods are rejected.
    pub fn ratio_weights(&self, base: &WeightVector) -> Result<WeightVector> {
        match *self {
            MethodSpec::Erm => Ok(WeightVector::ones(base.len())),
            MethodSpec::Iwerm => Ok(base.clone()),
            MethodSpec::Aiwerm(a) => transform_aiw(base, a),
            MethodSpec::Riwerm(a) => riw_from_ratio(base, a),
            MethodSpec::MeanIw | MethodSpec::MaxIw => Err(ShiftError::InvalidParam {
                name: "method",
                reason: format!("{self} only applies to the set-matching protocol"),
            }),
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::Erm => write!(f, "erm"),
            MethodSpec::Iwerm => write!(f, "iwerm"),
            MethodSpec::Aiwerm(a) => write!(f, "aiwerm({a})"),
            MethodSpec::Riwerm(a) => write!(f, "riwerm({a})"),
            MethodSpec::MeanIw => write!(f, "mean_iw"),
            MethodSpec::MaxIw => write!(f, "max_iw"),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = ShiftError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let parse_alpha = |inner: &str| -> Result<f64> {
            let alpha: f64 = inner.parse().map_err(|_| ShiftError::InvalidParam {
                name: "method",
                reason: format!("bad alpha `{inner}` in `{t}`"),
            })?;
            MethodSpec::alpha_ok(alpha)
        };
        match t {
            "erm" => Ok(MethodSpec::Erm),
            "iwerm" => Ok(MethodSpec::Iwerm),
            "mean_iw" => Ok(MethodSpec::MeanIw),
            "max_iw" => Ok(MethodSpec::MaxIw),
            _ => {
                if let Some(inner) = t.strip_prefix("aiwerm(").and_then(|r| r.strip_suffix(')')) {
                    Ok(MethodSpec::Aiwerm(parse_alpha(inner)?))
                } else if let Some(inner) =
                    t.strip_prefix("riwerm(").and_then(|r| r.strip_suffix(')'))
                {
                    Ok(MethodSpec::Riwerm(parse_alpha(inner)?))
                } else {
                    Err(ShiftError::InvalidParam {
                        name: "method",
                        reason: format!(
                            "unknown method `{t}` (expected erm, iwerm, aiwerm(a), riwerm(a), \
                             mean_iw, or max_iw)"
                        ),
                    })
                }
            }
        }
    }
}

impl Serialize for MethodSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodSpec {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where benchmark data comes from: a records file plus feature store,
/// or (when no records path is given) a generated synthetic catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    pub records: Option<String>,
    pub features_bin: Option<String>,
    pub features_index: Option<String>,
    pub synthetic: SyntheticCorpusSpec,
}

impl Default for DataSource {
    fn default() -> Self {
        Self {
            records: None,
            features_bin: None,
            features_index: None,
            synthetic: SyntheticCorpusSpec::default(),
        }
    }
}

/// Mini-batch SGD hyper-parameters as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SgdParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 12,
            batch_size: 32,
        }
    }
}

impl SgdParams {
    pub fn to_gd(self, seed: u64) -> Result<GdConfig> {
        GdConfig::new(self.learning_rate, self.epochs, self.batch_size, seed)
    }
}

/// Source-discriminator training knobs shared by the protocols that
/// estimate weights or year membership from item features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscParams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight cap: g is clipped so implied weights stay in [0, beta].
    pub beta: f64,
}

impl Default for DiscParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 64,
            beta: 20.0,
        }
    }
}

impl DiscParams {
    pub fn to_gd(self, seed: u64) -> Result<GdConfig> {
        GdConfig::new(self.learning_rate, self.epochs, self.batch_size, seed)
    }
}

/// Regression protocol parameters. The synthetic pool draws targets
/// uniformly on [0, 100] with deliberately misspecified features, so a
/// linear fit trained near `train_mu` extrapolates poorly; the W buckets
/// are nominal target-mean gaps, scaled by `bucket_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionParams {
    pub pool_size: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub train_mu: f64,
    pub train_sigma: f64,
    pub test_sigma: f64,
    /// Overrides the bucket grid with a single cell at this test mean.
    pub test_mu: Option<f64>,
    /// With shift disabled the grid collapses to the single W = 0 cell.
    pub target_shift: bool,
    pub buckets: Vec<f64>,
    pub bucket_scale: f64,
    /// Allowed |realized - nominal| gap before a bucket counts as
    /// unreachable.
    pub bucket_tolerance: f64,
    pub ridge: f64,
    pub weight_source: RatioMethod,
}

impl Default for RegressionParams {
    fn default() -> Self {
        Self {
            pool_size: 20_000,
            train_size: 500,
            test_size: 500,
            train_mu: 25.0,
            train_sigma: 10.0,
            test_sigma: 10.0,
            test_mu: None,
            target_shift: true,
            buckets: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0],
            bucket_scale: 1.0,
            bucket_tolerance: 2.5,
            ridge: 0.0,
            weight_source: RatioMethod::TrueRatio,
        }
    }
}

/// Category protocol parameters: an accuracy grid over ordered
/// (train year, test year) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategoryParams {
    pub train_size: usize,
    pub test_size: usize,
    pub weight_source: RatioMethod,
    pub sgd: SgdParams,
}

impl Default for CategoryParams {
    fn default() -> Self {
        Self {
            train_size: 1200,
            test_size: 400,
            weight_source: RatioMethod::Discriminator,
            sgd: SgdParams::default(),
        }
    }
}

/// Set-matching protocol parameters. Training always happens on
/// `train_year` (default: earliest); every catalog year becomes an
/// evaluation column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingParams {
    pub k_values: Vec<usize>,
    pub train_year: Option<i64>,
    pub sgd: SgdParams,
}

impl Default for MatchingParams {
    fn default() -> Self {
        Self {
            k_values: vec![4, 8],
            train_year: None,
            sgd: SgdParams {
                learning_rate: 0.02,
                epochs: 30,
                batch_size: 32,
            },
        }
    }
}

/// Year-discrimination protocol parameters: per compared year, each side
/// contributes `fit_size` rows to train the discriminator and a disjoint
/// `eval_size` rows to score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YeardiscParams {
    pub anchor_year: Option<i64>,
    pub fit_size: usize,
    pub eval_size: usize,
}

impl Default for YeardiscParams {
    fn default() -> Self {
        Self {
            anchor_year: None,
            fit_size: 400,
            eval_size: 400,
        }
    }
}

/// Full benchmark configuration. Defaults are desk-scale; any subset can
/// be overridden from a TOML file or CLI flags. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub protocol: Protocol,
    /// Empty means the per-protocol default method list.
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    /// CSV destination; the sidecar metadata lands next to it. `None`
    /// leaves output handling to the caller.
    pub output: Option<String>,
    pub parallel: bool,
    pub source: DataSource,
    pub discriminator: DiscParams,
    pub regression: RegressionParams,
    pub category: CategoryParams,
    pub matching: MatchingParams,
    pub yeardisc: YeardiscParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::RegressionTargetShift,
            methods: Vec::new(),
            seeds: vec![0, 1, 2, 3, 4],
            output: None,
            parallel: true,
            source: DataSource::default(),
            discriminator: DiscParams::default(),
            regression: RegressionParams::default(),
            category: CategoryParams::default(),
            matching: MatchingParams::default(),
            yeardisc: YeardiscParams::default(),
        }
    }
}

impl BenchConfig {
    /// Parse a TOML config. Unknown keys and malformed values are
    /// reported with the offending key path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: BenchConfig =
            toml::from_str(text).map_err(|e| ShiftError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(ShiftError::InvalidParam {
                name: "seeds",
                reason: "need at least one seed".into(),
            });
        }
        let r = &self.regression;
        if r.train_size == 0 || r.test_size == 0 {
            return Err(ShiftError::InvalidParam {
                name: "regression.sizes",
                reason: "split sizes must be at least 1".into(),
            });
        }
        if r.test_mu.is_none() && r.target_shift && r.buckets.is_empty() {
            return Err(ShiftError::InvalidParam {
                name: "regression.buckets",
                reason: "need at least one W bucket".into(),
            });
        }
        if !(r.bucket_tolerance > 0.0) || !r.bucket_scale.is_finite() {
            return Err(ShiftError::InvalidParam {
                name: "regression.bucket_tolerance",
                reason: "tolerance must be > 0 and scale finite".into(),
            });
        }
        if self.category.train_size == 0 || self.category.test_size == 0 {
            return Err(ShiftError::InvalidParam {
                name: "category.sizes",
                reason: "split sizes must be at least 1".into(),
            });
        }
        if self.matching.k_values.is_empty() || self.matching.k_values.iter().any(|&k| k < 2) {
            return Err(ShiftError::InvalidParam {
                name: "matching.k_values",
                reason: "need at least one K, each >= 2".into(),
            });
        }
        if self.yeardisc.fit_size == 0 || self.yeardisc.eval_size == 0 {
            return Err(ShiftError::InvalidParam {
                name: "yeardisc.sizes",
                reason: "fit and eval sizes must be at least 1".into(),
            });
        }
        self.source.synthetic.validate()?;
        Ok(())
    }

    /// Default method list when the config leaves `methods` empty.
    pub fn effective_methods(&self) -> Vec<MethodSpec> {
        if !self.methods.is_empty() {
            return self.methods.clone();
        }
        match self.protocol {
            Protocol::RegressionTargetShift => vec![
                MethodSpec::Erm,
                MethodSpec::Iwerm,
                MethodSpec::Aiwerm(0.5),
                MethodSpec::Riwerm(0.25),
                MethodSpec::Riwerm(0.5),
                MethodSpec::Riwerm(0.75),
            ],
            Protocol::CategoryCovariateShift => vec![
                MethodSpec::Erm,
                MethodSpec::Iwerm,
                MethodSpec::Aiwerm(0.5),
                MethodSpec::Riwerm(0.5),
            ],
            Protocol::SetMatching => {
                vec![MethodSpec::Erm, MethodSpec::MeanIw, MethodSpec::MaxIw]
            }
            Protocol::YearDiscrimination => Vec::new(),
        }
    }
}

fn validate_methods(protocol: Protocol, methods: &[MethodSpec]) -> Result<()> {
    match protocol {
        Protocol::RegressionTargetShift | Protocol::CategoryCovariateShift => {
            if methods.is_empty() {
                return Err(ShiftError::InvalidParam {
                    name: "methods",
                    reason: "need at least one method".into(),
                });
            }
            for m in methods {
                if matches!(m, MethodSpec::MeanIw | MethodSpec::MaxIw) {
                    return Err(ShiftError::InvalidParam {
                        name: "methods",
                        reason: format!("{m} only applies to the set-matching protocol"),
                    });
                }
            }
        }
        Protocol::SetMatching => {
            if methods.is_empty() {
                return Err(ShiftError::InvalidParam {
                    name: "methods",
                    reason: "need at least one method".into(),
                });
            }
            for m in methods {
                if !matches!(m, MethodSpec::Erm | MethodSpec::MeanIw | MethodSpec::MaxIw) {
                    return Err(ShiftError::InvalidParam {
                        name: "methods",
                        reason: format!("{m} does not apply to the set-matching protocol"),
                    });
                }
            }
        }
        Protocol::YearDiscrimination => {}
    }
    Ok(())
}

/// A finished benchmark run: the CSV table plus a JSON sidecar carrying
/// the config echo, seed list, and a content hash of the CSV bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutput {
    pub csv: String,
    pub meta_json: String,
}

#[derive(Serialize)]
struct BenchMeta<'a> {
    protocol: Protocol,
    methods: Vec<String>,
    seeds: &'a [u64],
    n_cells: usize,
    csv_sha256: String,
    config: &'a BenchConfig,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

fn finish_output(
    cfg: &BenchConfig,
    methods: &[MethodSpec],
    n_cells: usize,
    csv: String,
) -> Result<BenchOutput> {
    let meta = BenchMeta {
        protocol: cfg.protocol,
        methods: methods.iter().map(ToString::to_string).collect(),
        seeds: &cfg.seeds,
        n_cells,
        csv_sha256: sha256_hex(csv.as_bytes()),
        config: cfg,
    };
    let meta_json =
        serde_json::to_string_pretty(&meta).map_err(|e| ShiftError::Config(e.to_string()))?;
    Ok(BenchOutput { csv, meta_json })
}

/// Write the CSV and its `<output>.meta.json` sidecar to the configured
/// output path; errors if the config has no output path.
pub fn write_output(cfg: &BenchConfig, out: &BenchOutput) -> Result<()> {
    let path = cfg.output.as_ref().ok_or(ShiftError::InvalidParam {
        name: "output",
        reason: "no output path configured".into(),
    })?;
    std::fs::write(path, &out.csv)?;
    std::fs::write(format!("{path}.meta.json"), &out.meta_json)?;
    Ok(())
}

fn run_jobs<T, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

/// Load the configured corpus: records + feature store from disk, or the
/// synthetic catalog. Soft ingestion warnings are logged, not fatal.
pub fn load_corpus(source: &DataSource) -> Result<(Vec<OutfitRecord>, FeatureStore)> {
    match &source.records {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            let outcome = parse_records(std::io::BufReader::new(file), false)?;
            for w in &outcome.warnings {
                log::warn!("{path}:{}: {}", w.line, w.message);
            }
            let (bin, idx) = match (&source.features_bin, &source.features_index) {
                (Some(b), Some(i)) => (b, i),
                _ => {
                    return Err(ShiftError::Config(
                        "a records source also needs features_bin and features_index".into(),
                    ))
                }
            };
            let store = FeatureStore::read_files(bin.as_ref(), idx.as_ref())?;
            Ok((outcome.records, store))
        }
        None => gen_synthetic_corpus(&source.synthetic),
    }
}

fn sorted_years(records: &[OutfitRecord]) -> Vec<i64> {
    let mut years: Vec<i64> = records.iter().map(OutfitRecord::year).collect();
    years.sort_unstable();
    years.dedup();
    years
}

/// Dispatch on the configured protocol.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    match cfg.protocol {
        Protocol::RegressionTargetShift => run_regression_benchmark(cfg),
        Protocol::CategoryCovariateShift => run_category_benchmark(cfg),
        Protocol::SetMatching => run_matching_benchmark(cfg),
        Protocol::YearDiscrimination => run_year_discrimination(cfg),
    }
}

// ---------------------------------------------------------------------
// Regression under target shift
// ---------------------------------------------------------------------

/// Synthetic regression pool: y uniform on [0, 100]; feature 1 is the
/// curved signal (y/10)^2 plus noise, feature 2 a pure distractor. A
/// linear model fit where the training mass sits cannot extrapolate, so
/// shifting the test target mean degrades ERM in a controlled way.
fn gen_regression_pool(n: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = rng_for(seed, STREAM_REG_BENCH, 0);
    let mut rows = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let y: f64 = rng.gen_range(0.0..100.0);
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        rows.push(vec![(y / 10.0) * (y / 10.0) + 0.5 * z1, z2]);
        targets.push(y);
    }
    LabeledDataset::new(FeatureMatrix::from_rows(&rows)?, targets, None)
}

/// Exact ratio of the two Gaussian target densities at each train target.
fn gaussian_label_ratio(
    y: &[f64],
    mu_tr: f64,
    s_tr: f64,
    mu_te: f64,
    s_te: f64,
) -> Result<WeightVector> {
    let mut w = Vec::with_capacity(y.len());
    for &v in y {
        let log_r = (s_tr / s_te).ln() + (v - mu_tr) * (v - mu_tr) / (2.0 * s_tr * s_tr)
            - (v - mu_te) * (v - mu_te) / (2.0 * s_te * s_te);
        w.push(log_r.exp());
    }
    WeightVector::new(w)
}

fn regression_base_weights(
    cfg: &BenchConfig,
    pair: &SplitPair,
    test_mu: f64,
    job_seed: u64,
) -> Result<WeightVector> {
    let p = &cfg.regression;
    match p.weight_source {
        RatioMethod::TrueRatio => gaussian_label_ratio(
            pair.train.targets(),
            p.train_mu,
            p.train_sigma,
            test_mu,
            p.test_sigma,
        ),
        RatioMethod::GaussianFit => gaussian_density_ratio(
            &FeatureMatrix::from_column(pair.train.targets())?,
            &FeatureMatrix::from_column(pair.test.targets())?,
            &FeatureMatrix::from_column(pair.train.targets())?,
        ),
        RatioMethod::Discriminator => {
            let gd = cfg
                .discriminator
                .to_gd(derive_seed(job_seed, STREAM_REG_BENCH, 3))?;
            let disc = fit_source_discriminator(
                pair.train.features(),
                pair.test.features(),
                cfg.discriminator.beta,
                &gd,
            )?;
            weights_from_discriminator(&disc, pair.train.features())
        }
    }
}

fn linear_mae(h: &Hypothesis, test: &LabeledDataset) -> Result<f64> {
    let preds = test
        .features()
        .rows()
        .map(|r| h.predict_value(r))
        .collect::<Result<Vec<f64>>>()?;
    mae(&preds, test.targets())
}

/// (bucket label, test mean, nominal magnitude) for every grid cell.
fn regression_cells(p: &RegressionParams) -> Vec<(f64, f64, f64)> {
    if let Some(mu) = p.test_mu {
        let gap = mu - p.train_mu;
        return vec![(gap, mu, gap.abs())];
    }
    if !p.target_shift {
        return vec![(0.0, p.train_mu, 0.0)];
    }
    p.buckets
        .iter()
        .map(|&b| (b, p.train_mu + b * p.bucket_scale, (b * p.bucket_scale).abs()))
        .collect()
}

pub fn run_regression_benchmark(cfg: &BenchConfig) -> Result<BenchOutput> {
    let methods = cfg.effective_methods();
    validate_methods(Protocol::RegressionTargetShift, &methods)?;
    let p = &cfg.regression;
    let cells = regression_cells(p);
    let records_pool = match &cfg.source.records {
        Some(_) => {
            let (records, _) = load_corpus(&cfg.source)?;
            Some(to_labeled_dataset(
                &records,
                TargetMode::Likes,
                FeatureMode::PriceStats,
            )?)
        }
        None => None,
    };

    let n_seeds = cfg.seeds.len();
    let n_jobs = cells.len() * n_seeds;
    let results = run_jobs(n_jobs, cfg.parallel, |job| {
        let cell = job / n_seeds;
        let seed = cfg.seeds[job % n_seeds];
        let (_, test_mu, nominal) = cells[cell];
        let job_seed = derive_seed(seed, STREAM_REG_BENCH, cell as u64);

        let local_pool;
        let pool = match &records_pool {
            Some(pool) => pool,
            None => {
                local_pool =
                    gen_regression_pool(p.pool_size, derive_seed(job_seed, STREAM_REG_BENCH, 1))?;
                &local_pool
            }
        };
        let spec = ShiftSpec::target_shift(
            p.train_mu,
            p.train_sigma,
            test_mu,
            p.test_sigma,
            derive_seed(job_seed, STREAM_REG_BENCH, 2),
        );
        let pair = sample_target_shift(pool, &spec, p.train_size, p.test_size)?;
        if (pair.realized_magnitude - nominal).abs() > p.bucket_tolerance {
            return Err(ShiftError::UnreachableBucket {
                bucket: nominal,
                realized: pair.realized_magnitude,
            });
        }
        let base = regression_base_weights(cfg, &pair, test_mu, job_seed)?;
        let mut maes = Vec::with_capacity(methods.len());
        for m in &methods {
            let w = m.ratio_weights(&base)?;
            let h = fit_weighted_linear(&pair.train, &w, p.ridge)?;
            maes.push(linear_mae(&h, &pair.test)?);
        }
        Ok((pair.realized_magnitude, maes))
    })?;

    let mut csv = String::from("method,w_bucket,realized_w_mean,mae_mean,mae_std,n_seeds\n");
    for (mi, m) in methods.iter().enumerate() {
        for (ci, (label, _, _)) in cells.iter().enumerate() {
            let rows = &results[ci * n_seeds..(ci + 1) * n_seeds];
            let realized = rows.iter().map(|(r, _)| *r).sum::<f64>() / n_seeds as f64;
            let samples: Vec<f64> = rows.iter().map(|(_, maes)| maes[mi]).collect();
            let (report, std) = MetricReport::from_samples("mae", &samples)?;
            csv.push_str(&format!(
                "{m},{label},{},{},{},{}\n",
                f6(realized),
                f6(report.value),
                f6(std),
                report.n
            ));
        }
    }
    finish_output(cfg, &methods, cells.len(), csv)
}

// ---------------------------------------------------------------------
// Category classification under covariate shift
// ---------------------------------------------------------------------

fn category_base_weights(cfg: &BenchConfig, pair: &SplitPair, job_seed: u64) -> Result<WeightVector> {
    match cfg.category.weight_source {
        RatioMethod::TrueRatio => Err(ShiftError::InvalidParam {
            name: "category.weight_source",
            reason: "no closed-form density ratio exists for catalog corpora".into(),
        }),
        RatioMethod::GaussianFit => gaussian_density_ratio(
            pair.train.features(),
            pair.test.features(),
            pair.train.features(),
        ),
        RatioMethod::Discriminator => {
            let gd = cfg
                .discriminator
                .to_gd(derive_seed(job_seed, STREAM_CAT_BENCH, 2))?;
            let disc = fit_source_discriminator(
                pair.train.features(),
                pair.test.features(),
                cfg.discriminator.beta,
                &gd,
            )?;
            weights_from_discriminator(&disc, pair.train.features())
        }
    }
}

fn classifier_accuracy(h: &Hypothesis, test: &LabeledDataset) -> Result<f64> {
    let preds = test
        .features()
        .rows()
        .map(|r| h.predict_class(r))
        .collect::<Result<Vec<usize>>>()?;
    let truth: Vec<usize> = test.targets().iter().map(|&t| t.round() as usize).collect();
    accuracy(&preds, &truth)
}

pub fn run_category_benchmark(cfg: &BenchConfig) -> Result<BenchOutput> {
    let methods = cfg.effective_methods();
    validate_methods(Protocol::CategoryCovariateShift, &methods)?;
    let p = &cfg.category;
    let (records, store) = load_corpus(&cfg.source)?;
    let pool = to_labeled_dataset(&records, TargetMode::Category1, FeatureMode::ItemFeatures(&store))?;
    let years = sorted_years(&records);
    let n_years = years.len();
    let cells: Vec<(i64, i64)> = years
        .iter()
        .flat_map(|&ty| years.iter().map(move |&ey| (ty, ey)))
        .collect();

    let n_seeds = cfg.seeds.len();
    let results = run_jobs(cells.len() * n_seeds, cfg.parallel, |job| {
        let cell = job / n_seeds;
        let seed = cfg.seeds[job % n_seeds];
        let (train_year, test_year) = cells[cell];
        let job_seed = derive_seed(seed, STREAM_CAT_BENCH, cell as u64);
        let pair = sample_covariate_shift_groups(
            &pool,
            &[train_year],
            &[test_year],
            p.train_size,
            p.test_size,
            derive_seed(job_seed, STREAM_CAT_BENCH, 1),
        )?;
        let base = category_base_weights(cfg, &pair, job_seed)?;
        let gd = p.sgd.to_gd(derive_seed(job_seed, STREAM_CAT_BENCH, 3))?;
        let mut accs = Vec::with_capacity(methods.len());
        for m in &methods {
            let w = m.ratio_weights(&base)?;
            let h = fit_weighted_logistic(&pair.train, &w, &gd)?;
            accs.push(classifier_accuracy(&h, &pair.test)?);
        }
        Ok(accs)
    })?;

    let mut csv = String::from("method,train_year,test_year,accuracy_mean,accuracy_std,n_seeds\n");
    for (mi, m) in methods.iter().enumerate() {
        for (ci, (ty, ey)) in cells.iter().enumerate() {
            let samples: Vec<f64> = results[ci * n_seeds..(ci + 1) * n_seeds]
                .iter()
                .map(|accs| accs[mi])
                .collect();
            let (report, std) = MetricReport::from_samples("accuracy", &samples)?;
            csv.push_str(&format!(
                "{m},{ty},{ey},{},{},{}\n",
                f6(report.value),
                f6(std),
                report.n
            ));
        }
    }
    let _ = n_years;
    finish_output(cfg, &methods, cells.len(), csv)
}

// ---------------------------------------------------------------------
// Set matching across years
// ---------------------------------------------------------------------

fn stack_items(outfits: &[Outfit]) -> Result<FeatureMatrix> {
    if outfits.is_empty() {
        return Err(ShiftError::EmptyDataset);
    }
    let d = outfits[0].items().n_cols();
    let mut data = Vec::new();
    for o in outfits {
        data.extend_from_slice(o.items().as_slice());
    }
    let n = data.len() / d;
    FeatureMatrix::from_vec(data, n, d)
}

pub fn run_matching_benchmark(cfg: &BenchConfig) -> Result<BenchOutput> {
    let methods = cfg.effective_methods();
    validate_methods(Protocol::SetMatching, &methods)?;
    let p = &cfg.matching;
    let (records, store) = load_corpus(&cfg.source)?;
    let outfits = records_to_outfits(&records, &store)?;
    let mut by_year: BTreeMap<i64, Vec<Outfit>> = BTreeMap::new();
    for o in outfits {
        by_year.entry(o.year()).or_default().push(o);
    }
    let years: Vec<i64> = by_year.keys().copied().collect();
    let train_year = p.train_year.unwrap_or(years[0]);
    let train_outfits = by_year
        .get(&train_year)
        .ok_or(ShiftError::EmptyGroup { group: train_year })?
        .clone();
    let item_mats: BTreeMap<i64, FeatureMatrix> = years
        .iter()
        .map(|&y| Ok((y, stack_items(&by_year[&y])?)))
        .collect::<Result<_>>()?;

    let n_seeds = cfg.seeds.len();
    let n_years = years.len();
    let n_cells = p.k_values.len() * n_years;
    let results = run_jobs(n_cells * n_seeds, cfg.parallel, |job| {
        let cell = job / n_seeds;
        let seed = cfg.seeds[job % n_seeds];
        let k = p.k_values[cell / n_years];
        let eval_year = years[cell % n_years];
        let job_seed = derive_seed(seed, STREAM_MAT_BENCH, cell as u64);

        // On the training year itself there is no shift to estimate, so
        // per-item probabilities are identically zero and all methods
        // reduce to the same unweighted trajectory.
        let disc = if eval_year == train_year {
            None
        } else {
            let gd = cfg
                .discriminator
                .to_gd(derive_seed(job_seed, STREAM_MAT_BENCH, 1))?;
            Some(fit_source_discriminator(
                &item_mats[&train_year],
                &item_mats[&eval_year],
                cfg.discriminator.beta,
                &gd,
            )?)
        };
        let mut task_rng = rng_for(job_seed, STREAM_MAT_BENCH, 2);
        let tasks = build_fitnb_tasks(&by_year[&eval_year], k, &mut task_rng)?;
        let gd = p.sgd.to_gd(derive_seed(job_seed, STREAM_MAT_BENCH, 3))?;

        let prob: Box<dyn Fn(&[f64]) -> Result<f64>> = match &disc {
            Some(d) => Box::new(move |x: &[f64]| d.test_membership_prob(x)),
            None => Box::new(|_: &[f64]| Ok(0.0)),
        };
        let mut accs = Vec::with_capacity(methods.len());
        for m in &methods {
            let weighting = match m {
                MethodSpec::Erm => None,
                MethodSpec::MeanIw => Some(MatchWeighting {
                    strategy: IwStrategy::MeanIw,
                    item_prob: &*prob,
                    lenient: true,
                }),
                MethodSpec::MaxIw => Some(MatchWeighting {
                    strategy: IwStrategy::MaxIw,
                    item_prob: &*prob,
                    lenient: true,
                }),
                other => {
                    return Err(ShiftError::InvalidParam {
                        name: "methods",
                        reason: format!("{other} does not apply to the set-matching protocol"),
                    })
                }
            };
            let params = train_matcher(&train_outfits, k, &gd, weighting.as_ref())?;
            accs.push(evaluate_fitnb(&params, &tasks)?);
        }
        Ok(accs)
    })?;

    let mut csv = String::from("method,k,eval_year,accuracy_mean,accuracy_std,n_seeds\n");
    for (mi, m) in methods.iter().enumerate() {
        for (ci, _) in (0..n_cells).enumerate() {
            let k = p.k_values[ci / n_years];
            let eval_year = years[ci % n_years];
            let samples: Vec<f64> = results[ci * n_seeds..(ci + 1) * n_seeds]
                .iter()
                .map(|accs| accs[mi])
                .collect();
            let (report, std) = MetricReport::from_samples("accuracy", &samples)?;
            csv.push_str(&format!(
                "{m},{k},{eval_year},{},{},{}\n",
                f6(report.value),
                f6(std),
                report.n
            ));
        }
    }
    finish_output(cfg, &methods, n_cells, csv)
}

// ---------------------------------------------------------------------
// Year discrimination
// ---------------------------------------------------------------------

pub fn run_year_discrimination(cfg: &BenchConfig) -> Result<BenchOutput> {
    let p = &cfg.yeardisc;
    let (records, store) = load_corpus(&cfg.source)?;
    let pool = to_labeled_dataset(&records, TargetMode::Category1, FeatureMode::ItemFeatures(&store))?;
    let years = sorted_years(&records);
    let anchor = p.anchor_year.unwrap_or(years[0]);
    if !years.contains(&anchor) {
        return Err(ShiftError::EmptyGroup { group: anchor });
    }

    let n_seeds = cfg.seeds.len();
    let need = p.fit_size + p.eval_size;
    let results = run_jobs(years.len() * n_seeds, cfg.parallel, |job| {
        let cell = job / n_seeds;
        let seed = cfg.seeds[job % n_seeds];
        let other = years[cell];
        let job_seed = derive_seed(seed, STREAM_YD_BENCH, cell as u64);
        let pair = sample_covariate_shift_groups(
            &pool,
            &[anchor],
            &[other],
            need,
            need,
            derive_seed(job_seed, STREAM_YD_BENCH, 1),
        )?;
        let fit_idx: Vec<usize> = (0..p.fit_size).collect();
        let eval_idx: Vec<usize> = (p.fit_size..need).collect();
        let fit_a = pair.train.features().select_rows(&fit_idx);
        let eval_a = pair.train.features().select_rows(&eval_idx);
        let fit_b = pair.test.features().select_rows(&fit_idx);
        let eval_b = pair.test.features().select_rows(&eval_idx);
        let gd = cfg
            .discriminator
            .to_gd(derive_seed(job_seed, STREAM_YD_BENCH, 2))?;
        let disc = fit_source_discriminator(&fit_a, &fit_b, cfg.discriminator.beta, &gd)?;

        let mut scores = Vec::with_capacity(2 * p.eval_size);
        let mut labels = Vec::with_capacity(2 * p.eval_size);
        let mut preds = Vec::with_capacity(2 * p.eval_size);
        let mut truth = Vec::with_capacity(2 * p.eval_size);
        for row in eval_a.rows() {
            let g = disc.g_raw(row)?;
            scores.push(g);
            labels.push(1u8);
            preds.push(usize::from(g >= 0.5));
            truth.push(1usize);
        }
        for row in eval_b.rows() {
            let g = disc.g_raw(row)?;
            scores.push(g);
            labels.push(0u8);
            preds.push(usize::from(g >= 0.5));
            truth.push(0usize);
        }
        Ok((accuracy(&preds, &truth)?, auc(&scores, &labels)?))
    })?;

    let mut csv = String::from(
        "anchor_year,other_year,gap,accuracy_mean,accuracy_std,auc_mean,auc_std,n_seeds\n",
    );
    for (ci, &other) in years.iter().enumerate() {
        let rows = &results[ci * n_seeds..(ci + 1) * n_seeds];
        let accs: Vec<f64> = rows.iter().map(|(a, _)| *a).collect();
        let aucs: Vec<f64> = rows.iter().map(|(_, u)| *u).collect();
        let (acc_rep, acc_std) = MetricReport::from_samples("accuracy", &accs)?;
        let (auc_rep, auc_std) = MetricReport::from_samples("auc", &aucs)?;
        csv.push_str(&format!(
            "{anchor},{other},{},{},{},{},{},{}\n",
            (other - anchor).abs(),
            f6(acc_rep.value),
            f6(acc_std),
            f6(auc_rep.value),
            f6(auc_std),
            acc_rep.n
        ));
    }
    let methods = cfg.effective_methods();
    finish_output(cfg, &methods, years.len(), csv)
}
