//! Catalog ingestion: newline-delimited JSON outfit records, a binary
//! item-feature store, yearly summary statistics, conversion into
//! [`LabeledDataset`] form, and a synthetic corpus generator whose item
//! features drift year over year.
//!
//! A record line looks like
//! `{"set_id":1,"items":[{"item_id":7,"category_id1":100,"category_id2":1003,
//! "price":2400},...],"user":{"user_id":55},"like_num":12,
//! "publish_date":"2013-05-17"}`. Unknown extra fields are ignored so the
//! parser tolerates catalog schema growth.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core::{FeatureMatrix, LabeledDataset};
use crate::error::{Result, ShiftError};
use crate::matching::Outfit;
use crate::seeding::rng_for;

const STREAM_CORPUS: u64 = 0x4352; // synthetic corpus generator

/// Earliest publish date the catalog window admits.
pub const DATE_MIN: NaiveDate = match NaiveDate::from_ymd_opt(2010, 1, 1) {
    Some(d) => d,
    None => unreachable!(),
};
/// Latest publish date the catalog window admits.
pub const DATE_MAX: NaiveDate = match NaiveDate::from_ymd_opt(2020, 4, 6) {
    Some(d) => d,
    None => unreachable!(),
};

/// Fewest items a catalog record is expected to carry.
pub const MIN_ITEMS_PER_RECORD: usize = 4;

/// One wearable item inside an outfit record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemEntry {
    pub item_id: i64,
    pub category_id1: i64,
    pub category_id2: i64,
    pub price: i64,
}

/// The posting user. Brand preferences are optional in the catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserInfo {
    pub user_id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub favorite_brand_ids: Option<Vec<i64>>,
}

/// One outfit post: a set of items plus engagement and timing metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutfitRecord {
    pub set_id: i64,
    pub items: Vec<ItemEntry>,
    pub user: UserInfo,
    pub like_num: u32,
    pub publish_date: NaiveDate,
}

impl OutfitRecord {
    /// Publish year, the grouping key used throughout the benchmarks.
    pub fn year(&self) -> i64 {
        i64::from(self.publish_date.year())
    }
}

/// A soft invariant violation found while ingesting a record. Records
/// carrying violations are kept unless strict mode is on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordWarning {
    pub line: usize,
    pub message: String,
}

/// Result of parsing a record stream: the records plus any soft
/// invariant violations, each tagged with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<OutfitRecord>,
    pub warnings: Vec<RecordWarning>,
}

fn record_warnings(record: &OutfitRecord, line: usize, out: &mut Vec<RecordWarning>) {
    if record.items.len() < MIN_ITEMS_PER_RECORD {
        out.push(RecordWarning {
            line,
            message: format!(
                "record {} has {} items, expected at least {}",
                record.set_id,
                record.items.len(),
                MIN_ITEMS_PER_RECORD
            ),
        });
    }
    for item in &record.items {
        if item.price < 0 {
            out.push(RecordWarning {
                line,
                message: format!(
                    "item {} in record {} has negative price {}",
                    item.item_id, record.set_id, item.price
                ),
            });
        }
    }
    if record.publish_date < DATE_MIN || record.publish_date > DATE_MAX {
        out.push(RecordWarning {
            line,
            message: format!(
                "record {} publish date {} outside catalog window {}..{}",
                record.set_id, record.publish_date, DATE_MIN, DATE_MAX
            ),
        });
    }
}

/// Parse newline-delimited JSON outfit records.
///
/// Structural problems (bad JSON, missing fields, malformed dates) are
/// hard errors naming the offending line. Soft invariant violations
/// (fewer than four items, negative price, publish date outside the
/// catalog window) become warnings; with `strict` set they are promoted
/// to errors. Blank lines are skipped.
pub fn parse_records(reader: impl BufRead, strict: bool) -> Result<ParseOutcome> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: OutfitRecord =
            serde_json::from_str(&text).map_err(|e| ShiftError::RecordParse {
                line: line_no,
                message: e.to_string(),
            })?;
        let before = warnings.len();
        record_warnings(&record, line_no, &mut warnings);
        if strict && warnings.len() > before {
            let first = warnings[before].clone();
            return Err(ShiftError::RecordInvariant {
                line: first.line,
                message: first.message,
            });
        }
        records.push(record);
    }
    Ok(ParseOutcome { records, warnings })
}

/// Convenience wrapper over [`parse_records`] for in-memory text.
pub fn parse_records_str(text: &str, strict: bool) -> Result<ParseOutcome> {
    parse_records(text.as_bytes(), strict)
}

/// Serialize records back to newline-delimited JSON. Round-trips with
/// [`parse_records`]: parse -> write -> parse yields equal records.
pub fn write_records(records: &[OutfitRecord], mut writer: impl Write) -> Result<()> {
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| ShiftError::Config(e.to_string()))?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Per-year summary row. `median_likes` is the lower median: the element
/// at index `(n - 1) / 2` of the sorted like counts, always a value that
/// actually occurs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearRow {
    pub year: i64,
    pub instances: u64,
    pub items: u64,
    pub mean_likes: f64,
    pub median_likes: u32,
}

/// Year-by-year corpus summary, sorted by year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearlyStats {
    pub rows: Vec<YearRow>,
}

impl YearlyStats {
    /// CSV rendering with a fixed header. Means use six decimals so the
    /// output is byte-stable across runs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("year,instances,items,mean_likes,median_likes\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.6},{}\n",
                row.year, row.instances, row.items, row.mean_likes, row.median_likes
            ));
        }
        out
    }
}

/// Compute per-year record counts, item counts, mean likes, and lower
/// median likes.
pub fn yearly_stats(records: &[OutfitRecord]) -> Result<YearlyStats> {
    if records.is_empty() {
        return Err(ShiftError::EmptyDataset);
    }
    let mut likes_by_year: BTreeMap<i64, Vec<u32>> = BTreeMap::new();
    let mut items_by_year: BTreeMap<i64, u64> = BTreeMap::new();
    for record in records {
        likes_by_year
            .entry(record.year())
            .or_default()
            .push(record.like_num);
        *items_by_year.entry(record.year()).or_default() += record.items.len() as u64;
    }
    let rows = likes_by_year
        .into_iter()
        .map(|(year, mut likes)| {
            likes.sort_unstable();
            let n = likes.len();
            let mean = likes.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
            YearRow {
                year,
                instances: n as u64,
                items: items_by_year[&year],
                mean_likes: mean,
                median_likes: likes[(n - 1) / 2],
            }
        })
        .collect();
    Ok(YearlyStats { rows })
}

/// Which column becomes the regression / classification target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// Like count per record; one row per record.
    Likes,
    /// Coarse item category, densely re-indexed; one row per item.
    Category1,
    /// Publish year per record; one row per record.
    Year,
}

/// Where feature vectors come from.
pub enum FeatureMode<'a> {
    /// Four price summary features per record: sum, mean, max, count.
    PriceStats,
    /// Per-item vectors looked up in a feature store. Record-level modes
    /// average the item vectors.
    ItemFeatures(&'a FeatureStore),
}

fn price_stat_features(record: &OutfitRecord) -> Vec<f64> {
    let prices: Vec<f64> = record.items.iter().map(|it| it.price as f64).collect();
    let sum: f64 = prices.iter().sum();
    let n = prices.len() as f64;
    let max = prices.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    vec![sum, sum / n, max, n]
}

fn missing_features_error(missing: Vec<i64>) -> ShiftError {
    let count = missing.len();
    let sample = missing.into_iter().take(10).collect();
    ShiftError::MissingFeatures { count, sample }
}

fn mean_item_features(record: &OutfitRecord, store: &FeatureStore) -> std::result::Result<Vec<f64>, Vec<i64>> {
    let mut acc = vec![0.0; store.dim()];
    let mut missing = Vec::new();
    for item in &record.items {
        match store.get(item.item_id) {
            Some(row) => {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += f64::from(*v);
                }
            }
            None => missing.push(item.item_id),
        }
    }
    if !missing.is_empty() {
        return Err(missing);
    }
    let n = record.items.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}

/// Flatten records into a [`LabeledDataset`].
///
/// Likes and year targets produce one row per record; the category
/// target produces one row per item and densely re-indexes the distinct
/// `category_id1` values in sorted order. Group keys are publish years.
/// Item ids absent from the feature store are an error listing up to ten
/// offenders.
pub fn to_labeled_dataset(
    records: &[OutfitRecord],
    target: TargetMode,
    features: FeatureMode<'_>,
) -> Result<LabeledDataset> {
    if records.is_empty() {
        return Err(ShiftError::EmptyDataset);
    }
    match target {
        TargetMode::Likes | TargetMode::Year => {
            let mut rows = Vec::with_capacity(records.len());
            let mut missing_all: Vec<i64> = Vec::new();
            let mut seen_missing: HashSet<i64> = HashSet::new();
            for record in records {
                match &features {
                    FeatureMode::PriceStats => rows.push(price_stat_features(record)),
                    FeatureMode::ItemFeatures(store) => match mean_item_features(record, store) {
                        Ok(row) => rows.push(row),
                        Err(missing) => {
                            for id in missing {
                                if seen_missing.insert(id) {
                                    missing_all.push(id);
                                }
                            }
                        }
                    },
                }
            }
            if !missing_all.is_empty() {
                return Err(missing_features_error(missing_all));
            }
            let targets = records
                .iter()
                .map(|r| match target {
                    TargetMode::Likes => f64::from(r.like_num),
                    _ => r.year() as f64,
                })
                .collect();
            let groups = records.iter().map(OutfitRecord::year).collect();
            LabeledDataset::new(FeatureMatrix::from_rows(&rows)?, targets, Some(groups))
        }
        TargetMode::Category1 => {
            let store = match features {
                FeatureMode::ItemFeatures(store) => store,
                FeatureMode::PriceStats => {
                    return Err(ShiftError::InvalidParam {
                        name: "features",
                        reason: "category target needs per-item features, not price summaries"
                            .into(),
                    })
                }
            };
            let classes: BTreeSet<i64> = records
                .iter()
                .flat_map(|r| r.items.iter().map(|it| it.category_id1))
                .collect();
            let class_of: HashMap<i64, usize> = classes
                .into_iter()
                .enumerate()
                .map(|(idx, id)| (id, idx))
                .collect();
            let mut rows = Vec::new();
            let mut targets = Vec::new();
            let mut groups = Vec::new();
            let mut missing_all: Vec<i64> = Vec::new();
            let mut seen_missing: HashSet<i64> = HashSet::new();
            for record in records {
                for item in &record.items {
                    match store.get(item.item_id) {
                        Some(row) => {
                            rows.push(row.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>());
                            targets.push(class_of[&item.category_id1] as f64);
                            groups.push(record.year());
                        }
                        None => {
                            if seen_missing.insert(item.item_id) {
                                missing_all.push(item.item_id);
                            }
                        }
                    }
                }
            }
            if !missing_all.is_empty() {
                return Err(missing_features_error(missing_all));
            }
            LabeledDataset::new(FeatureMatrix::from_rows(&rows)?, targets, Some(groups))
        }
    }
}

/// Sidecar index describing the binary feature file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FeatureIndex {
    dim: usize,
    item_ids: Vec<i64>,
}

/// Dense item-feature table backed by a binary file of little-endian
/// f32 values in row-major order plus a JSON sidecar mapping row
/// positions to item ids. Round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<i64>,
    data: Vec<f32>,
    index: HashMap<i64, usize>,
}

impl FeatureStore {
    pub fn from_parts(ids: Vec<i64>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(ShiftError::FeatureFile("feature dim must be >= 1".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(ShiftError::FeatureFile(format!(
                "expected {} values for {} rows of dim {}, got {}",
                ids.len() * dim,
                ids.len(),
                dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(ShiftError::FeatureFile(format!(
                "non-finite value at offset {pos}"
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, &id) in ids.iter().enumerate() {
            if index.insert(id, row).is_some() {
                return Err(ShiftError::FeatureFile(format!("duplicate item id {id}")));
            }
        }
        Ok(Self {
            dim,
            ids,
            data,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    /// Feature row for an item id, if present.
    pub fn get(&self, item_id: i64) -> Option<&[f32]> {
        self.index
            .get(&item_id)
            .map(|&row| &self.data[row * self.dim..(row + 1) * self.dim])
    }

    /// Serialize to (sidecar JSON bytes, binary matrix bytes).
    pub fn to_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let index = FeatureIndex {
            dim: self.dim,
            item_ids: self.ids.clone(),
        };
        let sidecar =
            serde_json::to_vec(&index).map_err(|e| ShiftError::FeatureFile(e.to_string()))?;
        let mut bin = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        Ok((sidecar, bin))
    }

    /// Parse from sidecar JSON bytes plus binary matrix bytes.
    pub fn from_bytes(sidecar: &[u8], bin: &[u8]) -> Result<Self> {
        let index: FeatureIndex =
            serde_json::from_slice(sidecar).map_err(|e| ShiftError::FeatureFile(e.to_string()))?;
        if index.dim == 0 {
            return Err(ShiftError::FeatureFile("feature dim must be >= 1".into()));
        }
        if bin.len() % 4 != 0 {
            return Err(ShiftError::FeatureFile(format!(
                "binary length {} is not a multiple of 4",
                bin.len()
            )));
        }
        let expected = index
            .item_ids
            .len()
            .checked_mul(index.dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ShiftError::FeatureFile("size overflow".into()))?;
        if bin.len() != expected {
            return Err(ShiftError::FeatureFile(format!(
                "expected {} bytes for {} rows of dim {}, got {}",
                expected,
                index.item_ids.len(),
                index.dim,
                bin.len()
            )));
        }
        let data = bin
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_parts(index.item_ids, index.dim, data)
    }

    /// Write the binary matrix and sidecar index to disk.
    pub fn write_files(&self, bin_path: &Path, index_path: &Path) -> Result<()> {
        let (sidecar, bin) = self.to_bytes()?;
        std::fs::write(bin_path, bin)?;
        std::fs::write(index_path, sidecar)?;
        Ok(())
    }

    /// Read a store previously written with [`FeatureStore::write_files`].
    pub fn read_files(bin_path: &Path, index_path: &Path) -> Result<Self> {
        let bin = std::fs::read(bin_path)?;
        let sidecar = std::fs::read(index_path)?;
        Self::from_bytes(&sidecar, &bin)
    }
}

/// Build matcher-ready outfits (item feature matrix + year key) from
/// records and a feature store.
pub fn records_to_outfits(records: &[OutfitRecord], store: &FeatureStore) -> Result<Vec<Outfit>> {
    let mut outfits = Vec::with_capacity(records.len());
    let mut missing_all: Vec<i64> = Vec::new();
    let mut seen_missing: HashSet<i64> = HashSet::new();
    for record in records {
        let mut rows = Vec::with_capacity(record.items.len());
        for item in &record.items {
            match store.get(item.item_id) {
                Some(row) => rows.push(row.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>()),
                None => {
                    if seen_missing.insert(item.item_id) {
                        missing_all.push(item.item_id);
                    }
                }
            }
        }
        if missing_all.is_empty() {
            outfits.push(Outfit::new(FeatureMatrix::from_rows(&rows)?, record.year())?);
        }
    }
    if !missing_all.is_empty() {
        return Err(missing_features_error(missing_all));
    }
    Ok(outfits)
}

/// Recipe for a synthetic drifting catalog.
///
/// Items are drawn around one of `n_categories` feature clusters; items
/// of one outfit share a latent style vector; everything published in
/// later years is translated by one more step of `drift_per_step`. Like
/// counts follow a linear model over the outfit's mean item features plus
/// noise, so price/feature regressions have signal to find. Catalog
/// category labels come from a year-invariant rule over the item features
/// (see `relabel_categories`), giving clean feature shift for per-item
/// classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusSpec {
    pub n_outfits: usize,
    pub items_min: usize,
    pub items_max: usize,
    pub dim: usize,
    pub years: Vec<i64>,
    /// Per-dimension feature translation applied once per year step.
    /// Empty means no drift; otherwise the length must equal `dim`.
    pub drift_per_step: Vec<f64>,
    pub n_categories: usize,
    /// Std-dev of the shared per-outfit latent style vector.
    pub outfit_sigma: f64,
    /// Std-dev of per-item noise around category center + style.
    pub noise_sigma: f64,
    /// Distance of category centers from the origin.
    pub category_radius: f64,
    /// Linear like-model coefficients over mean item features; padded
    /// with zeros (or truncated) to `dim`.
    pub like_coef: Vec<f64>,
    pub like_base: f64,
    pub like_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            n_outfits: 1500,
            items_min: 4,
            items_max: 8,
            dim: 8,
            years: vec![2011, 2012, 2013, 2014, 2015],
            drift_per_step: vec![0.18; 8],
            n_categories: 4,
            outfit_sigma: 1.0,
            noise_sigma: 0.6,
            category_radius: 2.5,
            like_coef: vec![2.0, -1.5],
            like_base: 8.0,
            like_noise: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_outfits == 0 {
            return Err(ShiftError::InvalidParam {
                name: "n_outfits",
                reason: "need at least one outfit".into(),
            });
        }
        if self.items_min == 0 || self.items_max < self.items_min {
            return Err(ShiftError::InvalidParam {
                name: "items_per_outfit",
                reason: format!("bad range {}..={}", self.items_min, self.items_max),
            });
        }
        if self.dim == 0 {
            return Err(ShiftError::InvalidParam {
                name: "dim",
                reason: "need at least one feature dimension".into(),
            });
        }
        if self.years.is_empty() {
            return Err(ShiftError::InvalidParam {
                name: "years",
                reason: "need at least one year".into(),
            });
        }
        if !self.drift_per_step.is_empty() && self.drift_per_step.len() != self.dim {
            return Err(ShiftError::InvalidParam {
                name: "drift_per_step",
                reason: format!(
                    "length {} does not match dim {}",
                    self.drift_per_step.len(),
                    self.dim
                ),
            });
        }
        if self.n_categories == 0 {
            return Err(ShiftError::InvalidParam {
                name: "n_categories",
                reason: "need at least one category".into(),
            });
        }
        for (name, v) in [
            ("outfit_sigma", self.outfit_sigma),
            ("noise_sigma", self.noise_sigma),
            ("category_radius", self.category_radius),
            ("like_noise", self.like_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ShiftError::InvalidParam {
                    name: "sigma",
                    reason: format!("{name} must be finite and >= 0, got {v}"),
                });
            }
        }
        if self.like_coef.len() > self.dim {
            return Err(ShiftError::InvalidParam {
                name: "like_coef",
                reason: format!(
                    "length {} exceeds dim {}",
                    self.like_coef.len(),
                    self.dim
                ),
            });
        }
        Ok(())
    }
}

/// Generate a synthetic drifting catalog: records plus the matching
/// item-feature store. Deterministic in the spec seed.
pub fn gen_synthetic_corpus(
    spec: &SyntheticCorpusSpec,
) -> Result<(Vec<OutfitRecord>, FeatureStore)> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, STREAM_CORPUS, 0);
    let d = spec.dim;
    let mut years = spec.years.clone();
    years.sort_unstable();
    years.dedup();

    // Fixed category centers on a sphere of the requested radius.
    let mut centers = Vec::with_capacity(spec.n_categories);
    for _ in 0..spec.n_categories {
        let mut c: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut c {
            *v *= spec.category_radius / norm;
        }
        centers.push(c);
    }
    let drift = if spec.drift_per_step.is_empty() {
        vec![0.0; d]
    } else {
        spec.drift_per_step.clone()
    };
    let mut coef = spec.like_coef.clone();
    coef.resize(d, 0.0);
    // Unit direction tying prices to features so price summaries carry
    // a trace of the like signal.
    let price_dir = 1.0 / (d as f64).sqrt();

    let mut records = Vec::with_capacity(spec.n_outfits);
    let mut ids = Vec::new();
    let mut feats: Vec<f32> = Vec::new();
    let mut next_item_id: i64 = 1_000_000;
    for i in 0..spec.n_outfits {
        let year_idx = i % years.len();
        let year = years[year_idx];
        let step = year_idx as f64;
        let style: Vec<f64> = (0..d)
            .map(|_| spec.outfit_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n_items = rng.gen_range(spec.items_min..=spec.items_max);
        let mut items = Vec::with_capacity(n_items);
        let mut mean_feat = vec![0.0; d];
        for _ in 0..n_items {
            let cat = rng.gen_range(0..spec.n_categories);
            let mut x = vec![0.0; d];
            for k in 0..d {
                x[k] = centers[cat][k]
                    + style[k]
                    + step * drift[k]
                    + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                mean_feat[k] += x[k];
            }
            let proj: f64 = x.iter().map(|v| v * price_dir).sum();
            let price_noise: f64 = rng.sample::<f64, _>(StandardNormal);
            let price = (2000.0 + 900.0 * proj + 400.0 * price_noise).round().max(0.0) as i64;
            let item_id = next_item_id;
            next_item_id += 1;
            ids.push(item_id);
            feats.extend(x.iter().map(|&v| v as f32));
            items.push(ItemEntry {
                item_id,
                category_id1: 100 + cat as i64,
                category_id2: 1000 + 10 * cat as i64 + rng.gen_range(0..3),
                price,
            });
        }
        for v in &mut mean_feat {
            *v /= n_items as f64;
        }
        let like_mean = spec.like_base
            + coef
                .iter()
                .zip(&mean_feat)
                .map(|(c, x)| c * x)
                .sum::<f64>();
        let like_draw: f64 = rng.sample::<f64, _>(StandardNormal);
        let like_num = (like_mean + spec.like_noise * like_draw).round().max(0.0) as u32;
        let month = rng.gen_range(1..=12u32);
        let day = rng.gen_range(1..=28u32);
        let publish_date = NaiveDate::from_ymd_opt(year as i32, month, day).ok_or(
            ShiftError::InvalidParam {
                name: "years",
                reason: format!("cannot build a date in year {year}"),
            },
        )?;
        let favorite_brand_ids = if i % 3 == 0 {
            Some(vec![7 + (i as i64 % 5), 40 + (i as i64 % 3)])
        } else {
            None
        };
        records.push(OutfitRecord {
            set_id: 10_000_000 + i as i64,
            items,
            user: UserInfo {
                user_id: 1 + (i as i64 % 97),
                favorite_brand_ids,
            },
            like_num,
            publish_date,
        });
    }
    let store = FeatureStore::from_parts(ids, d, feats)?;
    relabel_categories(spec, &mut records, &store);
    Ok((records, store))
}

/// Overwrite `category_id1` with a label rule shared by all years:
/// argmax over per-class scores that are linear in the item features plus
/// a curvature feature — the squared (centered) coordinate along the
/// drift axis. The rule is one fixed function of the features, so the
/// conditional label distribution is identical across years while the
/// feature mass translates; because the boundary bends exactly along the
/// direction the mass moves, a linear classifier fit on one year loses
/// accuracy steadily as the year gap grows. Coefficients come from their
/// own seed substream so the item draws above are unaffected.
fn relabel_categories(
    spec: &SyntheticCorpusSpec,
    records: &mut [OutfitRecord],
    store: &FeatureStore,
) {
    const CURVE_SCALE: f64 = 0.5;
    let d = spec.dim;
    let mut rule_rng = rng_for(spec.seed, STREAM_CORPUS, 1);
    let rule: Vec<Vec<f64>> = (0..spec.n_categories)
        .map(|_| {
            (0..=d)
                .map(|_| rule_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let drift_norm = spec.drift_per_step.iter().map(|v| v * v).sum::<f64>().sqrt();
    let axis: Vec<f64> = if drift_norm > 0.0 {
        spec.drift_per_step.iter().map(|v| v / drift_norm).collect()
    } else {
        vec![1.0 / (d as f64).sqrt(); d]
    };
    let mut rows: Vec<&[f32]> = Vec::new();
    for r in records.iter() {
        for it in &r.items {
            rows.push(store.get(it.item_id).expect("generated item has features"));
        }
    }
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for row in &rows {
        for (m, &v) in mean.iter_mut().zip(*row) {
            *m += f64::from(v) / n;
        }
    }
    let coord = |row: &[f32]| -> f64 {
        row.iter()
            .zip(&mean)
            .zip(&axis)
            .map(|((&v, m), a)| (f64::from(v) - m) * a)
            .sum()
    };
    let mean_sq = rows.iter().map(|row| coord(row).powi(2)).sum::<f64>() / n;
    let mut idx = 0usize;
    for r in records.iter_mut() {
        for it in &mut r.items {
            let row = rows[idx];
            idx += 1;
            let curve = CURVE_SCALE * (coord(row).powi(2) - mean_sq);
            let mut best = f64::NEG_INFINITY;
            let mut label = 0usize;
            for (c, u) in rule.iter().enumerate() {
                let mut s = u[d] * curve;
                for (uk, &xk) in u[..d].iter().zip(row) {
                    s += uk * f64::from(xk);
                }
                if s > best {
                    best = s;
                    label = c;
                }
            }
            it.category_id1 = 100 + label as i64;
        }
    }
}
