//! Set-to-set matching: a permutation-invariant set scorer, the K-pair-set
//! contrastive loss and its importance-weighted variant, and training plus
//! fill-in-the-blank evaluation utilities built on them.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{log_sum_exp, FeatureMatrix, Hypothesis, HypothesisKind};
use crate::error::{Result, ShiftError};
use crate::learn::GdConfig;
use crate::seeding::rng_for;

const STREAM_MATCH: u64 = 0x4d41;

/// Embedding width used by the trainer.
pub const DEFAULT_EMBED_DIM: usize = 32;

/// A nonempty collection of equally sized item feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSet {
    features: FeatureMatrix,
}

impl ItemSet {
    pub fn new(features: FeatureMatrix) -> Result<Self> {
        if features.n_rows() == 0 {
            return Err(ShiftError::EmptySet);
        }
        Ok(Self { features })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(FeatureMatrix::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.features.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one item
    }

    pub fn dim(&self) -> usize {
        self.features.n_cols()
    }

    pub fn items(&self) -> impl Iterator<Item = &[f64]> {
        self.features.rows()
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }
}

/// Shared item encoder: projection (e rows of d weights, row-major) plus an
/// e-vector of biases. An item x maps to tanh(proj x + bias); a set embeds
/// as the mean of its item encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetScorerParams {
    proj: Vec<f64>,
    bias: Vec<f64>,
    d: usize,
    e: usize,
}

impl SetScorerParams {
    pub fn new(proj: Vec<f64>, bias: Vec<f64>, d: usize) -> Result<Self> {
        let e = bias.len();
        if e == 0 || d == 0 {
            return Err(ShiftError::InvalidParam {
                name: "dims",
                reason: "need embedding dim >= 1 and item dim >= 1".into(),
            });
        }
        if proj.len() != e * d {
            return Err(ShiftError::LengthMismatch {
                expected: e * d,
                got: proj.len(),
            });
        }
        if proj.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(ShiftError::NonFinite {
                context: "scorer params".into(),
            });
        }
        Ok(Self { proj, bias, d, e })
    }

    /// Seeded uniform initialization in [-1/sqrt(d), 1/sqrt(d)].
    pub fn init(d: usize, e: usize, seed: u64) -> Result<Self> {
        if e == 0 || d == 0 {
            return Err(ShiftError::InvalidParam {
                name: "dims",
                reason: "need embedding dim >= 1 and item dim >= 1".into(),
            });
        }
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proj = (0..e * d).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias = (0..e).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::new(proj, bias, d)
    }

    pub fn item_dim(&self) -> usize {
        self.d
    }

    pub fn embed_dim(&self) -> usize {
        self.e
    }

    pub fn proj(&self) -> &[f64] {
        &self.proj
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Flat-parameter view: e blocks of [proj row; bias entry].
    pub fn to_hypothesis(&self) -> Hypothesis {
        let mut params = Vec::with_capacity(self.e * (self.d + 1));
        for k in 0..self.e {
            params.extend_from_slice(&self.proj[k * self.d..(k + 1) * self.d]);
            params.push(self.bias[k]);
        }
        Hypothesis::new(HypothesisKind::SetScorer, params, self.d)
            .expect("valid by construction")
    }

    pub fn from_hypothesis(h: &Hypothesis) -> Result<Self> {
        if h.kind() != HypothesisKind::SetScorer {
            return Err(ShiftError::InvalidParam {
                name: "hypothesis",
                reason: "expected a set-scorer parameter layout".into(),
            });
        }
        let d = h.dim();
        let e = h.n_blocks();
        let mut proj = Vec::with_capacity(e * d);
        let mut bias = Vec::with_capacity(e);
        for k in 0..e {
            let block = &h.params()[k * (d + 1)..(k + 1) * (d + 1)];
            proj.extend_from_slice(&block[..d]);
            bias.push(block[d]);
        }
        Self::new(proj, bias, d)
    }

    /// tanh(proj x + bias) for one item.
    fn encode_item(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.e);
        for k in 0..self.e {
            let row = &self.proj[k * self.d..(k + 1) * self.d];
            out.push((crate::core::dot(row, x) + self.bias[k]).tanh());
        }
        out
    }
}

/// One fill-in-the-blank instance: a query half, K candidate halves, and
/// the index of the half that actually completes the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingTask {
    pub query: ItemSet,
    pub candidates: Vec<ItemSet>,
    pub correct: usize,
}

impl MatchingTask {
    pub fn new(query: ItemSet, candidates: Vec<ItemSet>, correct: usize) -> Result<Self> {
        if candidates.len() < 2 {
            return Err(ShiftError::InvalidParam {
                name: "candidates",
                reason: "need at least 2 candidates".into(),
            });
        }
        if correct >= candidates.len() {
            return Err(ShiftError::InvalidParam {
                name: "correct",
                reason: format!(
                    "index {correct} out of range for {} candidates",
                    candidates.len()
                ),
            });
        }
        for c in &candidates {
            if c.dim() != query.dim() {
                return Err(ShiftError::DimMismatch {
                    expected: query.dim(),
                    got: c.dim(),
                });
            }
        }
        Ok(Self {
            query,
            candidates,
            correct,
        })
    }

    pub fn k(&self) -> usize {
        self.candidates.len()
    }
}

/// An item group with its year key, the unit the matching benchmark splits
/// into query/answer halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outfit {
    items: FeatureMatrix,
    year: i64,
}

impl Outfit {
    /// Catalog ingestion enforces the four-item floor; programmatic
    /// construction only requires the set to be splittable targets, i.e.
    /// nonempty (the split operation itself insists on >= 2).
    pub fn new(items: FeatureMatrix, year: i64) -> Result<Self> {
        if items.n_rows() == 0 {
            return Err(ShiftError::OutfitTooSmall {
                min: 1,
                got: 0,
            });
        }
        Ok(Self { items, year })
    }

    pub fn len(&self) -> usize {
        self.items.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.items.n_cols()
    }

    pub fn items(&self) -> &FeatureMatrix {
        &self.items
    }

    pub fn year(&self) -> i64 {
        self.year
    }
}

/// Compare two item vectors lexicographically (total order on floats).
fn cmp_items(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o != std::cmp::Ordering::Equal {
            return o;
        }
    }
    std::cmp::Ordering::Equal
}

/// Mean of the per-item encodings, summed in canonical (sorted) item order
/// so that any permutation of the input items produces bit-identical
/// output.
pub fn embed_set(params: &SetScorerParams, s: &ItemSet) -> Result<Vec<f64>> {
    if s.dim() != params.item_dim() {
        return Err(ShiftError::DimMismatch {
            expected: params.item_dim(),
            got: s.dim(),
        });
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| cmp_items(s.item(i), s.item(j)));
    let mut acc = vec![0.0; params.embed_dim()];
    for &i in &order {
        let t = params.encode_item(s.item(i));
        for (a, v) in acc.iter_mut().zip(&t) {
            *a += v;
        }
    }
    let inv = 1.0 / s.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok(acc)
}

/// Inner product of the two set embeddings; symmetric in its arguments.
pub fn match_score(params: &SetScorerParams, v: &ItemSet, w: &ItemSet) -> Result<f64> {
    let ev = embed_set(params, v)?;
    let ew = embed_set(params, w)?;
    Ok(crate::core::dot(&ev, &ew))
}

fn check_square(scores: &[Vec<f64>]) -> Result<()> {
    if scores.is_empty() {
        return Err(ShiftError::EmptyInput);
    }
    let k = scores.len();
    for row in scores {
        if row.len() != k {
            return Err(ShiftError::LengthMismatch {
                expected: k,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ShiftError::NonFinite {
                context: "score matrix".into(),
            });
        }
    }
    Ok(())
}

/// Contrastive loss over a K x K score matrix of K matched pairs:
/// -(1/K) sum_i [ s_ii - logsumexp_k s_ik ]. Zero iff every row's softmax
/// puts all mass on the diagonal (or K = 1).
pub fn kpair_loss(scores: &[Vec<f64>]) -> Result<f64> {
    check_square(scores)?;
    let k = scores.len();
    let mut total = 0.0;
    for (i, row) in scores.iter().enumerate() {
        total += log_sum_exp(row) - row[i];
    }
    Ok(total / k as f64)
}

/// Importance-weighted variant: each diagonal term is scaled by
/// exp(pair_prob_i), the exponentiated probability that the pair belongs
/// to the test distribution. In strict mode probabilities must lie in
/// [0,1]; lenient mode clips out-of-range values and logs a warning.
pub fn weighted_kpair_loss(
    scores: &[Vec<f64>],
    pair_probs: &[f64],
    lenient: bool,
) -> Result<f64> {
    check_square(scores)?;
    let k = scores.len();
    if pair_probs.len() != k {
        return Err(ShiftError::LengthMismatch {
            expected: k,
            got: pair_probs.len(),
        });
    }
    let mut total = 0.0;
    for (i, row) in scores.iter().enumerate() {
        let p = checked_prob(pair_probs[i], i, lenient)?;
        total += p.exp() * (log_sum_exp(row) - row[i]);
    }
    Ok(total / k as f64)
}

fn checked_prob(p: f64, index: usize, lenient: bool) -> Result<f64> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        return Ok(p);
    }
    if lenient && p.is_finite() {
        let clipped = p.clamp(0.0, 1.0);
        log::warn!("pair probability {p} at index {index} clipped to {clipped}");
        return Ok(clipped);
    }
    Err(ShiftError::ProbOutOfRange { index, value: p })
}

/// How per-item test probabilities aggregate into one per-pair value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IwStrategy {
    MaxIw,
    MeanIw,
}

/// Aggregate the per-item test probabilities of a pair's item union into
/// the pair-level p(test | union) by max or mean.
pub fn pair_test_probability(weights_of_union: &[f64], strategy: IwStrategy) -> Result<f64> {
    if weights_of_union.is_empty() {
        return Err(ShiftError::EmptyInput);
    }
    if weights_of_union.iter().any(|v| !v.is_finite()) {
        return Err(ShiftError::NonFinite {
            context: "per-item probabilities".into(),
        });
    }
    Ok(match strategy {
        IwStrategy::MaxIw => weights_of_union
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max),
        IwStrategy::MeanIw => {
            weights_of_union.iter().sum::<f64>() / weights_of_union.len() as f64
        }
    })
}

/// Randomly bisect an outfit into two nonempty disjoint halves covering it:
/// the first half's size is uniform on 1..=len-1, membership uniform given
/// the sizes.
pub fn split_outfit(o: &Outfit, rng: &mut ChaCha8Rng) -> Result<(ItemSet, ItemSet)> {
    if o.len() < 2 {
        return Err(ShiftError::OutfitTooSmall {
            min: 2,
            got: o.len(),
        });
    }
    let nv = rng.gen_range(1..o.len());
    let mut idx: Vec<usize> = (0..o.len()).collect();
    idx.shuffle(rng);
    let (vi, wi) = idx.split_at(nv);
    let v = ItemSet::new(o.items().select_rows(vi))?;
    let w = ItemSet::new(o.items().select_rows(wi))?;
    Ok((v, w))
}

/// Build one fill-in-the-blank task per outfit: the outfit's own split
/// supplies the query and the correct candidate; the other K-1 candidates
/// are answer halves of K-1 distinct other outfits; the position of the
/// correct candidate is uniform.
pub fn build_fitnb_tasks(
    outfits: &[Outfit],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MatchingTask>> {
    if k < 2 {
        return Err(ShiftError::InvalidParam {
            name: "k",
            reason: "need at least 2 candidates".into(),
        });
    }
    if outfits.len() < k {
        return Err(ShiftError::TooFewOutfits {
            min: k,
            got: outfits.len(),
        });
    }
    let mut tasks = Vec::with_capacity(outfits.len());
    for (i, outfit) in outfits.iter().enumerate() {
        let (query, correct_half) = split_outfit(outfit, rng)?;
        let mut others: Vec<usize> = (0..outfits.len()).filter(|&j| j != i).collect();
        others.shuffle(rng);
        let mut negatives = Vec::with_capacity(k - 1);
        for &j in &others[..k - 1] {
            let (_, w) = split_outfit(&outfits[j], rng)?;
            negatives.push(w);
        }
        let correct = rng.gen_range(0..k);
        let mut candidates = negatives;
        candidates.insert(correct, correct_half);
        tasks.push(MatchingTask::new(query, candidates, correct)?);
    }
    Ok(tasks)
}

/// Gradient of a tuple loss with respect to the scorer parameters, in the
/// same layout as `SetScorerParams` (proj row-major, then bias).
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerGrad {
    pub proj: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ScorerGrad {
    fn zeros(params: &SetScorerParams) -> Self {
        Self {
            proj: vec![0.0; params.proj.len()],
            bias: vec![0.0; params.bias.len()],
        }
    }

    fn add_scaled(&mut self, other: &ScorerGrad, scale: f64) {
        for (a, b) in self.proj.iter_mut().zip(&other.proj) {
            *a += scale * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
    }
}

struct SetCache<'a> {
    set: &'a ItemSet,
    embed: Vec<f64>,
    tanh: Vec<Vec<f64>>, // per item, natural order
}

fn embed_with_cache<'a>(params: &SetScorerParams, s: &'a ItemSet) -> Result<SetCache<'a>> {
    let embed = embed_set(params, s)?;
    let tanh = s.items().map(|x| params.encode_item(x)).collect();
    Ok(SetCache {
        set: s,
        embed,
        tanh,
    })
}

/// Backpropagate an upstream gradient on a set embedding into the params.
fn backprop_set(
    params: &SetScorerParams,
    cache: &SetCache<'_>,
    upstream: &[f64],
    grad: &mut ScorerGrad,
) {
    let inv = 1.0 / cache.set.len() as f64;
    for (item_idx, t) in cache.tanh.iter().enumerate() {
        let x = cache.set.item(item_idx);
        for k in 0..params.embed_dim() {
            let g = upstream[k] * (1.0 - t[k] * t[k]) * inv;
            if g == 0.0 {
                continue;
            }
            let row = &mut grad.proj[k * params.item_dim()..(k + 1) * params.item_dim()];
            for (rj, xj) in row.iter_mut().zip(x) {
                *rj += g * xj;
            }
            grad.bias[k] += g;
        }
    }
}

/// Loss and analytic parameter gradient of the (optionally weighted)
/// K-pair-set loss over a tuple of matched (query, answer) pairs.
pub fn kpair_loss_and_param_grad(
    params: &SetScorerParams,
    pairs: &[(ItemSet, ItemSet)],
    pair_probs: Option<&[f64]>,
    lenient: bool,
) -> Result<(f64, ScorerGrad)> {
    if pairs.is_empty() {
        return Err(ShiftError::EmptyInput);
    }
    let k = pairs.len();
    let mut coeff = vec![1.0; k];
    if let Some(probs) = pair_probs {
        if probs.len() != k {
            return Err(ShiftError::LengthMismatch {
                expected: k,
                got: probs.len(),
            });
        }
        for (i, &p) in probs.iter().enumerate() {
            coeff[i] = checked_prob(p, i, lenient)?.exp();
        }
    }

    let v_caches: Vec<SetCache> = pairs
        .iter()
        .map(|(v, _)| embed_with_cache(params, v))
        .collect::<Result<_>>()?;
    let w_caches: Vec<SetCache> = pairs
        .iter()
        .map(|(_, w)| embed_with_cache(params, w))
        .collect::<Result<_>>()?;

    let mut loss = 0.0;
    let inv_k = 1.0 / k as f64;
    // ds[i][j] = dL/d score_ij
    let mut ds = vec![vec![0.0; k]; k];
    for i in 0..k {
        let row: Vec<f64> = (0..k)
            .map(|j| crate::core::dot(&v_caches[i].embed, &w_caches[j].embed))
            .collect();
        let lse = log_sum_exp(&row);
        loss += coeff[i] * (lse - row[i]) * inv_k;
        for j in 0..k {
            let soft = (row[j] - lse).exp();
            ds[i][j] = coeff[i] * inv_k * (soft - if i == j { 1.0 } else { 0.0 });
        }
    }

    let e = params.embed_dim();
    let mut grad = ScorerGrad::zeros(params);
    for i in 0..k {
        // dL/d embed(V_i) = sum_j ds_ij * embed(W_j)
        let mut up = vec![0.0; e];
        for j in 0..k {
            for (u, z) in up.iter_mut().zip(&w_caches[j].embed) {
                *u += ds[i][j] * z;
            }
        }
        backprop_set(params, &v_caches[i], &up, &mut grad);
    }
    for j in 0..k {
        // dL/d embed(W_j) = sum_i ds_ij * embed(V_i)
        let mut up = vec![0.0; e];
        for i in 0..k {
            for (u, v) in up.iter_mut().zip(&v_caches[i].embed) {
                *u += ds[i][j] * v;
            }
        }
        backprop_set(params, &w_caches[j], &up, &mut grad);
    }
    Ok((loss, grad))
}

/// Optional loss weighting for the trainer: a per-item test-membership
/// probability source plus the aggregation strategy.
pub struct MatchWeighting<'a> {
    pub strategy: IwStrategy,
    pub item_prob: &'a dyn Fn(&[f64]) -> Result<f64>,
    pub lenient: bool,
}

/// Train the set scorer with seeded mini-batch SGD. Each epoch re-splits
/// every outfit into a (query, answer) pair; batches of pairs are grouped
/// into K-tuples and each tuple contributes its (optionally weighted)
/// K-pair-set loss. Deterministic given the config seed; supplying a
/// weighting whose probabilities are all zero reproduces the unweighted
/// parameter trajectory exactly.
pub fn train_matcher(
    outfits: &[Outfit],
    k: usize,
    gd: &GdConfig,
    weighting: Option<&MatchWeighting<'_>>,
) -> Result<SetScorerParams> {
    if outfits.is_empty() {
        return Err(ShiftError::EmptyDataset);
    }
    if k < 2 {
        return Err(ShiftError::InvalidParam {
            name: "k",
            reason: "tuple size must be at least 2".into(),
        });
    }
    gd.validate()?;
    let d = outfits[0].dim();
    for o in outfits {
        if o.dim() != d {
            return Err(ShiftError::DimMismatch {
                expected: d,
                got: o.dim(),
            });
        }
    }

    let mut params = SetScorerParams::init(
        d,
        DEFAULT_EMBED_DIM,
        crate::seeding::derive_seed(gd.seed, STREAM_MATCH, 0),
    )?;
    let mut rng = rng_for(gd.seed, STREAM_MATCH, 1);

    for epoch in 0..gd.epochs {
        let mut pairs = Vec::with_capacity(outfits.len());
        for o in outfits {
            let (v, w) = split_outfit(o, &mut rng)?;
            let prob = match weighting {
                Some(mw) => {
                    let mut item_probs = Vec::with_capacity(v.len() + w.len());
                    for x in v.items().chain(w.items()) {
                        item_probs.push((mw.item_prob)(x)?);
                    }
                    pair_test_probability(&item_probs, mw.strategy)?
                }
                None => 0.0,
            };
            pairs.push((v, w, prob));
        }
        pairs.shuffle(&mut rng);

        let lenient = weighting.map_or(false, |mw| mw.lenient);
        for chunk in pairs.chunks(gd.batch_size) {
            let mut step_grad = ScorerGrad::zeros(&params);
            let mut tuples = 0usize;
            for tuple in chunk.chunks(k) {
                if tuple.len() < 2 {
                    continue;
                }
                let tuple_pairs: Vec<(ItemSet, ItemSet)> = tuple
                    .iter()
                    .map(|(v, w, _)| (v.clone(), w.clone()))
                    .collect();
                let probs: Vec<f64> = tuple.iter().map(|(_, _, p)| *p).collect();
                let (_, grad) =
                    kpair_loss_and_param_grad(&params, &tuple_pairs, Some(&probs), lenient)?;
                step_grad.add_scaled(&grad, 1.0);
                tuples += 1;
            }
            if tuples == 0 {
                continue;
            }
            let scale = gd.learning_rate / tuples as f64;
            for (p, g) in params.proj.iter_mut().zip(&step_grad.proj) {
                *p -= scale * g;
            }
            for (b, g) in params.bias.iter_mut().zip(&step_grad.bias) {
                *b -= scale * g;
            }
        }
        if params.proj.iter().chain(&params.bias).any(|v| !v.is_finite()) {
            return Err(ShiftError::NonFiniteLoss { epoch });
        }
    }
    Ok(params)
}

/// Fraction of tasks whose correct candidate attains the strictly highest
/// score; ties are broken toward the lowest index, so a tied correct
/// candidate only counts when it is the first index attaining the max.
pub fn evaluate_fitnb(params: &SetScorerParams, tasks: &[MatchingTask]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(ShiftError::EmptyInput);
    }
    let mut hits = 0usize;
    for task in tasks {
        let q = embed_set(params, &task.query)?;
        let mut best_idx = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (j, cand) in task.candidates.iter().enumerate() {
            let s = crate::core::dot(&q, &embed_set(params, cand)?);
            if s > best {
                best = s;
                best_idx = j;
            }
        }
        if best_idx == task.correct {
            hits += 1;
        }
    }
    Ok(hits as f64 / tasks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_items(n: usize, d: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| r.gen_range(-1.5..1.5)).collect())
            .collect()
    }

    fn random_outfits(count: usize, d: usize, seed: u64) -> Vec<Outfit> {
        let mut r = rng(seed);
        (0..count)
            .map(|_| {
                let n = r.gen_range(4..8);
                let rows = random_items(n, d, &mut r);
                Outfit::new(FeatureMatrix::from_rows(&rows).unwrap(), 2013).unwrap()
            })
            .collect()
    }

    #[test]
    fn embed_singleton_and_duplicate() {
        // identity-ish params: e = d = 2
        let p = SetScorerParams::new(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2).unwrap();
        let single = ItemSet::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let e1 = embed_set(&p, &single).unwrap();
        assert!((e1[0] - 0.3f64.tanh()).abs() < 1e-15);
        assert!((e1[1] - (-0.7f64).tanh()).abs() < 1e-15);
        let dup = ItemSet::from_rows(&[vec![0.3, -0.7], vec![0.3, -0.7]]).unwrap();
        let e2 = embed_set(&p, &dup).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn embed_permutation_bit_exact() {
        let mut r = rng(1);
        for _ in 0..20 {
            let d = r.gen_range(1..4);
            let e = r.gen_range(1..6);
            let p = SetScorerParams::init(d, e, r.gen()).unwrap();
            let n = r.gen_range(1..7);
            let rows = random_items(n, d, &mut r);
            let set = ItemSet::from_rows(&rows).unwrap();
            let base = embed_set(&p, &set).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            for _ in 0..5 {
                perm.shuffle(&mut r);
                let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
                let set_p = ItemSet::from_rows(&shuffled).unwrap();
                let e_p = embed_set(&p, &set_p).unwrap();
                assert_eq!(base, e_p, "permutation changed the embedding bits");
            }
        }
    }

    #[test]
    fn match_score_symmetric_and_hand_value() {
        let p = SetScorerParams::new(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2).unwrap();
        let v = ItemSet::from_rows(&[vec![0.5, 0.0], vec![-0.5, 1.0]]).unwrap();
        let w = ItemSet::from_rows(&[vec![1.0, 1.0]]).unwrap();
        // embed(v) = mean(tanh items) componentwise; embed(w) = tanh(1,1)
        let ev = [
            (0.5f64.tanh() + (-0.5f64).tanh()) / 2.0,
            (0.0f64.tanh() + 1.0f64.tanh()) / 2.0,
        ];
        let ew = [1.0f64.tanh(), 1.0f64.tanh()];
        let expect = ev[0] * ew[0] + ev[1] * ew[1];
        let got = match_score(&p, &v, &w).unwrap();
        assert!((got - expect).abs() < 1e-12);
        let rev = match_score(&p, &w, &v).unwrap();
        assert!((got - rev).abs() < 1e-15);
        // self match = squared norm >= 0
        let selfm = match_score(&p, &v, &v).unwrap();
        assert!(selfm >= 0.0);
        assert!((selfm - (ev[0] * ev[0] + ev[1] * ev[1])).abs() < 1e-12);
    }

    #[test]
    fn kpair_loss_known_values() {
        // K = 1
        assert_eq!(kpair_loss(&[vec![3.7]]).unwrap(), 0.0);
        // K = 4 all equal
        let l = kpair_loss(&vec![vec![1.0; 4]; 4]).unwrap();
        assert!((l - 4.0f64.ln()).abs() < 1e-12);
        // K = 2, [[2,0],[0,2]]
        let l = kpair_loss(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.126_928_011_042_972_63).abs() < 1e-12);
        assert!(kpair_loss(&[]).is_err());
        assert!(kpair_loss(&[vec![1.0, f64::NAN], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn kpair_loss_matches_double_loop_oracle() {
        let mut r = rng(2);
        for _ in 0..30 {
            let k = r.gen_range(1..7);
            let scores: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..k).map(|_| r.gen_range(-3.0..3.0)).collect())
                .collect();
            let fast = kpair_loss(&scores).unwrap();
            // naive: -(1/K) sum_i log(exp(s_ii)/sum_k exp(s_ik))
            let mut slow = 0.0;
            for i in 0..k {
                let denom: f64 = (0..k).map(|j| scores[i][j].exp()).sum();
                slow -= (scores[i][i].exp() / denom).ln();
            }
            slow /= k as f64;
            assert!((fast - slow).abs() < 1e-10);
            assert!(fast >= 0.0);

            // row-shift invariance
            let mut shifted = scores.clone();
            for row in &mut shifted {
                for v in row.iter_mut() {
                    *v += 2.5;
                }
            }
            assert!((kpair_loss(&shifted).unwrap() - fast).abs() < 1e-10);
        }
    }

    #[test]
    fn weighted_kpair_known_values() {
        let scores = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        // all p = 0 -> plain loss
        let plain = kpair_loss(&scores).unwrap();
        let w0 = weighted_kpair_loss(&scores, &[0.0, 0.0], false).unwrap();
        assert_eq!(plain, w0);
        // all p = 1 -> e * plain
        let w1 = weighted_kpair_loss(&scores, &[1.0, 1.0], false).unwrap();
        assert!((w1 - std::f64::consts::E * plain).abs() < 1e-12);
        // p = (0,1), equal scores -> (1+e)/2 * ln 2
        let wm = weighted_kpair_loss(&scores, &[0.0, 1.0], false).unwrap();
        let expect = (1.0 + std::f64::consts::E) / 2.0 * 2.0f64.ln();
        assert!((wm - expect).abs() < 1e-12);
        assert!((wm - 1.288_658_282_961_832_7).abs() < 1e-12);
    }

    #[test]
    fn weighted_kpair_strict_vs_lenient() {
        let scores = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let err = weighted_kpair_loss(&scores, &[0.5, 1.7], false).unwrap_err();
        assert!(matches!(err, ShiftError::ProbOutOfRange { index: 1, .. }));
        // lenient clips 1.7 -> 1.0
        let lenient = weighted_kpair_loss(&scores, &[0.5, 1.7], true).unwrap();
        let clipped = weighted_kpair_loss(&scores, &[0.5, 1.0], false).unwrap();
        assert_eq!(lenient, clipped);
    }

    #[test]
    fn weighted_kpair_monotone_in_probs() {
        let mut r = rng(3);
        for _ in 0..20 {
            let k = r.gen_range(2..6);
            let scores: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..k).map(|_| r.gen_range(-2.0..2.0)).collect())
                .collect();
            let probs: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..0.9)).collect();
            let base = weighted_kpair_loss(&scores, &probs, false).unwrap();
            for i in 0..k {
                let mut bumped = probs.clone();
                bumped[i] += 0.1;
                let up = weighted_kpair_loss(&scores, &bumped, false).unwrap();
                assert!(up >= base - 1e-12, "raising p_{i} lowered the loss");
            }
        }
    }

    #[test]
    fn pair_probability_aggregation() {
        assert_eq!(
            pair_test_probability(&[0.7], IwStrategy::MaxIw).unwrap(),
            0.7
        );
        assert_eq!(
            pair_test_probability(&[0.7], IwStrategy::MeanIw).unwrap(),
            0.7
        );
        assert_eq!(
            pair_test_probability(&[0.2, 0.8], IwStrategy::MaxIw).unwrap(),
            0.8
        );
        assert_eq!(
            pair_test_probability(&[0.2, 0.8], IwStrategy::MeanIw).unwrap(),
            0.5
        );
        assert!(pair_test_probability(&[], IwStrategy::MaxIw).is_err());
        // mean <= max always
        let mut r = rng(4);
        for _ in 0..50 {
            let n = r.gen_range(1..10);
            let v: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
            let mx = pair_test_probability(&v, IwStrategy::MaxIw).unwrap();
            let mn = pair_test_probability(&v, IwStrategy::MeanIw).unwrap();
            assert!(mn <= mx + 1e-15);
        }
    }

    #[test]
    fn split_outfit_properties() {
        let mut r = rng(5);
        let items = FeatureMatrix::from_rows(&random_items(4, 2, &mut r)).unwrap();
        let o = Outfit::new(items, 2015).unwrap();
        let mut seen_sizes = std::collections::HashSet::new();
        for _ in 0..200 {
            let (v, w) = split_outfit(&o, &mut r).unwrap();
            assert_eq!(v.len() + w.len(), 4);
            assert!(v.len() >= 1 && w.len() >= 1);
            seen_sizes.insert(v.len());
            // disjoint cover: multiset of rows equals the outfit's rows
            let mut all: Vec<Vec<f64>> = v
                .items()
                .chain(w.items())
                .map(|s| s.to_vec())
                .collect();
            all.sort_by(|a, b| cmp_items(a, b));
            let mut orig: Vec<Vec<f64>> = o.items().rows().map(|s| s.to_vec()).collect();
            orig.sort_by(|a, b| cmp_items(a, b));
            assert_eq!(all, orig);
        }
        assert_eq!(seen_sizes, [1usize, 2, 3].into_iter().collect());

        // two-item outfit always splits (1,1)
        let two = Outfit::new(
            FeatureMatrix::from_rows(&random_items(2, 2, &mut r)).unwrap(),
            2015,
        )
        .unwrap();
        for _ in 0..20 {
            let (v, w) = split_outfit(&two, &mut r).unwrap();
            assert_eq!((v.len(), w.len()), (1, 1));
        }

        let one = Outfit::new(
            FeatureMatrix::from_rows(&random_items(1, 2, &mut r)).unwrap(),
            2015,
        )
        .unwrap();
        assert!(matches!(
            split_outfit(&one, &mut r),
            Err(ShiftError::OutfitTooSmall { min: 2, got: 1 })
        ));

        // determinism under a fixed seed
        let mut r1 = rng(77);
        let mut r2 = rng(77);
        assert_eq!(split_outfit(&o, &mut r1).unwrap(), split_outfit(&o, &mut r2).unwrap());
    }

    #[test]
    fn fitnb_task_construction() {
        let outfits = random_outfits(30, 3, 6);
        let mut r = rng(7);
        let tasks = build_fitnb_tasks(&outfits, 4, &mut r).unwrap();
        assert_eq!(tasks.len(), 30);
        for t in &tasks {
            assert_eq!(t.k(), 4);
            assert!(t.correct < 4);
        }
        // correct-position counts roughly uniform: chi-square over many tasks
        let many = random_outfits(400, 2, 8);
        let tasks = build_fitnb_tasks(&many, 4, &mut r).unwrap();
        let mut counts = [0usize; 4];
        for t in &tasks {
            counts[t.correct] += 1;
        }
        let expected = tasks.len() as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 3 dof, p > 0.01 -> chi2 below 11.34
        assert!(chi2 < 11.34, "chi2 {chi2}, counts {counts:?}");

        assert!(matches!(
            build_fitnb_tasks(&random_outfits(3, 2, 9), 4, &mut r),
            Err(ShiftError::TooFewOutfits { min: 4, got: 3 })
        ));
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let mut r = rng(10);
        for trial in 0..25 {
            let d = r.gen_range(1..3);
            let e = r.gen_range(1..4);
            let p = SetScorerParams::init(d, e, r.gen()).unwrap();
            let k = r.gen_range(2..4);
            let pairs: Vec<(ItemSet, ItemSet)> = (0..k)
                .map(|_| {
                    let nv = r.gen_range(1..4);
                    let nw = r.gen_range(1..4);
                    (
                        ItemSet::from_rows(&random_items(nv, d, &mut r)).unwrap(),
                        ItemSet::from_rows(&random_items(nw, d, &mut r)).unwrap(),
                    )
                })
                .collect();
            let weighted = trial % 2 == 1;
            let probs: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..1.0)).collect();
            let probs_opt = if weighted { Some(probs.as_slice()) } else { None };

            let (_, grad) = kpair_loss_and_param_grad(&p, &pairs, probs_opt, false).unwrap();

            let eps = 1e-6;
            let loss_at = |proj: &[f64], bias: &[f64]| {
                let pp = SetScorerParams::new(proj.to_vec(), bias.to_vec(), d).unwrap();
                kpair_loss_and_param_grad(&pp, &pairs, probs_opt, false)
                    .unwrap()
                    .0
            };
            for idx in 0..p.proj().len() {
                let mut plus = p.proj().to_vec();
                plus[idx] += eps;
                let mut minus = p.proj().to_vec();
                minus[idx] -= eps;
                let fd =
                    (loss_at(&plus, p.bias()) - loss_at(&minus, p.bias())) / (2.0 * eps);
                let a = grad.proj[idx];
                let scale = a.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (a - fd).abs() / scale < 1e-4,
                    "trial {trial} proj[{idx}]: {a} vs {fd}"
                );
            }
            for idx in 0..p.bias().len() {
                let mut plus = p.bias().to_vec();
                plus[idx] += eps;
                let mut minus = p.bias().to_vec();
                minus[idx] -= eps;
                let fd =
                    (loss_at(p.proj(), &plus) - loss_at(p.proj(), &minus)) / (2.0 * eps);
                let a = grad.bias[idx];
                let scale = a.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (a - fd).abs() / scale < 1e-4,
                    "trial {trial} bias[{idx}]: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        // learnable structure: two latent clusters; halves of the same
        // outfit share a cluster, negatives usually do not
        let make_corpus = |seed: u64| -> Vec<Outfit> {
            let mut r = rng(seed);
            (0..48)
                .map(|i| {
                    let center = if i % 2 == 0 { 1.2 } else { -1.2 };
                    let rows: Vec<Vec<f64>> = (0..5)
                        .map(|_| {
                            (0..3)
                                .map(|_| {
                                    let z: f64 = r.sample(StandardNormal);
                                    center + 0.4 * z
                                })
                                .collect()
                        })
                        .collect();
                    Outfit::new(FeatureMatrix::from_rows(&rows).unwrap(), 2013).unwrap()
                })
                .collect()
        };
        let corpus_loss = |params: &SetScorerParams, outfits: &[Outfit], seed: u64| {
            let mut r = rng(seed);
            let pairs: Vec<(ItemSet, ItemSet)> = outfits
                .iter()
                .map(|o| split_outfit(o, &mut r).unwrap())
                .collect();
            let mut total = 0.0;
            let mut tuples = 0;
            for tuple in pairs.chunks(4) {
                if tuple.len() < 2 {
                    continue;
                }
                total += kpair_loss_and_param_grad(params, tuple, None, false)
                    .unwrap()
                    .0;
                tuples += 1;
            }
            total / tuples as f64
        };

        for seed in 0..5 {
            let outfits = make_corpus(seed);
            let gd = GdConfig {
                learning_rate: 0.05,
                epochs: 32,
                batch_size: 32,
                seed,
            };
            let init = SetScorerParams::init(
                3,
                DEFAULT_EMBED_DIM,
                crate::seeding::derive_seed(seed, STREAM_MATCH, 0),
            )
            .unwrap();
            let trained = train_matcher(&outfits, 4, &gd, None).unwrap();
            let before = corpus_loss(&init, &outfits, 1000 + seed);
            let after = corpus_loss(&trained, &outfits, 1000 + seed);
            assert!(
                after <= before,
                "seed {seed}: loss rose from {before} to {after}"
            );
        }

        let outfits = make_corpus(0);
        let gd = GdConfig {
            learning_rate: 0.05,
            epochs: 8,
            batch_size: 32,
            seed: 5,
        };
        let a = train_matcher(&outfits, 4, &gd, None).unwrap();
        let b = train_matcher(&outfits, 4, &gd, None).unwrap();
        assert_eq!(a, b);

        // all-zero weighting probabilities reproduce the unweighted run
        let zero_prob = |_: &[f64]| -> Result<f64> { Ok(0.0) };
        let mw = MatchWeighting {
            strategy: IwStrategy::MeanIw,
            item_prob: &zero_prob,
            lenient: false,
        };
        let c = train_matcher(&outfits, 4, &gd, Some(&mw)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn evaluation_chance_level_and_oracle() {
        // random params, random tasks: accuracy ~ 1/K
        let outfits = random_outfits(600, 3, 11);
        let mut r = rng(12);
        let tasks = build_fitnb_tasks(&outfits, 4, &mut r).unwrap();
        let params = SetScorerParams::init(3, 8, 13).unwrap();
        let acc = evaluate_fitnb(&params, &tasks).unwrap();
        assert!((acc - 0.25).abs() <= 0.05, "accuracy {acc}");

        let outfits8 = random_outfits(600, 3, 14);
        let tasks8 = build_fitnb_tasks(&outfits8, 8, &mut r).unwrap();
        let acc8 = evaluate_fitnb(&params, &tasks8).unwrap();
        assert!((acc8 - 0.125).abs() <= 0.04, "accuracy {acc8}");

        // oracle construction: negatives are exact negations of the query,
        // correct candidate is the query itself; with zero bias the scorer
        // is odd, so the correct pair scores +|u|^2 and negatives -|u|^2
        let p = SetScorerParams::new(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2).unwrap();
        let mut oracle_tasks = Vec::new();
        for i in 0..20 {
            let rows = random_items(3, 2, &mut r);
            let q = ItemSet::from_rows(&rows).unwrap();
            let neg_rows: Vec<Vec<f64>> =
                rows.iter().map(|x| x.iter().map(|v| -v).collect()).collect();
            let neg = ItemSet::from_rows(&neg_rows).unwrap();
            let correct = i % 4;
            let mut cands = vec![neg.clone(), neg.clone(), neg];
            cands.insert(correct, q.clone());
            oracle_tasks.push(MatchingTask::new(q, cands, correct).unwrap());
        }
        assert_eq!(evaluate_fitnb(&p, &oracle_tasks).unwrap(), 1.0);
    }

    #[test]
    fn evaluation_tie_breaks_to_lowest_index() {
        let p = SetScorerParams::new(vec![1.0], vec![0.0], 1).unwrap();
        let q = ItemSet::from_rows(&[vec![1.0]]).unwrap();
        let same = ItemSet::from_rows(&[vec![0.5]]).unwrap();
        // candidates 0 and 1 are identical -> tie; correct=1 must NOT count
        let t_loses = MatchingTask::new(
            q.clone(),
            vec![same.clone(), same.clone()],
            1,
        )
        .unwrap();
        assert_eq!(evaluate_fitnb(&p, &[t_loses]).unwrap(), 0.0);
        // same tie with correct=0 counts
        let t_wins = MatchingTask::new(q, vec![same.clone(), same], 0).unwrap();
        assert_eq!(evaluate_fitnb(&p, &[t_wins]).unwrap(), 1.0);
    }

    #[test]
    fn scorer_params_hypothesis_round_trip() {
        let p = SetScorerParams::init(3, 4, 99).unwrap();
        let h = p.to_hypothesis();
        assert_eq!(h.kind(), HypothesisKind::SetScorer);
        assert_eq!(h.n_blocks(), 4);
        let back = SetScorerParams::from_hypothesis(&h).unwrap();
        assert_eq!(p, back);
    }
}
