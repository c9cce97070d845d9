//! Negative-selection strategies.
//!
//! Each strategy picks a subset of the batch's O-labeled candidate spans for
//! the training objective: all of them, a seeded uniform sample, a sample
//! weighted by the model's own O confidence, or the top/bottom slice of the
//! candidates ranked by average cosine similarity to the batch's positive
//! spans. Rate-based strategies select exactly `min(ceil(N * r), N)`
//! candidates.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::SpanRep;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Every negative span trains (the plain span-classifier baseline).
    All,
    /// Seeded uniform sample without replacement.
    Uniform,
    /// Sample without replacement, weighted by the model's P(O | span).
    Weighted,
    /// Highest average-cosine-similarity negatives against the batch positives.
    TopNeg,
    /// Lowest average-cosine-similarity negatives.
    BottomNeg,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::All => "all",
            Strategy::Uniform => "uniform",
            Strategy::Weighted => "weighted",
            Strategy::TopNeg => "topneg",
            Strategy::BottomNeg => "bottomneg",
        }
    }

    pub const ALL_NAMES: [&'static str; 5] = ["all", "uniform", "weighted", "topneg", "bottomneg"];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Strategy::All),
            "uniform" => Ok(Strategy::Uniform),
            "weighted" => Ok(Strategy::Weighted),
            "topneg" => Ok(Strategy::TopNeg),
            "bottomneg" => Ok(Strategy::BottomNeg),
            other => Err(SamplingError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    /// Fraction of negatives retained by rate-based strategies, in (0, 1].
    pub rate: f64,
    /// Seed for the stochastic strategies and the zero-positive fallback.
    pub seed: u64,
}

impl SamplingConfig {
    pub fn new(strategy: Strategy, rate: f64, seed: u64) -> Self {
        SamplingConfig {
            strategy,
            rate,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.strategy != Strategy::All && !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(SamplingError::BadRate(self.rate));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("similarity requires at least one positive span in the batch")]
    NoPositives,
    #[error("zero-norm span representation cannot be normalized")]
    ZeroNorm,
    #[error("sampling rate must lie in (0, 1], got {0}")]
    BadRate(f64),
    #[error("weights must lie in [0, 1], got {0}")]
    BadWeight(f64),
    #[error("weights length {got} does not match negative count {expected}")]
    WeightLength { got: usize, expected: usize },
    #[error("unknown strategy `{0}` (expected one of: all, uniform, weighted, topneg, bottomneg)")]
    UnknownStrategy(String),
}

/// The chosen negatives of one batch. `selected` holds indices into the
/// candidate slice: rank order for the similarity strategies, span order for
/// the stochastic ones. `scores` aligns with the candidate slice (similarity
/// values, or sampling weights for the weighted strategy) and is empty when
/// the strategy ranks nothing.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub selected: Vec<usize>,
    pub scores: Vec<f64>,
    pub strategy: Strategy,
    /// Set when the strategy had to fall back to a uniform draw (no positive
    /// spans in the batch, or all weights zero).
    pub fallback_uniform: bool,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

/// `min(ceil(n * rate), n)`, computed with a small epsilon guard so that
/// products like `200 * 0.05` that land a hair above an integer do not get
/// ceiled one too high.
pub fn rate_count(n: usize, rate: f64) -> usize {
    let k = (n as f64 * rate - 1e-9).ceil();
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(n)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> Result<Vec<f64>, SamplingError> {
    let n = norm(v);
    if n == 0.0 {
        return Err(SamplingError::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Mean of the normalized positive representations. Dotting a normalized
/// negative with this vector equals its average cosine against every
/// positive, which is what makes the batched scoring a single pass.
fn positive_centroid(positives: &[SpanRep]) -> Result<Vec<f64>, SamplingError> {
    if positives.is_empty() {
        return Err(SamplingError::NoPositives);
    }
    let dim = positives[0].vec.len();
    let mut centroid = vec![0.0; dim];
    for pos in positives {
        let u = unit(&pos.vec)?;
        for (c, x) in centroid.iter_mut().zip(&u) {
            *c += x;
        }
    }
    let m = positives.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= m);
    Ok(centroid)
}

/// Average cosine similarity of one negative representation against a set of
/// positive representations; lies in `[-1, 1]`.
pub fn similarity_phi(neg: &[f64], positives: &[Vec<f64>]) -> Result<f64, SamplingError> {
    if positives.is_empty() {
        return Err(SamplingError::NoPositives);
    }
    let neg_unit = unit(neg)?;
    let mut sum = 0.0;
    let m = positives.len() as f64;
    for pos in positives {
        let pos_unit = unit(pos)?;
        sum += neg_unit.iter().zip(&pos_unit).map(|(a, b)| a * b).sum::<f64>() / m;
    }
    Ok(sum)
}

/// Batched similarity scores for every negative against the batch positives.
pub fn phi_scores(negatives: &[SpanRep], positives: &[SpanRep]) -> Result<Vec<f64>, SamplingError> {
    let centroid = positive_centroid(positives)?;
    negatives
        .iter()
        .map(|neg| {
            let u = unit(&neg.vec)?;
            Ok(u.iter().zip(&centroid).map(|(a, b)| a * b).sum())
        })
        .collect()
}

fn ranked_selection(
    negatives: &[SpanRep],
    positives: &[SpanRep],
    k: usize,
    descending: bool,
    strategy: Strategy,
    rng: &mut ChaCha8Rng,
) -> Result<SelectionResult, SamplingError> {
    let scores = match phi_scores(negatives, positives) {
        Ok(scores) => scores,
        Err(SamplingError::NoPositives) => {
            // Zero-positive batch: uniform fallback keeps small batches training.
            let mut result = uniform_indices(negatives.len(), k, rng);
            result.strategy = strategy;
            result.fallback_uniform = true;
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    let mut order: Vec<usize> = (0..negatives.len()).collect();
    order.sort_by(|&a, &b| {
        let primary = if descending {
            scores[b].total_cmp(&scores[a])
        } else {
            scores[a].total_cmp(&scores[b])
        };
        primary.then_with(|| negatives[a].key.cmp(&negatives[b].key))
    });
    order.truncate(k);
    Ok(SelectionResult {
        selected: order,
        scores,
        strategy,
        fallback_uniform: false,
    })
}

fn uniform_indices(n: usize, k: usize, rng: &mut ChaCha8Rng) -> SelectionResult {
    let mut selected: Vec<usize> = rand::seq::index::sample(rng, n, k.min(n)).into_vec();
    selected.sort_unstable();
    SelectionResult {
        selected,
        scores: Vec::new(),
        strategy: Strategy::Uniform,
        fallback_uniform: false,
    }
}

/// Top `min(ceil(N * r), N)` negatives by similarity, descending, ties broken
/// by `(sentence, start, end)`. A batch without positives falls back to a
/// seeded uniform draw of the same size.
pub fn select_top_neg(
    negatives: &[SpanRep],
    positives: &[SpanRep],
    config: &SamplingConfig,
) -> Result<SelectionResult, SamplingError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    select_top_neg_with(negatives, positives, config.rate, &mut rng)
}

pub fn select_top_neg_with(
    negatives: &[SpanRep],
    positives: &[SpanRep],
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SelectionResult, SamplingError> {
    let k = rate_count(negatives.len(), rate);
    ranked_selection(negatives, positives, k, true, Strategy::TopNeg, rng)
}

/// Bottom `ceil(N * fraction)` negatives by similarity, ascending.
pub fn select_bottom(
    negatives: &[SpanRep],
    positives: &[SpanRep],
    fraction: f64,
    seed: u64,
) -> Result<SelectionResult, SamplingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    select_bottom_with(negatives, positives, fraction, &mut rng)
}

pub fn select_bottom_with(
    negatives: &[SpanRep],
    positives: &[SpanRep],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SelectionResult, SamplingError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SamplingError::BadRate(fraction));
    }
    let k = rate_count(negatives.len(), fraction);
    ranked_selection(negatives, positives, k, false, Strategy::BottomNeg, rng)
}

/// Seeded uniform sample of `min(ceil(N * r), N)` negatives without
/// replacement.
pub fn select_uniform(
    negatives: &[SpanRep],
    config: &SamplingConfig,
) -> Result<SelectionResult, SamplingError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(select_uniform_with(negatives.len(), config.rate, &mut rng))
}

pub fn select_uniform_with(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> SelectionResult {
    let k = rate_count(n, rate);
    uniform_indices(n, k, rng)
}

/// Weighted sample without replacement: inclusion weight proportional to the
/// model's P(O | span), renormalized over the remaining candidates after each
/// draw. All-zero weights fall back to a uniform draw with the warning flag
/// set.
pub fn select_weighted(
    negatives: &[SpanRep],
    o_probs: &[f64],
    config: &SamplingConfig,
) -> Result<SelectionResult, SamplingError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    select_weighted_with(negatives.len(), o_probs, config.rate, &mut rng)
}

pub fn select_weighted_with(
    n: usize,
    o_probs: &[f64],
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SelectionResult, SamplingError> {
    if o_probs.len() != n {
        return Err(SamplingError::WeightLength {
            got: o_probs.len(),
            expected: n,
        });
    }
    if let Some(&bad) = o_probs.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(SamplingError::BadWeight(bad));
    }
    let k = rate_count(n, rate);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut selected = Vec::with_capacity(k);
    let mut fallback = false;
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&i| o_probs[i]).sum();
        let pick_pos = if total <= 0.0 {
            fallback = true;
            rng.gen_range(0..remaining.len())
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pos = remaining.len() - 1;
            for (p, &i) in remaining.iter().enumerate() {
                u -= o_probs[i];
                if u <= 0.0 {
                    pos = p;
                    break;
                }
            }
            pos
        };
        selected.push(remaining.remove(pick_pos));
    }
    selected.sort_unstable();
    Ok(SelectionResult {
        selected,
        scores: o_probs.to_vec(),
        strategy: Strategy::Weighted,
        fallback_uniform: fallback,
    })
}

/// Every negative.
pub fn select_all(n: usize) -> SelectionResult {
    SelectionResult {
        selected: (0..n).collect(),
        scores: Vec::new(),
        strategy: Strategy::All,
        fallback_uniform: false,
    }
}

/// Strategy dispatch for one batch. `o_probs` is consulted only by the
/// weighted strategy.
pub fn select_with(
    strategy: Strategy,
    rate: f64,
    negatives: &[SpanRep],
    positives: &[SpanRep],
    o_probs: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> Result<SelectionResult, SamplingError> {
    match strategy {
        Strategy::All => Ok(select_all(negatives.len())),
        Strategy::Uniform => Ok(select_uniform_with(negatives.len(), rate, rng)),
        Strategy::Weighted => {
            let probs = o_probs.expect("weighted selection requires O probabilities");
            select_weighted_with(negatives.len(), probs, rate, rng)
        }
        Strategy::TopNeg => select_top_neg_with(negatives, positives, rate, rng),
        Strategy::BottomNeg => select_bottom_with(negatives, positives, rate, rng),
    }
}

/// One diagnostics record per batch, JSON lines format.
pub fn selection_record_json(batch: usize, n: usize, result: &SelectionResult) -> String {
    serde_json::json!({
        "batch": batch,
        "N": n,
        "k_selected": result.selected.len(),
        "strategy": result.strategy.name(),
        "phi": result.scores,
    })
    .to_string()
}
