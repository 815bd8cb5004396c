//! Score tensor and the probability primitives every selection method is built from.
//!
//! A [`ScoreTensor`] holds the raw model outputs for one (dataset, model) pair:
//! per-token log-probabilities of each answer verbalizer for every
//! (prompt, instance, choice), optional sequence statistics of the instantiated
//! prompts, optional content-free and domain logits, and gold labels.
//!
//! Choice logits are reduced to one scalar per choice with an
//! [`AggregationMode`], then softmax-normalized into an [`AnswerDistribution`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result, Section};

/// The three content-free inputs, in storage order.
pub const CONTENT_FREE_INPUTS: [&str; 3] = ["N/A", "[MASK]", ""];

/// Probabilities below this are treated as exact zeros by [`entropy`].
pub const PROB_FLOOR: f64 = 1e-300;

/// Two scores closer than this (relative to their magnitude, floored at 1) are a tie.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Balanced,
    Unbalanced,
    /// Answer choices are per-instance sentences.
    Dynamic,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Balanced, Category::Unbalanced, Category::Dynamic];

    /// Mean of verbalizer log-probs for static choices, sum for sentence choices.
    pub fn default_aggregation(self) -> AggregationMode {
        match self {
            Category::Balanced | Category::Unbalanced => AggregationMode::MeanLogprob,
            Category::Dynamic => AggregationMode::SumLogprob,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Balanced => "balanced",
            Category::Unbalanced => "unbalanced",
            Category::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "balanced" => Ok(Category::Balanced),
            "unbalanced" => Ok(Category::Unbalanced),
            "dynamic" => Ok(Category::Dynamic),
            other => Err(format!(
                "unknown category `{other}` (expected one of: balanced, unbalanced, dynamic)"
            )),
        }
    }
}

/// How a multi-token verbalizer is reduced to one logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// One-token response: only the first verbalizer token.
    FirstToken,
    MeanLogprob,
    SumLogprob,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::FirstToken => "first_token",
            AggregationMode::MeanLogprob => "mean_logprob",
            AggregationMode::SumLogprob => "sum_logprob",
        }
    }

    pub fn apply(self, token_logprobs: &[f64]) -> f64 {
        match self {
            AggregationMode::FirstToken => token_logprobs[0],
            AggregationMode::MeanLogprob => {
                token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64
            }
            AggregationMode::SumLogprob => token_logprobs.iter().sum(),
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "otr" | "first_token" => Ok(AggregationMode::FirstToken),
            "mean" | "mean_logprob" => Ok(AggregationMode::MeanLogprob),
            "sum" | "sum_logprob" => Ok(AggregationMode::SumLogprob),
            other => Err(format!("unknown aggregation `{other}` (expected one of: otr, mean, sum)")),
        }
    }
}

/// Log-likelihood summary of an instantiated prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceStat {
    /// Sum of conditional token log-probs.
    pub sum_logprob: f64,
    pub token_count: u32,
}

/// Raw model outputs for one (dataset, model) pair.
///
/// Row-major storage: choice records are indexed `(t * |X| + x) * |Y| + y`,
/// sequence stats `t * |X| + x`, content-free and domain logits `t * |Y| + y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    pub dataset_id: String,
    pub category: Category,
    pub num_prompts: usize,
    pub num_instances: usize,
    pub num_choices: usize,
    pub prompt_ids: Vec<String>,
    pub gold_labels: Vec<usize>,
    pub choice_token_logprobs: Vec<Vec<f64>>,
    pub sequence_stats: Option<Vec<SequenceStat>>,
    /// One aggregated logit per entry of [`CONTENT_FREE_INPUTS`].
    pub content_free_logits: Option<Vec<[f64; 3]>>,
    pub domain_logits: Option<Vec<f64>>,
}

impl ScoreTensor {
    /// Checks every structural invariant. Loaders and generators call this
    /// before handing a tensor out; the scoring code assumes it holds.
    pub fn validate(&self) -> Result<()> {
        let (nt, nx, ny) = (self.num_prompts, self.num_instances, self.num_choices);
        if nt == 0 || nx == 0 {
            return Err(Error::Empty(format!("tensor has {nt} prompts and {nx} instances")));
        }
        if ny < 2 {
            return Err(Error::Invariant(format!("num_choices must be >= 2, got {ny}")));
        }
        if self.prompt_ids.len() != nt {
            return Err(Error::Invariant(format!(
                "{} prompt ids for {nt} prompts",
                self.prompt_ids.len()
            )));
        }
        if self.gold_labels.len() != nx {
            return Err(Error::Invariant(format!(
                "{} gold labels for {nx} instances",
                self.gold_labels.len()
            )));
        }
        if let Some((x, &g)) = self.gold_labels.iter().enumerate().find(|(_, &g)| g >= ny) {
            return Err(Error::Invariant(format!("gold label {g} of instance {x} >= num_choices {ny}")));
        }
        if self.choice_token_logprobs.len() != nt * nx * ny {
            return Err(Error::Invariant(format!(
                "{} choice records, expected {}",
                self.choice_token_logprobs.len(),
                nt * nx * ny
            )));
        }
        for (i, tokens) in self.choice_token_logprobs.iter().enumerate() {
            let (t, x, y) = (i / (nx * ny), (i / ny) % nx, i % ny);
            if tokens.is_empty() {
                return Err(Error::Invariant(format!("empty token list at (t={t}, x={x}, y={y})")));
            }
            if tokens.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("choice record (t={t}, x={x}, y={y})")));
            }
        }
        if let Some(stats) = &self.sequence_stats {
            if stats.len() != nt * nx {
                return Err(Error::Invariant(format!(
                    "{} sequence records, expected {}",
                    stats.len(),
                    nt * nx
                )));
            }
            if let Some(i) = stats.iter().position(|s| !s.sum_logprob.is_finite()) {
                return Err(Error::NonFinite(format!("sequence record (t={}, x={})", i / nx, i % nx)));
            }
        }
        if let Some(cf) = &self.content_free_logits {
            if cf.len() != nt * ny {
                return Err(Error::Invariant(format!(
                    "{} content-free rows, expected {}",
                    cf.len(),
                    nt * ny
                )));
            }
            if let Some(i) = cf.iter().position(|row| row.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("content-free record (t={}, y={})", i / ny, i % ny)));
            }
        }
        if let Some(dom) = &self.domain_logits {
            if dom.len() != nt * ny {
                return Err(Error::Invariant(format!(
                    "{} domain records, expected {}",
                    dom.len(),
                    nt * ny
                )));
            }
            if let Some(i) = dom.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("domain record (t={}, y={})", i / ny, i % ny)));
            }
        }
        Ok(())
    }

    fn check(&self, axis: Axis, index: usize) -> Result<()> {
        let len = match axis {
            Axis::Prompt => self.num_prompts,
            Axis::Instance => self.num_instances,
            Axis::Choice => self.num_choices,
        };
        if index >= len {
            return Err(Error::IndexOutOfRange { axis, index, len });
        }
        Ok(())
    }

    pub fn choice_tokens(&self, t: usize, x: usize, y: usize) -> Result<&[f64]> {
        self.check(Axis::Prompt, t)?;
        self.check(Axis::Instance, x)?;
        self.check(Axis::Choice, y)?;
        let tokens = &self.choice_token_logprobs[(t * self.num_instances + x) * self.num_choices + y];
        if tokens.is_empty() {
            return Err(Error::Invariant(format!("empty token list at (t={t}, x={x}, y={y})")));
        }
        Ok(tokens)
    }

    pub fn aggregate_choice_logit(
        &self,
        t: usize,
        x: usize,
        y: usize,
        mode: AggregationMode,
    ) -> Result<f64> {
        Ok(mode.apply(self.choice_tokens(t, x, y)?))
    }

    /// Aggregated logits for every choice of `(t, x)`.
    pub fn choice_logits(&self, t: usize, x: usize, mode: AggregationMode) -> Result<Vec<f64>> {
        (0..self.num_choices)
            .map(|y| self.aggregate_choice_logit(t, x, y, mode))
            .collect()
    }

    /// Aggregated logits for the whole tensor, indexed `[t][x][y]`.
    pub fn logit_grid(&self, mode: AggregationMode) -> Result<ScoreGrid> {
        (0..self.num_prompts)
            .map(|t| {
                (0..self.num_instances)
                    .map(|x| self.choice_logits(t, x, mode))
                    .collect()
            })
            .collect()
    }

    /// `p(y|x,t)` for the whole tensor, indexed `[t][x]`.
    pub fn answer_distributions(&self, mode: AggregationMode) -> Result<DistGrid> {
        self.logit_grid(mode)?
            .iter()
            .map(|row| row.iter().map(|logits| normalize(logits)).collect())
            .collect()
    }

    pub fn sequence_stat(&self, t: usize, x: usize) -> Result<SequenceStat> {
        self.check(Axis::Prompt, t)?;
        self.check(Axis::Instance, x)?;
        let stats = self
            .sequence_stats
            .as_ref()
            .ok_or(Error::MissingSection(Section::SequenceStats))?;
        Ok(stats[t * self.num_instances + x])
    }

    /// Aggregated content-free logits of `(t, y)`, one per [`CONTENT_FREE_INPUTS`] entry.
    pub fn content_free(&self, t: usize, y: usize) -> Result<[f64; 3]> {
        self.check(Axis::Prompt, t)?;
        self.check(Axis::Choice, y)?;
        let cf = self
            .content_free_logits
            .as_ref()
            .ok_or(Error::MissingSection(Section::ContentFree))?;
        Ok(cf[t * self.num_choices + y])
    }

    pub fn domain_logit(&self, t: usize, y: usize) -> Result<f64> {
        self.check(Axis::Prompt, t)?;
        self.check(Axis::Choice, y)?;
        let dom = self
            .domain_logits
            .as_ref()
            .ok_or(Error::MissingSection(Section::Domain))?;
        Ok(dom[t * self.num_choices + y])
    }
}

/// Per-(t, x, y) scalars, indexed `[t][x][y]`.
pub type ScoreGrid = Vec<Vec<Vec<f64>>>;

/// Per-(t, x) distributions, indexed `[t][x]`.
pub type DistGrid = Vec<Vec<AnswerDistribution>>;

/// A probability vector over answer choices.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct AnswerDistribution(Vec<f64>);

impl AnswerDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_distribution(&probs, 1e-9)?;
        Ok(AnswerDistribution(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn entropy(&self) -> f64 {
        entropy_unchecked(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_distribution(probs: &[f64], tol: f64) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution(format!("entry {p} is negative or non-finite")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// Index of the largest value. Values within [`TIE_EPS`] of the maximum are
/// ties and resolve to the lowest index; NaN never wins.
pub fn argmax(values: &[f64]) -> usize {
    let Some(max) = values.iter().copied().filter(|v| !v.is_nan()).reduce(f64::max) else {
        return 0;
    };
    if max.is_infinite() {
        return values.iter().position(|&v| v == max).unwrap_or(0);
    }
    let threshold = max - TIE_EPS * max.abs().max(1.0);
    values.iter().position(|&v| v >= threshold).unwrap_or(0)
}

/// Softmax with max-subtraction.
pub fn normalize(logits: &[f64]) -> Result<AnswerDistribution> {
    if logits.is_empty() {
        return Err(Error::Empty("logit vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logit vector".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(AnswerDistribution(exps.into_iter().map(|e| e / total).collect()))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    check_distribution(dist, 1e-6)?;
    Ok(entropy_unchecked(dist))
}

fn entropy_unchecked(dist: &[f64]) -> f64 {
    let h: f64 = dist
        .iter()
        .filter(|&&p| p >= PROB_FLOOR)
        .map(|&p| -p * p.ln())
        .sum();
    // -0.0 and rounding below zero both collapse to 0
    h.max(0.0)
}

pub fn one_hot(dist: &AnswerDistribution) -> AnswerDistribution {
    let mut probs = vec![0.0; dist.len()];
    probs[dist.argmax()] = 1.0;
    AnswerDistribution(probs)
}

/// Instance-mean of distributions, i.e. `p(y|t)` under uniform `p(x|t)`.
pub fn marginal_distribution(dists: &[AnswerDistribution]) -> Result<AnswerDistribution> {
    let first = dists
        .first()
        .ok_or_else(|| Error::Empty("instance set for marginal".into()))?;
    let n = dists.len() as f64;
    let mut sum = vec![0.0; first.len()];
    for d in dists {
        if d.len() != sum.len() {
            return Err(Error::LengthMismatch(format!(
                "distribution of length {} in a set of length {}",
                d.len(),
                sum.len()
            )));
        }
        for (acc, p) in sum.iter_mut().zip(d.probs()) {
            *acc += p;
        }
    }
    Ok(AnswerDistribution(sum.into_iter().map(|s| s / n).collect()))
}
