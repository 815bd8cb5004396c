//! Deterministic synthetic tensors and the label-bias transform.
//!
//! Each prompt follows a [`PromptProfile`]. Choice logits are turned into
//! proper log-probabilities and split over 1..=`max_tokens` verbalizer tokens
//! so that the category's default aggregation recovers them exactly (up to
//! rounding), while the first token alone does not.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AggregationMode, Category, ScoreTensor, SequenceStat};

/// The choice collapsed and label-biased prompts favour.
pub const FAVOURED_CHOICE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptProfile {
    /// Puts at least 0.9 on the gold label everywhere.
    PlantedBest,
    /// Puts at least 0.99 on [`FAVOURED_CHOICE`]; the same logits for every instance.
    CollapsedOverconfident,
    /// Logits drawn uniformly from `[-noise, noise]`.
    UniformNoise,
    /// Mild preference for [`FAVOURED_CHOICE`]; its presence also makes every
    /// gold label equal [`FAVOURED_CHOICE`].
    LabelBiased,
}

impl PromptProfile {
    pub const ALL: [PromptProfile; 4] = [
        PromptProfile::PlantedBest,
        PromptProfile::CollapsedOverconfident,
        PromptProfile::UniformNoise,
        PromptProfile::LabelBiased,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptProfile::PlantedBest => "planted_best",
            PromptProfile::CollapsedOverconfident => "collapsed_overconfident",
            PromptProfile::UniformNoise => "uniform_noise",
            PromptProfile::LabelBiased => "label_biased",
        }
    }
}

impl fmt::Display for PromptProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptProfile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        PromptProfile::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                format!(
                    "unknown profile `{s}` (expected one of: {})",
                    PromptProfile::ALL.map(|p| p.as_str()).join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_instances: usize,
    pub num_choices: usize,
    pub seed: u64,
    /// One profile per prompt.
    pub profiles: Vec<PromptProfile>,
    pub noise: f64,
    pub category: Category,
    pub max_tokens: usize,
}

impl SynthSpec {
    pub fn num_prompts(&self) -> usize {
        self.profiles.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSynthSpec(m));
        if self.num_choices < 2 {
            return bad(format!("need at least 2 choices, got {}", self.num_choices));
        }
        if self.profiles.is_empty() || self.num_instances == 0 {
            return bad("need at least one prompt and one instance".into());
        }
        let planted = self.profiles.iter().filter(|p| **p == PromptProfile::PlantedBest).count();
        if planted > 1 {
            return bad(format!("at most one planted_best prompt allowed, got {planted}"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be >= 1".into());
        }
        Ok(())
    }
}

fn symmetric(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Spreads `target` over `count` tokens so that `agg` of the tokens gives `target` back.
fn split_tokens(rng: &mut ChaCha8Rng, target: f64, count: usize, agg: AggregationMode) -> Vec<f64> {
    if count == 1 {
        return vec![target];
    }
    let weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let scale = match agg {
        AggregationMode::MeanLogprob => count as f64,
        _ => 1.0,
    };
    weights.iter().map(|w| target * scale * w / total).collect()
}

/// Generates a tensor that is a pure function of `spec`.
pub fn synth_tensor(spec: &SynthSpec) -> Result<ScoreTensor> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (nt, nx, ny) = (spec.num_prompts(), spec.num_instances, spec.num_choices);
    let noise = spec.noise;
    let agg = spec.category.default_aggregation();
    let biased = spec.profiles.contains(&PromptProfile::LabelBiased);

    let gold_labels: Vec<usize> = (0..nx)
        .map(|_| if biased { FAVOURED_CHOICE } else { rng.random_range(0..ny) })
        .collect();

    let others = (ny - 1) as f64;
    // margins that survive worst-case noise on both sides
    let planted_margin = (9.0 * others).ln() + 2.0 * noise + 0.5;
    let collapsed_margin = (99.0 * others).ln() + 2.0 * noise + 0.5;
    let bias_margin = 1.0 + 2.0 * noise;
    let boost = |profile: PromptProfile, y: usize, gold: Option<usize>| match profile {
        PromptProfile::PlantedBest if Some(y) == gold => planted_margin,
        PromptProfile::CollapsedOverconfident if y == FAVOURED_CHOICE => collapsed_margin,
        PromptProfile::LabelBiased if y == FAVOURED_CHOICE => bias_margin,
        _ => 0.0,
    };

    let mut choice_token_logprobs = Vec::with_capacity(nt * nx * ny);
    for &profile in &spec.profiles {
        // a collapsed prompt ignores the input: one draw shared by every instance
        let shared: Vec<f64> = (0..ny)
            .map(|y| symmetric(&mut rng, noise) + boost(profile, y, None))
            .collect();
        for &gold in &gold_labels {
            let logits: Vec<f64> = if profile == PromptProfile::CollapsedOverconfident {
                shared.clone()
            } else {
                (0..ny)
                    .map(|y| symmetric(&mut rng, noise) + boost(profile, y, Some(gold)))
                    .collect()
            };
            for target in log_softmax(&logits) {
                let count = rng.random_range(1..=spec.max_tokens);
                choice_token_logprobs.push(split_tokens(&mut rng, target, count, agg));
            }
        }
    }

    let mut sequence_stats = Vec::with_capacity(nt * nx);
    for _ in 0..nt {
        let base_nll = rng.random_range(0.5..3.0);
        for _ in 0..nx {
            let token_count: u32 = rng.random_range(5..=40);
            let nll = base_nll + symmetric(&mut rng, 0.25);
            sequence_stats.push(SequenceStat { sum_logprob: -nll * f64::from(token_count - 1), token_count });
        }
    }

    let mut content_free_logits = Vec::with_capacity(nt * ny);
    let mut domain_logits = Vec::with_capacity(nt * ny);
    for &profile in &spec.profiles {
        let mut cf = vec![[0.0; 3]; ny];
        for c in 0..3 {
            let logits: Vec<f64> = (0..ny)
                .map(|y| symmetric(&mut rng, 1.0) + 0.5 * boost(profile, y, None))
                .collect();
            for (row, lp) in cf.iter_mut().zip(log_softmax(&logits)) {
                row[c] = lp;
            }
        }
        content_free_logits.extend(cf);
        let logits: Vec<f64> = (0..ny)
            .map(|y| symmetric(&mut rng, 1.0) + 0.5 * boost(profile, y, None))
            .collect();
        domain_logits.extend(log_softmax(&logits));
    }

    let tensor = ScoreTensor {
        dataset_id: format!("synth-{}", spec.seed),
        category: spec.category,
        num_prompts: nt,
        num_instances: nx,
        num_choices: ny,
        prompt_ids: (0..nt).map(|t| format!("p{t:02}")).collect(),
        gold_labels,
        choice_token_logprobs,
        sequence_stats: Some(sequence_stats),
        content_free_logits: Some(content_free_logits),
        domain_logits: Some(domain_logits),
    };
    tensor.validate()?;
    Ok(tensor)
}

/// Sets every gold label of a dynamic tensor to index 0.
pub fn relabel_bias(tensor: &ScoreTensor) -> Result<ScoreTensor> {
    if tensor.category != Category::Dynamic {
        return Err(Error::WrongCategory { expected: Category::Dynamic, found: tensor.category });
    }
    let mut out = tensor.clone();
    out.gold_labels.iter_mut().for_each(|g| *g = 0);
    Ok(out)
}
