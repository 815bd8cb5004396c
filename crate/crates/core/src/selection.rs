//! Prompt selection scores (PSS) and prompt selection.
//!
//! The mutual-information family decomposes into two terms per prompt `t`:
//!
//! - first term: `H(mean_x p(y|x,t))`, optionally with one-hot `p` (GE-style);
//! - second term: `-H(Y|x,t)`, either per instance (MDL-style, instance-wise
//!   selection) or averaged over instances.
//!
//! Every named method in [`NamedMethod`] except the zero-label ensembles and
//! perplexity is a configuration of those two terms.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::calibration::{apply_scenario, CalibrationMethod, CalibrationScenario};
use crate::error::{Error, Result};
use crate::tensor::{
    argmax, marginal_distribution, one_hot, AggregationMode, AnswerDistribution, Category,
    DistGrid, ScoreTensor, PROB_FLOOR,
};

/// Which verbalizer tokens feed `p(y|x,t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScope {
    FirstToken,
    /// Mean for static choices, sum for dynamic ones.
    AllTokens,
}

impl TokenScope {
    pub fn resolve(self, category: Category) -> AggregationMode {
        match self {
            TokenScope::FirstToken => AggregationMode::FirstToken,
            TokenScope::AllTokens => category.default_aggregation(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MiConfig {
    pub tokens: TokenScope,
    pub one_hot_first_term: bool,
    pub instance_wise: bool,
    pub use_first_term: bool,
    pub use_second_term: bool,
    /// Score prompts by `+mean_x H(Y|x,t)` instead of its negation.
    pub negate: bool,
}

impl MiConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.use_first_term && !self.use_second_term {
            return Err(Error::InvalidMethod("at least one of the two terms must be used".into()));
        }
        if self.instance_wise && !self.use_second_term {
            return Err(Error::InvalidMethod(
                "instance-wise selection requires the per-instance second term".into(),
            ));
        }
        if self.negate && (self.use_first_term || self.instance_wise) {
            return Err(Error::InvalidMethod(
                "negated entropy is only defined for the global second term alone".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroLabelVariant {
    /// Mean log-probability ensemble.
    Zlp,
    /// Mean probability ensemble.
    Zpm,
    /// Majority vote.
    Zmv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum MethodSpec {
    MiFamily(MiConfig),
    ZeroLabel { variant: ZeroLabelVariant },
    Perplexity,
}

impl MethodSpec {
    /// Aggregation used for `p(y|x,t)`; an explicit override wins over the method default.
    pub fn aggregation(&self, category: Category, over: Option<AggregationMode>) -> AggregationMode {
        over.unwrap_or_else(|| match self {
            MethodSpec::MiFamily(cfg) => cfg.tokens.resolve(category),
            _ => category.default_aggregation(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodSpec::MiFamily(cfg) => cfg.validate(),
            _ => Ok(()),
        }
    }
}

/// The fourteen methods with established names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NamedMethod {
    Mi,
    MiA,
    MiAg,
    MiAl,
    MiAgl,
    Ge,
    GeM,
    Le,
    Mdl,
    MdlM,
    Zlp,
    Zpm,
    Zmv,
    Ppl,
}

impl NamedMethod {
    pub const ALL: [NamedMethod; 14] = [
        NamedMethod::Mi,
        NamedMethod::MiA,
        NamedMethod::MiAg,
        NamedMethod::MiAl,
        NamedMethod::MiAgl,
        NamedMethod::Ge,
        NamedMethod::GeM,
        NamedMethod::Le,
        NamedMethod::Mdl,
        NamedMethod::MdlM,
        NamedMethod::Zlp,
        NamedMethod::Zpm,
        NamedMethod::Zmv,
        NamedMethod::Ppl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NamedMethod::Mi => "MI",
            NamedMethod::MiA => "MI_A",
            NamedMethod::MiAg => "MI_AG",
            NamedMethod::MiAl => "MI_AL",
            NamedMethod::MiAgl => "MI_AGL",
            NamedMethod::Ge => "GE",
            NamedMethod::GeM => "GE_M",
            NamedMethod::Le => "LE",
            NamedMethod::Mdl => "MDL",
            NamedMethod::MdlM => "MDL_M",
            NamedMethod::Zlp => "ZLP",
            NamedMethod::Zpm => "ZPM",
            NamedMethod::Zmv => "ZMV",
            NamedMethod::Ppl => "PPL",
        }
    }

    pub fn spec(self) -> MethodSpec {
        let mi = |tokens, one_hot, instance_wise, first, second| {
            MethodSpec::MiFamily(MiConfig {
                tokens,
                one_hot_first_term: one_hot,
                instance_wise,
                use_first_term: first,
                use_second_term: second,
                negate: false,
            })
        };
        use TokenScope::{AllTokens, FirstToken};
        match self {
            NamedMethod::Mi => mi(FirstToken, false, false, true, true),
            NamedMethod::MiA => mi(AllTokens, false, false, true, true),
            NamedMethod::MiAg => mi(AllTokens, true, false, true, true),
            NamedMethod::MiAl => mi(AllTokens, false, true, true, true),
            NamedMethod::MiAgl => mi(AllTokens, true, true, true, true),
            NamedMethod::Ge => mi(AllTokens, true, false, true, false),
            NamedMethod::GeM => mi(AllTokens, false, false, true, false),
            NamedMethod::Mdl => mi(AllTokens, false, true, false, true),
            NamedMethod::MdlM => mi(AllTokens, false, false, false, true),
            NamedMethod::Le => MethodSpec::MiFamily(MiConfig {
                tokens: AllTokens,
                one_hot_first_term: false,
                instance_wise: false,
                use_first_term: false,
                use_second_term: true,
                negate: true,
            }),
            NamedMethod::Zlp => MethodSpec::ZeroLabel { variant: ZeroLabelVariant::Zlp },
            NamedMethod::Zpm => MethodSpec::ZeroLabel { variant: ZeroLabelVariant::Zpm },
            NamedMethod::Zmv => MethodSpec::ZeroLabel { variant: ZeroLabelVariant::Zmv },
            NamedMethod::Ppl => MethodSpec::Perplexity,
        }
    }

    pub fn vocabulary() -> String {
        NamedMethod::ALL.map(|m| m.as_str()).join(", ")
    }
}

impl fmt::Display for NamedMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NamedMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        NamedMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| format!("unknown method `{s}` (expected one of: {})", NamedMethod::vocabulary()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Selection {
    Global { prompt: usize },
    InstanceWise { prompts: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub selection: Selection,
    /// One score per prompt. For instance-wise methods this is the instance
    /// mean of the per-instance scores.
    pub prompt_scores: Vec<f64>,
    /// Per-instance scores indexed `[x][t]`, instance-wise methods only.
    pub instance_scores: Option<Vec<Vec<f64>>>,
}

impl SelectionOutcome {
    fn global(prompt_scores: Vec<f64>) -> Self {
        SelectionOutcome {
            selection: Selection::Global { prompt: argmax(&prompt_scores) },
            prompt_scores,
            instance_scores: None,
        }
    }

    /// The prompt answering instance `x`.
    pub fn prompt_for(&self, x: usize) -> usize {
        match &self.selection {
            Selection::Global { prompt } => *prompt,
            Selection::InstanceWise { prompts } => prompts[x],
        }
    }
}

/// `H(mean_x p(y|x,t))` per prompt, with `p` optionally one-hot encoded first.
pub fn first_term(dists: &DistGrid, one_hot_mode: bool) -> Result<Vec<f64>> {
    dists
        .iter()
        .map(|row| {
            let marginal = if one_hot_mode {
                let hot: Vec<AnswerDistribution> = row.iter().map(one_hot).collect();
                marginal_distribution(&hot)?
            } else {
                marginal_distribution(row)?
            };
            Ok(marginal.entropy())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondTerm {
    /// `-H(Y|x,t)`, indexed `[t][x]`.
    pub per_instance: Vec<Vec<f64>>,
    /// Instance mean of `per_instance`, per prompt.
    pub mean: Vec<f64>,
}

pub fn second_term(dists: &DistGrid) -> SecondTerm {
    let per_instance: Vec<Vec<f64>> = dists
        .iter()
        .map(|row| row.iter().map(|d| -d.entropy()).collect())
        .collect();
    let mean = per_instance
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect();
    SecondTerm { per_instance, mean }
}

pub fn pss_mi_family(cfg: &MiConfig, dists: &DistGrid) -> Result<SelectionOutcome> {
    cfg.validate()?;
    let num_prompts = dists.len();
    if num_prompts == 0 {
        return Err(Error::Empty("prompt set".into()));
    }
    let first = if cfg.use_first_term {
        first_term(dists, cfg.one_hot_first_term)?
    } else {
        vec![0.0; num_prompts]
    };
    let second = second_term(dists);

    if cfg.instance_wise {
        let num_instances = dists[0].len();
        let instance_scores: Vec<Vec<f64>> = (0..num_instances)
            .map(|x| (0..num_prompts).map(|t| first[t] + second.per_instance[t][x]).collect())
            .collect();
        let prompts = instance_scores.iter().map(|row| argmax(row)).collect();
        let prompt_scores = (0..num_prompts)
            .map(|t| instance_scores.iter().map(|row| row[t]).sum::<f64>() / num_instances as f64)
            .collect();
        return Ok(SelectionOutcome {
            selection: Selection::InstanceWise { prompts },
            prompt_scores,
            instance_scores: Some(instance_scores),
        });
    }

    let scores = (0..num_prompts)
        .map(|t| {
            let second = if cfg.use_second_term { second.mean[t] } else { 0.0 };
            if cfg.negate {
                -second
            } else {
                first[t] + second
            }
        })
        .collect();
    Ok(SelectionOutcome::global(scores))
}

/// Ensemble pseudo-label scores `s(x, y)` over all prompts, indexed `[x][y]`.
pub fn pseudo_label_scores(variant: ZeroLabelVariant, dists: &DistGrid) -> Vec<Vec<f64>> {
    let num_prompts = dists.len() as f64;
    let num_instances = dists.first().map_or(0, Vec::len);
    (0..num_instances)
        .map(|x| {
            let num_choices = dists[0][x].len();
            let mut s = vec![0.0; num_choices];
            for row in dists {
                let d = &row[x];
                match variant {
                    ZeroLabelVariant::Zlp => {
                        for (acc, p) in s.iter_mut().zip(d.probs()) {
                            *acc += p.max(PROB_FLOOR).ln();
                        }
                    }
                    ZeroLabelVariant::Zpm => {
                        for (acc, p) in s.iter_mut().zip(d.probs()) {
                            *acc += p;
                        }
                    }
                    ZeroLabelVariant::Zmv => s[d.argmax()] += 1.0,
                }
            }
            if variant != ZeroLabelVariant::Zmv {
                for v in s.iter_mut() {
                    *v /= num_prompts;
                }
            }
            s
        })
        .collect()
}

/// Counts, per prompt, the instances where the prompt agrees with the ensemble pseudo-label.
pub fn pss_zero_label(variant: ZeroLabelVariant, dists: &DistGrid) -> Result<SelectionOutcome> {
    if dists.is_empty() {
        return Err(Error::Empty("prompt set".into()));
    }
    let pseudo: Vec<usize> = pseudo_label_scores(variant, dists)
        .iter()
        .map(|s| argmax(s))
        .collect();
    let scores = dists
        .iter()
        .map(|row| {
            row.iter()
                .zip(&pseudo)
                .filter(|(d, &label)| d.argmax() == label)
                .count() as f64
        })
        .collect();
    Ok(SelectionOutcome::global(scores))
}

/// Negative mean inverse geometric-mean token probability of each instantiated prompt.
pub fn pss_ppl(tensor: &ScoreTensor) -> Result<SelectionOutcome> {
    let mut scores = Vec::with_capacity(tensor.num_prompts);
    for t in 0..tensor.num_prompts {
        let mut total = 0.0;
        for x in 0..tensor.num_instances {
            let stat = tensor.sequence_stat(t, x)?;
            if stat.token_count < 2 {
                return Err(Error::TokenCount { t, x, count: stat.token_count });
            }
            // 1 / p(x,t) with p(x,t) = exp(sum / (n - 1))
            total += (-stat.sum_logprob / (stat.token_count - 1) as f64).exp();
        }
        scores.push(-total / tensor.num_instances as f64);
    }
    Ok(SelectionOutcome::global(scores))
}

/// Everything evaluation needs from one selection run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub outcome: SelectionOutcome,
    /// `argmax_y` of the scenario's answer scores, indexed `[t][x]`.
    pub answers: Vec<Vec<usize>>,
    pub aggregation: AggregationMode,
    pub warnings: Vec<String>,
}

impl SelectionResult {
    /// Final prediction for every instance under the selected prompt(s).
    pub fn predictions(&self) -> Vec<usize> {
        let num_instances = self.answers.first().map_or(0, Vec::len);
        (0..num_instances)
            .map(|x| self.answers[self.outcome.prompt_for(x)][x])
            .collect()
    }
}

pub fn select(
    tensor: &ScoreTensor,
    spec: &MethodSpec,
    method: CalibrationMethod,
    scenario: CalibrationScenario,
    agg_override: Option<AggregationMode>,
) -> Result<SelectionResult> {
    spec.validate()?;
    method.check_requirements(tensor)?;
    let aggregation = spec.aggregation(tensor.category, agg_override);
    let scores = apply_scenario(tensor, method, scenario, aggregation)?;
    let outcome = match spec {
        MethodSpec::MiFamily(cfg) => pss_mi_family(cfg, &scores.pss_distributions)?,
        MethodSpec::ZeroLabel { variant } => pss_zero_label(*variant, &scores.pss_distributions)?,
        MethodSpec::Perplexity => pss_ppl(tensor)?,
    };
    let answers = scores
        .answer_scores
        .iter()
        .map(|row| row.iter().map(|s| argmax(s)).collect())
        .collect();
    Ok(SelectionResult { outcome, answers, aggregation, warnings: scores.warnings })
}
