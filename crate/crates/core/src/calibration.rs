//! Output-probability calibration and the scenario wiring that decides which
//! scores feed answer selection and which feed prompt-selection scores.
//!
//! Three calibrators produce raw scores `q̃(y|x,t)`:
//!
//! | Method   | `q̃(y|x,t)`                                   | Extra inputs          |
//! |----------|----------------------------------------------|-----------------------|
//! | `cc`     | `p(y|x,t) / p_cf(y|t)` (mean-normalized prior) | content-free logits  |
//! | `pmi_dc` | `log p̃(y|x,t) − log p̃(y|x_domain,t)`          | domain logits         |
//! | `cbm`    | `p(y|x,t) / mean_x' p(y|x',t)`                | none                  |
//!
//! Raw scores are used as-is for answer selection (argmax is invariant to
//! normalization). Prompt-selection scores consume the softmax of the raw scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Section};
use crate::tensor::{
    marginal_distribution, normalize, AggregationMode, DistGrid, ScoreGrid, ScoreTensor,
};

/// Denominators below this are clamped and reported as a warning.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    None,
    Cc,
    PmiDc,
    Cbm,
}

impl CalibrationMethod {
    pub const ALL: [CalibrationMethod; 4] = [
        CalibrationMethod::None,
        CalibrationMethod::Cc,
        CalibrationMethod::PmiDc,
        CalibrationMethod::Cbm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationMethod::None => "none",
            CalibrationMethod::Cc => "cc",
            CalibrationMethod::PmiDc => "pmi_dc",
            CalibrationMethod::Cbm => "cbm",
        }
    }

    /// Fails with the name of the first tensor section this method needs but lacks.
    pub fn check_requirements(self, tensor: &ScoreTensor) -> Result<()> {
        match self {
            CalibrationMethod::Cc if tensor.content_free_logits.is_none() => {
                Err(Error::MissingSection(Section::ContentFree))
            }
            CalibrationMethod::PmiDc if tensor.domain_logits.is_none() => {
                Err(Error::MissingSection(Section::Domain))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for CalibrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CalibrationMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "-" => Ok(CalibrationMethod::None),
            "cc" => Ok(CalibrationMethod::Cc),
            "pmi_dc" | "pmi-dc" | "pmidc" => Ok(CalibrationMethod::PmiDc),
            "cbm" => Ok(CalibrationMethod::Cbm),
            other => Err(format!(
                "unknown calibration `{other}` (expected one of: none, cc, pmi_dc, cbm)"
            )),
        }
    }
}

/// Where calibrated scores are consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationScenario {
    None,
    AnswerOnly,
    PssOnly,
    Both,
}

impl CalibrationScenario {
    pub const ALL: [CalibrationScenario; 4] = [
        CalibrationScenario::None,
        CalibrationScenario::AnswerOnly,
        CalibrationScenario::PssOnly,
        CalibrationScenario::Both,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationScenario::None => "none",
            CalibrationScenario::AnswerOnly => "answer_only",
            CalibrationScenario::PssOnly => "pss_only",
            CalibrationScenario::Both => "both",
        }
    }

    /// Short label: `-`, `A`, `P`, `PA`.
    pub fn short(self) -> &'static str {
        match self {
            CalibrationScenario::None => "-",
            CalibrationScenario::AnswerOnly => "A",
            CalibrationScenario::PssOnly => "P",
            CalibrationScenario::Both => "PA",
        }
    }

    fn calibrates_answers(self) -> bool {
        matches!(self, CalibrationScenario::AnswerOnly | CalibrationScenario::Both)
    }

    fn calibrates_pss(self) -> bool {
        matches!(self, CalibrationScenario::PssOnly | CalibrationScenario::Both)
    }
}

impl fmt::Display for CalibrationScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CalibrationScenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "-" => Ok(CalibrationScenario::None),
            "a" | "answer_only" | "answer-only" => Ok(CalibrationScenario::AnswerOnly),
            "p" | "pss_only" | "pss-only" => Ok(CalibrationScenario::PssOnly),
            "pa" | "ap" | "both" => Ok(CalibrationScenario::Both),
            other => Err(format!(
                "unknown scenario `{other}` (expected one of: none, A, P, PA, answer_only, pss_only, both)"
            )),
        }
    }
}

/// Calibrated raw scores and their softmax-normalized form.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedScores {
    /// `q̃(y|x,t)`, indexed `[t][x][y]`.
    pub raw: ScoreGrid,
    /// `q(y|x,t) = softmax(q̃(·|x,t))`, indexed `[t][x]`.
    pub normalized: DistGrid,
    pub warnings: Vec<String>,
}

impl CalibratedScores {
    fn from_raw(raw: ScoreGrid, warnings: Vec<String>) -> Result<Self> {
        let normalized = raw
            .iter()
            .map(|row| row.iter().map(|q| normalize(q)).collect())
            .collect::<Result<_>>()?;
        Ok(CalibratedScores { raw, normalized, warnings })
    }
}

fn clamp_denominators(values: &mut [f64], what: &str, t: usize, warnings: &mut Vec<String>) {
    for (y, v) in values.iter_mut().enumerate() {
        if *v < DENOMINATOR_FLOOR {
            warnings.push(format!(
                "{what} denominator {v:e} at (t={t}, y={y}) clamped to {DENOMINATOR_FLOOR:e}"
            ));
            *v = DENOMINATOR_FLOOR;
        }
    }
}

/// Unnormalized content-free prior of prompt `t`: the mean over content-free
/// inputs of `exp(logit)`, per choice.
pub fn content_free_prior(tensor: &ScoreTensor, t: usize) -> Result<Vec<f64>> {
    (0..tensor.num_choices)
        .map(|y| {
            let logits = tensor.content_free(t, y)?;
            Ok(logits.iter().map(|l| l.exp()).sum::<f64>() / logits.len() as f64)
        })
        .collect()
}

/// Contextual calibration with the mean-normalized content-free prior.
pub fn calibrate_cc(tensor: &ScoreTensor, agg: AggregationMode) -> Result<CalibratedScores> {
    CalibrationMethod::Cc.check_requirements(tensor)?;
    let p = tensor.answer_distributions(agg)?;
    let mut warnings = Vec::new();
    let mut raw = Vec::with_capacity(tensor.num_prompts);
    for (t, row) in p.iter().enumerate() {
        let prior = content_free_prior(tensor, t)?;
        let mean = prior.iter().sum::<f64>() / prior.len() as f64;
        let mut p_cf: Vec<f64> = prior.iter().map(|v| v / mean).collect();
        clamp_denominators(&mut p_cf, "cc", t, &mut warnings);
        raw.push(
            row.iter()
                .map(|d| d.probs().iter().zip(&p_cf).map(|(p, c)| p / c).collect())
                .collect(),
        );
    }
    CalibratedScores::from_raw(raw, warnings)
}

/// Domain-conditional PMI, in log space.
pub fn calibrate_pmi_dc(tensor: &ScoreTensor, agg: AggregationMode) -> Result<CalibratedScores> {
    CalibrationMethod::PmiDc.check_requirements(tensor)?;
    let logits = tensor.logit_grid(agg)?;
    let mut raw = Vec::with_capacity(tensor.num_prompts);
    for (t, row) in logits.into_iter().enumerate() {
        let domain = (0..tensor.num_choices)
            .map(|y| tensor.domain_logit(t, y))
            .collect::<Result<Vec<_>>>()?;
        raw.push(
            row.into_iter()
                .map(|l| l.iter().zip(&domain).map(|(a, d)| a - d).collect())
                .collect(),
        );
    }
    CalibratedScores::from_raw(raw, Vec::new())
}

/// Calibration by marginalization: divide by the instance-marginal `p(y|t)`.
pub fn calibrate_cbm(tensor: &ScoreTensor, agg: AggregationMode) -> Result<CalibratedScores> {
    let p = tensor.answer_distributions(agg)?;
    cbm_from_distributions(&p)
}

/// CBM over precomputed `p(y|x,t)`.
pub fn cbm_from_distributions(p: &DistGrid) -> Result<CalibratedScores> {
    let mut warnings = Vec::new();
    let mut raw = Vec::with_capacity(p.len());
    for (t, row) in p.iter().enumerate() {
        let mut marginal = marginal_distribution(row)?.into_inner();
        clamp_denominators(&mut marginal, "cbm", t, &mut warnings);
        raw.push(
            row.iter()
                .map(|d| d.probs().iter().zip(&marginal).map(|(p, m)| p / m).collect())
                .collect(),
        );
    }
    CalibratedScores::from_raw(raw, warnings)
}

pub fn calibrate(
    tensor: &ScoreTensor,
    method: CalibrationMethod,
    agg: AggregationMode,
) -> Result<Option<CalibratedScores>> {
    Ok(match method {
        CalibrationMethod::None => None,
        CalibrationMethod::Cc => Some(calibrate_cc(tensor, agg)?),
        CalibrationMethod::PmiDc => Some(calibrate_pmi_dc(tensor, agg)?),
        CalibrationMethod::Cbm => Some(calibrate_cbm(tensor, agg)?),
    })
}

/// Scores routed by a calibration scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioScores {
    /// Answers are `argmax_y` of these, indexed `[t][x][y]`.
    pub answer_scores: ScoreGrid,
    /// Distributions prompt-selection scores are computed from, indexed `[t][x]`.
    pub pss_distributions: DistGrid,
    pub warnings: Vec<String>,
}

pub fn apply_scenario(
    tensor: &ScoreTensor,
    method: CalibrationMethod,
    scenario: CalibrationScenario,
    agg: AggregationMode,
) -> Result<ScenarioScores> {
    let p = tensor.answer_distributions(agg)?;
    let calibrated = match method {
        CalibrationMethod::None => None,
        CalibrationMethod::Cbm => Some(cbm_from_distributions(&p)?),
        other => calibrate(tensor, other, agg)?,
    };
    let Some(cal) = calibrated.filter(|_| scenario != CalibrationScenario::None) else {
        return Ok(ScenarioScores {
            answer_scores: probabilities(&p),
            pss_distributions: p,
            warnings: Vec::new(),
        });
    };
    let answer_scores = if scenario.calibrates_answers() {
        cal.raw
    } else {
        probabilities(&p)
    };
    let pss_distributions = if scenario.calibrates_pss() { cal.normalized } else { p };
    Ok(ScenarioScores { answer_scores, pss_distributions, warnings: cal.warnings })
}

fn probabilities(p: &DistGrid) -> ScoreGrid {
    p.iter()
        .map(|row| row.iter().map(|d| d.probs().to_vec()).collect())
        .collect()
}
