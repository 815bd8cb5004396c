//! Accuracy, macro F1, scaled metrics, Pearson correlation and
//! calibration-improvement ratios.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::selection::SelectionResult;
use crate::tensor::ScoreTensor;

/// Significance level for marking correlations.
pub const SIGNIFICANCE_ALPHA: f64 = 0.05;

fn check_labels(predictions: &[usize], gold: &[usize]) -> Result<()> {
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::Empty("prediction set".into()));
    }
    Ok(())
}

pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    check_labels(predictions, gold)?;
    let hits = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Which classes enter the macro average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroAverage {
    /// Every declared class; classes never predicted correctly contribute 0.
    #[default]
    AllClasses,
    /// Only classes that occur in gold or predictions.
    PresentClasses,
}

pub fn macro_f1(predictions: &[usize], gold: &[usize], num_choices: usize) -> Result<f64> {
    macro_f1_with(predictions, gold, num_choices, MacroAverage::AllClasses)
}

pub fn macro_f1_with(
    predictions: &[usize],
    gold: &[usize],
    num_choices: usize,
    average: MacroAverage,
) -> Result<f64> {
    check_labels(predictions, gold)?;
    if let Some(&bad) = predictions.iter().chain(gold).find(|&&l| l >= num_choices) {
        return Err(Error::Invariant(format!("label {bad} out of range for {num_choices} classes")));
    }
    let mut tp = vec![0usize; num_choices];
    let mut predicted = vec![0usize; num_choices];
    let mut actual = vec![0usize; num_choices];
    for (&p, &g) in predictions.iter().zip(gold) {
        predicted[p] += 1;
        actual[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let mut total = 0.0;
    let mut classes = 0usize;
    for c in 0..num_choices {
        if average == MacroAverage::PresentClasses && predicted[c] == 0 && actual[c] == 0 {
            continue;
        }
        classes += 1;
        if tp[c] == 0 {
            continue;
        }
        let precision = tp[c] as f64 / predicted[c] as f64;
        let recall = tp[c] as f64 / actual[c] as f64;
        total += 2.0 * precision * recall / (precision + recall);
    }
    Ok(total / classes as f64)
}

/// Selected-prompt performance divided by best-prompt performance.
pub fn scaled_metric(selected: f64, best: f64) -> Result<f64> {
    if best.is_nan() || best <= 0.0 {
        return Err(Error::NonPositiveBest(best));
    }
    Ok(selected / best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value from Student's t with `n - 2` degrees of freedom;
    /// `None` when `n = 2`.
    pub p_value: Option<f64>,
    pub significant: bool,
    pub n: usize,
}

/// Sample Pearson correlation with a two-sided significance test.
pub fn pearson_corr(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} samples", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::LengthMismatch(format!("need at least 2 samples, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("xs"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("ys"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let p_value = if n > 2 {
        let df = (n - 2) as f64;
        let denom = 1.0 - r * r;
        if denom <= 0.0 {
            Some(0.0)
        } else {
            let t = r.abs() * (df / denom).sqrt();
            let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
            Some((2.0 * (1.0 - dist.cdf(t))).clamp(0.0, 1.0))
        }
    } else {
        None
    };
    Ok(Correlation {
        r,
        significant: p_value.is_some_and(|p| p < SIGNIFICANCE_ALPHA),
        p_value,
        n,
    })
}

/// Accuracy and macro F1 of every prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptMetrics {
    pub prompt_ids: Vec<String>,
    pub accuracy: Vec<f64>,
    pub f1: Vec<f64>,
}

impl PromptMetrics {
    /// `answers` is indexed `[t][x]`.
    pub fn compute(
        prompt_ids: &[String],
        answers: &[Vec<usize>],
        gold: &[usize],
        num_choices: usize,
    ) -> Result<Self> {
        if prompt_ids.len() != answers.len() {
            return Err(Error::LengthMismatch(format!(
                "{} prompt ids for {} answer rows",
                prompt_ids.len(),
                answers.len()
            )));
        }
        let accuracy = answers.iter().map(|a| accuracy(a, gold)).collect::<Result<_>>()?;
        let f1 = answers
            .iter()
            .map(|a| macro_f1(a, gold, num_choices))
            .collect::<Result<_>>()?;
        Ok(PromptMetrics { prompt_ids: prompt_ids.to_vec(), accuracy, f1 })
    }
}

/// Best, mean and worst over prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub best: f64,
    pub average: f64,
    pub worst: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("metric set".into()));
        }
        Ok(Spread {
            best: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            average: values.iter().sum::<f64>() / values.len() as f64,
            worst: values.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

/// Fraction of prompts whose metric strictly increased.
pub fn improvement_ratio(base: &[f64], calibrated: &[f64]) -> Result<f64> {
    if base.len() != calibrated.len() {
        return Err(Error::LengthMismatch(format!(
            "{} base vs {} calibrated prompts",
            base.len(),
            calibrated.len()
        )));
    }
    if base.is_empty() {
        return Err(Error::Empty("prompt set".into()));
    }
    let improved = base.iter().zip(calibrated).filter(|(b, c)| c > b).count();
    Ok(improved as f64 / base.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImprovementRatio {
    pub accuracy: f64,
    pub f1: f64,
}

pub fn calibration_improvement_ratio(
    base: &PromptMetrics,
    calibrated: &PromptMetrics,
) -> Result<ImprovementRatio> {
    if base.prompt_ids != calibrated.prompt_ids {
        return Err(Error::LengthMismatch("base and calibrated reports cover different prompts".into()));
    }
    Ok(ImprovementRatio {
        accuracy: improvement_ratio(&base.accuracy, &calibrated.accuracy)?,
        f1: improvement_ratio(&base.f1, &calibrated.f1)?,
    })
}

/// Accuracy and macro F1 when each instance is answered by its own selected prompt.
pub fn instance_wise_performance(
    selected: &[usize],
    answers: &[Vec<usize>],
    gold: &[usize],
    num_choices: usize,
) -> Result<(f64, f64)> {
    if selected.is_empty() {
        return Err(Error::Empty("instance set".into()));
    }
    check_labels(selected, gold)?;
    let predictions = selected
        .iter()
        .enumerate()
        .map(|(x, &t)| {
            answers
                .get(t)
                .and_then(|row| row.get(x))
                .copied()
                .ok_or(Error::IndexOutOfRange {
                    axis: crate::error::Axis::Prompt,
                    index: t,
                    len: answers.len(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((accuracy(&predictions, gold)?, macro_f1(&predictions, gold, num_choices)?))
}

/// Scalar summary of one selection run, suitable for averaging across tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub selected_accuracy: f64,
    pub selected_f1: f64,
    pub accuracy: Spread,
    pub f1: Spread,
    pub scaled_accuracy: Option<f64>,
    pub scaled_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_prompt: PromptMetrics,
    #[serde(flatten)]
    pub summary: MetricSummary,
}

/// Scores a selection run against the tensor's gold labels.
pub fn evaluate(tensor: &ScoreTensor, result: &SelectionResult) -> Result<MetricReport> {
    let gold = &tensor.gold_labels;
    let ny = tensor.num_choices;
    let per_prompt = PromptMetrics::compute(&tensor.prompt_ids, &result.answers, gold, ny)?;
    let prompts: Vec<usize> = (0..tensor.num_instances).map(|x| result.outcome.prompt_for(x)).collect();
    let (selected_accuracy, selected_f1) = instance_wise_performance(&prompts, &result.answers, gold, ny)?;
    let accuracy = Spread::of(&per_prompt.accuracy)?;
    let f1 = Spread::of(&per_prompt.f1)?;
    let summary = MetricSummary {
        selected_accuracy,
        selected_f1,
        accuracy,
        f1,
        scaled_accuracy: scaled_metric(selected_accuracy, accuracy.best).ok(),
        scaled_f1: scaled_metric(selected_f1, f1.best).ok(),
    };
    Ok(MetricReport { per_prompt, summary })
}

/// Field-wise arithmetic mean; a scaled metric is kept only if every input has one.
pub fn average_summaries(summaries: &[MetricSummary]) -> Result<MetricSummary> {
    if summaries.is_empty() {
        return Err(Error::Empty("summary set".into()));
    }
    let n = summaries.len() as f64;
    let mean = |f: &dyn Fn(&MetricSummary) -> f64| summaries.iter().map(f).sum::<f64>() / n;
    let mean_opt = |f: &dyn Fn(&MetricSummary) -> Option<f64>| {
        summaries.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
    };
    let spread = |f: &dyn Fn(&MetricSummary) -> Spread| Spread {
        best: mean(&|s| f(s).best),
        average: mean(&|s| f(s).average),
        worst: mean(&|s| f(s).worst),
    };
    Ok(MetricSummary {
        selected_accuracy: mean(&|s| s.selected_accuracy),
        selected_f1: mean(&|s| s.selected_f1),
        accuracy: spread(&|s| s.accuracy),
        f1: spread(&|s| s.f1),
        scaled_accuracy: mean_opt(&|s| s.scaled_accuracy),
        scaled_f1: mean_opt(&|s| s.scaled_f1),
    })
}
