//! Machine-readable report records emitted by the CLI.
//!
//! All reports carry `schema_version`; bump [`REPORT_SCHEMA_VERSION`] together
//! with any field change. Non-finite floats serialize as `null`.

use serde::Serialize;

use crate::calibration::{CalibrationMethod, CalibrationScenario};
use crate::error::{Error, Result};
use crate::evaluation::{
    calibration_improvement_ratio, evaluate, pearson_corr, Correlation, MetricReport, PromptMetrics,
};
use crate::format::FORMAT_VERSION;
use crate::selection::{select, MethodSpec, NamedMethod, Selection, SelectionResult};
use crate::tensor::{argmax, AggregationMode, Category, ScoreTensor};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub schema_version: u32,
    pub tensor_format_version: u32,
    pub dataset_id: String,
    pub category: Category,
    pub method: String,
    pub calibration: CalibrationMethod,
    pub scenario: CalibrationScenario,
    pub aggregation: AggregationMode,
    pub selection: Selection,
    /// Prompt id of a global selection.
    pub selected_prompt_id: Option<String>,
    pub pss: Vec<f64>,
    /// `"instance_mean"` when `pss` averages per-instance scores.
    pub pss_interpretation: Option<&'static str>,
    pub metrics: MetricReport,
    pub warnings: Vec<String>,
}

pub fn selection_report(
    tensor: &ScoreTensor,
    method: NamedMethod,
    calibration: CalibrationMethod,
    scenario: CalibrationScenario,
    agg: Option<AggregationMode>,
) -> Result<SelectionReport> {
    let result = select(tensor, &method.spec(), calibration, scenario, agg)?;
    assemble(tensor, method.as_str(), calibration, scenario, result)
}

fn assemble(
    tensor: &ScoreTensor,
    method: &str,
    calibration: CalibrationMethod,
    scenario: CalibrationScenario,
    result: SelectionResult,
) -> Result<SelectionReport> {
    let metrics = evaluate(tensor, &result)?;
    let selected_prompt_id = match &result.outcome.selection {
        Selection::Global { prompt } => Some(tensor.prompt_ids[*prompt].clone()),
        Selection::InstanceWise { .. } => None,
    };
    Ok(SelectionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tensor_format_version: FORMAT_VERSION,
        dataset_id: tensor.dataset_id.clone(),
        category: tensor.category,
        method: method.to_string(),
        calibration,
        scenario,
        aggregation: result.aggregation,
        pss_interpretation: result.outcome.instance_scores.as_ref().map(|_| "instance_mean"),
        selection: result.outcome.selection,
        selected_prompt_id,
        pss: result.outcome.prompt_scores,
        metrics,
        warnings: result.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub calibration: CalibrationMethod,
    pub scenario: CalibrationScenario,
    /// Selected prompt id, `*instance_wise*` for per-instance selection.
    pub selected: Option<String>,
    pub selected_accuracy: Option<f64>,
    pub selected_f1: Option<f64>,
    pub scaled_accuracy: Option<f64>,
    pub scaled_f1: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub average_accuracy: Option<f64>,
    pub worst_accuracy: Option<f64>,
    pub best_f1: Option<f64>,
    pub average_f1: Option<f64>,
    pub worst_f1: Option<f64>,
    /// Set when the method could not run on this tensor (e.g. no sequence stats for PPL).
    pub error: Option<String>,
}

impl SweepRow {
    fn from_report(r: &SelectionReport) -> Self {
        let s = &r.metrics.summary;
        SweepRow {
            method: r.method.clone(),
            calibration: r.calibration,
            scenario: r.scenario,
            selected: Some(r.selected_prompt_id.clone().unwrap_or_else(|| "*instance_wise*".into())),
            selected_accuracy: Some(s.selected_accuracy),
            selected_f1: Some(s.selected_f1),
            scaled_accuracy: s.scaled_accuracy,
            scaled_f1: s.scaled_f1,
            best_accuracy: Some(s.accuracy.best),
            average_accuracy: Some(s.accuracy.average),
            worst_accuracy: Some(s.accuracy.worst),
            best_f1: Some(s.f1.best),
            average_f1: Some(s.f1.average),
            worst_f1: Some(s.f1.worst),
            error: None,
        }
    }

    fn failed(method: &str, calibration: CalibrationMethod, scenario: CalibrationScenario, e: &Error) -> Self {
        SweepRow {
            method: method.to_string(),
            calibration,
            scenario,
            selected: None,
            selected_accuracy: None,
            selected_f1: None,
            scaled_accuracy: None,
            scaled_f1: None,
            best_accuracy: None,
            average_accuracy: None,
            worst_accuracy: None,
            best_f1: None,
            average_f1: None,
            worst_f1: None,
            error: Some(e.to_string()),
        }
    }

    pub const TSV_HEADER: &'static str = "method\tcalibration\tscenario\tselected\tselected_accuracy\tselected_f1\tscaled_accuracy\tscaled_f1\tbest_accuracy\taverage_accuracy\tworst_accuracy\tbest_f1\taverage_f1\tworst_f1\terror";

    pub fn to_tsv(&self) -> String {
        let num = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        [
            self.method.clone(),
            self.calibration.to_string(),
            self.scenario.short().to_string(),
            self.selected.clone().unwrap_or_default(),
            num(self.selected_accuracy),
            num(self.selected_f1),
            num(self.scaled_accuracy),
            num(self.scaled_f1),
            num(self.best_accuracy),
            num(self.average_accuracy),
            num(self.worst_accuracy),
            num(self.best_f1),
            num(self.average_f1),
            num(self.worst_f1),
            self.error.clone().unwrap_or_default().replace(['\t', '\n'], " "),
        ]
        .join("\t")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub dataset_id: String,
    pub rows: Vec<SweepRow>,
}

/// Runs every named method under every scenario of each calibration method.
///
/// Missing calibration inputs abort the sweep; a method that cannot run
/// (PPL without sequence stats) yields a row with `error` set.
pub fn sweep(
    tensor: &ScoreTensor,
    calibrations: &[CalibrationMethod],
    agg: Option<AggregationMode>,
) -> Result<SweepReport> {
    for c in calibrations {
        c.check_requirements(tensor)?;
    }
    let mut rows = Vec::with_capacity(calibrations.len() * NamedMethod::ALL.len() * 4);
    for &calibration in calibrations {
        for method in NamedMethod::ALL {
            for scenario in CalibrationScenario::ALL {
                rows.push(match selection_report(tensor, method, calibration, scenario, agg) {
                    Ok(r) => SweepRow::from_report(&r),
                    Err(e) => SweepRow::failed(method.as_str(), calibration, scenario, &e),
                });
            }
        }
    }
    Ok(SweepReport { schema_version: REPORT_SCHEMA_VERSION, dataset_id: tensor.dataset_id.clone(), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementRow {
    pub dataset_id: String,
    pub calibration: CalibrationMethod,
    pub accuracy_ratio: Option<f64>,
    pub f1_ratio: Option<f64>,
    pub num_prompts: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementReport {
    pub schema_version: u32,
    pub rows: Vec<ImprovementRow>,
}

fn prompt_answers(scores: &[Vec<Vec<f64>>]) -> Vec<Vec<usize>> {
    scores.iter().map(|row| row.iter().map(|s| argmax(s)).collect()).collect()
}

/// Per-prompt metrics when answers come from `calibration` (answer selection only).
pub fn answer_metrics(
    tensor: &ScoreTensor,
    calibration: CalibrationMethod,
    agg: AggregationMode,
) -> Result<PromptMetrics> {
    let scenario = match calibration {
        CalibrationMethod::None => CalibrationScenario::None,
        _ => CalibrationScenario::AnswerOnly,
    };
    let scores = crate::calibration::apply_scenario(tensor, calibration, scenario, agg)?;
    PromptMetrics::compute(
        &tensor.prompt_ids,
        &prompt_answers(&scores.answer_scores),
        &tensor.gold_labels,
        tensor.num_choices,
    )
}

/// Fraction of prompts whose accuracy / F1 strictly improves when answers are calibrated.
pub fn improvement_report(tensors: &[ScoreTensor], agg: Option<AggregationMode>) -> Result<ImprovementReport> {
    let mut rows = Vec::new();
    for tensor in tensors {
        let agg = agg.unwrap_or_else(|| tensor.category.default_aggregation());
        let base = answer_metrics(tensor, CalibrationMethod::None, agg)?;
        for calibration in [CalibrationMethod::Cc, CalibrationMethod::PmiDc, CalibrationMethod::Cbm] {
            let row = answer_metrics(tensor, calibration, agg)
                .and_then(|cal| calibration_improvement_ratio(&base, &cal));
            rows.push(match row {
                Ok(r) => ImprovementRow {
                    dataset_id: tensor.dataset_id.clone(),
                    calibration,
                    accuracy_ratio: Some(r.accuracy),
                    f1_ratio: Some(r.f1),
                    num_prompts: tensor.num_prompts,
                    error: None,
                },
                Err(e) => ImprovementRow {
                    dataset_id: tensor.dataset_id.clone(),
                    calibration,
                    accuracy_ratio: None,
                    f1_ratio: None,
                    num_prompts: tensor.num_prompts,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    Ok(ImprovementReport { schema_version: REPORT_SCHEMA_VERSION, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub method: String,
    /// `accuracy` or `f1`.
    pub metric: &'static str,
    pub correlation: Option<Correlation>,
    pub pss_interpretation: Option<&'static str>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub schema_version: u32,
    pub dataset_id: String,
    pub calibration: CalibrationMethod,
    pub scenario: CalibrationScenario,
    pub rows: Vec<CorrelationRow>,
}

/// Pearson correlation between each method's per-prompt PSS and per-prompt performance.
pub fn correlation_report(
    tensor: &ScoreTensor,
    calibration: CalibrationMethod,
    scenario: CalibrationScenario,
    agg: Option<AggregationMode>,
) -> Result<CorrelationReport> {
    calibration.check_requirements(tensor)?;
    let mut rows = Vec::new();
    for method in NamedMethod::ALL {
        let spec: MethodSpec = method.spec();
        let run = select(tensor, &spec, calibration, scenario, agg).and_then(|r| {
            let metrics = PromptMetrics::compute(&tensor.prompt_ids, &r.answers, &tensor.gold_labels, tensor.num_choices)?;
            Ok((r, metrics))
        });
        let (result, metrics) = match run {
            Ok(v) => v,
            Err(e) => {
                for metric in ["accuracy", "f1"] {
                    rows.push(CorrelationRow {
                        method: method.to_string(),
                        metric,
                        correlation: None,
                        pss_interpretation: None,
                        error: Some(e.to_string()),
                    });
                }
                continue;
            }
        };
        let interp = result.outcome.instance_scores.as_ref().map(|_| "instance_mean");
        for (metric, values) in [("accuracy", &metrics.accuracy), ("f1", &metrics.f1)] {
            let corr = pearson_corr(&result.outcome.prompt_scores, values);
            rows.push(CorrelationRow {
                method: method.to_string(),
                metric,
                pss_interpretation: interp,
                error: corr.as_ref().err().map(|e| e.to_string()),
                correlation: corr.ok(),
            });
        }
    }
    Ok(CorrelationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset_id: tensor.dataset_id.clone(),
        calibration,
        scenario,
        rows,
    })
}
