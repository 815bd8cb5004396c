//! Command-line front end.
//!
//! Exit status: 0 on success, 2 for usage errors, 3 for unreadable or
//! malformed tensor files, 4 when a tensor does not support the requested
//! operation, 1 for anything else. Error messages are prefixed with the
//! category, e.g. `error[format]: ...`.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calibration::{CalibrationMethod, CalibrationScenario};
use crate::error::Error;
use crate::format::{load_tensor, save_tensor};
use crate::report::{correlation_report, improvement_report, selection_report, sweep, SweepRow};
use crate::selection::NamedMethod;
use crate::synth::{relabel_bias, synth_tensor, PromptProfile, SynthSpec};
use crate::tensor::{AggregationMode, Category};

#[derive(Debug, Parser)]
#[command(name = "promptsel", version, about = "Probability-based prompt selection over model score tensors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// `auto` keeps each method's own aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggArg(pub Option<AggregationMode>);

impl FromStr for AggArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(AggArg(None))
        } else {
            s.parse::<AggregationMode>()
                .map(|m| AggArg(Some(m)))
                .map_err(|_| format!("unknown aggregation `{s}` (expected one of: otr, mean, sum, auto)"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Tsv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select a prompt with one method and report its performance.
    Select {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        method: NamedMethod,
        #[arg(long, default_value = "none")]
        calibration: CalibrationMethod,
        #[arg(long, default_value = "none")]
        scenario: CalibrationScenario,
        #[arg(long, default_value = "auto")]
        agg: AggArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every method under every calibration scenario.
    Sweep {
        #[arg(long)]
        tensor: PathBuf,
        /// Calibration methods to sweep (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "cbm")]
        calibration: Vec<CalibrationMethod>,
        #[arg(long, default_value = "auto")]
        agg: AggArg,
        #[arg(long, value_enum, default_value = "json")]
        format: OutputFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ratio of prompts whose answers improve under each calibration method.
    CalibrateReport {
        #[arg(long, required = true)]
        tensor: Vec<PathBuf>,
        #[arg(long, default_value = "auto")]
        agg: AggArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pearson correlation between each method's scores and prompt performance.
    Correlate {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long, default_value = "none")]
        calibration: CalibrationMethod,
        #[arg(long, default_value = "none")]
        scenario: CalibrationScenario,
        #[arg(long, default_value = "auto")]
        agg: AggArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a deterministic synthetic tensor.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// One profile per prompt (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        profiles: Vec<PromptProfile>,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 2)]
        choices: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value = "balanced")]
        category: Category,
        #[arg(long, default_value_t = 3)]
        max_tokens: usize,
    },
    /// Set every gold label of a dynamic tensor to index 0.
    RelabelBias {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a tensor file against every format invariant.
    Validate {
        #[arg(long)]
        tensor: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    category: &'static str,
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (category, code) = match &e {
            Error::Format(_) => ("format", 3),
            Error::MissingSection(_)
            | Error::TokenCount { .. }
            | Error::WrongCategory { .. }
            | Error::Invariant(_)
            | Error::NonFinite(_)
            | Error::IndexOutOfRange { .. }
            | Error::InvalidMethod(_)
            | Error::InvalidSynthSpec(_) => ("tensor", 4),
            _ => ("internal", 1),
        };
        Failure { category, code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { category: "io", code: 3, message: e.to_string() }
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&PathBuf>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure {
        category: "internal",
        code: 1,
        message: e.to_string(),
    })?;
    text.push('\n');
    write_text(&text, out)
}

fn write_text(text: &str, out: Option<&PathBuf>) -> Result<(), Failure> {
    match out {
        Some(path) => File::create(path)?.write_all(text.as_bytes())?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Select { tensor, method, calibration, scenario, agg, out } => {
            let t = load_tensor(&tensor)?;
            let report = selection_report(&t, method, calibration, scenario, agg.0)?;
            emit(&report, out.as_ref())
        }
        Command::Sweep { tensor, calibration, agg, format, out } => {
            let t = load_tensor(&tensor)?;
            let report = sweep(&t, &calibration, agg.0)?;
            match format {
                OutputFormat::Json => emit(&report, out.as_ref()),
                OutputFormat::Tsv => {
                    let mut text = String::from(SweepRow::TSV_HEADER);
                    text.push('\n');
                    for row in &report.rows {
                        text.push_str(&row.to_tsv());
                        text.push('\n');
                    }
                    write_text(&text, out.as_ref())
                }
            }
        }
        Command::CalibrateReport { tensor, agg, out } => {
            let tensors = tensor.iter().map(load_tensor).collect::<Result<Vec<_>, _>>()?;
            emit(&improvement_report(&tensors, agg.0)?, out.as_ref())
        }
        Command::Correlate { tensor, calibration, scenario, agg, out } => {
            let t = load_tensor(&tensor)?;
            emit(&correlation_report(&t, calibration, scenario, agg.0)?, out.as_ref())
        }
        Command::Synth { out, profiles, instances, choices, seed, noise, category, max_tokens } => {
            let spec = SynthSpec {
                num_instances: instances,
                num_choices: choices,
                seed,
                profiles,
                noise,
                category,
                max_tokens,
            };
            save_tensor(&synth_tensor(&spec)?, &out)?;
            Ok(())
        }
        Command::RelabelBias { tensor, out } => {
            let t = load_tensor(&tensor)?;
            save_tensor(&relabel_bias(&t)?, &out)?;
            Ok(())
        }
        Command::Validate { tensor } => {
            let t = load_tensor(&tensor)?;
            println!(
                "ok: {} ({}) prompts={} instances={} choices={}",
                t.dataset_id, t.category, t.num_prompts, t.num_instances, t.num_choices
            );
            Ok(())
        }
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.category, f.message);
            ExitCode::from(f.code)
        }
    }
}
