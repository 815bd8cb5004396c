//! Probability-based prompt selection.
//!
//! Given the output probabilities of a language model for a set of prompt
//! templates over a dataset (a [`ScoreTensor`]), this crate computes prompt
//! selection scores for the mutual-information family and its relatives,
//! calibrates output probabilities, and evaluates the selected prompts.
//!
//! ```
//! use promptsel::{select, synth_tensor, CalibrationMethod, CalibrationScenario, NamedMethod};
//! use promptsel::synth::{PromptProfile, SynthSpec};
//! use promptsel::tensor::Category;
//!
//! let spec = SynthSpec {
//!     num_instances: 20,
//!     num_choices: 2,
//!     seed: 1,
//!     profiles: vec![PromptProfile::UniformNoise, PromptProfile::PlantedBest],
//!     noise: 0.0,
//!     category: Category::Balanced,
//!     max_tokens: 2,
//! };
//! let tensor = synth_tensor(&spec).unwrap();
//! let result = select(
//!     &tensor,
//!     &NamedMethod::MiA.spec(),
//!     CalibrationMethod::Cbm,
//!     CalibrationScenario::Both,
//!     None,
//! )
//! .unwrap();
//! assert_eq!(result.outcome.prompt_for(0), 1);
//! ```

pub mod calibration;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod format;
pub mod report;
pub mod selection;
pub mod synth;
pub mod tensor;

pub use calibration::{apply_scenario, CalibratedScores, CalibrationMethod, CalibrationScenario};
pub use error::{Error, Result};
pub use format::{load_tensor, save_tensor};
pub use selection::{select, MethodSpec, NamedMethod, SelectionOutcome, SelectionResult};
pub use synth::{relabel_bias, synth_tensor};
pub use tensor::{AggregationMode, AnswerDistribution, ScoreTensor};
