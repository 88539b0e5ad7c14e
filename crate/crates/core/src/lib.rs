//! Calibration and evaluation of risk-controlled prediction sets built from
//! recorded generative-model samples.
//!
//! A sampler draws candidates in order, rejects low-quality or duplicate
//! ones, and stops once a set-confidence score clears a threshold. The
//! thresholds are calibrated with Learn-Then-Test (binomial-tail p-values,
//! Pareto-ordered fixed sequence testing) so that the returned set contains
//! an admissible answer with probability at least `1 - epsilon`, with
//! confidence `1 - delta` over the calibration draw. A second threshold
//! selects individual components whose false-positive risk is controlled
//! at `alpha`.

pub mod calibration;
pub mod components;
pub mod error;
pub mod evaluation;
pub mod ext_float;
pub mod records;
pub mod replay;
pub mod seeds;
pub mod set_scoring;
pub mod synthetic;
pub mod text_metrics;

pub use calibration::{
    achievable_epsilon_band, binomial_tail_pvalue, calibrate_lambda, empirical_risk,
    fixed_sequence_test, pareto_frontier, pareto_testing_order, CalibrationResult, RiskSpec,
};
pub use components::{
    apply_component_selection, calibrate_gamma, component_loss, select_components, ComponentSet,
    GammaResult, GammaSpec,
};
pub use error::{Error, Result};
pub use evaluation::{
    component_sweep, conservative_admission_check, normalized_auc, run_trial, sweep, write_csv,
    ConservativeReport, SweepReport, TrialOptions, TrialReport,
};
pub use records::{
    load_dataset, load_dataset_with, save_dataset, split_dataset, split_pair, ComponentRecord,
    Dataset, LoadOptions, PromptRecord, SampleRecord, SplitFractions,
};
pub use replay::{replay, replay_grid, LambdaConfig, ReplayOutcome};
pub use set_scoring::{set_score, uses_rejection, ScorerKind, SetState};
