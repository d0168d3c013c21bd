//! Optimization, the warmup schedule, variants, model selection and
//! multi-seed trials.

mod adam;
mod config;
mod search;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use config::{variant_weights, ActiveTerms, TrainConfig, Variant};
pub use search::{
    aggregate, grid_search, mean_std, run_trial, run_trials, validation_split, GridPoint,
    GridResult, TrialResult, TrialsReport, VALIDATION_SHARE,
};
pub use train::{effective_lambda, train, train_into, TraceRecord, TrainTrace, TRACE_HEADER};
