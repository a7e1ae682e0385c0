//! Driver for the full fitting procedure: configuration, the optimization
//! loop, stopping rules, data ingestion, cross-validation and output files.

mod config;
mod cv;
mod data;
mod driver;
mod gradcheck;
mod output;
mod stopping;

pub use config::{DataOptions, Prediction, Prior, RunConfig, Stopping};
pub use cv::{cross_validate, stratified_folds, sweep, thread_pool, CvReport, FoldMetrics, SweepCell};
pub use data::{load_csv, load_csv_like, parse_csv_str, ColumnTransform, LoadedData};
pub use driver::{build_model, fit, init_lambda, optimize, run, Metrics, OptimizeOutcome, RunResult, TraceRecord};
pub use gradcheck::{gradcheck, BlockCheck, GradCheckReport};
pub use output::{read_checkpoint, read_trace, summary_json, write_checkpoint, write_trace, TRACE_HEADER};
pub use stopping::{check_stopping, stop_index};
