//! Conversion parity and CPU latency checks for exported models.

mod latency;
mod parity;

pub use latency::{
    benchmark_latency, benchmark_scorer, BenchmarkConfig, Clock, LatencyStats, ScriptedClock,
    SystemClock,
};
pub use parity::{
    align_scores, compare_outputs, gate_parity, read_score_csv, ParityGate, ParityReport,
    ParityStats, ParityVerdict, Violation,
};

use thiserror::Error;

use crate::inference::InferenceError;

#[derive(Debug, Error)]
pub enum QaError {
    #[error("input error: {0}")]
    Input(String),
    #[error("invalid gate: {0}")]
    Gate(String),
    #[error("benchmark aborted at {phase} run {index}: {source}")]
    BenchmarkAborted {
        phase: &'static str,
        index: usize,
        #[source]
        source: InferenceError,
    },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
