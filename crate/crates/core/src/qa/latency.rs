use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::QaError;
use crate::imaging::ModelInput;
use crate::inference::{ModelHandle, Scorer};

/// Monotonic time source in milliseconds.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e3
    }
}

/// Replays a fixed sequence of readings. Built from durations, consecutive
/// pairs of readings differ by those durations. Once exhausted it keeps
/// returning the last reading.
pub struct ScriptedClock {
    readings: Mutex<VecDeque<f64>>,
    last: Mutex<f64>,
}

impl ScriptedClock {
    pub fn from_readings(readings: impl IntoIterator<Item = f64>) -> Self {
        Self { readings: Mutex::new(readings.into_iter().collect()), last: Mutex::new(0.0) }
    }

    /// Readings `0, d0, d0, d0 + d1, ...` so each start/stop pair measures
    /// one duration.
    pub fn from_durations(durations: &[f64]) -> Self {
        let mut t = 0.0;
        let mut readings = Vec::with_capacity(durations.len() * 2);
        for d in durations {
            readings.push(t);
            t += d;
            readings.push(t);
        }
        Self::from_readings(readings)
    }
}

impl Clock for ScriptedClock {
    fn now_ms(&self) -> f64 {
        let mut last = self.last.lock().unwrap();
        if let Some(v) = self.readings.lock().unwrap().pop_front() {
            *last = v;
        }
        *last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub runs: usize,
    pub warmup_runs: usize,
    pub device_label: String,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { runs: 5, warmup_runs: 2, device_label: "cpu".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub runs: usize,
    pub warmup_runs: usize,
    pub per_run: Vec<f64>,
    pub mean: f64,
    pub device_label: String,
}

/// Benchmarks a loaded model. The handle is reserved for the duration, so
/// concurrent predictions on it fail with a busy error instead of skewing
/// the timings.
pub fn benchmark_latency(
    handle: &ModelHandle,
    input: &ModelInput,
    cfg: &BenchmarkConfig,
    clock: &dyn Clock,
) -> Result<LatencyStats, QaError> {
    let reserved = handle.reserve()?;
    benchmark_scorer(&reserved, input, cfg, clock)
}

/// Runs `warmup_runs` untimed passes, then `runs` timed passes one after
/// another on the calling thread.
pub fn benchmark_scorer<S: Scorer + ?Sized>(
    scorer: &S,
    input: &ModelInput,
    cfg: &BenchmarkConfig,
    clock: &dyn Clock,
) -> Result<LatencyStats, QaError> {
    if cfg.runs == 0 {
        return Err(QaError::Input("benchmark needs at least one timed run".into()));
    }
    for index in 0..cfg.warmup_runs {
        scorer
            .score(input)
            .map_err(|source| QaError::BenchmarkAborted { phase: "warm-up", index, source })?;
    }
    let mut per_run = Vec::with_capacity(cfg.runs);
    for index in 0..cfg.runs {
        let start = clock.now_ms();
        scorer
            .score(input)
            .map_err(|source| QaError::BenchmarkAborted { phase: "timed", index, source })?;
        per_run.push(clock.now_ms() - start);
    }
    let min = per_run.iter().copied().fold(f64::INFINITY, f64::min);
    let max = per_run.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = (per_run.iter().sum::<f64>() / per_run.len() as f64).clamp(min, max);
    Ok(LatencyStats {
        runs: cfg.runs,
        warmup_runs: cfg.warmup_runs,
        per_run,
        mean,
        device_label: cfg.device_label.clone(),
    })
}
