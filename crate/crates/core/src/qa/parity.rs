use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::QaError;

/// Statistics of element-wise absolute differences between two score
/// vectors. `stddev` is the population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityStats {
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

pub fn compare_outputs(reference: &[f64], candidate: &[f64]) -> Result<ParityStats, QaError> {
    if reference.len() != candidate.len() {
        return Err(QaError::Input(format!(
            "reference has {} scores, candidate has {}",
            reference.len(),
            candidate.len()
        )));
    }
    if reference.is_empty() {
        return Err(QaError::Input("no scores to compare".into()));
    }
    if let Some(i) = reference.iter().chain(candidate).position(|v| !v.is_finite()) {
        return Err(QaError::Input(format!("non-finite score at position {}", i % reference.len())));
    }
    let diffs: Vec<f64> = reference.iter().zip(candidate).map(|(a, b)| (a - b).abs()).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let min = diffs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ParityStats { mean: mean.clamp(min, max), stddev: var.sqrt(), min, max, count: diffs.len() })
}

/// Acceptance bounds for [`ParityStats`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityGate {
    pub max_tolerance: f64,
    pub mean_tolerance: f64,
}

impl Default for ParityGate {
    /// Seeded from the worst converted classifier observed in practice
    /// (mean 3.63e-5, max 1.65e-3) with headroom.
    fn default() -> Self {
        Self { max_tolerance: 2e-3, mean_tolerance: 1e-4 }
    }
}

impl ParityGate {
    pub fn validate(&self) -> Result<(), QaError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.max_tolerance) || !positive(self.mean_tolerance) {
            return Err(QaError::Gate("tolerances must be finite and positive".into()));
        }
        if self.mean_tolerance > self.max_tolerance {
            return Err(QaError::Gate(format!(
                "mean tolerance {} exceeds max tolerance {}",
                self.mean_tolerance, self.max_tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub bound: String,
    pub observed: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityVerdict {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

pub fn gate_parity(stats: &ParityStats, gate: &ParityGate) -> Result<ParityVerdict, QaError> {
    gate.validate()?;
    let mut violations = Vec::new();
    if stats.max > gate.max_tolerance {
        violations.push(Violation { bound: "max".into(), observed: stats.max, limit: gate.max_tolerance });
    }
    if stats.mean > gate.mean_tolerance {
        violations.push(Violation { bound: "mean".into(), observed: stats.mean, limit: gate.mean_tolerance });
    }
    Ok(ParityVerdict { passed: violations.is_empty(), violations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub stats: ParityStats,
    pub gate: ParityGate,
    pub verdict: ParityVerdict,
}

#[derive(Deserialize)]
struct ScoreRow {
    input_id: String,
    score: f64,
}

/// Reads `input_id,score` rows (header required).
pub fn read_score_csv(reader: impl std::io::Read) -> Result<Vec<(String, f64)>, QaError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for row in rdr.deserialize::<ScoreRow>() {
        let row = row?;
        rows.push((row.input_id, row.score));
    }
    Ok(rows)
}

/// Pairs scores by input id, in reference order. Both sides must cover the
/// same ids exactly once.
pub fn align_scores(
    reference: &[(String, f64)],
    candidate: &[(String, f64)],
) -> Result<(Vec<f64>, Vec<f64>), QaError> {
    let mut by_id: HashMap<&str, f64> = HashMap::with_capacity(candidate.len());
    for (id, score) in candidate {
        if by_id.insert(id.as_str(), *score).is_some() {
            return Err(QaError::Input(format!("duplicate candidate id `{id}`")));
        }
    }
    if reference.len() != candidate.len() {
        return Err(QaError::Input(format!(
            "reference has {} rows, candidate has {}",
            reference.len(),
            candidate.len()
        )));
    }
    let mut refs = Vec::with_capacity(reference.len());
    let mut cands = Vec::with_capacity(reference.len());
    for (id, score) in reference {
        let c = by_id
            .remove(id.as_str())
            .ok_or_else(|| QaError::Input(format!("candidate has no score for `{id}`")))?;
        refs.push(*score);
        cands.push(c);
    }
    Ok((refs, cands))
}
