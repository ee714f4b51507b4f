use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, FoldPlan};

/// Ground truth; WSSV is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truth {
    Healthy,
    Wssv,
}

impl Truth {
    pub fn is_positive(self) -> bool {
        self == Truth::Wssv
    }
}

impl std::fmt::Display for Truth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Truth::Healthy => "healthy",
            Truth::Wssv => "wssv",
        })
    }
}

impl std::str::FromStr for Truth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wssv" | "1" | "positive" => Ok(Truth::Wssv),
            "healthy" | "0" | "negative" => Ok(Truth::Healthy),
            other => Err(format!("unknown truth value `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub sample_id: String,
    pub truth: Truth,
    pub score: f64,
}

impl LabeledScore {
    pub fn new(sample_id: impl Into<String>, truth: Truth, score: f64) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(EvalError::Input(format!("score {score} lies outside [0, 1]")));
        }
        Ok(Self { sample_id: sample_id.into(), truth, score })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Tallies truth against `score >= threshold`.
pub fn confusion(items: &[LabeledScore], threshold: f64) -> Result<ConfusionMatrix, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Input("cannot build a confusion matrix from no items".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for item in items {
        match (item.truth.is_positive(), item.score >= threshold) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub value: f64,
    /// Set when `2tp + fp + fn = 0`; `value` is then 0.
    pub degenerate: bool,
}

/// `2tp / (2tp + fp + fn)`.
pub fn f1_score(cm: &ConfusionMatrix) -> F1Score {
    let denom = 2 * cm.tp + cm.fp + cm.fn_;
    if denom == 0 {
        return F1Score { value: 0.0, degenerate: true };
    }
    F1Score { value: (2 * cm.tp) as f64 / denom as f64, degenerate: false }
}

/// `fn / (fn + tp)`; undefined without actual positives.
pub fn fnr(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let positives = cm.fn_ + cm.tp;
    if positives == 0 {
        return Err(EvalError::UndefinedMetric("FNR needs at least one actual positive".into()));
    }
    Ok(cm.fn_ as f64 / positives as f64)
}

/// Area under the ROC curve via mid-ranks (Mann-Whitney U). Tied
/// positive/negative pairs count one half.
pub fn auc_roc(items: &[LabeledScore]) -> Result<f64, EvalError> {
    if let Some(bad) = items.iter().find(|i| !i.score.is_finite()) {
        return Err(EvalError::Input(format!("non-finite score for `{}`", bad.sample_id)));
    }
    let n_pos = items.iter().filter(|i| i.truth.is_positive()).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::UndefinedMetric(
            "AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<&LabeledScore> = items.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));
    let mut positive_rank_sum = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && order[end].score == order[start].score {
            end += 1;
        }
        // 1-based ranks start+1..=end share their mean.
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|i| i.truth.is_positive()).count();
        positive_rank_sum += mid_rank * positives as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let u = positive_rank_sum - p * (p + 1.0) / 2.0;
    Ok((u / (p * n)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub f1: f64,
    pub auc: f64,
    pub fnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub f1: f64,
    pub auc: f64,
    pub fnr: f64,
    #[serde(default)]
    pub f1_degenerate: bool,
}

impl FoldMetrics {
    pub fn new(f1: f64, auc: f64, fnr: f64) -> Self {
        Self { f1, auc, fnr, f1_degenerate: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub per_fold: Vec<FoldMetrics>,
    pub mean: MetricTriple,
    pub stddev: MetricTriple,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-metric mean and population standard deviation over folds.
pub fn aggregate_folds(per_fold: &[FoldMetrics]) -> Result<MetricsSummary, EvalError> {
    if per_fold.is_empty() {
        return Err(EvalError::Input("no folds to aggregate".into()));
    }
    for (i, m) in per_fold.iter().enumerate() {
        for (name, v) in [("f1", m.f1), ("auc", m.auc), ("fnr", m.fnr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(EvalError::Input(format!("fold {i}: {name} = {v} lies outside [0, 1]")));
            }
        }
    }
    let (f1, f1_sd) = mean_std(per_fold.iter().map(|m| m.f1));
    let (auc, auc_sd) = mean_std(per_fold.iter().map(|m| m.auc));
    let (fnr, fnr_sd) = mean_std(per_fold.iter().map(|m| m.fnr));
    Ok(MetricsSummary {
        per_fold: per_fold.to_vec(),
        mean: MetricTriple { f1, auc, fnr },
        stddev: MetricTriple { f1: f1_sd, auc: auc_sd, fnr: fnr_sd },
    })
}

fn fold_metrics(items: &[LabeledScore], threshold: f64) -> Result<FoldMetrics, EvalError> {
    let cm = confusion(items, threshold)?;
    let f1 = f1_score(&cm);
    Ok(FoldMetrics {
        f1: f1.value,
        auc: auc_roc(items)?,
        fnr: fnr(&cm)?,
        f1_degenerate: f1.degenerate,
    })
}

/// Metrics for each fold's scored items, then [`aggregate_folds`].
pub fn evaluate_folds(folds: &[Vec<LabeledScore>], threshold: f64) -> Result<MetricsSummary, EvalError> {
    let per_fold = folds
        .iter()
        .enumerate()
        .map(|(fold, items)| {
            fold_metrics(items, threshold).map_err(|e| EvalError::Fold { fold, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    aggregate_folds(&per_fold)
}

/// Evaluates scores produced for each fold of `plan`. Every fold needs
/// scores, and every scored id must belong to the fold it is reported for.
pub fn evaluate_run(
    plan: &FoldPlan,
    scores: &BTreeMap<usize, Vec<LabeledScore>>,
    threshold: f64,
) -> Result<MetricsSummary, EvalError> {
    if let Some(extra) = scores.keys().find(|&&f| f >= plan.k) {
        return Err(EvalError::Input(format!("scores given for fold {extra}, plan has {} folds", plan.k)));
    }
    let mut folds = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let items = scores
            .get(&fold)
            .ok_or_else(|| EvalError::Input(format!("no scores for fold {fold}")))?;
        for item in items {
            match plan.assignments.get(&item.sample_id) {
                Some(&f) if f == fold => {}
                Some(&f) => {
                    return Err(EvalError::Input(format!(
                        "sample `{}` scored in fold {fold} but assigned to fold {f}",
                        item.sample_id
                    )))
                }
                None => {
                    return Err(EvalError::Input(format!(
                        "sample `{}` is not part of the fold plan",
                        item.sample_id
                    )))
                }
            }
        }
        folds.push(items.clone());
    }
    evaluate_folds(&folds, threshold)
}
