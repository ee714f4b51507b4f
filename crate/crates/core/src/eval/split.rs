use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Sample ids grouped by class, each group in ascending id order.
fn group_by_class<C: Ord + Clone>(labels: &BTreeMap<String, C>) -> BTreeMap<C, Vec<&str>> {
    let mut groups: BTreeMap<C, Vec<&str>> = BTreeMap::new();
    for (id, class) in labels {
        groups.entry(class.clone()).or_default().push(id);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub test_fraction: f64,
    pub seed: u64,
}

/// Holds out `round_half_up(fraction * n_c)` ids of every class `c`, chosen
/// by a seeded shuffle.
pub fn stratified_holdout<C: Ord + Clone + Display>(
    labels: &BTreeMap<String, C>,
    fraction: f64,
    seed: u64,
) -> Result<SplitAssignment, EvalError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::Input(format!("test fraction {fraction} must lie in (0, 1)")));
    }
    if labels.is_empty() {
        return Err(EvalError::Input("no samples to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitAssignment {
        train_ids: BTreeSet::new(),
        test_ids: BTreeSet::new(),
        test_fraction: fraction,
        seed,
    };
    for (class, mut ids) in group_by_class(labels) {
        let n = ids.len();
        let n_test = (fraction * n as f64 + 0.5).floor() as usize;
        if n_test == 0 || n_test == n {
            return Err(EvalError::Stratification {
                class: class.to_string(),
                message: format!(
                    "{n} samples at fraction {fraction} leave {n_test} for test and {} for train",
                    n - n_test
                ),
            });
        }
        ids.shuffle(&mut rng);
        out.test_ids.extend(ids[..n_test].iter().map(|s| s.to_string()));
        out.train_ids.extend(ids[n_test..].iter().map(|s| s.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    /// Ids assigned to `fold`, ascending.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles each class with a seeded generator and deals its ids round-robin
/// over the folds. The dealing position carries over from one class to the
/// next, so fold totals stay within one of each other as well.
pub fn stratified_kfold<C: Ord + Clone + Display>(
    labels: &BTreeMap<String, C>,
    k: usize,
    seed: u64,
) -> Result<FoldPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::Input(format!("k = {k}, need at least 2 folds")));
    }
    let groups = group_by_class(labels);
    if groups.is_empty() {
        return Err(EvalError::Input("no samples to split".into()));
    }
    if let Some((class, ids)) = groups.iter().find(|(_, ids)| ids.len() < k) {
        return Err(EvalError::Stratification {
            class: class.to_string(),
            message: format!("{} samples cannot fill {k} folds", ids.len()),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut next = 0usize;
    for (_, mut ids) in groups {
        ids.shuffle(&mut rng);
        for id in ids {
            assignments.insert(id.to_string(), next);
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}
