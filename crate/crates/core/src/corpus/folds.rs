//! Deterministic k-fold splitting with train/validation/test roles.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        SplitRatios { train, val, test }
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios::new(0.6, 0.2, 0.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

/// Document ids per role for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl FoldAssignment {
    pub fn role_of(&self, doc_id: &str) -> Option<Role> {
        if self.train.iter().any(|d| d == doc_id) {
            Some(Role::Train)
        } else if self.val.iter().any(|d| d == doc_id) {
            Some(Role::Val)
        } else if self.test.iter().any(|d| d == doc_id) {
            Some(Role::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub k: usize,
    pub ratios: SplitRatios,
    pub folds: Vec<FoldAssignment>,
}

/// Shuffles the ids once, then carves each fold's test and validation slices
/// from a rotating offset so test sets stay disjoint across folds whenever
/// the test fraction is at most 1/k.
pub fn split_folds(
    doc_ids: &[String],
    k: usize,
    ratios: SplitRatios,
    seed: u64,
) -> Result<FoldPlan, CorpusError> {
    if k < 2 {
        return Err(CorpusError::Sizing(format!("k must be at least 2, got {k}")));
    }
    if ratios.train <= 0.0 || ratios.val <= 0.0 || ratios.test <= 0.0 {
        return Err(CorpusError::Sizing("all split ratios must be positive".into()));
    }
    let sum = ratios.train + ratios.val + ratios.test;
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Sizing(format!("split ratios sum to {sum}, not 1")));
    }
    let n = doc_ids.len();
    if n < k {
        return Err(CorpusError::Sizing(format!(
            "{n} documents cannot be split into {k} folds"
        )));
    }

    let n_test = (ratios.test * n as f64).round() as usize;
    let n_val = (ratios.val * n as f64).round() as usize;
    if n_test == 0 || n_val == 0 || n_test + n_val >= n {
        return Err(CorpusError::Sizing(format!(
            "{n} documents leave an empty role under the requested ratios"
        )));
    }

    let mut shuffled: Vec<String> = doc_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let folds = (0..k)
        .map(|fold| {
            let start = fold * n / k;
            let take = |offset: usize, len: usize| -> Vec<String> {
                (0..len)
                    .map(|j| shuffled[(start + offset + j) % n].clone())
                    .collect()
            };
            let test = take(0, n_test);
            let val = take(n_test, n_val);
            let train = (0..n - n_test - n_val)
                .map(|j| shuffled[(start + n_test + n_val + j) % n].clone())
                .collect();
            FoldAssignment { train, val, test }
        })
        .collect();

    Ok(FoldPlan {
        seed,
        k,
        ratios,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("doc{i}")).collect()
    }

    fn assert_plan_invariants(plan: &FoldPlan, n: usize) {
        for fold in &plan.folds {
            let train: HashSet<_> = fold.train.iter().collect();
            let val: HashSet<_> = fold.val.iter().collect();
            let test: HashSet<_> = fold.test.iter().collect();
            assert!(train.is_disjoint(&val));
            assert!(train.is_disjoint(&test));
            assert!(val.is_disjoint(&test));
            assert_eq!(train.len() + val.len() + test.len(), n);
        }
    }

    #[test]
    fn main_protocol_split() {
        let plan = split_folds(&ids(102), 5, SplitRatios::new(0.6, 0.2, 0.2), 13).unwrap();
        assert_eq!(plan.folds.len(), 5);
        assert_plan_invariants(&plan, 102);
        for fold in &plan.folds {
            // requested 61.2/20.4/20.4; observed counts within one document
            assert_eq!(fold.test.len(), 20);
            assert_eq!(fold.val.len(), 20);
            assert_eq!(fold.train.len(), 62);
        }
        // rotating offsets keep the five test sets disjoint
        let mut all_test = HashSet::new();
        for fold in &plan.folds {
            for id in &fold.test {
                assert!(all_test.insert(id.clone()), "test sets overlap at {id}");
            }
        }
    }

    #[test]
    fn supplement_protocol_split() {
        let plan = split_folds(&ids(10), 5, SplitRatios::new(0.8, 0.1, 0.1), 0).unwrap();
        assert_plan_invariants(&plan, 10);
        for fold in &plan.folds {
            assert_eq!(fold.train.len(), 8);
            assert_eq!(fold.val.len(), 1);
            assert_eq!(fold.test.len(), 1);
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let a = split_folds(&ids(30), 5, SplitRatios::default(), 99).unwrap();
        let b = split_folds(&ids(30), 5, SplitRatios::default(), 99).unwrap();
        assert_eq!(a, b);
        let c = split_folds(&ids(30), 5, SplitRatios::default(), 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_documents_is_sizing_error() {
        let err = split_folds(&ids(3), 5, SplitRatios::default(), 0).unwrap_err();
        assert!(matches!(err, CorpusError::Sizing(_)));
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(split_folds(&ids(20), 5, SplitRatios::new(0.5, 0.2, 0.2), 0).is_err());
        assert!(split_folds(&ids(20), 5, SplitRatios::new(1.0, 0.0, 0.0), 0).is_err());
    }
}
