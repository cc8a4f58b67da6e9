//! Class rebalancing for relation-classifier training: SMOTE synthesis of
//! minority feature vectors plus random undersampling of the majority class
//! down to a target minority/majority ratio.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BalanceError {
    #[error("SMOTE needs at least 2 minority points, got {0}")]
    InsufficientMinority(usize),
    #[error("SMOTE neighbor count {k} must be smaller than the minority size {n}")]
    BadNeighborCount { k: usize, n: usize },
    #[error("undersample target {target} exceeds population {population}")]
    TargetTooLarge { target: usize, population: usize },
    #[error("rebalance requires both classes, {0} class is empty")]
    MissingClass(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RebalanceConfig {
    /// Minority/majority count ratio after resampling.
    pub target_ratio: f64,
    /// Nearest-neighbor pool size for SMOTE interpolation.
    pub smote_k: usize,
    /// SMOTE output size as a multiple of the original minority count.
    pub minority_multiplier: usize,
    pub seed: u64,
}

impl Default for RebalanceConfig {
    fn default() -> Self {
        RebalanceConfig {
            target_ratio: 0.4,
            smote_k: 5,
            minority_multiplier: 4,
            seed: 0,
        }
    }
}

/// Draws `count` synthetic points, each on the segment between a uniformly
/// chosen minority point and one of its `k` Euclidean nearest minority
/// neighbors: `x' = x + λ(x_nn − x)` with `λ ~ U[0,1)`.
pub fn smote_synthesize(
    minority: &[Vec<f64>],
    k: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, BalanceError> {
    let n = minority.len();
    if n < 2 {
        return Err(BalanceError::InsufficientMinority(n));
    }
    if k == 0 || k >= n {
        return Err(BalanceError::BadNeighborCount { k, n });
    }

    // k nearest neighbors per point; distance ties break by index
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                sq_dist(&minority[i], &minority[a])
                    .partial_cmp(&sq_dist(&minority[i], &minority[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            order.truncate(k);
            order
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.random_range(0..n);
        let j = neighbors[i][rng.random_range(0..k)];
        let lambda: f64 = rng.random();
        let point = minority[i]
            .iter()
            .zip(&minority[j])
            .map(|(&a, &b)| a + lambda * (b - a))
            .collect();
        out.push(point);
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Uniform sample without replacement, returned in ascending order.
pub fn undersample(
    majority_indices: &[usize],
    target_count: usize,
    seed: u64,
) -> Result<Vec<usize>, BalanceError> {
    if target_count > majority_indices.len() {
        return Err(BalanceError::TargetTooLarge {
            target: target_count,
            population: majority_indices.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = majority_indices.to_vec();
    pool.shuffle(&mut rng);
    pool.truncate(target_count);
    pool.sort_unstable();
    Ok(pool)
}

/// Resampled training set: minority grown by SMOTE to
/// `minority_multiplier ×` its original size, majority cut so the class
/// ratio hits `target_ratio` (capped at the original majority size), output
/// order shuffled deterministically.
///
/// `smote_k` is clamped to `minority − 1` when the minority class is smaller
/// than the configured neighbor pool.
pub fn rebalance(
    features: &[Vec<f64>],
    labels: &[bool],
    config: &RebalanceConfig,
) -> Result<(Vec<Vec<f64>>, Vec<bool>), BalanceError> {
    assert_eq!(features.len(), labels.len());
    let pos_idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg_idx: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos_idx.is_empty() {
        return Err(BalanceError::MissingClass("positive"));
    }
    if neg_idx.is_empty() {
        return Err(BalanceError::MissingClass("negative"));
    }
    // the rarer class is the minority; ties treat positives as minority
    let (min_idx, maj_idx, minority_is_positive) = if pos_idx.len() <= neg_idx.len() {
        (pos_idx, neg_idx, true)
    } else {
        (neg_idx, pos_idx, false)
    };

    let minority: Vec<Vec<f64>> = min_idx.iter().map(|&i| features[i].clone()).collect();
    let synth_count = minority.len() * (config.minority_multiplier.max(1) - 1);
    let synthetic = if synth_count > 0 {
        let k = config.smote_k.min(minority.len() - 1);
        if minority.len() < 2 {
            return Err(BalanceError::InsufficientMinority(minority.len()));
        }
        smote_synthesize(&minority, k, synth_count, config.seed)?
    } else {
        Vec::new()
    };
    let minority_total = minority.len() + synthetic.len();

    let majority_target =
        (((minority_total as f64) / config.target_ratio).round() as usize).min(maj_idx.len());
    let kept = undersample(&maj_idx, majority_target, config.seed.wrapping_add(1))?;

    let mut out: Vec<(Vec<f64>, bool)> = Vec::with_capacity(minority_total + kept.len());
    for v in minority {
        out.push((v, minority_is_positive));
    }
    for v in synthetic {
        out.push((v, minority_is_positive));
    }
    for i in kept {
        out.push((features[i].clone(), !minority_is_positive));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    out.shuffle(&mut rng);
    Ok(out.into_iter().unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Oracle: a synthetic point must lie on a segment between some minority
    /// point and one of its k nearest neighbors (checked exhaustively).
    pub(crate) fn on_some_neighbor_segment(
        point: &[f64],
        minority: &[Vec<f64>],
        k: usize,
    ) -> bool {
        let n = minority.len();
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                sq_dist(&minority[i], &minority[a])
                    .partial_cmp(&sq_dist(&minority[i], &minority[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for &j in order.iter().take(k) {
                if on_segment(point, &minority[i], &minority[j]) {
                    return true;
                }
            }
        }
        false
    }

    fn on_segment(p: &[f64], a: &[f64], b: &[f64]) -> bool {
        // recover lambda from the first coordinate where a and b differ,
        // then verify every coordinate
        let mut lambda = None;
        for d in 0..p.len() {
            if (b[d] - a[d]).abs() > 1e-12 {
                lambda = Some((p[d] - a[d]) / (b[d] - a[d]));
                break;
            }
        }
        let lambda = match lambda {
            Some(l) => l,
            None => return p.iter().zip(a).all(|(&x, &y)| (x - y).abs() < 1e-12),
        };
        if !(-1e-9..=1.0 + 1e-9).contains(&lambda) {
            return false;
        }
        p.iter()
            .zip(a.iter().zip(b))
            .all(|(&pv, (&av, &bv))| (pv - (av + lambda * (bv - av))).abs() < 1e-9)
    }

    #[test]
    fn one_dimensional_interpolation_stays_in_range() {
        let minority = vec![vec![0.0], vec![1.0]];
        let synth = smote_synthesize(&minority, 1, 3, 7).unwrap();
        assert_eq!(synth.len(), 3);
        for p in &synth {
            assert!((0.0..=1.0).contains(&p[0]), "point {p:?} outside [0,1]");
        }
    }

    #[test]
    fn zero_count_is_empty() {
        let minority = vec![vec![0.0], vec![1.0]];
        assert!(smote_synthesize(&minority, 1, 0, 7).unwrap().is_empty());
    }

    #[test]
    fn synthetic_points_pass_segment_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let minority: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let synth = smote_synthesize(&minority, 3, 20, 5).unwrap();
        assert_eq!(synth.len(), 20);
        for p in &synth {
            assert!(on_some_neighbor_segment(p, &minority, 3), "point {p:?}");
        }
    }

    #[test]
    fn synthetic_points_stay_in_componentwise_hull() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let minority: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let synth = smote_synthesize(&minority, 4, 50, 9).unwrap();
        for d in 0..3 {
            let lo = minority.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
            let hi = minority.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
            for p in &synth {
                assert!(p[d] >= lo - 1e-12 && p[d] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn insufficient_minority_rejected() {
        assert!(matches!(
            smote_synthesize(&[vec![1.0]], 1, 3, 0),
            Err(BalanceError::InsufficientMinority(1))
        ));
    }

    #[test]
    fn undersample_basics() {
        let pop: Vec<usize> = (0..100).collect();
        let sub = undersample(&pop, 40, 3).unwrap();
        assert_eq!(sub.len(), 40);
        let mut dedup = sub.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 40, "indices must be distinct");

        let all = undersample(&pop, 100, 3).unwrap();
        assert_eq!(all, pop);

        assert_eq!(undersample(&pop, 40, 3).unwrap(), sub);
        assert!(undersample(&pop, 101, 3).is_err());
    }

    #[test]
    fn rebalance_reference_arithmetic() {
        // 5 positives, 1000 negatives, multiplier 4, ratio 0.4:
        // minority' = 5*4 = 20, majority' = round(20/0.4) = 50
        let mut features: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for i in 0..1005 {
            features.push(vec![rng.random_range(0.0..1.0), i as f64]);
            labels.push(i < 5);
        }
        let (f2, l2) = rebalance(&features, &labels, &RebalanceConfig::default()).unwrap();
        let pos = l2.iter().filter(|&&l| l).count();
        let neg = l2.len() - pos;
        assert_eq!((pos, neg), (20, 50));
        assert_eq!(f2.len(), 70);
    }

    #[test]
    fn rebalance_majority_cap() {
        // 5 positives, 6 negatives: majority target 50 capped at 6
        let mut features: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for i in 0..11 {
            features.push(vec![i as f64, 0.5]);
            labels.push(i < 5);
        }
        let (_, l2) = rebalance(&features, &labels, &RebalanceConfig::default()).unwrap();
        let pos = l2.iter().filter(|&&l| l).count();
        assert_eq!((pos, l2.len() - pos), (20, 6));
    }

    #[test]
    fn rebalance_ratio_one_multiplier_one() {
        let mut features: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            features.push(vec![i as f64]);
            labels.push(i < 10);
        }
        let config = RebalanceConfig {
            target_ratio: 1.0,
            minority_multiplier: 1,
            ..Default::default()
        };
        let (_, l2) = rebalance(&features, &labels, &config).unwrap();
        let pos = l2.iter().filter(|&&l| l).count();
        assert_eq!((pos, l2.len() - pos), (10, 10));
    }

    #[test]
    fn rebalance_keeps_all_original_minority_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut features: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            features.push(vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]);
            labels.push(i < 6);
        }
        let (f2, l2) = rebalance(&features, &labels, &RebalanceConfig::default()).unwrap();
        for i in 0..6 {
            let found = f2
                .iter()
                .zip(&l2)
                .any(|(v, &l)| l && v == &features[i]);
            assert!(found, "original minority point {i} missing");
        }
    }

    #[test]
    fn rebalance_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let features: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random(), rng.random()]).collect();
        let labels: Vec<bool> = (0..50).map(|i| i % 10 == 0).collect();
        let a = rebalance(&features, &labels, &RebalanceConfig::default()).unwrap();
        let b = rebalance(&features, &labels, &RebalanceConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rebalance_missing_class_rejected() {
        let features = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            rebalance(&features, &[true, true], &RebalanceConfig::default()),
            Err(BalanceError::MissingClass("negative"))
        ));
        assert!(matches!(
            rebalance(&features, &[false, false], &RebalanceConfig::default()),
            Err(BalanceError::MissingClass("positive"))
        ));
    }
}
