//! Random hyperparameter search over a declared space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BiLstmConfig, Scheduler, TaggerError};

/// Declared ranges: discrete choices plus log-uniform intervals for rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub num_layers: Vec<usize>,
    pub hidden_total: Vec<usize>,
    /// (low, high), sampled log-uniformly.
    pub learning_rate: (f64, f64),
    pub batch_size: Vec<usize>,
    /// (low, high), sampled log-uniformly.
    pub weight_decay: (f64, f64),
    pub scheduler: Vec<Scheduler>,
    pub patience: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            num_layers: vec![1, 2, 3],
            hidden_total: vec![64, 128, 256, 512],
            learning_rate: (1e-5, 1e-2),
            batch_size: vec![16, 32, 64],
            weight_decay: (1e-6, 1e-1),
            scheduler: vec![
                Scheduler::ReduceOnPlateau,
                Scheduler::CosineAnnealing,
                Scheduler::OneCycle,
                Scheduler::Exponential,
            ],
            patience: vec![3, 4, 5, 6],
        }
    }
}

impl SearchSpace {
    fn validate(&self) -> Result<(), TaggerError> {
        if self.num_layers.is_empty()
            || self.hidden_total.is_empty()
            || self.batch_size.is_empty()
            || self.scheduler.is_empty()
            || self.patience.is_empty()
        {
            return Err(TaggerError::Config("search space has an empty dimension".into()));
        }
        for &(lo, hi) in [&self.learning_rate, &self.weight_decay] {
            if lo <= 0.0 || hi < lo {
                return Err(TaggerError::Config("log-uniform range must be 0 < lo <= hi".into()));
            }
        }
        Ok(())
    }

    pub fn sample(&self, base: &BiLstmConfig, rng: &mut ChaCha8Rng) -> BiLstmConfig {
        let pick = |choices: &[usize], rng: &mut ChaCha8Rng| choices[rng.random_range(0..choices.len())];
        let log_uniform = |(lo, hi): (f64, f64), rng: &mut ChaCha8Rng| {
            if lo == hi {
                return lo;
            }
            (rng.random_range(lo.ln()..hi.ln())).exp()
        };
        BiLstmConfig {
            num_layers: pick(&self.num_layers, rng),
            hidden_total: pick(&self.hidden_total, rng),
            learning_rate: log_uniform(self.learning_rate, rng),
            batch_size: pick(&self.batch_size, rng),
            weight_decay: log_uniform(self.weight_decay, rng),
            scheduler: self.scheduler[rng.random_range(0..self.scheduler.len())],
            patience: pick(&self.patience, rng),
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: BiLstmConfig,
    pub objective: f64,
}

/// Samples `budget` configurations and returns the objective-maximizing one
/// together with the full trial log.
pub fn random_search(
    space: &SearchSpace,
    base: &BiLstmConfig,
    budget: usize,
    seed: u64,
    mut objective: impl FnMut(&BiLstmConfig) -> f64,
) -> Result<(BiLstmConfig, Vec<Trial>), TaggerError> {
    space.validate()?;
    if budget == 0 {
        return Err(TaggerError::Config("search budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(budget);
    for index in 0..budget {
        let config = space.sample(base, &mut rng);
        let objective = objective(&config);
        trials.push(Trial {
            index,
            config,
            objective,
        });
    }
    let best = trials
        .iter()
        .max_by(|a, b| a.objective.partial_cmp(&b.objective).unwrap())
        .expect("budget >= 1")
        .config;
    Ok((best, trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_one_returns_that_trial() {
        let space = SearchSpace::default();
        let (best, log) =
            random_search(&space, &BiLstmConfig::default(), 1, 0, |_| 0.5).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(best, log[0].config);
    }

    #[test]
    fn samples_stay_in_declared_ranges() {
        let space = SearchSpace::default();
        let (_, log) = random_search(&space, &BiLstmConfig::default(), 50, 123, |c| {
            -(c.learning_rate)
        })
        .unwrap();
        assert_eq!(log.len(), 50);
        for trial in &log {
            let c = &trial.config;
            assert!(space.num_layers.contains(&c.num_layers));
            assert!(space.hidden_total.contains(&c.hidden_total));
            assert!(space.batch_size.contains(&c.batch_size));
            assert!(space.patience.contains(&c.patience));
            assert!(c.learning_rate >= 1e-5 && c.learning_rate <= 1e-2);
            assert!(c.weight_decay >= 1e-6 && c.weight_decay <= 1e-1);
        }
        // argmax objective is the best trial
        let best = log
            .iter()
            .max_by(|a, b| a.objective.partial_cmp(&b.objective).unwrap())
            .unwrap();
        let (chosen, _) = random_search(&space, &BiLstmConfig::default(), 50, 123, |c| {
            -(c.learning_rate)
        })
        .unwrap();
        assert_eq!(chosen, best.config);
    }

    #[test]
    fn same_seed_identical_trial_sequences() {
        let space = SearchSpace::default();
        let (_, a) = random_search(&space, &BiLstmConfig::default(), 10, 7, |_| 0.0).unwrap();
        let (_, b) = random_search(&space, &BiLstmConfig::default(), 10, 7, |_| 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_space_rejected() {
        let space = SearchSpace {
            hidden_total: vec![],
            ..Default::default()
        };
        assert!(random_search(&space, &BiLstmConfig::default(), 5, 0, |_| 0.0).is_err());
    }
}
