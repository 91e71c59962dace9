//! Synthetic students answering a fixed exercise sequence under a
//! three-parameter-style IRT model with a guessing floor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, InteractionSequence};
use crate::error::{DktError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_students: usize,
    pub n_exercises: usize,
    pub n_concepts: usize,
    /// Probability of answering correctly by guessing.
    pub guess_c: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_students: 2000,
            n_exercises: 50,
            n_concepts: 5,
            guess_c: 0.25,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_students == 0 {
            return Err(DktError::contract("at least one student is required"));
        }
        if self.n_exercises < 2 {
            return Err(DktError::contract("at least two exercises are required"));
        }
        if self.n_concepts == 0 || self.n_concepts > self.n_exercises {
            return Err(DktError::contract(format!(
                "{} concepts cannot be spread over {} exercises",
                self.n_concepts, self.n_exercises
            )));
        }
        if !(0.0..1.0).contains(&self.guess_c) {
            return Err(DktError::contract(format!(
                "guess probability must lie in [0, 1), got {}",
                self.guess_c
            )));
        }
        Ok(())
    }
}

/// `c + (1 − c) / (1 + exp(β − α))`.
pub fn irt_probability(ability: f64, difficulty: f64, guess_c: f64) -> f64 {
    guess_c + (1.0 - guess_c) / (1.0 + (difficulty - ability).exp())
}

fn draw_difficulties(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

/// The per-exercise difficulties `generate_simulated` uses for `cfg`.
pub fn exercise_difficulties(cfg: &SimConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    Ok(draw_difficulties(cfg.n_exercises, &mut ChaCha8Rng::seed_from_u64(cfg.seed)))
}

/// Every student answers exercises `0..n_exercises` in order. Exercise `e`
/// tests concept `e mod n_concepts`; difficulties and per-concept abilities
/// are standard normal.
pub fn generate_simulated(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let difficulty = draw_difficulties(cfg.n_exercises, &mut rng);
    let questions: Vec<usize> = (0..cfg.n_exercises).collect();

    let mut sequences = Vec::with_capacity(cfg.n_students);
    for _ in 0..cfg.n_students {
        let ability: Vec<f64> = (0..cfg.n_concepts)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let answers = (0..cfg.n_exercises)
            .map(|e| {
                let p = irt_probability(ability[e % cfg.n_concepts], difficulty[e], cfg.guess_c);
                rng.random::<f64>() < p
            })
            .collect();
        sequences.push(InteractionSequence::new(questions.clone(), answers)?);
    }
    Dataset::with_num_skills(sequences, cfg.n_exercises)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_at_symmetry_point() {
        assert_eq!(irt_probability(0.7, 0.7, 0.25), 0.625);
    }

    #[test]
    fn probability_range() {
        for a in [-8.0, -1.0, 0.0, 2.0, 8.0] {
            for b in [-8.0, -0.5, 0.0, 3.0, 8.0] {
                let p = irt_probability(a, b, 0.25);
                assert!((0.25..1.0).contains(&p), "{p}");
            }
        }
    }

    #[test]
    fn default_shape() {
        let d = generate_simulated(&SimConfig {
            seed: 42,
            ..SimConfig::default()
        })
        .unwrap();
        assert_eq!(d.len(), 2000);
        assert_eq!(d.num_skills(), 50);
        for s in d.sequences() {
            assert_eq!(s.len(), 50);
            assert!(s.questions().iter().all(|&q| q < 50));
        }
        let mean = d.mean_correctness();
        assert!(mean > 0.45 && mean < 0.80, "{mean}");
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SimConfig {
            n_students: 20,
            seed: 9,
            ..SimConfig::default()
        };
        assert_eq!(generate_simulated(&cfg).unwrap(), generate_simulated(&cfg).unwrap());
        let other = SimConfig { seed: 10, ..cfg.clone() };
        assert_ne!(generate_simulated(&cfg).unwrap(), generate_simulated(&other).unwrap());
    }

    #[test]
    fn difficulties_match_generator() {
        let cfg = SimConfig {
            n_students: 3,
            n_exercises: 6,
            n_concepts: 2,
            guess_c: 0.0,
            seed: 5,
        };
        let beta = exercise_difficulties(&cfg).unwrap();
        assert_eq!(beta.len(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let expected: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(beta, expected);
    }

    #[test]
    fn invalid_configs() {
        let bad = SimConfig {
            n_concepts: 6,
            n_exercises: 5,
            ..SimConfig::default()
        };
        assert!(generate_simulated(&bad).is_err());
        let bad = SimConfig {
            guess_c: 1.0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mean_correctness_above_guess_floor_small_config() {
        let cfg = SimConfig {
            n_students: 600,
            n_exercises: 20,
            n_concepts: 4,
            guess_c: 0.4,
            seed: 3,
        };
        let mean = generate_simulated(&cfg).unwrap().mean_correctness();
        assert!(mean > 0.4 && mean < 1.0);
    }
}
