//! Softmax response model over Generalized Entropy.
//!
//! A responder who follows notion `h` marks as "more discriminatory" the
//! algorithm whose benefit vector under `h` is more unequal, with softmax
//! noise controlled by a temperature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{FairnessNotion, GroupingDimension, Roster};
use crate::test_space::{discriminativeness, Test};

/// Which algorithm of a test the responder marked as more discriminatory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A1,
    A2,
}

impl Choice {
    pub fn other(self) -> Choice {
        match self {
            Choice::A1 => Choice::A2,
            Choice::A2 => Choice::A1,
        }
    }
}

impl std::str::FromStr for Choice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A1" | "a1" => Ok(Choice::A1),
            "A2" | "a2" => Ok(Choice::A2),
            _ => Err(Error::Config(format!("unknown choice {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseModelConfig {
    pub temperature: f64,
    pub grouping: GroupingDimension,
}

impl Default for ResponseModelConfig {
    fn default() -> Self {
        ResponseModelConfig {
            temperature: 1.0,
            grouping: GroupingDimension::Intersection,
        }
    }
}

impl ResponseModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// `exp(e1/T) / (exp(e1/T) + exp(e2/T))`, shifted by the larger exponent.
pub fn softmax_first(e1: f64, e2: f64, temperature: f64) -> f64 {
    let (x1, x2) = (e1 / temperature, e2 / temperature);
    let top = x1.max(x2);
    let w1 = (x1 - top).exp();
    let w2 = (x2 - top).exp();
    w1 / (w1 + w2)
}

/// Probability that a follower of `notion` selects A1 in `test`.
pub fn likelihood_a1(test: &Test, notion: FairnessNotion, roster: &Roster, config: &ResponseModelConfig) -> Result<f64> {
    let grouping = roster.grouping(config.grouping);
    let e = discriminativeness(test, &[notion], &grouping)?[0];
    Ok(softmax_first(e.a1, e.a2, config.temperature))
}

/// Probability that a follower of `notion` makes `choice` in `test`.
pub fn choice_likelihood(
    test: &Test,
    notion: FairnessNotion,
    choice: Choice,
    roster: &Roster,
    config: &ResponseModelConfig,
) -> Result<f64> {
    let p = likelihood_a1(test, notion, roster, config)?;
    Ok(match choice {
        Choice::A1 => p,
        Choice::A2 => 1.0 - p,
    })
}

/// Samples A1 with probability `p_a1`.
pub fn sample_choice<R: Rng + ?Sized>(p_a1: f64, rng: &mut R) -> Choice {
    if rng.random::<f64>() < p_a1 {
        Choice::A1
    } else {
        Choice::A2
    }
}

/// Draws a follower's answer to `test` from the response model.
pub fn simulate_choice<R: Rng + ?Sized>(
    test: &Test,
    notion: FairnessNotion,
    roster: &Roster,
    config: &ResponseModelConfig,
    rng: &mut R,
) -> Result<Choice> {
    let p = likelihood_a1(test, notion, roster, config)?;
    Ok(sample_choice(p, rng))
}

/// A fair coin flip, ignoring the test.
pub fn simulate_random_responder<R: Rng + ?Sized>(_test: &Test, rng: &mut R) -> Choice {
    if rng.random::<bool>() {
        Choice::A1
    } else {
        Choice::A2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_space::{enumerate_tests, TestSpaceConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_first(0.7, 0.7, 1.0), 0.5);
        let e = std::f64::consts::E;
        assert!((softmax_first(1.0, 0.0, 1.0) - e / (1.0 + e)).abs() < 1e-15);
        assert!((softmax_first(1.0, 0.0, 1.0) - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let p = softmax_first(1e4, 0.0, 1e-2);
        assert_eq!(p, 1.0);
        assert!(softmax_first(0.0, 1e4, 1e-2) >= 0.0);
    }

    #[test]
    fn temperature_sharpens_and_flattens() {
        let (e1, e2) = (0.9, 0.3);
        let sharp = softmax_first(e1, e2, 0.1);
        let unit = softmax_first(e1, e2, 1.0);
        let flat = softmax_first(e1, e2, 10.0);
        assert!(sharp > unit && unit > flat && flat > 0.5);
        assert!((softmax_first(e1, e2, 1e9) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn likelihoods_sum_to_one_and_swap() {
        let space = enumerate_tests(&TestSpaceConfig::default()).unwrap();
        let cfg = ResponseModelConfig::default();
        for test in space.tests.iter().step_by(97) {
            for notion in FairnessNotion::ALL {
                let a1 = choice_likelihood(test, notion, Choice::A1, &space.roster, &cfg).unwrap();
                let a2 = choice_likelihood(test, notion, Choice::A2, &space.roster, &cfg).unwrap();
                assert!((a1 + a2 - 1.0).abs() < 1e-15);
                let swapped = likelihood_a1(&test.swapped(), notion, &space.roster, &cfg).unwrap();
                assert!((swapped - a2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn simulated_frequency_matches_likelihood() {
        let space = enumerate_tests(&TestSpaceConfig::default()).unwrap();
        let cfg = ResponseModelConfig::default();
        let test = &space.tests[4000];
        let notion = FairnessNotion::DP;
        let p = likelihood_a1(test, notion, &space.roster, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| simulate_choice(test, notion, &space.roster, &cfg, &mut rng).unwrap() == Choice::A1)
            .count();
        assert!((hits as f64 / draws as f64 - p).abs() < 0.01);
    }

    #[test]
    fn degenerate_test_is_a_coin_flip() {
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hits = (0..draws).filter(|_| sample_choice(0.5, &mut rng) == Choice::A1).count();
        assert!((hits as f64 / draws as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn random_responder_is_fair_and_seeded() {
        let space = enumerate_tests(&TestSpaceConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|i| simulate_random_responder(&space.tests[i % space.len()], &mut rng) == Choice::A1)
            .count();
        assert!((hits as f64 / draws as f64 - 0.5).abs() < 0.01);

        let seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64)
                .map(|i| simulate_random_responder(&space.tests[i], &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(5), seq(5));
        // contents of the test do not matter
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for i in 0..64 {
            assert_eq!(
                simulate_random_responder(&space.tests[i], &mut a),
                simulate_random_responder(&space.tests[8000 - i], &mut b)
            );
        }
    }

    #[test]
    fn follower_is_seed_deterministic() {
        let space = enumerate_tests(&TestSpaceConfig::default()).unwrap();
        let cfg = ResponseModelConfig::default();
        let seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            space.tests[..200]
                .iter()
                .map(|t| simulate_choice(t, FairnessNotion::FNP, &space.roster, &cfg, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(42), seq(42));
    }

    #[test]
    fn invalid_temperature() {
        let cfg = ResponseModelConfig {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
