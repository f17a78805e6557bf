//! Seeded simulation of many sessions with synthetic responders.
//!
//! Each run derives its own random streams from the master seed and its run
//! index, so results do not depend on how runs are scheduled across threads.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_session, Classification, EngineConfig, LikelihoodTable, Responder, SelectionPolicy, SessionTrace};
use crate::error::{Error, Result};
use crate::metrics::{FairnessNotion, Grouping, Roster};
use crate::response::{sample_choice, simulate_random_responder, softmax_first, Choice, ResponseModelConfig};
use crate::test_space::{discriminativeness, Test, TestSpace};

/// Answers by sampling the softmax response model of a fixed notion.
#[derive(Debug, Clone)]
pub struct NotionFollower {
    notion: FairnessNotion,
    temperature: f64,
    grouping: Grouping,
    rng: ChaCha8Rng,
}

impl NotionFollower {
    pub fn new(notion: FairnessNotion, roster: &Roster, response: &ResponseModelConfig, seed: u64) -> Self {
        NotionFollower {
            notion,
            temperature: response.temperature,
            grouping: roster.grouping(response.grouping),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Responder for NotionFollower {
    fn respond(&mut self, test: &Test) -> Result<Choice> {
        let e = discriminativeness(test, &[self.notion], &self.grouping)?[0];
        Ok(sample_choice(softmax_first(e.a1, e.a2, self.temperature), &mut self.rng))
    }
}

/// Answers every test with a fair coin.
#[derive(Debug, Clone)]
pub struct RandomResponder {
    rng: ChaCha8Rng,
}

impl RandomResponder {
    pub fn new(seed: u64) -> Self {
        RandomResponder {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Responder for RandomResponder {
    fn respond(&mut self, test: &Test) -> Result<Choice> {
        Ok(simulate_random_responder(test, &mut self.rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResponderKind {
    NotionFollower { notion: FairnessNotion, temperature: f64 },
    Random,
}

impl ResponderKind {
    pub fn true_notion(&self) -> Option<FairnessNotion> {
        match self {
            ResponderKind::NotionFollower { notion, .. } => Some(*notion),
            ResponderKind::Random => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub responder: ResponderKind,
    pub num_runs: usize,
    pub master_seed: u64,
    /// Overrides `engine.max_tests`. Selection policy, hypothesis set and
    /// classification threshold come from `engine`.
    pub max_tests_per_run: usize,
    pub engine: EngineConfig,
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_runs < 1 {
            return Err(Error::Config("num_runs must be at least 1".into()));
        }
        if let ResponderKind::NotionFollower { temperature, .. } = self.responder {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::Config(format!("responder temperature {temperature} must be positive")));
            }
        }
        self.run_config(0).validate()
    }

    /// Engine configuration for run `run`, with its own selection seed.
    pub fn run_config(&self, run: usize) -> EngineConfig {
        let mut config = self.engine.clone();
        config.max_tests = self.max_tests_per_run;
        if let SelectionPolicy::Random { seed } = config.selection {
            config.selection = SelectionPolicy::Random {
                seed: derive_seed(seed ^ self.master_seed, run as u64, 1),
            };
        }
        config
    }
}

/// SplitMix64 mixing of a base seed, a run index and a stream tag.
pub fn derive_seed(base: u64, run: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(run.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    /// Posterior of the followed notion after each test, or the largest
    /// posterior entry for random responders.
    pub trajectory: Vec<f64>,
    /// First step whose tracked probability exceeds the threshold.
    pub tests_to_threshold: Option<usize>,
    pub trace: SessionTrace,
}

impl RunOutcome {
    pub fn classification(&self) -> Option<&Classification> {
        self.trace.classification.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub mean: f64,
    pub median: f64,
    /// Fraction of runs whose tracked probability exceeds the threshold at
    /// this step.
    pub above_threshold: f64,
}

/// Outcome of [`run_simulation`]: per-run trajectories and per-step
/// summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub spec: SimulationSpec,
    pub threshold: f64,
    pub runs: Vec<RunOutcome>,
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl Simulation {
    /// Mean and median across runs at each step. Runs that stopped early
    /// carry their last value forward.
    pub fn step_stats(&self) -> Vec<StepStats> {
        let steps = self.runs.iter().map(|r| r.trajectory.len()).max().unwrap_or(0);
        (0..steps)
            .map(|s| {
                let mut values: Vec<f64> = self
                    .runs
                    .iter()
                    .filter_map(|r| r.trajectory.get(s).or(r.trajectory.last()).copied())
                    .collect();
                values.sort_by(f64::total_cmp);
                let n = values.len() as f64;
                StepStats {
                    step: s + 1,
                    mean: values.iter().sum::<f64>() / n,
                    median: median_of_sorted(&values),
                    above_threshold: values.iter().filter(|&&v| v > self.threshold).count() as f64 / n,
                }
            })
            .collect()
    }

    /// Median number of tests needed to pass the threshold, counting runs
    /// that never did as infinitely long. `None` means the median run never
    /// reached the threshold.
    pub fn median_tests_to_threshold(&self) -> Option<f64> {
        let mut v: Vec<f64> = self
            .runs
            .iter()
            .map(|r| r.tests_to_threshold.map_or(f64::INFINITY, |t| t as f64))
            .collect();
        v.sort_by(f64::total_cmp);
        let m = median_of_sorted(&v);
        m.is_finite().then_some(m)
    }

    /// Fraction of runs reaching the threshold within `within` tests.
    pub fn fraction_reached_within(&self, within: usize) -> f64 {
        let hits = self
            .runs
            .iter()
            .filter(|r| r.tests_to_threshold.is_some_and(|t| t <= within))
            .count();
        hits as f64 / self.runs.len() as f64
    }

    /// Fraction of runs whose final classification matched `notion`.
    pub fn matched_fraction(&self, notion: FairnessNotion) -> f64 {
        let hits = self
            .runs
            .iter()
            .filter(|r| r.classification().and_then(Classification::matched_notion) == Some(notion))
            .count();
        hits as f64 / self.runs.len() as f64
    }
}

/// Runs `spec.num_runs` independent sessions in parallel.
///
/// `table` must be built for `spec.engine`'s hypotheses and response model.
pub fn run_simulation(space: Arc<TestSpace>, table: Arc<LikelihoodTable>, spec: &SimulationSpec) -> Result<Simulation> {
    spec.validate()?;
    let threshold = spec.engine.classification_threshold;
    let tracked = match spec.responder.true_notion() {
        Some(n) => Some(spec.engine.hypotheses.position(n).ok_or_else(|| {
            Error::Config(format!("responder notion {n} is not in the hypothesis set"))
        })?),
        None => None,
    };
    let runs = (0..spec.num_runs)
        .into_par_iter()
        .map(|run| {
            let responder_seed = derive_seed(spec.master_seed, run as u64, 0);
            let mut responder: Box<dyn Responder> = match spec.responder {
                ResponderKind::NotionFollower { notion, temperature } => {
                    let response = ResponseModelConfig {
                        temperature,
                        ..spec.engine.response
                    };
                    Box::new(NotionFollower::new(notion, &space.roster, &response, responder_seed))
                }
                ResponderKind::Random => Box::new(RandomResponder::new(responder_seed)),
            };
            let trace = run_session(space.clone(), table.clone(), spec.run_config(run), responder.as_mut())?;
            let trajectory: Vec<f64> = trace
                .steps
                .iter()
                .map(|s| match tracked {
                    Some(i) => s.posterior.probabilities()[i],
                    None => s.posterior.max().1,
                })
                .collect();
            let tests_to_threshold = trajectory.iter().position(|&p| p > threshold).map(|i| i + 1);
            Ok(RunOutcome {
                run,
                trajectory,
                tests_to_threshold,
                trace,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Simulation {
        spec: spec.clone(),
        threshold,
        runs,
    })
}
