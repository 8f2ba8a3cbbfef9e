//! The arriving agent stream: type draws, baseline rewards, and action
//! selection.
//!
//! An agent of type `u` holds a prior over the treatment effect and a
//! baseline reward `g ~ N(μ_g, noise_std²)`, where the per-type `μ_g` is
//! drawn once per run from the type's hyperprior. Actions follow either the
//! compliance certificates computed by the planner ([`BehaviorModel::TheoryDriven`])
//! or a numerically evaluated posterior ([`BehaviorModel::BayesMc`]).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compliance::{Preference, PriorSpec};
use crate::error::{Error, Result};
use crate::stats::SimRng;

/// One agent type and its share of the population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentType {
    pub prior: PriorSpec,
    pub fraction: f64,
}

/// Mixture of agent types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub types: Vec<AgentType>,
}

impl PopulationSpec {
    pub fn new(types: Vec<AgentType>) -> Result<Self> {
        let pop = PopulationSpec { types };
        pop.validate()?;
        Ok(pop)
    }

    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::config("population.types", "at least one type is required"));
        }
        let mut total = 0.0;
        for (i, t) in self.types.iter().enumerate() {
            if !(0.0..=1.0).contains(&t.fraction) {
                return Err(Error::config(
                    format!("population.types[{i}].fraction"),
                    format!("{} is not in [0, 1]", t.fraction),
                ));
            }
            t.prior.validate().map_err(|e| match e {
                Error::Config { key, message } => {
                    Error::config(format!("population.types[{i}].prior.{key}"), message)
                }
                other => other,
            })?;
            total += t.fraction;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                "population.types",
                format!("fractions sum to {total}, not 1"),
            ));
        }
        let arms = self.types[0].prior.arm_count();
        if self.types.iter().any(|t| t.prior.arm_count() != arms) {
            return Err(Error::config(
                "population.types",
                "every type must use the same number of arms",
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// 1 for a binary population, `k` for per-arm priors over `k` arms.
    pub fn arm_count(&self) -> usize {
        self.types[0].prior.arm_count()
    }

    pub fn fraction(&self, u: usize) -> f64 {
        self.types[u].fraction
    }

    pub fn indices_with(&self, pref: Preference) -> Vec<usize> {
        (0..self.types.len())
            .filter(|&u| self.types[u].prior.preference() == pref)
            .collect()
    }

    /// Total fraction of never-takers.
    pub fn p0(&self) -> f64 {
        self.share_of(Preference::NeverTaker)
    }

    /// Total fraction of always-takers.
    pub fn p1(&self) -> f64 {
        self.share_of(Preference::AlwaysTaker)
    }

    fn share_of(&self, pref: Preference) -> f64 {
        self.types
            .iter()
            .filter(|t| t.prior.preference() == pref)
            .map(|t| t.fraction)
            .sum()
    }

    /// Draws each type's run-level baseline mean.
    pub fn realize_baselines(&self, rng: &mut SimRng) -> Vec<f64> {
        self.types
            .iter()
            .map(|t| t.prior.baseline.realize_mean(rng))
            .collect()
    }

    /// Samples a type index with the configured fractions.
    pub fn sample_type(&self, rng: &mut SimRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, t) in self.types.iter().enumerate() {
            acc += t.fraction;
            if u < acc {
                return i;
            }
        }
        // Rounding in the cumulative sum: fall back to the last type with mass.
        self.types
            .iter()
            .rposition(|t| t.fraction > 0.0)
            .unwrap_or(self.types.len() - 1)
    }

    /// Largest baseline noise scale across types.
    pub fn max_noise_std(&self) -> f64 {
        self.types
            .iter()
            .map(|t| t.prior.baseline.noise_std)
            .fold(0.0, f64::max)
    }
}

/// One arriving agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentDraw {
    pub type_index: usize,
    pub baseline_g: f64,
    pub round: usize,
}

/// Draws the agent arriving at round `t`, given the run's realized baseline
/// means.
pub fn draw_agent(pop: &PopulationSpec, mu_g: &[f64], t: usize, rng: &mut SimRng) -> AgentDraw {
    let u = pop.sample_type(rng);
    let g = pop.types[u].prior.baseline.sample(mu_g[u], rng);
    AgentDraw {
        type_index: u,
        baseline_g: g,
        round: t,
    }
}

/// How agents turn a recommendation into an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorModel {
    /// Comply exactly when the planner's certificate for the type holds.
    #[default]
    TheoryDriven,
    /// Evaluate `E[θ | z, t]` over simulated policy runs.
    BayesMc { posterior_samples: usize },
}

/// What the agent knows when it decides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision<'a> {
    /// Whether the compliance certificate for the agent's type holds.
    Certificate(bool),
    /// Posterior means: one entry (binary effect) or one per arm.
    Posterior(&'a [f64]),
}

/// Arm the agent plays absent a recommendation.
pub fn preferred_arm(prior: &PriorSpec) -> usize {
    prior.preferred_arm()
}

/// Action choice. `preferred` is the arm the type plays on its prior alone.
pub fn agent_action(preferred: usize, recommendation: Option<usize>, decision: Decision<'_>) -> usize {
    let Some(z) = recommendation else {
        return preferred;
    };
    match decision {
        Decision::Certificate(true) => z,
        Decision::Certificate(false) => preferred,
        Decision::Posterior(means) => select_by_posterior(means),
    }
}

/// `1[E[θ] > 0]` for a scalar effect, else the argmax with ties to the
/// lowest index.
pub fn select_by_posterior(means: &[f64]) -> usize {
    if means.len() == 1 {
        return usize::from(means[0] > 0.0);
    }
    let mut best = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best] {
            best = i;
        }
    }
    best
}

/// Realized reward. A one-entry `theta` is the binary model `θ·x + g`; a
/// longer one is the k-arm model `θ[x] + g`.
pub fn reward(theta: &[f64], action: usize, g: f64) -> f64 {
    if theta.len() == 1 {
        theta[0] * action as f64 + g
    } else {
        theta[action] + g
    }
}
