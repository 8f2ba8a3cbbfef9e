//! The planner.
//!
//! A [`Policy`] bundles the published configuration, the population it is
//! calibrated against, and the [`CompliancePlan`] of certificates derived
//! from the compliance calculus. Runs are driven round by round by a private
//! simulator that draws agents, applies the behavior model, and appends to a
//! [`TrajectoryLog`].

pub mod beliefs;
pub mod combined;
pub mod racing;
pub mod regret;
pub mod sampling;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{agent_action, draw_agent, BehaviorModel, Decision, PopulationSpec};
use crate::compliance::{
    self, estimate_mirrored_xi_probability, estimate_xi_k_probability, estimate_xi_probability,
    exploration_probability_bound, exploration_probability_bound_k,
    mirrored_exploration_probability_bound, Preference, XiConfig, XiEstimate,
};
use crate::error::{Error, Result};
use crate::estimator::{Record, SampleSet};
use crate::stats::{RngSeed, SimRng, StreamKind};

pub use beliefs::Beliefs;
pub use combined::{run_combined_policy, run_combined_policy_k};
pub use racing::{alternating_samples, run_racing_stage, run_racing_stage_k};
pub use regret::{pseudo_regret, RegretReport};
pub use sampling::{run_sampling_stage, run_sampling_stage_k};

/// Binary treatment/control or `k` treatments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    #[default]
    Binary,
    KArm,
}

/// How long the second sampling stage runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingLength {
    /// Exactly `ell` rounds.
    #[default]
    Fixed,
    /// Blocks of `block` rounds until the stage-2 bound `A(S, δ)` falls to the
    /// largest racing threshold, or `max_ell` rounds.
    Empirical { block: usize, max_ell: usize },
}

/// Every knob of the planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Exploration probability of the sampling stage.
    pub rho: f64,
    /// Stage-2 length (binary) or samples per arm (k-arm).
    pub ell: usize,
    pub ell0: usize,
    pub ell1: usize,
    pub delta: f64,
    /// `G`, the bound on the expected baseline gap used by `ξ`.
    pub g_gap_bound: f64,
    /// Recommendations of each arm per racing phase.
    pub h: usize,
    pub tau: f64,
    /// Total rounds of a run.
    pub horizon: usize,
    /// 1 for binary, `k` otherwise.
    pub arm_count: usize,
    #[serde(default)]
    pub mode: PolicyMode,
    /// Sub-Gaussian scale fed to the bounds.
    pub sigma_g: f64,
    #[serde(default)]
    pub sampling_length: SamplingLength,
    /// Explore towards control in an all-always-taker population.
    #[serde(default)]
    pub mirrored: bool,
    /// Stage-2 prefixes that each receive exactly their share of explore
    /// rounds. Empty means the whole stage is one block.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
}

fn is_integral(v: f64) -> bool {
    (v - v.round()).abs() <= 1e-9
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} is not in (0, 1)")))
            }
        };
        unit("policy.rho", self.rho)?;
        unit("policy.delta", self.delta)?;
        unit("policy.tau", self.tau)?;
        if !(self.sigma_g >= 0.0) {
            return Err(Error::config("policy.sigma_g", "must be non-negative"));
        }
        if self.h == 0 {
            return Err(Error::config("policy.h", "must be at least 1"));
        }
        match self.mode {
            PolicyMode::Binary if self.arm_count != 1 => {
                return Err(Error::config("policy.arm_count", "binary mode uses arm_count 1"))
            }
            PolicyMode::KArm if self.arm_count < 2 => {
                return Err(Error::config("policy.arm_count", "k-arm mode needs at least 2 arms"))
            }
            _ => {}
        }
        if self.mode == PolicyMode::Binary && (self.ell0 == 0 || self.ell1 == 0) {
            return Err(Error::config("policy.ell0", "ell0 and ell1 must be at least 1"));
        }
        match self.sampling_length {
            SamplingLength::Fixed => {
                if self.ell == 0 {
                    return Err(Error::config("policy.ell", "must be at least 1"));
                }
                match self.mode {
                    PolicyMode::Binary => {
                        for (a, b) in self.segments() {
                            if !is_integral(self.rho * (b - a) as f64) {
                                return Err(Error::config(
                                    "policy.ell",
                                    format!(
                                        "rho * {} = {} is not a whole number of explore rounds",
                                        b - a,
                                        self.rho * (b - a) as f64
                                    ),
                                ));
                            }
                        }
                    }
                    PolicyMode::KArm => {
                        if !is_integral(self.ell as f64 / self.rho) {
                            return Err(Error::config(
                                "policy.ell",
                                format!("ell / rho = {} is not integral", self.ell as f64 / self.rho),
                            ));
                        }
                    }
                }
            }
            SamplingLength::Empirical { block, max_ell } => {
                if block == 0 || max_ell < block {
                    return Err(Error::config(
                        "policy.sampling_length",
                        "block must be positive and no larger than max_ell",
                    ));
                }
                if !is_integral(self.rho * block as f64) {
                    return Err(Error::config(
                        "policy.sampling_length.block",
                        format!("rho * {block} is not a whole number of explore rounds"),
                    ));
                }
            }
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1])
            || self.checkpoints.last().is_some_and(|&c| c > self.ell)
        {
            return Err(Error::config(
                "policy.checkpoints",
                "must be strictly increasing and no larger than ell",
            ));
        }
        Ok(())
    }

    /// Stage-2 explore strata `[a, b)` for a fixed-length stage.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut cuts: Vec<usize> = self.checkpoints.clone();
        if cuts.last() != Some(&self.ell) {
            cuts.push(self.ell);
        }
        let mut out = Vec::with_capacity(cuts.len());
        let mut a = 0;
        for b in cuts {
            if b > a {
                out.push((a, b));
            }
            a = b;
        }
        out
    }

    pub fn xi_config(&self) -> XiConfig {
        XiConfig {
            ell0: self.ell0,
            ell1: self.ell1,
            delta: self.delta,
            g_gap_bound: self.g_gap_bound,
            sigma_g: self.sigma_g,
        }
    }

    /// Largest `1/m` not exceeding `ceiling`, so `ρ·ℓ` stays integral for
    /// any multiple of `m`.
    pub fn reciprocal_rho(ceiling: f64) -> Option<f64> {
        if !(ceiling > 0.0) {
            return None;
        }
        let m = (1.0 / ceiling).ceil().max(2.0);
        Some(1.0 / m)
    }
}

/// Per-type certificates the planner derives before a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompliancePlan {
    /// Monte Carlo `P[ξ^(u)]` for the types the sampling stage targets.
    pub xi: Vec<Option<XiEstimate>>,
    /// Exploration ceiling per targeted type.
    pub rho_ceiling: Vec<Option<f64>>,
    /// Whether the type follows sampling-stage recommendations.
    pub sampling_certified: Vec<bool>,
    /// `A(S₀, δ)` below which the type follows racing recommendations.
    pub racing_threshold: Vec<f64>,
    /// `τ·P[tail]` per type.
    pub tau_p: Vec<f64>,
    /// Types treated as compliant throughout the racing stage.
    pub racing_override: Vec<bool>,
}

impl CompliancePlan {
    /// Runs the compliance calculus for `pop` under `cfg`.
    pub fn derive(pop: &PopulationSpec, cfg: &PolicyConfig, iters: usize, seed: RngSeed) -> Result<Self> {
        match cfg.mode {
            PolicyMode::Binary => Self::derive_binary(pop, cfg, iters, seed),
            PolicyMode::KArm => Self::derive_k(pop, cfg, iters, seed),
        }
    }

    fn derive_binary(pop: &PopulationSpec, cfg: &PolicyConfig, iters: usize, seed: RngSeed) -> Result<Self> {
        let n = pop.len();
        let xi_cfg = cfg.xi_config();
        let target = if cfg.mirrored {
            Preference::AlwaysTaker
        } else {
            Preference::NeverTaker
        };
        let mut plan = CompliancePlan::empty(n);
        for u in 0..n {
            let prior = &pop.types[u].prior;
            let tp = compliance::tau_p(prior, cfg.tau);
            plan.tau_p[u] = tp;
            plan.racing_threshold[u] = tp / 4.0;
            if prior.preference() != target || pop.fraction(u) == 0.0 {
                continue;
            }
            let mut rng = seed.stream(StreamKind::MonteCarlo, u as u64);
            let est = if cfg.mirrored {
                estimate_mirrored_xi_probability(pop, &xi_cfg, u, iters, &mut rng)?
            } else {
                estimate_xi_probability(pop, &xi_cfg, u, iters, &mut rng)?
            };
            let mu = prior.prior_mean_theta();
            let ceiling = if cfg.mirrored {
                mirrored_exploration_probability_bound(mu, est.p)?
            } else {
                exploration_probability_bound(mu, est.p)?
            };
            plan.xi[u] = Some(est);
            plan.rho_ceiling[u] = Some(ceiling);
            plan.sampling_certified[u] = cfg.rho <= ceiling;
        }
        Ok(plan)
    }

    fn derive_k(pop: &PopulationSpec, cfg: &PolicyConfig, iters: usize, seed: RngSeed) -> Result<Self> {
        let n = pop.len();
        let mut plan = CompliancePlan::empty(n);
        for u in 0..n {
            let prior = &pop.types[u].prior;
            let mut rng = seed.stream(StreamKind::MonteCarlo, u as u64);
            let (est, _) =
                estimate_xi_k_probability(pop, u, cfg.ell, cfg.delta, cfg.sigma_g, iters, &mut rng)?;
            let threshold = compliance::racing_threshold_k(prior, cfg.tau, iters, &mut rng);
            plan.tau_p[u] = 4.0 * threshold;
            plan.racing_threshold[u] = threshold;
            plan.xi[u] = Some(est);
            let ceiling = exploration_probability_bound_k(&prior.arm_means(), est.p).ok();
            plan.rho_ceiling[u] = ceiling;
            plan.sampling_certified[u] = ceiling.is_some_and(|c| cfg.rho <= c);
        }
        Ok(plan)
    }

    /// A plan with no certificates, for callers that set them by hand.
    pub fn empty(types: usize) -> Self {
        CompliancePlan {
            xi: vec![None; types],
            rho_ceiling: vec![None; types],
            sampling_certified: vec![false; types],
            racing_threshold: vec![0.0; types],
            tau_p: vec![0.0; types],
            racing_override: vec![false; types],
        }
    }

    /// Smallest ceiling over the targeted types.
    pub fn min_rho_ceiling(&self) -> Option<f64> {
        self.rho_ceiling
            .iter()
            .flatten()
            .copied()
            .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.min(c))))
    }

    /// Checks `δ < P̂[ξ]/8` for every certified type.
    pub fn check_delta(&self, delta: f64) -> Result<()> {
        for (u, est) in self.xi.iter().enumerate() {
            if let (Some(est), true) = (est, self.sampling_certified[u]) {
                if !(delta < est.p / 8.0) {
                    return Err(Error::config(
                        "policy.delta",
                        format!(
                            "delta {delta} must be below P[xi]/8 = {} for type {u}",
                            est.p / 8.0
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Ground truth for one run: the effect and each type's realized baseline
/// mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub theta: Vec<f64>,
    pub mu_g: Vec<f64>,
}

impl World {
    pub fn realize(pop: &PopulationSpec, theta: Vec<f64>, seed: RngSeed) -> Self {
        let mut rng = seed.stream(StreamKind::Population, 0);
        World {
            theta,
            mu_g: pop.realize_baselines(&mut rng),
        }
    }

    /// The scalar effect of a binary world.
    pub fn effect(&self) -> f64 {
        self.theta[0]
    }
}

/// Which part of the policy issued a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    /// First sampling stage: no recommendation.
    Unrecommended,
    /// Second sampling stage; `arm` is the explored arm.
    Sampling { arm: usize },
    /// Alternating rounds collected before a standalone racing stage.
    WarmStart,
    Racing { phase: usize },
    /// After the racing stage stops.
    Exploit,
}

/// One round of the log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub stage: Stage,
    pub type_index: usize,
    pub z: Option<usize>,
    pub x: usize,
    pub y: f64,
    pub explore: bool,
    pub complied: bool,
}

impl RoundRecord {
    pub fn record(&self) -> Option<Record> {
        self.z.map(|z| Record::new(z, self.x, self.y))
    }
}

/// Summary of one racing phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub q: usize,
    pub start: usize,
    pub end: usize,
    /// Arms recommended during the phase.
    pub active: Vec<usize>,
    /// `A(S_q, δ)` of the cumulative set.
    pub phase_bound: f64,
    /// `A_q`: the smallest bound over `S_0..S_q`.
    pub best_bound: f64,
    /// Index `r` of `S_q^BEST`.
    pub best_index: usize,
    pub theta_hat: Vec<f64>,
}

/// Why a type started to comply during racing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipCause {
    /// Declared compliant by configuration.
    Override,
    /// The best bound fell below the type's racing threshold.
    EmpiricalBound,
    /// The phase index reached the full-compliance phase.
    PhaseLemma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipEvent {
    pub type_index: usize,
    /// Racing phase at whose start the certificate took effect (0 = before
    /// the first phase).
    pub phase: usize,
    pub round: usize,
    pub cause: FlipCause,
}

/// Full record of a policy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrajectoryLog {
    pub arm_count: usize,
    pub rounds: Vec<RoundRecord>,
    /// End (exclusive) of the unrecommended first stage.
    pub sampling_first_end: usize,
    /// End (exclusive) of the sampling stage.
    pub sampling_end: usize,
    /// First racing round.
    pub racing_start: Option<usize>,
    /// First round after the racing loop stopped.
    pub racing_end: Option<usize>,
    /// Exploit arm chosen in each sampling phase.
    pub sampling_exploit: Vec<usize>,
    /// Racing winner; `None` if the horizon ran out first.
    pub winner: Option<usize>,
    pub phases: Vec<PhaseSummary>,
    pub flips: Vec<FlipEvent>,
    /// Full-compliance phase computed at racing start, if any type needed it.
    pub full_compliance_phase: Option<u64>,
}

impl TrajectoryLog {
    pub fn samples_in(&self, range: std::ops::Range<usize>) -> SampleSet {
        let records = self.rounds[range].iter().filter_map(|r| r.record()).collect();
        SampleSet::with_arms(records, self.arm_count)
    }

    pub fn actions(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.x).collect()
    }
}

/// The published mechanism: configuration, calibration population,
/// certificates, and the agents' behavior model.
#[derive(Debug, Clone)]
pub struct Policy {
    pub cfg: PolicyConfig,
    pub pop: PopulationSpec,
    pub plan: CompliancePlan,
    pub model: BehaviorModel,
    beliefs: Option<Arc<Beliefs>>,
}

impl Policy {
    pub fn new(cfg: PolicyConfig, pop: PopulationSpec, plan: CompliancePlan) -> Result<Self> {
        cfg.validate()?;
        pop.validate()?;
        let expected = if cfg.mode == PolicyMode::Binary { 1 } else { cfg.arm_count };
        if pop.arm_count() != expected {
            return Err(Error::config(
                "policy.arm_count",
                format!(
                    "population has {} arm(s), policy expects {}",
                    pop.arm_count(),
                    expected
                ),
            ));
        }
        if plan.sampling_certified.len() != pop.len() {
            return Err(Error::config("plan", "one certificate entry per type is required"));
        }
        Ok(Policy {
            cfg,
            pop,
            plan,
            model: BehaviorModel::TheoryDriven,
            beliefs: None,
        })
    }

    /// Derives the certificates by Monte Carlo, then checks `δ < P̂[ξ]/8`.
    pub fn assemble(cfg: PolicyConfig, pop: PopulationSpec, iters: usize, seed: RngSeed) -> Result<Self> {
        let plan = CompliancePlan::derive(&pop, &cfg, iters, seed)?;
        if cfg.mode == PolicyMode::Binary {
            plan.check_delta(cfg.delta)?;
        }
        Policy::new(cfg, pop, plan)
    }

    /// Switches agents to Bayesian reasoning; worlds for the posterior are
    /// simulated from `seed` with the combined policy.
    pub fn with_bayes_agents(mut self, posterior_samples: usize, seed: RngSeed) -> Result<Self> {
        self.with_bayes_agents_for(posterior_samples, seed, beliefs::Scope::Combined)?;
        Ok(self)
    }

    /// As [`Policy::with_bayes_agents`], for runs of the sampling stage alone.
    pub fn with_bayes_agents_sampling(mut self, posterior_samples: usize, seed: RngSeed) -> Result<Self> {
        self.with_bayes_agents_for(posterior_samples, seed, beliefs::Scope::Sampling)?;
        Ok(self)
    }

    fn with_bayes_agents_for(&mut self, posterior_samples: usize, seed: RngSeed, scope: beliefs::Scope) -> Result<()> {
        let theory = Policy {
            model: BehaviorModel::TheoryDriven,
            beliefs: None,
            ..self.clone()
        };
        let b = Beliefs::simulate(&theory, posterior_samples, seed, scope)?;
        self.model = BehaviorModel::BayesMc { posterior_samples };
        self.beliefs = Some(Arc::new(b));
        Ok(())
    }

    pub fn beliefs(&self) -> Option<&Beliefs> {
        self.beliefs.as_deref()
    }

    pub fn realize(&self, theta: Vec<f64>, seed: RngSeed) -> World {
        World::realize(&self.pop, theta, seed)
    }

    pub(crate) fn sim<'a>(&'a self, world: &'a World, seed: RngSeed) -> Sim<'a> {
        Sim::new(self, world, seed)
    }
}

/// Round-by-round driver shared by every stage.
pub(crate) struct Sim<'a> {
    pub policy: &'a Policy,
    pub world: &'a World,
    arrivals: SimRng,
    pub explore_rng: SimRng,
    pub log: TrajectoryLog,
    pub certified: Vec<bool>,
}

impl<'a> Sim<'a> {
    fn new(policy: &'a Policy, world: &'a World, seed: RngSeed) -> Self {
        let arm_count = if policy.cfg.mode == PolicyMode::Binary {
            1
        } else {
            policy.cfg.arm_count
        };
        Sim {
            policy,
            world,
            arrivals: seed.stream(StreamKind::Arrivals, 0),
            explore_rng: seed.stream(StreamKind::Explore, 0),
            log: TrajectoryLog {
                arm_count,
                ..TrajectoryLog::default()
            },
            certified: vec![false; policy.pop.len()],
        }
    }

    pub fn cfg(&self) -> &PolicyConfig {
        &self.policy.cfg
    }

    pub fn t(&self) -> usize {
        self.log.rounds.len()
    }

    pub fn remaining(&self) -> usize {
        self.policy.cfg.horizon.saturating_sub(self.t())
    }

    /// Plays one round and returns it.
    pub fn step(&mut self, stage: Stage, z: Option<usize>, explore: bool) -> RoundRecord {
        let t = self.t();
        let pop = &self.policy.pop;
        let agent = draw_agent(pop, &self.world.mu_g, t, &mut self.arrivals);
        let u = agent.type_index;
        let preferred = pop.types[u].prior.preferred_arm();
        let posterior;
        let decision = match (self.policy.model, z, self.policy.beliefs.as_deref()) {
            (BehaviorModel::BayesMc { .. }, Some(z), Some(b)) => {
                posterior = b.posterior_mean(u, t, z);
                Decision::Posterior(&posterior)
            }
            _ => Decision::Certificate(self.certified[u]),
        };
        let x = agent_action(preferred, z, decision);
        let y = crate::agents::reward(&self.world.theta, x, agent.baseline_g);
        let rec = RoundRecord {
            t,
            stage,
            type_index: u,
            z,
            x,
            y,
            explore,
            complied: z == Some(x),
        };
        self.log.rounds.push(rec);
        rec
    }

    pub fn flip(&mut self, u: usize, phase: usize, cause: FlipCause) {
        if !self.certified[u] {
            self.certified[u] = true;
            self.log.flips.push(FlipEvent {
                type_index: u,
                phase,
                round: self.t(),
                cause,
            });
        }
    }
}
