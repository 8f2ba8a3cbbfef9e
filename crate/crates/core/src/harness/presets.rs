//! Experiment presets and their runners.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{config_hash, ConfigFile, ExperimentSettings};
use super::table::{ResultTable, TableMetadata};
use crate::agents::{AgentType, BehaviorModel, PopulationSpec};
use crate::compliance::{
    self, default_gap_bound, estimate_xi_probability, exploration_probability_bound, Preference,
    PriorSpec,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate_binary, ols_estimate, wald_estimate, SampleSet};
use crate::mechanism::racing::run_racing_with_warm_start;
use crate::mechanism::{
    alternating_samples, run_combined_policy, run_combined_policy_k, run_sampling_stage,
    CompliancePlan, FlipEvent, Policy, PolicyConfig, PolicyMode, SamplingLength,
};
use crate::stats::{mean_and_std_error, GaussianBaseline, RngSeed, StreamKind, TruncatedGaussian};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fig1,
    RacingFig,
    RhoTableGap,
    RhoTableVariance,
    Coverage,
    RegretScaling,
    KarmDemo,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Fig1,
        Preset::RacingFig,
        Preset::RhoTableGap,
        Preset::RhoTableVariance,
        Preset::Coverage,
        Preset::RegretScaling,
        Preset::KarmDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::RacingFig => "racing_fig",
            Preset::RhoTableGap => "rho_table_gap",
            Preset::RhoTableVariance => "rho_table_variance",
            Preset::Coverage => "coverage",
            Preset::RegretScaling => "regret_scaling",
            Preset::KarmDemo => "karm_demo",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::config("preset", format!("unknown preset `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// Two binary types: a never-taker-leaning type 0 and an always-taker-leaning
/// type 1 in equal shares, effect priors truncated to `[-1, 1]`.
pub fn two_type_population(
    theta_means: (f64, f64),
    theta_std: f64,
    hyper_means: (f64, f64),
    hyper_std: f64,
    noise_std: f64,
) -> Result<PopulationSpec> {
    let ty = |m: f64, h: f64| -> Result<AgentType> {
        Ok(AgentType {
            prior: PriorSpec::binary(
                TruncatedGaussian::unit_interval(m, theta_std)?,
                GaussianBaseline::new(h, hyper_std, noise_std)?,
            ),
            fraction: 0.5,
        })
    };
    PopulationSpec::new(vec![ty(theta_means.0, hyper_means.0)?, ty(theta_means.1, hyper_means.1)?])
}

/// Effect priors `N(−0.5, 1)` and `N(0.9, 1)`, baseline means drawn from
/// `N(0, 1)` and `N(0.1, 1)`, unit baseline noise.
pub fn reference_population() -> PopulationSpec {
    two_type_population((-0.5, 0.9), 1.0, (0.0, 0.1), 1.0, 1.0).expect("valid reference population")
}

/// Low-noise two-type population with nearly equal baselines, where short
/// sampling stages already certify the never-takers for racing.
pub fn low_noise_population() -> PopulationSpec {
    two_type_population((-0.5, 0.9), 1.0, (0.0, 0.002), 0.0, 0.002).expect("valid low-noise population")
}

/// Three arms with identical effect priors, shared by two types with
/// different baselines.
pub fn k_arm_population() -> PopulationSpec {
    let ty = |h: f64| AgentType {
        prior: PriorSpec::arms(
            vec![TruncatedGaussian::unit_interval(0.1, 1.0).expect("valid prior"); 3],
            GaussianBaseline::new(h, 0.0, 0.002).expect("valid baseline"),
        ),
        fraction: 0.5,
    };
    PopulationSpec::new(vec![ty(0.0), ty(0.002)]).expect("valid k-arm population")
}

const FIG1_CHECKPOINTS: [usize; 5] = [1_000, 3_000, 10_000, 30_000, 100_000];
const GAP_GRID: [f64; 10] = [-0.5, -0.4, -0.3, -0.2, -0.1, 0.1, 0.2, 0.3, 0.4, 0.5];
const VARIANCE_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Geometric grid from `lo` to `hi` with `per_octave` points per doubling.
pub fn geometric_grid(lo: f64, hi: f64, per_octave: usize) -> Vec<f64> {
    let steps = ((hi / lo).log2() * per_octave as f64).round() as usize;
    (0..=steps)
        .map(|i| lo * 2f64.powf(i as f64 / per_octave as f64))
        .collect()
}

/// Everything an experiment needs: preset, population, policy, run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub preset: Preset,
    pub population: PopulationSpec,
    pub policy: PolicyConfig,
    pub experiment: ExperimentSettings,
}

fn base_policy(pop: &PopulationSpec) -> PolicyConfig {
    PolicyConfig {
        rho: 0.001,
        ell: 100_000,
        ell0: 1_000,
        ell1: 1_000,
        delta: 1e-4,
        g_gap_bound: default_gap_bound(pop),
        h: 50,
        tau: 0.43,
        horizon: 200_000,
        arm_count: 1,
        mode: PolicyMode::Binary,
        sigma_g: 1.0,
        sampling_length: SamplingLength::Fixed,
        mirrored: false,
        checkpoints: vec![],
    }
}

fn base_settings() -> ExperimentSettings {
    ExperimentSettings {
        seeds: 5,
        theta: vec![0.5],
        mc_iters: 10_000,
        checkpoints: vec![],
        horizons: vec![],
        warm_start: 0,
        behavior: BehaviorModel::TheoryDriven,
        grid: vec![],
        assemble_rho: false,
    }
}

impl ExperimentSpec {
    pub fn defaults(preset: Preset) -> Self {
        let (population, policy, experiment) = match preset {
            Preset::Fig1 => {
                let pop = reference_population();
                let policy = PolicyConfig {
                    checkpoints: FIG1_CHECKPOINTS.to_vec(),
                    ..base_policy(&pop)
                };
                let exp = ExperimentSettings {
                    checkpoints: FIG1_CHECKPOINTS.to_vec(),
                    ..base_settings()
                };
                (pop, policy, exp)
            }
            Preset::RacingFig => {
                let pop = reference_population();
                let policy = PolicyConfig {
                    delta: 0.05,
                    horizon: 20_000,
                    ell: 1_000,
                    ..base_policy(&pop)
                };
                let exp = ExperimentSettings {
                    warm_start: 1_000,
                    checkpoints: vec![1_000, 2_000, 4_000, 8_000, 16_000, 20_000],
                    ..base_settings()
                };
                (pop, policy, exp)
            }
            Preset::RhoTableGap | Preset::RhoTableVariance => {
                let pop = reference_population();
                let grid = if preset == Preset::RhoTableGap {
                    GAP_GRID.to_vec()
                } else {
                    VARIANCE_GRID.to_vec()
                };
                let exp = ExperimentSettings {
                    mc_iters: 1_000,
                    seeds: 1,
                    grid,
                    ..base_settings()
                };
                let policy = PolicyConfig {
                    ell: 1_000,
                    ..base_policy(&pop)
                };
                (pop, policy, exp)
            }
            Preset::Coverage => {
                let pop = reference_population();
                let policy = PolicyConfig {
                    delta: 0.1,
                    ell: 1_000,
                    ..base_policy(&pop)
                };
                let exp = ExperimentSettings {
                    seeds: 200,
                    checkpoints: vec![1_000],
                    ..base_settings()
                };
                (pop, policy, exp)
            }
            Preset::RegretScaling => {
                let pop = low_noise_population();
                let policy = PolicyConfig {
                    rho: 0.2,
                    ell: 20,
                    ell0: 10,
                    ell1: 10,
                    delta: 0.01,
                    h: 5,
                    horizon: 1_000,
                    sigma_g: 0.003,
                    sampling_length: SamplingLength::Empirical {
                        block: 20,
                        max_ell: 2_000,
                    },
                    ..base_policy(&pop)
                };
                let exp = ExperimentSettings {
                    seeds: 20,
                    horizons: vec![1_000, 4_000, 16_000],
                    grid: geometric_grid(1.0 / 4096.0, 1.0 / 16.0, 4),
                    assemble_rho: true,
                    ..base_settings()
                };
                (pop, policy, exp)
            }
            Preset::KarmDemo => {
                let pop = k_arm_population();
                let policy = PolicyConfig {
                    rho: 0.5,
                    ell: 20,
                    delta: 0.01,
                    h: 5,
                    horizon: 2_000,
                    arm_count: 3,
                    mode: PolicyMode::KArm,
                    sigma_g: 0.003,
                    ..base_policy(&pop)
                };
                let exp = ExperimentSettings {
                    seeds: 10,
                    theta: vec![0.0, 1.0, 2.0],
                    horizons: vec![2_000, 8_000, 32_000],
                    grid: geometric_grid(1.0 / 32768.0, 1.0 / 16.0, 4),
                    assemble_rho: true,
                    mc_iters: 2_000,
                    ..base_settings()
                };
                (pop, policy, exp)
            }
        };
        ExperimentSpec {
            preset,
            population,
            policy,
            experiment,
        }
    }

    /// Preset defaults overridden by a config file. A replaced population
    /// also resets `G` to its default unless the policy section sets it.
    pub fn with_config(preset: Preset, cfg: &ConfigFile) -> Result<Self> {
        let mut spec = Self::defaults(preset);
        if let Some(pop) = &cfg.population {
            pop.validate()?;
            spec.population = pop.clone();
            spec.policy.g_gap_bound = default_gap_bound(pop);
        }
        cfg.policy.apply(&mut spec.policy);
        cfg.experiment.apply(&mut spec.experiment);
        Ok(spec)
    }

    /// Hash of these settings together with the base seed.
    pub fn hash(&self, base_seed: u64) -> String {
        config_hash(&(self, base_seed))
    }

    pub fn run_seeds(&self, base_seed: u64) -> Vec<RngSeed> {
        (0..self.experiment.seeds)
            .map(|i| RngSeed(base_seed).child(i as u64))
            .collect()
    }

    fn metadata(&self, base_seed: u64, seeds: &[RngSeed]) -> TableMetadata {
        TableMetadata {
            preset: self.preset.name().to_string(),
            seeds: seeds.iter().map(|s| s.0).collect(),
            config_hash: self.hash(base_seed),
            log_y: self.preset == Preset::RacingFig,
            log_x: matches!(
                self.preset,
                Preset::Fig1 | Preset::RegretScaling | Preset::KarmDemo
            ),
        }
    }
}

/// Seed used for the planner's Monte Carlo calibration.
pub fn calibration_seed(base_seed: u64) -> RngSeed {
    RngSeed(base_seed).child(u64::MAX)
}

/// Derives certificates, optionally picks `ρ` from the smallest ceiling,
/// and checks `δ < P̂[ξ]/8`.
pub fn assemble_policy(spec: &ExperimentSpec, seed: RngSeed) -> Result<Policy> {
    let pop = spec.population.clone();
    let mut cfg = spec.policy.clone();
    let mut plan = CompliancePlan::derive(&pop, &cfg, spec.experiment.mc_iters, seed)?;
    if spec.experiment.assemble_rho {
        let ceiling = plan.min_rho_ceiling().unwrap_or(0.0);
        let rho = PolicyConfig::reciprocal_rho(ceiling).ok_or_else(|| {
            Error::config("policy.rho", format!("no positive exploration ceiling (min {ceiling})"))
        })?;
        let m = (1.0 / rho).round() as usize;
        cfg.rho = rho;
        if let SamplingLength::Empirical { block, max_ell } = cfg.sampling_length {
            let block = block.div_ceil(m) * m;
            cfg.sampling_length = SamplingLength::Empirical {
                block,
                max_ell: max_ell.max(block),
            };
        }
        for (cert, c) in plan.sampling_certified.iter_mut().zip(&plan.rho_ceiling) {
            *cert = c.is_some_and(|c| rho <= c);
        }
    }
    if cfg.mode == PolicyMode::Binary {
        plan.check_delta(cfg.delta)?;
    }
    let policy = Policy::new(cfg, pop, plan)?;
    match spec.experiment.behavior {
        BehaviorModel::TheoryDriven => Ok(policy),
        BehaviorModel::BayesMc { posterior_samples } => {
            policy.with_bayes_agents(posterior_samples, seed.child(1))
        }
    }
}

/// Racing-only plan: never-takers are declared compliant; thresholds come
/// from the closed-form calculus.
pub fn racing_plan(pop: &PopulationSpec, tau: f64) -> CompliancePlan {
    let mut plan = CompliancePlan::empty(pop.len());
    for u in 0..pop.len() {
        let prior = &pop.types[u].prior;
        plan.tau_p[u] = compliance::tau_p(prior, tau);
        plan.racing_threshold[u] = plan.tau_p[u] / 4.0;
        plan.racing_override[u] = prior.preference() == Preference::NeverTaker;
    }
    plan
}

/// One stage-2 run of the figure-1 experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Run {
    pub seed: u64,
    pub checkpoints: Vec<usize>,
    pub iv_error: Vec<f64>,
    pub ols_error: Vec<f64>,
    /// `|E[g | x=1] − E[g | x=0]|` under the run's realized baseline means
    /// and type mix over the whole stage.
    pub realized_gap: f64,
    pub exploit_arm: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RacingRun {
    pub seed: u64,
    pub winner: Option<usize>,
    pub stop_round: Option<usize>,
    pub phases: usize,
    pub full_compliance_phase: Option<u64>,
    pub flips: Vec<FlipEvent>,
    pub checkpoints: Vec<usize>,
    pub iv_error: Vec<f64>,
    pub ols_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub value: f64,
    pub p_xi: f64,
    pub std_error: f64,
    pub hits: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRun {
    pub seed: u64,
    pub estimate: f64,
    pub bound: f64,
    pub covered: bool,
}

/// Seed-averaged post-sampling regret at one horizon and effect scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretPoint {
    pub horizon: usize,
    pub scale: f64,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "runs", rename_all = "snake_case")]
pub enum Details {
    Fig1(Vec<Fig1Run>),
    Racing(Vec<RacingRun>),
    Rho(Vec<RhoRow>),
    Coverage(Vec<CoverageRun>),
    Regret(Vec<RegretPoint>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub details: Details,
}

/// Runs a preset.
pub fn run_experiment(spec: &ExperimentSpec, base_seed: u64) -> Result<ExperimentOutput> {
    let seeds = spec.run_seeds(base_seed);
    let meta = spec.metadata(base_seed, &seeds);
    match spec.preset {
        Preset::Fig1 => fig1(spec, base_seed, &seeds, meta),
        Preset::RacingFig => racing_fig(spec, &seeds, meta),
        Preset::RhoTableGap | Preset::RhoTableVariance => {
            let grid = rho_grid(spec)?;
            let rows = rho_table(&grid, &spec.policy, spec.experiment.mc_iters, RngSeed(base_seed))?;
            let mut table = ResultTable::new(
                vec![
                    if spec.preset == Preset::RhoTableGap { "gap" } else { "variance" }.into(),
                    "p_xi".into(),
                    "p_xi_se".into(),
                    "rho".into(),
                ],
                meta,
            );
            for r in &rows {
                table.push(vec![r.value, r.p_xi, r.std_error, r.rho]);
            }
            Ok(ExperimentOutput {
                table,
                details: Details::Rho(rows),
            })
        }
        Preset::Coverage => coverage(spec, &seeds, meta),
        Preset::RegretScaling | Preset::KarmDemo => regret(spec, base_seed, &seeds, meta),
    }
}

fn abs_err(r: Result<f64>, theta: f64) -> f64 {
    r.map(|v| (v - theta).abs()).unwrap_or(f64::NAN)
}

fn series_table(
    meta: TableMetadata,
    checkpoints: &[usize],
    iv: &[Vec<f64>],
    ols: &[Vec<f64>],
) -> ResultTable {
    let mut table = ResultTable::new(
        ["x", "iv_mean", "iv_se", "ols_mean", "ols_se"]
            .map(String::from)
            .to_vec(),
        meta,
    );
    for (j, &c) in checkpoints.iter().enumerate() {
        let (im, is) = mean_and_std_error(&iv.iter().map(|v| v[j]).collect::<Vec<_>>());
        let (om, os) = mean_and_std_error(&ols.iter().map(|v| v[j]).collect::<Vec<_>>());
        table.push(vec![c as f64, im, is, om, os]);
    }
    table
}

fn fig1(spec: &ExperimentSpec, base_seed: u64, seeds: &[RngSeed], meta: TableMetadata) -> Result<ExperimentOutput> {
    let policy = assemble_policy(spec, calibration_seed(base_seed))?;
    let theta = spec.experiment.theta.clone();
    let th = theta[0];
    let checkpoints = spec.experiment.checkpoints.clone();
    if checkpoints.iter().any(|&c| c > policy.cfg.ell) {
        return Err(Error::config("experiment.checkpoints", "checkpoints cannot exceed policy.ell"));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let world = policy.realize(theta.clone(), seed);
            let (s, log) = run_sampling_stage(&policy, &world, seed)?;
            let mut iv_error = Vec::new();
            let mut ols_error = Vec::new();
            for &c in &checkpoints {
                let prefix = SampleSet::binary(s.records[..c].to_vec());
                iv_error.push(abs_err(wald_estimate(&prefix), th));
                ols_error.push(abs_err(ols_estimate(&prefix), th));
            }
            let mut n = [[0usize; 2]; 2];
            for r in &log.rounds[log.sampling_first_end..log.sampling_end] {
                n[r.type_index.min(1)][r.x] += 1;
            }
            let cond = |x: usize| {
                let tot = (n[0][x] + n[1][x]) as f64;
                (n[0][x] as f64 * world.mu_g[0] + n[1][x] as f64 * world.mu_g[1]) / tot
            };
            Ok(Fig1Run {
                seed: seed.0,
                checkpoints: checkpoints.clone(),
                iv_error,
                ols_error,
                realized_gap: (cond(1) - cond(0)).abs(),
                exploit_arm: log.sampling_exploit[0],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let iv: Vec<Vec<f64>> = runs.iter().map(|r| r.iv_error.clone()).collect();
    let ols: Vec<Vec<f64>> = runs.iter().map(|r| r.ols_error.clone()).collect();
    Ok(ExperimentOutput {
        table: series_table(meta, &checkpoints, &iv, &ols),
        details: Details::Fig1(runs),
    })
}

/// Binary racing policy for the racing figure.
pub fn racing_policy(spec: &ExperimentSpec) -> Result<Policy> {
    let plan = racing_plan(&spec.population, spec.policy.tau);
    Policy::new(spec.policy.clone(), spec.population.clone(), plan)
}

fn racing_fig(spec: &ExperimentSpec, seeds: &[RngSeed], meta: TableMetadata) -> Result<ExperimentOutput> {
    let policy = racing_policy(spec)?;
    let runs = racing_runs(&policy, spec, seeds)?;
    let iv: Vec<Vec<f64>> = runs.iter().map(|r| r.iv_error.clone()).collect();
    let ols: Vec<Vec<f64>> = runs.iter().map(|r| r.ols_error.clone()).collect();
    Ok(ExperimentOutput {
        table: series_table(meta, &spec.experiment.checkpoints, &iv, &ols),
        details: Details::Racing(runs),
    })
}

/// Racing runs from a warm start, one per seed.
pub fn racing_runs(policy: &Policy, spec: &ExperimentSpec, seeds: &[RngSeed]) -> Result<Vec<RacingRun>> {
    let theta = spec.experiment.theta.clone();
    let checkpoints = spec.experiment.checkpoints.clone();
    seeds
        .par_iter()
        .map(|&seed| {
            let world = policy.realize(theta.clone(), seed);
            let (log, winner, _) = run_racing_with_warm_start(policy, spec.experiment.warm_start, &world, seed)?;
            let mut iv_error = Vec::new();
            let mut ols_error = Vec::new();
            for &c in &checkpoints {
                let s = log.samples_in(0..c.min(log.rounds.len()));
                iv_error.push(abs_err(wald_estimate(&s), theta[0]));
                ols_error.push(abs_err(ols_estimate(&s), theta[0]));
            }
            Ok(RacingRun {
                seed: seed.0,
                winner,
                stop_round: log.racing_end,
                phases: log.phases.len(),
                full_compliance_phase: log.full_compliance_phase,
                flips: log.flips.clone(),
                checkpoints: checkpoints.clone(),
                iv_error,
                ols_error,
            })
        })
        .collect()
}

fn rho_grid(spec: &ExperimentSpec) -> Result<Vec<(f64, PopulationSpec)>> {
    let grid = &spec.experiment.grid;
    if grid.is_empty() {
        return Err(Error::config("experiment.grid", "must not be empty"));
    }
    let base = &spec.population;
    if base.len() != 2 || base.arm_count() != 1 {
        return Err(Error::config("population", "rho tables use a two-type binary population"));
    }
    grid.iter()
        .map(|&v| {
            let mut pop = base.clone();
            if spec.preset == Preset::RhoTableGap {
                // Type 1's baseline hyper-mean stays at 0.5; type 0's moves.
                pop.types[1].prior.baseline.hyper_mean = 0.5;
                pop.types[0].prior.baseline.hyper_mean = 0.5 - v;
            } else {
                for t in &mut pop.types {
                    let tp = t.prior.theta_prior.as_mut().expect("binary prior");
                    tp.std_dev = v.sqrt();
                }
            }
            pop.validate()?;
            Ok((v, pop))
        })
        .collect()
}

/// One row per grid point: `P̂[ξ]` for type 0 and its exploration ceiling.
/// `G` is recomputed for each grid population.
pub fn rho_table(
    grid: &[(f64, PopulationSpec)],
    policy: &PolicyConfig,
    iters: usize,
    seed: RngSeed,
) -> Result<Vec<RhoRow>> {
    if grid.is_empty() {
        return Err(Error::config("experiment.grid", "must not be empty"));
    }
    grid.iter()
        .enumerate()
        .map(|(i, (v, pop))| {
            let xi = crate::compliance::XiConfig {
                g_gap_bound: default_gap_bound(pop),
                ..policy.xi_config()
            };
            let target = pop
                .indices_with(Preference::NeverTaker)
                .first()
                .copied()
                .ok_or_else(|| Error::config("population", "rho tables need a never-taker type"))?;
            let mut rng = seed.stream(StreamKind::MonteCarlo, i as u64);
            let est = estimate_xi_probability(pop, &xi, target, iters, &mut rng)?;
            let rho = exploration_probability_bound(pop.types[target].prior.prior_mean_theta(), est.p)?;
            Ok(RhoRow {
                value: *v,
                p_xi: est.p,
                std_error: est.std_error,
                hits: est.hits,
                rho,
            })
        })
        .collect()
}

fn coverage(spec: &ExperimentSpec, seeds: &[RngSeed], meta: TableMetadata) -> Result<ExperimentOutput> {
    let pop = spec.population.clone();
    let policy = Policy::new(spec.policy.clone(), pop.clone(), CompliancePlan::empty(pop.len()))?;
    let n = *spec
        .experiment
        .checkpoints
        .first()
        .ok_or_else(|| Error::config("experiment.checkpoints", "coverage needs a sample size"))?;
    let theta = spec.experiment.theta.clone();
    let cfg = &spec.policy;
    let all = vec![true; pop.len()];
    let runs: Vec<CoverageRun> = seeds
        .par_iter()
        .map(|&seed| {
            let world = policy.realize(theta.clone(), seed);
            let s = alternating_samples(&policy, &world, &all, n, seed);
            let est = estimate_binary(&s, cfg.delta, cfg.sigma_g)?;
            Ok(CoverageRun {
                seed: seed.0,
                estimate: est.scalar(),
                bound: est.bound,
                covered: (est.scalar() - theta[0]).abs() <= est.bound,
            })
        })
        .collect::<Result<_>>()?;
    let mut table = ResultTable::new(
        ["x", "estimate", "bound", "covered"].map(String::from).to_vec(),
        meta,
    );
    for (i, r) in runs.iter().enumerate() {
        table.push(vec![i as f64, r.estimate, r.bound, f64::from(u8::from(r.covered))]);
    }
    Ok(ExperimentOutput {
        table,
        details: Details::Coverage(runs),
    })
}

/// Effect vector at scale `s`: `[s]` for binary, `s·shape` for k arms.
fn scaled_theta(shape: &[f64], s: f64) -> Vec<f64> {
    shape.iter().map(|v| v * s).collect()
}

/// Worst case over the effect-scale grid of the seed-averaged post-sampling
/// regret, per horizon.
fn regret(spec: &ExperimentSpec, base_seed: u64, seeds: &[RngSeed], meta: TableMetadata) -> Result<ExperimentOutput> {
    let policy = assemble_policy(spec, calibration_seed(base_seed))?;
    let horizons = &spec.experiment.horizons;
    let grid = &spec.experiment.grid;
    if horizons.is_empty() || grid.is_empty() {
        return Err(Error::config("experiment", "regret needs horizons and an effect grid"));
    }
    let points = regret_points(&policy, &spec.experiment.theta, horizons, grid, seeds)?;
    let k = policy.cfg.arm_count.max(2) as f64;
    let mut table = ResultTable::new(
        ["x", "worst_mean", "worst_se", "worst_scale", "normalized"]
            .map(String::from)
            .to_vec(),
        meta,
    );
    for &t in horizons {
        let worst = points
            .iter()
            .filter(|p| p.horizon == t)
            .max_by(|a, b| a.mean.total_cmp(&b.mean))
            .expect("non-empty grid");
        let kt = k * t as f64;
        let rate = if policy.cfg.mode == PolicyMode::Binary {
            (t as f64 * (t as f64).ln()).sqrt()
        } else {
            (kt * kt.ln()).sqrt()
        };
        table.push(vec![t as f64, worst.mean, worst.std_error, worst.scale, worst.mean / rate]);
    }
    Ok(ExperimentOutput {
        table,
        details: Details::Regret(points),
    })
}

/// Seed-averaged post-sampling regret for every horizon and effect scale.
pub fn regret_points(
    policy: &Policy,
    shape: &[f64],
    horizons: &[usize],
    grid: &[f64],
    seeds: &[RngSeed],
) -> Result<Vec<RegretPoint>> {
    let mut jobs = Vec::new();
    for &t in horizons {
        for &s in grid {
            jobs.push((t, s));
        }
    }
    jobs.par_iter()
        .map(|&(t, s)| {
            let mut p = policy.clone();
            p.cfg.horizon = t;
            let theta = scaled_theta(shape, s);
            let vals = seeds
                .iter()
                .map(|&seed| {
                    let world = p.realize(theta.clone(), seed);
                    let (_, report) = match p.cfg.mode {
                        PolicyMode::Binary => run_combined_policy(&p, &world, seed)?,
                        PolicyMode::KArm => run_combined_policy_k(&p, &world, seed)?,
                    };
                    Ok(report.post_sampling_regret)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, std_error) = mean_and_std_error(&vals);
            Ok(RegretPoint {
                horizon: t,
                scale: s,
                mean,
                std_error,
            })
        })
        .collect()
}

/// Worst-case mean regret per horizon, in horizon order.
pub fn worst_case(points: &[RegretPoint], horizons: &[usize]) -> Vec<RegretPoint> {
    horizons
        .iter()
        .filter_map(|&t| {
            points
                .iter()
                .filter(|p| p.horizon == t)
                .max_by(|a, b| a.mean.total_cmp(&b.mean))
                .cloned()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("fig2".parse::<Preset>().is_err());
    }

    #[test]
    fn fig1_defaults() {
        let s = ExperimentSpec::defaults(Preset::Fig1);
        assert_eq!(s.policy.rho, 0.001);
        assert_eq!(s.experiment.theta, vec![0.5]);
        assert_eq!(s.experiment.seeds, 5);
        let t0 = s.population.types[0].prior.theta();
        assert_eq!((t0.mean, t0.std_dev, t0.lower, t0.upper), (-0.5, 1.0, -1.0, 1.0));
        assert_eq!(s.population.types[1].prior.theta().mean, 0.9);
        assert_eq!(s.population.types[1].prior.baseline.hyper_mean, 0.1);
        assert!((s.policy.g_gap_bound - 3.1).abs() < 1e-12);
        s.policy.validate().unwrap();
    }

    #[test]
    fn config_overrides_defaults() {
        let c = ConfigFile::parse(r#"{"experiment": {"seeds": 2}, "policy": {"tau": 0.5}}"#).unwrap();
        let s = ExperimentSpec::with_config(Preset::RacingFig, &c).unwrap();
        assert_eq!(s.experiment.seeds, 2);
        assert_eq!(s.policy.tau, 0.5);
        assert_ne!(s.hash(1), ExperimentSpec::defaults(Preset::RacingFig).hash(1));
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(0.25, 1.0, 2);
        assert_eq!(g.len(), 5);
        assert!((g[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_rho_grid() {
        let mut s = ExperimentSpec::defaults(Preset::RhoTableGap);
        s.experiment.grid = vec![0.1];
        s.experiment.mc_iters = 200;
        let out = run_experiment(&s, 3).unwrap();
        assert_eq!(out.table.rows.len(), 1);
    }
}
