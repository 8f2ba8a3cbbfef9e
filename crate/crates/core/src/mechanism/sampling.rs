//! Sampling stages: an unrecommended warm-up followed by hidden exploration.

use rand::seq::index;

use super::{Policy, PolicyMode, SamplingLength, Sim, Stage, TrajectoryLog, World};
use crate::compliance::{k_arm_margin, mirrored_xi_event_holds, xi_event_holds, xi_k_event_holds};
use crate::error::{Error, Result};
use crate::estimator::{approximation_bound_binary, SampleSet};
use crate::stats::{RngSeed, SimRng};

/// Positions of exactly `count` explore rounds among `len`.
pub fn explore_mask(len: usize, count: usize, rng: &mut SimRng) -> Vec<bool> {
    let mut mask = vec![false; len];
    for i in index::sample(rng, len, count.min(len)) {
        mask[i] = true;
    }
    mask
}

fn explore_count(rho: f64, len: usize) -> usize {
    (rho * len as f64).round() as usize
}

/// Length of the unrecommended first stage.
pub fn first_stage_length(policy: &Policy) -> Result<usize> {
    let cfg = &policy.cfg;
    let (p0, p1) = (policy.pop.p0(), policy.pop.p1());
    if cfg.mirrored {
        if p0 > 0.0 {
            return Err(Error::config(
                "policy.mirrored",
                "mirrored exploration needs an all-always-taker population",
            ));
        }
        return Ok((2.0 * cfg.ell1 as f64 / p1).ceil() as usize);
    }
    if p0 == 0.0 {
        return Err(Error::config(
            "population",
            "no never-takers: control samples are unreachable without mirrored mode",
        ));
    }
    if p1 == 0.0 {
        return Err(Error::config(
            "population",
            "no always-takers: treatment samples are unreachable",
        ));
    }
    let need = (cfg.ell0 as f64 / p0).max(cfg.ell1 as f64 / p1);
    Ok((2.0 * need).ceil() as usize)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl Sim<'_> {
    /// Binary sampling stage; returns the second-stage samples.
    pub(crate) fn sampling_stage(&mut self) -> Result<SampleSet> {
        let policy = self.policy;
        let cfg = &policy.cfg;
        let first = first_stage_length(policy)?;
        let mut control = Vec::new();
        let mut treated = Vec::new();
        for _ in 0..first {
            let r = self.step(Stage::Unrecommended, None, false);
            if r.x == 0 {
                control.push(r.y);
            } else {
                treated.push(r.y);
            }
        }
        let ell0 = if cfg.mirrored { 0 } else { cfg.ell0 };
        if control.len() < ell0 || treated.len() < cfg.ell1 {
            return Err(Error::InsufficientFirstStage {
                control: control.len(),
                treatment: treated.len(),
                ell0,
                ell1: cfg.ell1,
            });
        }
        let xi = cfg.xi_config();
        let y1 = mean(&treated[..cfg.ell1]);
        let (explore_arm, exploit) = if cfg.mirrored {
            (0, if mirrored_xi_event_holds(y1, &xi) { 0 } else { 1 })
        } else {
            let y0 = mean(&control[..cfg.ell0]);
            (1, usize::from(xi_event_holds(y1, y0, &xi)))
        };
        self.log.sampling_first_end = self.t();
        self.log.sampling_exploit = vec![exploit];
        self.certified = policy.plan.sampling_certified.clone();

        let stage = Stage::Sampling { arm: explore_arm };
        let mut samples = SampleSet::binary(Vec::new());
        let run_block = |sim: &mut Sim<'_>, len: usize, samples: &mut SampleSet| {
            let mask = explore_mask(len, explore_count(cfg.rho, len), &mut sim.explore_rng);
            for explore in mask {
                let z = if explore { explore_arm } else { exploit };
                let r = sim.step(stage, Some(z), explore);
                samples.push(r.record().expect("recommended round"));
            }
        };
        match cfg.sampling_length {
            SamplingLength::Fixed => {
                for (a, b) in cfg.segments() {
                    run_block(self, b - a, &mut samples);
                }
            }
            SamplingLength::Empirical { block, max_ell } => {
                let target = policy
                    .plan
                    .racing_threshold
                    .iter()
                    .copied()
                    .fold(0.0, f64::max);
                let cap = max_ell.min(self.remaining().max(block));
                while samples.len() + block <= cap {
                    run_block(self, block, &mut samples);
                    if approximation_bound_binary(&samples, cfg.delta, cfg.sigma_g) <= target {
                        break;
                    }
                }
            }
        }
        self.log.sampling_end = self.t();
        Ok(samples)
    }

    /// k-arm sampling stage; returns the explore-phase samples.
    pub(crate) fn sampling_stage_k(&mut self) -> Result<SampleSet> {
        let policy = self.policy;
        let cfg = &policy.cfg;
        let k = cfg.arm_count;
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for _ in 0..cfg.ell {
            let r = self.step(Stage::Unrecommended, None, false);
            sums[r.x] += r.y;
            counts[r.x] += 1;
        }
        self.log.sampling_first_end = self.t();
        self.certified = policy.plan.sampling_certified.clone();
        let c = k_arm_margin(cfg.ell, cfg.delta, cfg.sigma_g);
        let phase_len = (cfg.ell as f64 / cfg.rho).round() as usize;
        let mut samples = SampleSet::with_arms(Vec::new(), k);
        for i in 1..k {
            let means: Vec<Option<f64>> = (0..k)
                .map(|j| (counts[j] > 0).then(|| sums[j] / counts[j] as f64))
                .collect();
            // Each type has its own prior; the event uses the population's
            // common arm means, taken from the first type.
            let mu_i = policy.pop.types[0].prior.arm_means()[i];
            let exploit = if xi_k_event_holds(&means, i, mu_i, c) { i } else { 0 };
            self.log.sampling_exploit.push(exploit);
            let mask = explore_mask(phase_len, cfg.ell, &mut self.explore_rng);
            for explore in mask {
                let z = if explore { i } else { exploit };
                let r = self.step(Stage::Sampling { arm: i }, Some(z), explore);
                sums[r.x] += r.y;
                counts[r.x] += 1;
                samples.push(r.record().expect("recommended round"));
            }
        }
        self.log.sampling_end = self.t();
        Ok(samples)
    }
}

fn require_mode(policy: &Policy, mode: PolicyMode) -> Result<()> {
    if policy.cfg.mode != mode {
        return Err(Error::config("policy.mode", format!("expected {mode:?} mode")));
    }
    Ok(())
}

/// Runs the binary sampling stage alone. Returns the second-stage samples
/// and the log of every round.
pub fn run_sampling_stage(policy: &Policy, world: &World, seed: RngSeed) -> Result<(SampleSet, TrajectoryLog)> {
    require_mode(policy, PolicyMode::Binary)?;
    let mut sim = policy.sim(world, seed);
    let s = sim.sampling_stage()?;
    Ok((s, sim.log))
}

/// Runs the k-arm sampling stage alone.
pub fn run_sampling_stage_k(policy: &Policy, world: &World, seed: RngSeed) -> Result<(SampleSet, TrajectoryLog)> {
    require_mode(policy, PolicyMode::KArm)?;
    let mut sim = policy.sim(world, seed);
    let s = sim.sampling_stage_k()?;
    Ok((s, sim.log))
}
