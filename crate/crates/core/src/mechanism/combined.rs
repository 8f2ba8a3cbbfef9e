//! The full policy: sampling stage, then racing seeded with its samples.

use super::{Policy, PolicyMode, Sim, TrajectoryLog, World};
use super::regret::{pseudo_regret, RegretReport};
use crate::error::{Error, Result};
use crate::stats::RngSeed;

impl Sim<'_> {
    pub(crate) fn combined(&mut self) -> Result<()> {
        match self.cfg().mode {
            PolicyMode::Binary => {
                let s0 = self.sampling_stage()?;
                self.check_horizon()?;
                self.racing_stage(&s0)?;
            }
            PolicyMode::KArm => {
                let s0 = self.sampling_stage_k()?;
                self.check_horizon()?;
                self.racing_stage_k(&s0)?;
            }
        }
        Ok(())
    }

    fn check_horizon(&self) -> Result<()> {
        if self.t() > self.cfg().horizon {
            return Err(Error::HorizonTooShort {
                horizon: self.cfg().horizon,
                needed: self.t(),
            });
        }
        Ok(())
    }
}

/// Runs the binary combined policy for the configured horizon.
pub fn run_combined_policy(policy: &Policy, world: &World, seed: RngSeed) -> Result<(TrajectoryLog, RegretReport)> {
    if policy.cfg.mode != PolicyMode::Binary {
        return Err(Error::config("policy.mode", "expected binary mode"));
    }
    run(policy, world, seed)
}

/// Runs the k-arm combined policy for the configured horizon.
pub fn run_combined_policy_k(policy: &Policy, world: &World, seed: RngSeed) -> Result<(TrajectoryLog, RegretReport)> {
    if policy.cfg.mode != PolicyMode::KArm {
        return Err(Error::config("policy.mode", "expected k-arm mode"));
    }
    run(policy, world, seed)
}

fn run(policy: &Policy, world: &World, seed: RngSeed) -> Result<(TrajectoryLog, RegretReport)> {
    let mut sim = policy.sim(world, seed);
    sim.combined()?;
    let report = pseudo_regret(&sim.log, &world.theta);
    Ok((sim.log, report))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{CompliancePlan, PolicyConfig, Stage};
    use super::*;

    #[test]
    fn stages_are_contiguous() {
        let pop = binary_pop(0.1, 0.0);
        let mut plan = CompliancePlan::empty(2);
        plan.sampling_certified = vec![true, false];
        plan.racing_threshold = vec![1.0, 0.0];
        plan.tau_p = vec![0.1, 0.1];
        let p = Policy::new(binary_cfg(), pop, plan).unwrap();
        let world = p.realize(vec![0.5], RngSeed(1));
        let (log, report) = run_combined_policy(&p, &world, RngSeed(2)).unwrap();
        assert_eq!(log.rounds.len(), 2000);
        assert_eq!(log.racing_start, Some(log.sampling_end));
        assert!(log.rounds[..log.sampling_first_end]
            .iter()
            .all(|r| r.stage == Stage::Unrecommended));
        assert!(log.rounds[log.sampling_end..]
            .iter()
            .all(|r| matches!(r.stage, Stage::Racing { .. } | Stage::Exploit)));
        assert!(report.pseudo_regret >= 0.0);
    }

    #[test]
    fn short_horizon_is_an_error() {
        let pop = binary_pop(0.1, 0.0);
        let cfg = PolicyConfig {
            horizon: 100,
            ..binary_cfg()
        };
        let p = Policy::new(cfg, pop, CompliancePlan::empty(2)).unwrap();
        let world = p.realize(vec![0.5], RngSeed(1));
        assert!(matches!(
            run_combined_policy(&p, &world, RngSeed(2)),
            Err(Error::HorizonTooShort { .. })
        ));
    }
}
