//! Racing stages: recommend every surviving arm in turn until the estimate
//! separates from its bound.

use super::{FlipCause, PhaseSummary, Policy, PolicyMode, Sim, Stage, TrajectoryLog, World};
use crate::compliance::full_compliance_phase;
use crate::error::{Error, Result};
use crate::estimator::{EstimateWithBound, KArmAccumulator, SampleSet, WaldAccumulator};
use crate::stats::RngSeed;

impl Sim<'_> {
    /// Applies overrides and the initial bound test, then fixes the
    /// full-compliance phase for the remaining types.
    fn certify_at_start(&mut self, bound: f64) {
        let plan = &self.policy.plan;
        for u in 0..self.certified.len() {
            self.certified[u] = false;
            if plan.racing_override[u] {
                self.flip(u, 0, FlipCause::Override);
            } else if bound <= plan.racing_threshold[u] {
                self.flip(u, 0, FlipCause::EmpiricalBound);
            }
        }
    }

    fn recertify(&mut self, q: usize, bound: f64, q_star: Option<u64>) {
        let plan = &self.policy.plan;
        for u in 0..self.certified.len() {
            if self.certified[u] {
                continue;
            }
            if bound <= plan.racing_threshold[u] {
                self.flip(u, q, FlipCause::EmpiricalBound);
            } else if q_star.is_some_and(|qs| q as u64 >= qs) {
                self.flip(u, q, FlipCause::PhaseLemma);
            }
        }
    }

    fn full_compliance_phase(&self) -> Option<u64> {
        let pop = &self.policy.pop;
        let cfg = &self.policy.cfg;
        let p_c: f64 = (0..pop.len())
            .filter(|&u| self.certified[u])
            .map(|u| pop.fraction(u))
            .sum();
        let tau_p_star = (0..pop.len())
            .filter(|&u| !self.certified[u] && pop.fraction(u) > 0.0)
            .map(|u| self.policy.plan.tau_p[u])
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))?;
        if p_c == 0.0 || tau_p_star <= 0.0 {
            return None;
        }
        Some(full_compliance_phase(tau_p_star, p_c, cfg.h, cfg.sigma_g, cfg.delta))
    }

    fn exploit(&mut self, winner: usize) {
        self.log.winner = Some(winner);
        self.log.racing_end = Some(self.t());
        while self.remaining() > 0 {
            self.step(Stage::Exploit, Some(winner), false);
        }
    }

    /// Binary racing from `s0`; returns the final best estimate.
    pub(crate) fn racing_stage(&mut self, s0: &SampleSet) -> Result<EstimateWithBound> {
        let cfg = self.cfg().clone();
        if !s0.is_binary() {
            return Err(Error::config("s0", "binary racing needs a binary sample set"));
        }
        let mut acc = WaldAccumulator::from_samples(s0);
        let mut best = acc.estimate(cfg.delta, cfg.sigma_g);
        let mut best_index = 0;
        self.certify_at_start(best.bound);
        let q_star = self.full_compliance_phase();
        self.log.full_compliance_phase = q_star;
        self.log.racing_start = Some(self.t());
        let mut q = 1;
        loop {
            // NaN estimates (no information yet) keep racing.
            if best.scalar().abs() > best.bound {
                let winner = usize::from(best.scalar() > 0.0);
                self.exploit(winner);
                break;
            }
            if self.remaining() == 0 {
                break;
            }
            self.recertify(q, best.bound, q_star);
            let start = self.t();
            let mut complete = true;
            for j in 0..2 * cfg.h {
                if self.remaining() == 0 {
                    complete = false;
                    break;
                }
                let r = self.step(Stage::Racing { phase: q }, Some(j % 2), false);
                acc.push(&r.record().expect("recommended round"));
            }
            let cur = acc.estimate(cfg.delta, cfg.sigma_g);
            let phase_bound = cur.bound;
            if complete && cur.bound < best.bound {
                best = cur.clone();
                best_index = q;
            }
            self.log.phases.push(PhaseSummary {
                q,
                start,
                end: self.t(),
                active: vec![0, 1],
                phase_bound,
                best_bound: best.bound,
                best_index,
                theta_hat: cur.theta_hat,
            });
            if !complete {
                break;
            }
            q += 1;
        }
        Ok(best)
    }

    /// k-arm racing from `s0`; returns the final best estimate.
    pub(crate) fn racing_stage_k(&mut self, s0: &SampleSet) -> Result<EstimateWithBound> {
        let cfg = self.cfg().clone();
        let k = cfg.arm_count;
        if s0.codomain() != k {
            return Err(Error::config("s0", format!("k-arm racing needs a {k}-arm sample set")));
        }
        let mut acc = KArmAccumulator::from_samples(s0);
        let mut best = acc.estimate(cfg.delta, cfg.sigma_g)?;
        let mut best_index = 0;
        self.certify_at_start(best.bound);
        self.log.racing_start = Some(self.t());
        let mut active: Vec<usize> = (0..k).collect();
        let mut q = 1;
        loop {
            let top = active
                .iter()
                .map(|&i| best.theta_hat[i])
                .fold(f64::NEG_INFINITY, f64::max);
            active.retain(|&i| top - best.theta_hat[i] <= best.bound);
            if active.len() == 1 {
                self.exploit(active[0]);
                break;
            }
            if self.remaining() == 0 {
                break;
            }
            self.recertify(q, best.bound, None);
            let start = self.t();
            let mut complete = true;
            'phase: for _ in 0..cfg.h {
                for &arm in &active {
                    if self.remaining() == 0 {
                        complete = false;
                        break 'phase;
                    }
                    let r = self.step(Stage::Racing { phase: q }, Some(arm), false);
                    acc.push(&r.record().expect("recommended round"));
                }
            }
            // Eliminated arms keep their last best estimate.
            let cur = acc.estimate_on(&active, &best.theta_hat, cfg.delta, cfg.sigma_g)?;
            let phase_bound = cur.bound;
            if complete && cur.bound < best.bound {
                best = cur.clone();
                best_index = q;
            }
            self.log.phases.push(PhaseSummary {
                q,
                start,
                end: self.t(),
                active: active.clone(),
                phase_bound,
                best_bound: best.bound,
                best_index,
                theta_hat: cur.theta_hat,
            });
            if !complete {
                break;
            }
            q += 1;
        }
        Ok(best)
    }

    /// `n` rounds recommending control and treatment alternately, logged as
    /// warm-start rounds under the racing overrides.
    pub(crate) fn warm_start(&mut self, n: usize) -> SampleSet {
        let plan = &self.policy.plan;
        self.certified = plan.racing_override.clone();
        let mut s = SampleSet::binary(Vec::with_capacity(n));
        for j in 0..n {
            let r = self.step(Stage::WarmStart, Some(j % 2), false);
            s.push(r.record().expect("recommended round"));
        }
        s
    }
}

/// Runs the binary racing stage from `s0`. The log covers the racing and
/// exploitation rounds only; the horizon counts them alone.
pub fn run_racing_stage(
    policy: &Policy,
    s0: &SampleSet,
    world: &World,
    seed: RngSeed,
) -> Result<(TrajectoryLog, Option<usize>, EstimateWithBound)> {
    if policy.cfg.mode != PolicyMode::Binary {
        return Err(Error::config("policy.mode", "expected binary mode"));
    }
    let mut sim = policy.sim(world, seed);
    let est = sim.racing_stage(s0)?;
    let winner = sim.log.winner;
    Ok((sim.log, winner, est))
}

/// Runs the k-arm racing stage from `s0`.
pub fn run_racing_stage_k(
    policy: &Policy,
    s0: &SampleSet,
    world: &World,
    seed: RngSeed,
) -> Result<(TrajectoryLog, Option<usize>, EstimateWithBound)> {
    if policy.cfg.mode != PolicyMode::KArm {
        return Err(Error::config("policy.mode", "expected k-arm mode"));
    }
    let mut sim = policy.sim(world, seed);
    let est = sim.racing_stage_k(s0)?;
    let winner = sim.log.winner;
    Ok((sim.log, winner, est))
}

/// Collects `n` alternating control/treatment rounds in `world` with the
/// racing overrides as the only certificates, then races from them. The log
/// starts with the warm-start rounds.
pub fn run_racing_with_warm_start(
    policy: &Policy,
    n: usize,
    world: &World,
    seed: RngSeed,
) -> Result<(TrajectoryLog, Option<usize>, EstimateWithBound)> {
    if policy.cfg.mode != PolicyMode::Binary {
        return Err(Error::config("policy.mode", "expected binary mode"));
    }
    let mut sim = policy.sim(world, seed);
    let s0 = sim.warm_start(n);
    let est = sim.racing_stage(&s0)?;
    let winner = sim.log.winner;
    Ok((sim.log, winner, est))
}

/// `n` alternating control/treatment rounds in `world` where exactly the
/// types flagged in `certified` comply.
pub fn alternating_samples(
    policy: &Policy,
    world: &World,
    certified: &[bool],
    n: usize,
    seed: RngSeed,
) -> SampleSet {
    let mut sim = policy.sim(world, seed);
    sim.certified = certified.to_vec();
    let mut s = SampleSet::binary(Vec::with_capacity(n));
    for j in 0..n {
        let r = sim.step(Stage::WarmStart, Some(j % 2), false);
        s.push(r.record().expect("recommended round"));
    }
    s
}
