//! Posterior beliefs for Bayesian agents.
//!
//! For each type, `M` worlds are drawn from the type's prior and run through
//! the published policy with theory-driven agents. Each run is reduced to the
//! law of its recommendation at every round given the world, so
//! `E[θ | z_t = z]` is the likelihood-weighted average of the worlds' effects.
//! Explore randomness enters through its exact probability rather than one
//! realization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Policy, PolicyMode, Sim, Stage, TrajectoryLog, World};
use crate::error::{Error, Result};
use crate::stats::{RngSeed, StreamKind};

/// Which entry point the simulated worlds run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Scope {
    Sampling,
    Combined,
}

/// Law of the recommendation issued at a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Law {
    Silent,
    /// Explore arm with probability `ρ`, else the exploit arm.
    Explore { explore: usize, exploit: usize },
    /// `arms[(t − start) mod len]`.
    Cycle(Vec<usize>),
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Profile {
    theta: Vec<f64>,
    /// `(start, law)` sorted by start.
    segments: Vec<(usize, Law)>,
    len: usize,
}

impl Profile {
    fn from_log(log: &TrajectoryLog, theta: Vec<f64>) -> Self {
        let mut segments = vec![(0, Law::Silent)];
        let mut t = log.sampling_first_end;
        while t < log.sampling_end {
            let Stage::Sampling { arm } = log.rounds[t].stage else {
                unreachable!("sampling rounds are contiguous");
            };
            let phase = if log.arm_count == 1 { 0 } else { arm - 1 };
            segments.push((
                t,
                Law::Explore {
                    explore: arm,
                    exploit: log.sampling_exploit[phase],
                },
            ));
            while t < log.sampling_end && log.rounds[t].stage == (Stage::Sampling { arm }) {
                t += 1;
            }
        }
        for ph in &log.phases {
            segments.push((ph.start, Law::Cycle(ph.active.clone())));
        }
        if let (Some(end), Some(w)) = (log.racing_end, log.winner) {
            segments.push((end, Law::Fixed(w)));
        }
        Profile {
            theta,
            segments,
            len: log.rounds.len(),
        }
    }

    fn likelihood(&self, t: usize, z: usize, rho: f64) -> f64 {
        if t >= self.len {
            return 0.0;
        }
        let i = self.segments.partition_point(|s| s.0 <= t) - 1;
        let (start, law) = &self.segments[i];
        match law {
            Law::Silent => 0.0,
            Law::Explore { explore, exploit } => {
                let mut p = 0.0;
                if z == *explore {
                    p += rho;
                }
                if z == *exploit {
                    p += 1.0 - rho;
                }
                p
            }
            Law::Cycle(arms) => f64::from(arms[(t - start) % arms.len()] == z),
            Law::Fixed(w) => f64::from(*w == z),
        }
    }
}

/// Simulated worlds per type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beliefs {
    rho: f64,
    prior_means: Vec<Vec<f64>>,
    worlds: Vec<Vec<Profile>>,
}

impl Beliefs {
    pub(crate) fn simulate(policy: &Policy, samples: usize, seed: RngSeed, scope: Scope) -> Result<Self> {
        if samples == 0 {
            return Err(Error::config("behavior.posterior_samples", "must be at least 1"));
        }
        let pop = &policy.pop;
        let mut worlds = Vec::with_capacity(pop.len());
        let mut prior_means = Vec::with_capacity(pop.len());
        for u in 0..pop.len() {
            let prior = &pop.types[u].prior;
            prior_means.push(match policy.cfg.mode {
                PolicyMode::Binary => vec![prior.prior_mean_theta()],
                PolicyMode::KArm => prior.arm_means(),
            });
            let mut rng = seed.stream(StreamKind::Posterior, u as u64);
            let thetas: Vec<Vec<f64>> = (0..samples).map(|_| prior.sample_theta(&mut rng)).collect();
            let type_seed = seed.child(u as u64);
            let profiles = thetas
                .into_par_iter()
                .enumerate()
                .map(|(m, theta)| {
                    let world_seed = type_seed.child(m as u64);
                    let world = World::realize(pop, theta, world_seed);
                    let mut sim = Sim::new(policy, &world, world_seed);
                    match (scope, policy.cfg.mode) {
                        (Scope::Combined, _) => sim.combined()?,
                        (Scope::Sampling, PolicyMode::Binary) => {
                            sim.sampling_stage()?;
                        }
                        (Scope::Sampling, PolicyMode::KArm) => {
                            sim.sampling_stage_k()?;
                        }
                    }
                    Ok(Profile::from_log(&sim.log, world.theta))
                })
                .collect::<Result<Vec<_>>>()?;
            worlds.push(profiles);
        }
        Ok(Beliefs {
            rho: policy.cfg.rho,
            prior_means,
            worlds,
        })
    }

    /// `E[θ | z_t = z]` for type `u`; the prior mean when no simulated world
    /// could have issued `z` at `t`.
    pub fn posterior_mean(&self, u: usize, t: usize, z: usize) -> Vec<f64> {
        let dim = self.prior_means[u].len();
        let mut num = vec![0.0; dim];
        let mut den = 0.0;
        for w in &self.worlds[u] {
            let l = w.likelihood(t, z, self.rho);
            if l > 0.0 {
                den += l;
                for (n, th) in num.iter_mut().zip(&w.theta) {
                    *n += l * th;
                }
            }
        }
        if den == 0.0 {
            return self.prior_means[u].clone();
        }
        num.into_iter().map(|n| n / den).collect()
    }

    /// Standard error of the posterior mean's first coordinate, from the
    /// effective sample size of the weights.
    pub fn posterior_std_error(&self, u: usize, t: usize, z: usize) -> f64 {
        let ws: Vec<(f64, f64)> = self.worlds[u]
            .iter()
            .map(|w| (w.likelihood(t, z, self.rho), w.theta[0]))
            .filter(|(l, _)| *l > 0.0)
            .collect();
        let sw: f64 = ws.iter().map(|(l, _)| l).sum();
        if sw == 0.0 {
            return f64::INFINITY;
        }
        let sw2: f64 = ws.iter().map(|(l, _)| l * l).sum();
        let mean = ws.iter().map(|(l, th)| l * th).sum::<f64>() / sw;
        let var = ws.iter().map(|(l, th)| l * (th - mean).powi(2)).sum::<f64>() / sw;
        (var * sw2 / (sw * sw)).sqrt()
    }

    pub fn worlds_per_type(&self) -> usize {
        self.worlds.first().map_or(0, Vec::len)
    }
}
