//! Pseudo-regret against the best fixed arm.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrajectoryLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub pseudo_regret: f64,
    /// Regret from rounds after the sampling stage.
    pub post_sampling_regret: f64,
    pub per_type: BTreeMap<usize, f64>,
    /// Running total after each round.
    pub cumulative: Vec<f64>,
}

/// Expected reward lost in one round by playing `x`.
pub fn round_regret(theta: &[f64], x: usize) -> f64 {
    if theta.len() == 1 {
        theta[0].max(0.0) - theta[0] * x as f64
    } else {
        let best = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        best - theta[x]
    }
}

pub fn pseudo_regret(log: &TrajectoryLog, theta: &[f64]) -> RegretReport {
    let mut total = 0.0;
    let mut post = 0.0;
    let mut per_type = BTreeMap::new();
    let mut cumulative = Vec::with_capacity(log.rounds.len());
    for r in &log.rounds {
        let loss = round_regret(theta, r.x);
        total += loss;
        if r.t >= log.sampling_end {
            post += loss;
        }
        *per_type.entry(r.type_index).or_insert(0.0) += loss;
        cumulative.push(total);
    }
    RegretReport {
        pseudo_regret: total,
        post_sampling_regret: post,
        per_type,
        cumulative,
    }
}
