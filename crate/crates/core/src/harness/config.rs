//! Configuration files.
//!
//! A config is one JSON document with optional sections `population`,
//! `policy`, and `experiment`. Policy and experiment sections are partial:
//! present keys override the preset defaults. Unknown keys fail the parse,
//! and errors name the offending key path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{BehaviorModel, PopulationSpec};
use crate::error::{Error, Result};
use crate::mechanism::{PolicyConfig, PolicyMode, SamplingLength};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PolicyOverrides {
    pub rho: Option<f64>,
    pub ell: Option<usize>,
    pub ell0: Option<usize>,
    pub ell1: Option<usize>,
    pub delta: Option<f64>,
    pub g_gap_bound: Option<f64>,
    pub h: Option<usize>,
    pub tau: Option<f64>,
    pub horizon: Option<usize>,
    pub arm_count: Option<usize>,
    pub mode: Option<PolicyMode>,
    pub sigma_g: Option<f64>,
    pub sampling_length: Option<SamplingLength>,
    pub mirrored: Option<bool>,
    pub checkpoints: Option<Vec<usize>>,
}

macro_rules! apply_fields {
    ($src:expr, $dst:expr, $($f:ident),*) => {
        $(if let Some(v) = &$src.$f { $dst.$f = v.clone(); })*
    };
}

impl PolicyOverrides {
    pub fn apply(&self, cfg: &mut PolicyConfig) {
        apply_fields!(
            self, cfg, rho, ell, ell0, ell1, delta, g_gap_bound, h, tau, horizon, arm_count, mode,
            sigma_g, sampling_length, mirrored, checkpoints
        );
    }
}

/// Run-level settings of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Independent runs.
    pub seeds: usize,
    /// Ground-truth effect (one entry for binary, `k` otherwise).
    pub theta: Vec<f64>,
    /// Monte Carlo iterations for the compliance calculus.
    pub mc_iters: usize,
    /// x-axis points: stage-2 prefixes, racing rounds, or sample sizes.
    pub checkpoints: Vec<usize>,
    /// Horizons for regret experiments.
    pub horizons: Vec<usize>,
    /// Alternating rounds collected before a standalone racing stage.
    pub warm_start: usize,
    pub behavior: BehaviorModel,
    /// Parameter grid of the ρ tables.
    pub grid: Vec<f64>,
    /// Derive `ρ` from the smallest exploration ceiling instead of using the
    /// configured value.
    pub assemble_rho: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOverrides {
    pub seeds: Option<usize>,
    pub theta: Option<Vec<f64>>,
    pub mc_iters: Option<usize>,
    pub checkpoints: Option<Vec<usize>>,
    pub horizons: Option<Vec<usize>>,
    pub warm_start: Option<usize>,
    pub behavior: Option<BehaviorModel>,
    pub grid: Option<Vec<f64>>,
    pub assemble_rho: Option<bool>,
}

impl ExperimentOverrides {
    pub fn apply(&self, e: &mut ExperimentSettings) {
        apply_fields!(
            self, e, seeds, theta, mc_iters, checkpoints, horizons, warm_start, behavior, grid,
            assemble_rho
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub population: Option<PopulationSpec>,
    #[serde(default)]
    pub policy: PolicyOverrides,
    #[serde(default)]
    pub experiment: ExperimentOverrides,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Parse {
                context: format!("config key `{path}`"),
                message: e.into_inner().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Hex SHA-256 of the canonical JSON of `value` (object keys sorted).
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config serializes");
    let text = serde_json::to_string(&v).expect("json value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}
