//! Prior-dependent constants that certify compliance.
//!
//! Everything the planner needs before it can promise an agent type that a
//! recommendation is worth following: the first-stage event `ξ` and its
//! Monte Carlo probability, the exploration ceiling `ρ`, racing-stage
//! thresholds, and the sample-size and phase bounds that follow from them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::PopulationSpec;
use crate::error::{Error, Result};
use crate::stats::{truncated_tail_probability, GaussianBaseline, SimRng, TruncatedGaussian};

/// Whether a type leans towards control or treatment on its prior alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    NeverTaker,
    AlwaysTaker,
}

/// A type's beliefs: a prior over the effect and its baseline-reward law.
///
/// Binary populations set `theta_prior`; k-arm populations set one prior per
/// arm in `arm_priors`, ordered from most to least preferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_prior: Option<TruncatedGaussian>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arm_priors: Vec<TruncatedGaussian>,
    pub baseline: GaussianBaseline,
}

impl PriorSpec {
    pub fn binary(theta_prior: TruncatedGaussian, baseline: GaussianBaseline) -> Self {
        PriorSpec {
            theta_prior: Some(theta_prior),
            arm_priors: Vec::new(),
            baseline,
        }
    }

    pub fn arms(arm_priors: Vec<TruncatedGaussian>, baseline: GaussianBaseline) -> Self {
        PriorSpec {
            theta_prior: None,
            arm_priors,
            baseline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.baseline.validate()?;
        match (&self.theta_prior, self.arm_priors.len()) {
            (Some(p), 0) => p.validate(),
            (None, k) if k >= 2 => {
                for p in &self.arm_priors {
                    p.validate()?;
                }
                let means = self.arm_means();
                if means.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::config(
                        "arm_priors",
                        "arms must be ordered by non-increasing prior mean",
                    ));
                }
                Ok(())
            }
            _ => Err(Error::config(
                "theta_prior",
                "set either theta_prior (binary) or at least two arm_priors",
            )),
        }
    }

    pub fn arm_count(&self) -> usize {
        if self.theta_prior.is_some() {
            1
        } else {
            self.arm_priors.len()
        }
    }

    /// The binary effect prior. Panics on a k-arm prior.
    pub fn theta(&self) -> &TruncatedGaussian {
        self.theta_prior
            .as_ref()
            .expect("binary prior required")
    }

    /// `μ^(u)`: the prior mean of the binary effect, or of the favourite arm.
    pub fn prior_mean_theta(&self) -> f64 {
        match &self.theta_prior {
            Some(p) => p.truncated_mean(),
            None => self.arm_priors[0].truncated_mean(),
        }
    }

    pub fn arm_means(&self) -> Vec<f64> {
        match &self.theta_prior {
            Some(p) => vec![p.truncated_mean()],
            None => self.arm_priors.iter().map(|p| p.truncated_mean()).collect(),
        }
    }

    pub fn preference(&self) -> Preference {
        if self.theta_prior.is_some() && self.prior_mean_theta() < 0.0 {
            Preference::NeverTaker
        } else {
            Preference::AlwaysTaker
        }
    }

    /// Arm the type plays with no recommendation.
    pub fn preferred_arm(&self) -> usize {
        match &self.theta_prior {
            Some(p) => usize::from(p.truncated_mean() > 0.0),
            None => 0,
        }
    }

    /// One effect draw: a single entry, or one per arm.
    pub fn sample_theta(&self, rng: &mut SimRng) -> Vec<f64> {
        match &self.theta_prior {
            Some(p) => vec![p.sample(rng)],
            None => self.arm_priors.iter().map(|p| p.sample(rng)).collect(),
        }
    }
}

/// Parameters of the first-stage reward event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiConfig {
    pub ell0: usize,
    pub ell1: usize,
    pub delta: f64,
    /// `G`: upper bound on the expected baseline gap `E[g¹ − g⁰]`. In
    /// mirrored mode, a lower bound on the always-takers' `E[g]`.
    pub g_gap_bound: f64,
    pub sigma_g: f64,
}

impl XiConfig {
    /// `σ_g(√(2log(2/δ)/ℓ0) + √(2log(2/δ)/ℓ1)) + G + ½`.
    pub fn margin(&self) -> f64 {
        let l = 2.0 * (2.0 / self.delta).ln();
        self.sigma_g * ((l / self.ell0 as f64).sqrt() + (l / self.ell1 as f64).sqrt())
            + self.g_gap_bound
            + 0.5
    }
}

/// `ξ`: the treated mean beats the untreated mean by more than the margin.
pub fn xi_event_holds(y_bar_1: f64, y_bar_0: f64, cfg: &XiConfig) -> bool {
    y_bar_1 > y_bar_0 + cfg.margin()
}

/// Mirrored event for an all-always-taker population: the treated mean sits
/// far below the baseline lower bound `G`.
pub fn mirrored_xi_event_holds(y_bar_1: f64, cfg: &XiConfig) -> bool {
    let noise = cfg.sigma_g * (2.0 * (2.0 / cfg.delta).ln() / cfg.ell1 as f64).sqrt();
    y_bar_1 < cfg.g_gap_bound - noise - 0.5
}

/// Default `G`: zero when the two preference classes share a baseline
/// hyper-mean, else their hyper-mean gap plus three hyper-stds.
pub fn default_gap_bound(pop: &PopulationSpec) -> f64 {
    let class_mean = |pref: Preference| {
        let idx = pop.indices_with(pref);
        let w: f64 = idx.iter().map(|&u| pop.fraction(u)).sum();
        if w == 0.0 {
            return None;
        }
        Some(
            idx.iter()
                .map(|&u| pop.fraction(u) * pop.types[u].prior.baseline.hyper_mean)
                .sum::<f64>()
                / w,
        )
    };
    let (Some(m0), Some(m1)) = (
        class_mean(Preference::NeverTaker),
        class_mean(Preference::AlwaysTaker),
    ) else {
        return 0.0;
    };
    if m1 == m0 {
        return 0.0;
    }
    let spread = pop
        .types
        .iter()
        .map(|t| t.prior.baseline.hyper_std)
        .fold(0.0, f64::max);
    m1 - m0 + 3.0 * spread
}

/// A Monte Carlo probability with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiEstimate {
    pub p: f64,
    pub std_error: f64,
    pub iters: usize,
    pub hits: usize,
}

impl XiEstimate {
    fn from_hits(hits: usize, iters: usize) -> Self {
        let p = hits as f64 / iters as f64;
        XiEstimate {
            p,
            std_error: (p * (1.0 - p) / iters as f64).sqrt(),
            iters,
            hits,
        }
    }
}

/// Mean of `n` baseline draws from the given types, each picked with its
/// relative population share.
fn mixture_mean_g(
    pop: &PopulationSpec,
    types: &[usize],
    mu_g: &[f64],
    n: usize,
    rng: &mut SimRng,
) -> f64 {
    let total: f64 = types.iter().map(|&u| pop.fraction(u)).sum();
    let mut sum = 0.0;
    for _ in 0..n {
        let mut u = types[types.len() - 1];
        let r: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for &cand in types {
            acc += pop.fraction(cand);
            if r < acc {
                u = cand;
                break;
            }
        }
        sum += pop.types[u].prior.baseline.sample(mu_g[u], rng);
    }
    sum / n as f64
}

fn require_binary(pop: &PopulationSpec) -> Result<()> {
    if pop.arm_count() != 1 {
        return Err(Error::config(
            "population",
            "binary compliance constants need a binary population",
        ));
    }
    Ok(())
}

/// Monte Carlo `P[ξ]` under the prior of type `target`.
///
/// Each iteration draws `θ` from the target prior and every type's baseline
/// mean from its hyperprior, then simulates `ℓ0` control rewards from
/// never-takers and `ℓ1` treatment rewards from always-takers.
pub fn estimate_xi_probability(
    pop: &PopulationSpec,
    cfg: &XiConfig,
    target: usize,
    iters: usize,
    rng: &mut SimRng,
) -> Result<XiEstimate> {
    require_binary(pop)?;
    if iters == 0 {
        return Err(Error::config("iters", "must be at least 1"));
    }
    let nt: Vec<usize> = pop
        .indices_with(Preference::NeverTaker)
        .into_iter()
        .filter(|&u| pop.fraction(u) > 0.0)
        .collect();
    let at: Vec<usize> = pop
        .indices_with(Preference::AlwaysTaker)
        .into_iter()
        .filter(|&u| pop.fraction(u) > 0.0)
        .collect();
    if nt.is_empty() || at.is_empty() {
        return Err(Error::config(
            "population",
            "the first-stage event needs both never-takers and always-takers",
        ));
    }
    let prior = pop.types[target].prior.theta();
    let mut hits = 0;
    for _ in 0..iters {
        let theta = prior.sample(rng);
        let mu_g = pop.realize_baselines(rng);
        let y0 = mixture_mean_g(pop, &nt, &mu_g, cfg.ell0, rng);
        let y1 = theta + mixture_mean_g(pop, &at, &mu_g, cfg.ell1, rng);
        if xi_event_holds(y1, y0, cfg) {
            hits += 1;
        }
    }
    Ok(XiEstimate::from_hits(hits, iters))
}

/// Monte Carlo probability of the mirrored event for an all-always-taker
/// population, under the prior of type `target`.
pub fn estimate_mirrored_xi_probability(
    pop: &PopulationSpec,
    cfg: &XiConfig,
    target: usize,
    iters: usize,
    rng: &mut SimRng,
) -> Result<XiEstimate> {
    require_binary(pop)?;
    if iters == 0 {
        return Err(Error::config("iters", "must be at least 1"));
    }
    let all: Vec<usize> = (0..pop.len()).filter(|&u| pop.fraction(u) > 0.0).collect();
    let prior = pop.types[target].prior.theta();
    let mut hits = 0;
    for _ in 0..iters {
        let theta = prior.sample(rng);
        let mu_g = pop.realize_baselines(rng);
        let y1 = theta + mixture_mean_g(pop, &all, &mu_g, cfg.ell1, rng);
        if mirrored_xi_event_holds(y1, cfg) {
            hits += 1;
        }
    }
    Ok(XiEstimate::from_hits(hits, iters))
}

/// Exploration ceiling `1 + 4μ⁰/(P[ξ] − 4μ⁰)` for a never-taker, clamped to
/// `[0, 1]`.
pub fn exploration_probability_bound(mu0: f64, p_xi: f64) -> Result<f64> {
    if !(mu0 < 0.0) {
        return Err(Error::NotNeverTaker { mu: mu0 });
    }
    let rho = 1.0 + 4.0 * mu0 / (p_xi - 4.0 * mu0);
    Ok(rho.clamp(0.0, 1.0))
}

/// Mirrored ceiling for an always-taker explored towards control.
pub fn mirrored_exploration_probability_bound(mu1: f64, p_xi: f64) -> Result<f64> {
    if !(mu1 > 0.0) {
        return Err(Error::config(
            "prior",
            format!("mirrored exploration needs a positive prior mean, got {mu1}"),
        ));
    }
    exploration_probability_bound(-mu1, p_xi)
}

/// `τ·P[θ > τ]` for a never-taker, `τ·P[θ < −τ]` otherwise.
pub fn tau_p(prior: &PriorSpec, tau: f64) -> f64 {
    let dist = prior.theta();
    let tail = if prior.prior_mean_theta() < 0.0 {
        truncated_tail_probability(dist, tau)
    } else {
        1.0 - truncated_tail_probability(dist, -tau)
    };
    tau * tail
}

/// Largest `A(S₀, δ)` under which the type follows racing recommendations.
pub fn racing_threshold(prior: &PriorSpec, tau: f64) -> f64 {
    tau_p(prior, tau) / 4.0
}

/// Largest failure probability the racing-stage argument tolerates.
pub fn delta_budget(tau: f64, p_tail: f64) -> f64 {
    tau * p_tail / (2.0 * tau * p_tail + 2.0)
}

/// Stage-2 length after which the racing-stage certificate is guaranteed.
pub fn minimum_sampling_length(tau_p: f64, rho: f64, p_c1: f64, sigma_g: f64, delta: f64) -> u64 {
    let l5 = (5.0 / delta).ln();
    let kappa1 = 8.0 * sigma_g * (2.0 * l5).sqrt() / (p_c1 * rho * (1.0 - rho));
    let kappa2 = (3.0 - rho) * (rho * l5 / (2.0 * (1.0 - rho))).sqrt();
    ceil_count((kappa1 / tau_p + kappa2).powi(2))
}

/// Racing phase after which the most resistant type complies.
pub fn full_compliance_phase(tau_p_star: f64, p_c: f64, h: usize, sigma_g: f64, delta: f64) -> u64 {
    let l5 = (5.0 / delta).ln();
    let inner = 32.0 * sigma_g * (2.0 * l5).sqrt() / tau_p_star + (50.0 * l5).sqrt();
    ceil_count((inner / (2.0 * h as f64 * p_c)).powi(2))
}

/// Accuracy of an estimate from `n` rounds in which every agent complied.
pub fn full_compliance_accuracy_bound(n: usize, sigma_g: f64, delta: f64) -> f64 {
    8.0 * sigma_g * (2.0 * (2.0 / delta).ln() / n as f64).sqrt()
}

fn ceil_count(v: f64) -> u64 {
    if v.is_nan() || v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v.ceil() as u64
    }
}

/// `C = σ_g√(2log(3/δ)/ℓ) + ¼` of the k-arm sampling events.
pub fn k_arm_margin(ell: usize, delta: f64, sigma_g: f64) -> f64 {
    sigma_g * (2.0 * (3.0 / delta).ln() / ell as f64).sqrt() + 0.25
}

/// `ξ_i` for arm `i ≥ 1`: arm 0's mean sits below every intermediate arm and
/// every earlier arm sits below the prior mean of arm `i`, each with margin
/// `c`. `means[j]` is the observed mean of arm `j < i`, `None` if unseen.
pub fn xi_k_event_holds(means: &[Option<f64>], arm: usize, mu_arm: f64, c: f64) -> bool {
    assert!(arm >= 1);
    let Some(y0) = means[0] else {
        return false;
    };
    let mut min_mid = f64::INFINITY;
    let mut max_prev = y0;
    for m in &means[1..arm] {
        let Some(v) = *m else {
            return false;
        };
        min_mid = min_mid.min(v);
        max_prev = max_prev.max(v);
    }
    y0 + c <= min_mid - c && max_prev + c <= mu_arm
}

/// Per-arm Monte Carlo probabilities of `ξ_i` for type `target`, with the
/// overall `P[ξ] = min_i P[ξ_i]` in the first slot.
///
/// Every arm's sample mean is modelled as `θ_j` plus the mean of `ℓ`
/// baseline draws from the whole population.
pub fn estimate_xi_k_probability(
    pop: &PopulationSpec,
    target: usize,
    ell: usize,
    delta: f64,
    sigma_g: f64,
    iters: usize,
    rng: &mut SimRng,
) -> Result<(XiEstimate, Vec<XiEstimate>)> {
    let k = pop.arm_count();
    if k < 2 {
        return Err(Error::config("population", "k-arm events need a k-arm population"));
    }
    if iters == 0 || ell == 0 {
        return Err(Error::config("iters", "iters and ell must be at least 1"));
    }
    let prior = &pop.types[target].prior;
    let mu = prior.arm_means();
    let c = k_arm_margin(ell, delta, sigma_g);
    let all: Vec<usize> = (0..pop.len()).filter(|&u| pop.fraction(u) > 0.0).collect();
    let mut hits = vec![0usize; k];
    for _ in 0..iters {
        let theta = prior.sample_theta(rng);
        let mu_g = pop.realize_baselines(rng);
        let means: Vec<Option<f64>> = (0..k)
            .map(|j| Some(theta[j] + mixture_mean_g(pop, &all, &mu_g, ell, rng)))
            .collect();
        for i in 1..k {
            if xi_k_event_holds(&means, i, mu[i], c) {
                hits[i] += 1;
            }
        }
    }
    let per_arm: Vec<XiEstimate> = (1..k).map(|i| XiEstimate::from_hits(hits[i], iters)).collect();
    let min = *per_arm
        .iter()
        .min_by(|a, b| a.hits.cmp(&b.hits))
        .expect("k >= 2");
    Ok((min, per_arm))
}

/// k-arm exploration ceiling `1 + 8·min_{j<i}(μ_i − μ_j)/P[ξ]`, clamped to
/// `[0, 1]`. Requires every non-default arm to have a positive prior mean.
pub fn exploration_probability_bound_k(arm_means: &[f64], p_xi: f64) -> Result<f64> {
    if let Some((i, &m)) = arm_means.iter().enumerate().skip(1).find(|(_, m)| !(**m > 0.0)) {
        return Err(Error::config(
            format!("arm_priors[{i}]"),
            format!("k-arm exploration needs positive prior means, got {m}"),
        ));
    }
    let mut worst = f64::INFINITY;
    for i in 1..arm_means.len() {
        for j in 0..i {
            worst = worst.min(arm_means[i] - arm_means[j]);
        }
    }
    if p_xi <= 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + 8.0 * worst / p_xi).clamp(0.0, 1.0))
}

/// `τ·P[min_{a≠b} |θᵃ − θᵇ| > τ]/4` for a k-arm prior, by Monte Carlo.
pub fn racing_threshold_k(prior: &PriorSpec, tau: f64, iters: usize, rng: &mut SimRng) -> f64 {
    let mut hits = 0usize;
    for _ in 0..iters {
        let th = prior.sample_theta(rng);
        let mut min_gap = f64::INFINITY;
        for a in 0..th.len() {
            for b in a + 1..th.len() {
                min_gap = min_gap.min((th[a] - th[b]).abs());
            }
        }
        if min_gap > tau {
            hits += 1;
        }
    }
    tau * (hits as f64 / iters.max(1) as f64) / 4.0
}

/// Summary of the compliance calculus for every type of a binary population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub xi: XiConfig,
    pub tau: f64,
    pub types: Vec<TypeConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeConstants {
    pub type_index: usize,
    pub preference: Preference,
    pub prior_mean_theta: f64,
    pub p_xi: XiEstimate,
    /// Exploration ceiling; absent for always-takers.
    pub rho_ceiling: Option<f64>,
    pub tau_p: f64,
    pub racing_threshold: f64,
    pub delta_budget: f64,
}

/// Runs the calculus for every type, each on its own Monte Carlo stream.
pub fn constants_report(
    pop: &PopulationSpec,
    xi: &XiConfig,
    tau: f64,
    iters: usize,
    rng_for: impl Fn(usize) -> SimRng,
) -> Result<ConstantsReport> {
    let mut types = Vec::with_capacity(pop.len());
    for u in 0..pop.len() {
        let prior = &pop.types[u].prior;
        let p_xi = estimate_xi_probability(pop, xi, u, iters, &mut rng_for(u))?;
        let mu = prior.prior_mean_theta();
        let rho_ceiling = match prior.preference() {
            Preference::NeverTaker => Some(exploration_probability_bound(mu, p_xi.p)?),
            Preference::AlwaysTaker => None,
        };
        let tp = tau_p(prior, tau);
        types.push(TypeConstants {
            type_index: u,
            preference: prior.preference(),
            prior_mean_theta: mu,
            p_xi,
            rho_ceiling,
            tau_p: tp,
            racing_threshold: tp / 4.0,
            delta_budget: delta_budget(tau, tp / tau),
        });
    }
    Ok(ConstantsReport {
        xi: *xi,
        tau,
        types,
    })
}
