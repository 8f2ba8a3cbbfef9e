//! Seeded randomness, the Gaussian families used by the experiments, and
//! standard-normal helpers.
//!
//! Every random quantity in a run is drawn from a [`SimRng`] obtained through
//! [`RngSeed::stream`]. A stream is identified by a [`StreamKind`] and an
//! index (a seed position, an agent type, a Monte Carlo shard), so two
//! consumers never share generator state and the order in which one
//! consumer draws cannot perturb another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

pub type SimRng = ChaCha8Rng;

/// Root seed of a run or experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

/// Consumers of randomness. Each kind gets its own key schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamKind {
    /// Run-level draws: realized baseline means.
    Population = 1,
    /// Per-round agent arrivals: type, baseline reward.
    Arrivals = 2,
    /// Explore-set placement in sampling stages.
    Explore = 3,
    /// Monte Carlo estimation of prior-dependent constants.
    MonteCarlo = 4,
    /// Simulated worlds used by Bayesian agents.
    Posterior = 5,
    /// Synthetic datasets for tests and the coverage experiment.
    Dataset = 6,
    /// Seed fan-out inside an experiment.
    Experiment = 7,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSeed {
    /// Independent generator for `(kind, index)`.
    pub fn stream(self, kind: StreamKind, index: u64) -> SimRng {
        let key = splitmix64(self.0 ^ splitmix64(kind as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(index);
        rng
    }

    /// A derived root seed, used when one experiment fans out into many runs.
    pub fn child(self, index: u64) -> RngSeed {
        RngSeed(splitmix64(
            self.0 ^ splitmix64(index.wrapping_add(StreamKind::Experiment as u64) << 1),
        ))
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(z)` of the standard normal, accurate far into the tail.
pub fn normal_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`normal_cdf`] for `p` in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Draw from N(0, 1).
pub fn standard_normal(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw from the open interval (0, 1).
pub fn open_uniform(rng: &mut SimRng) -> f64 {
    rng.sample(Open01)
}

/// A Gaussian conditioned on `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedGaussian {
    pub mean: f64,
    pub std_dev: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedGaussian {
    pub fn new(mean: f64, std_dev: f64, lower: f64, upper: f64) -> Result<Self> {
        let dist = TruncatedGaussian {
            mean,
            std_dev,
            lower,
            upper,
        };
        dist.validate()?;
        Ok(dist)
    }

    /// Gaussian truncated to the treatment-effect range `[-1, 1]`.
    pub fn unit_interval(mean: f64, std_dev: f64) -> Result<Self> {
        Self::new(mean, std_dev, -1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) {
            return Err(Error::config(
                "truncated_gaussian.lower",
                format!("lower {} must be below upper {}", self.lower, self.upper),
            ));
        }
        if !(self.std_dev > 0.0) || !self.std_dev.is_finite() {
            return Err(Error::config(
                "truncated_gaussian.std_dev",
                format!("std_dev {} must be positive and finite", self.std_dev),
            ));
        }
        if !self.mean.is_finite() {
            return Err(Error::config("truncated_gaussian.mean", "mean must be finite"));
        }
        Ok(())
    }

    fn standardized(&self, v: f64) -> f64 {
        (v - self.mean) / self.std_dev
    }

    /// Inverse-CDF draw. Works on whichever tail keeps the interval mass
    /// representable, so intervals far from the mean still sample correctly.
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        let u = open_uniform(rng);
        self.quantile(u)
    }

    /// Quantile of the truncated law at `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        let a = self.standardized(self.lower);
        let b = self.standardized(self.upper);
        let z = if a >= 0.0 {
            let (qa, qb) = (normal_tail(a), normal_tail(b));
            -normal_quantile(qa - u * (qa - qb))
        } else {
            let (pa, pb) = (normal_cdf(a), normal_cdf(b));
            normal_quantile(pa + u * (pb - pa))
        };
        let z = if z.is_finite() { z } else { 0.5 * (a.max(-1e300) + b.min(1e300)) };
        (self.mean + self.std_dev * z).clamp(self.lower, self.upper)
    }

    fn mass(&self) -> f64 {
        let a = self.standardized(self.lower);
        let b = self.standardized(self.upper);
        if a >= 0.0 {
            normal_tail(a) - normal_tail(b)
        } else {
            normal_cdf(b) - normal_cdf(a)
        }
    }

    /// Mean of the truncated law.
    pub fn truncated_mean(&self) -> f64 {
        let a = self.standardized(self.lower);
        let b = self.standardized(self.upper);
        let z = self.mass();
        if z <= 0.0 {
            return (self.mean).clamp(self.lower, self.upper);
        }
        self.mean + self.std_dev * (normal_pdf(a) - normal_pdf(b)) / z
    }

    /// Variance of the truncated law.
    pub fn truncated_variance(&self) -> f64 {
        let a = self.standardized(self.lower);
        let b = self.standardized(self.upper);
        let z = self.mass();
        if z <= 0.0 {
            return 0.0;
        }
        let (pa, pb) = (normal_pdf(a), normal_pdf(b));
        let r = (pa - pb) / z;
        let term = (a * pa - b * pb) / z;
        self.std_dev * self.std_dev * (1.0 + term - r * r)
    }

    /// `P[X > threshold]` for X drawn from this law.
    pub fn tail_probability(&self, threshold: f64) -> f64 {
        truncated_tail_probability(self, threshold)
    }
}

/// `P[X > threshold]` for `X ~ dist`, as a ratio of normal CDF differences.
pub fn truncated_tail_probability(dist: &TruncatedGaussian, threshold: f64) -> f64 {
    if threshold <= dist.lower {
        return 1.0;
    }
    if threshold >= dist.upper {
        return 0.0;
    }
    let a = dist.standardized(dist.lower);
    let b = dist.standardized(dist.upper);
    let t = dist.standardized(threshold);
    let p = if a >= 0.0 {
        (normal_tail(t) - normal_tail(b)) / (normal_tail(a) - normal_tail(b))
    } else {
        (normal_cdf(b) - normal_cdf(t)) / (normal_cdf(b) - normal_cdf(a))
    };
    if p.is_finite() {
        p.clamp(0.0, 1.0)
    } else {
        // Interval mass underflowed: the law is a point mass at the nearest bound.
        if dist.mean.clamp(dist.lower, dist.upper) > threshold {
            1.0
        } else {
            0.0
        }
    }
}

/// Samples `θ` from a Gaussian restricted to the treatment-effect range.
pub fn sample_truncated_gaussian(dist: &TruncatedGaussian, rng: &mut SimRng) -> Result<f64> {
    dist.validate()?;
    Ok(dist.sample(rng))
}

/// Hierarchical Gaussian baseline reward of one agent type.
///
/// A run first realizes `μ_g ~ N(hyper_mean, hyper_std²)`; each agent of the
/// type then receives `g ~ N(μ_g, noise_std²)`. `noise_std` is the
/// sub-Gaussian scale fed to the approximation bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBaseline {
    pub hyper_mean: f64,
    pub hyper_std: f64,
    pub noise_std: f64,
}

impl GaussianBaseline {
    pub fn new(hyper_mean: f64, hyper_std: f64, noise_std: f64) -> Result<Self> {
        let b = GaussianBaseline {
            hyper_mean,
            hyper_std,
            noise_std,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hyper_std >= 0.0) || !(self.noise_std >= 0.0) || !self.hyper_mean.is_finite() {
            return Err(Error::config(
                "baseline",
                format!(
                    "hyper_std {} and noise_std {} must be non-negative, hyper_mean finite",
                    self.hyper_std, self.noise_std
                ),
            ));
        }
        Ok(())
    }

    /// Realized per-run mean `μ_g`.
    pub fn realize_mean(&self, rng: &mut SimRng) -> f64 {
        if self.hyper_std == 0.0 {
            return self.hyper_mean;
        }
        self.hyper_mean + self.hyper_std * standard_normal(rng)
    }

    /// One agent's baseline reward given the realized mean.
    pub fn sample(&self, realized_mean: f64, rng: &mut SimRng) -> f64 {
        if self.noise_std == 0.0 {
            return realized_mean;
        }
        realized_mean + self.noise_std * standard_normal(rng)
    }
}

/// Mean and standard error of a sample.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
