//! Treatment effect estimation from interaction logs.
//!
//! Binary logs use the Wald (2SLS) ratio of centered covariances, with naive
//! OLS as a comparator. Logs over `k` arms use the just-identified IV solve
//! `θ̂ = (Σ zᵢxᵢᵀ)⁻¹ Σ zᵢyᵢ` on one-hot encodings. Each estimator has a
//! matching finite-sample approximation bound `A(S, δ)`.
//!
//! Arms are zero-based: a binary log uses `{0, 1}` (control, treatment) and
//! a `k`-arm log uses `0..k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// One interaction: recommendation, action, reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub z: usize,
    pub x: usize,
    pub y: f64,
}

impl Record {
    pub fn new(z: usize, x: usize, y: f64) -> Self {
        Record { z, x, y }
    }
}

/// Ordered log of interactions over a declared arm codomain.
///
/// `arm_count == 1` denotes the binary treatment/control setting with arms
/// `{0, 1}`; `arm_count == k >= 2` denotes arms `0..k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub records: Vec<Record>,
    pub arm_count: usize,
}

impl SampleSet {
    pub fn binary(records: Vec<Record>) -> Self {
        SampleSet {
            records,
            arm_count: 1,
        }
    }

    pub fn with_arms(records: Vec<Record>, arm_count: usize) -> Self {
        SampleSet { records, arm_count }
    }

    pub fn empty(arm_count: usize) -> Self {
        SampleSet {
            records: Vec::new(),
            arm_count,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.arm_count == 1
    }

    /// Number of distinct arm labels (2 for the binary case).
    pub fn codomain(&self) -> usize {
        if self.arm_count == 1 {
            2
        } else {
            self.arm_count
        }
    }

    pub fn push(&mut self, record: Record) {
        self.records.push(record);
    }

    pub fn extend(&mut self, other: &SampleSet) {
        self.records.extend_from_slice(&other.records);
    }

    /// Checks that the log is non-empty and every label is in range.
    pub fn validate(&self) -> Result<()> {
        if self.arm_count == 0 {
            return Err(Error::config("arm_count", "must be at least 1"));
        }
        if self.records.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let k = self.codomain();
        for (index, r) in self.records.iter().enumerate() {
            for arm in [r.z, r.x] {
                if arm >= k {
                    return Err(Error::ArmOutOfRange {
                        index,
                        arm,
                        arm_count: self.arm_count,
                    });
                }
            }
        }
        Ok(())
    }

    /// Mean recommendation `z̄` of a binary log.
    pub fn z_bar(&self) -> f64 {
        let n = self.records.len() as f64;
        self.records.iter().map(|r| r.z as f64).sum::<f64>() / n
    }
}

/// Point estimate paired with its approximation bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithBound {
    /// One entry for a binary log, `k` entries otherwise.
    pub theta_hat: Vec<f64>,
    /// `A(S, δ)`; `f64::INFINITY` when the data carry no information.
    pub bound: f64,
    pub delta: f64,
    /// Binary: `Σ(x−x̄)(z−z̄)`. k-arm: `σ_min(Σ z xᵀ)`.
    pub denominator: f64,
}

impl EstimateWithBound {
    /// The scalar effect of a binary estimate.
    pub fn scalar(&self) -> f64 {
        self.theta_hat[0]
    }

    pub fn is_informative(&self) -> bool {
        self.bound.is_finite()
    }
}

fn centered_sums(s: &SampleSet) -> (f64, f64, f64, f64) {
    let n = s.len() as f64;
    let (mut sz, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for r in &s.records {
        sz += r.z as f64;
        sx += r.x as f64;
        sy += r.y;
    }
    let (zb, xb, yb) = (sz / n, sx / n, sy / n);
    let (mut yz, mut xz, mut yx, mut xx) = (0.0, 0.0, 0.0, 0.0);
    for r in &s.records {
        let dz = r.z as f64 - zb;
        let dx = r.x as f64 - xb;
        let dy = r.y - yb;
        yz += dy * dz;
        xz += dx * dz;
        yx += dy * dx;
        xx += dx * dx;
    }
    (yz, xz, yx, xx)
}

fn require_binary(s: &SampleSet) -> Result<()> {
    if !s.is_binary() {
        return Err(Error::config(
            "arm_count",
            format!("binary estimator given a {}-arm log", s.arm_count),
        ));
    }
    s.validate()
}

/// `Σ(xᵢ−x̄)(zᵢ−z̄)` over a binary log (0 for an empty log).
pub fn wald_denominator(s: &SampleSet) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    centered_sums(s).1
}

/// Wald / 2SLS estimate `Σ(y−ȳ)(z−z̄) / Σ(x−x̄)(z−z̄)`.
pub fn wald_estimate(s: &SampleSet) -> Result<f64> {
    require_binary(s)?;
    let (yz, xz, _, _) = centered_sums(s);
    if xz == 0.0 {
        return Err(Error::WeakInstrument { n: s.len() });
    }
    Ok(yz / xz)
}

/// Naive regression of reward on action: the treated-minus-untreated mean gap.
pub fn ols_estimate(s: &SampleSet) -> Result<f64> {
    require_binary(s)?;
    let (_, _, yx, xx) = centered_sums(s);
    if xx == 0.0 {
        return Err(Error::Degenerate { n: s.len() });
    }
    Ok(yx / xx)
}

/// Binary bound from the sample size and the Wald denominator.
pub fn binary_bound_from_parts(n: usize, denominator: f64, delta: f64, sigma_g: f64) -> f64 {
    if denominator == 0.0 {
        return f64::INFINITY;
    }
    2.0 * sigma_g * (2.0 * n as f64 * (2.0 / delta).ln()).sqrt() / denominator.abs()
}

/// `A(S, δ) = 2σ_g √(2n log(2/δ)) / |Σ(x−x̄)(z−z̄)|`.
pub fn approximation_bound_binary(s: &SampleSet, delta: f64, sigma_g: f64) -> f64 {
    binary_bound_from_parts(s.len(), wald_denominator(s), delta, sigma_g)
}

/// Wald estimate with its bound. A zero denominator gives a NaN estimate and
/// an infinite bound instead of an error.
pub fn estimate_binary(s: &SampleSet, delta: f64, sigma_g: f64) -> Result<EstimateWithBound> {
    require_binary(s)?;
    let (yz, xz, _, _) = centered_sums(s);
    let theta = if xz == 0.0 { f64::NAN } else { yz / xz };
    Ok(EstimateWithBound {
        theta_hat: vec![theta],
        bound: binary_bound_from_parts(s.len(), xz, delta, sigma_g),
        delta,
        denominator: xz,
    })
}

/// `Σ zᵢxᵢᵀ` on one-hot encodings: entry `(a, b)` counts records with
/// recommendation `a` and action `b`.
pub fn interaction_matrix(s: &SampleSet) -> Matrix {
    let k = s.codomain();
    let mut m = Matrix::zeros(k);
    for r in &s.records {
        m.add(r.z, r.x, 1.0);
    }
    m
}

/// `Σ zᵢyᵢ`: total reward per recommended arm.
pub fn instrument_rewards(s: &SampleSet) -> Vec<f64> {
    let mut v = vec![0.0; s.codomain()];
    for r in &s.records {
        v[r.z] += r.y;
    }
    v
}

/// Arms whose row or column of the interaction matrix is empty.
fn uncovered_arms(m: &Matrix) -> Vec<usize> {
    let k = m.dim();
    (0..k)
        .filter(|&a| (0..k).all(|b| m.get(a, b) == 0.0) || (0..k).all(|b| m.get(b, a) == 0.0))
        .collect()
}

fn solve_k(m: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    linalg::solve(m, b).map_err(|e| {
        let mut arms = uncovered_arms(m);
        if arms.is_empty() {
            arms.push(e.column);
        }
        Error::RankDeficient { arms }
    })
}

fn require_k(s: &SampleSet) -> Result<()> {
    if s.arm_count < 2 {
        return Err(Error::config(
            "arm_count",
            "the k-arm estimator needs at least 2 arms",
        ));
    }
    s.validate()
}

/// Per-arm effects `(Σ zᵢxᵢᵀ)⁻¹ Σ zᵢyᵢ`.
pub fn iv_estimate_k(s: &SampleSet) -> Result<Vec<f64>> {
    require_k(s)?;
    solve_k(&interaction_matrix(s), &instrument_rewards(s))
}

/// k-arm bound from the interaction matrix.
pub fn k_bound_from_matrix(n: usize, m: &Matrix, delta: f64, sigma_g: f64) -> (f64, f64) {
    if linalg::is_singular(m) {
        return (f64::INFINITY, 0.0);
    }
    let s_min = linalg::smallest_singular_value(m);
    if s_min == 0.0 {
        return (f64::INFINITY, 0.0);
    }
    let k = m.dim() as f64;
    let a = sigma_g * (2.0 * n as f64 * k * (k / delta).ln()).sqrt() / s_min;
    (a, s_min)
}

/// `A = σ_g √(2nk log(k/δ)) / σ_min(Σ zᵢxᵢᵀ)`.
///
/// A variant of this bound with twice the numerator also circulates; the
/// smaller constant is used here.
pub fn approximation_bound_k(s: &SampleSet, delta: f64, sigma_g: f64) -> f64 {
    k_bound_from_matrix(s.len(), &interaction_matrix(s), delta, sigma_g).0
}

/// k-arm estimate with its bound. A singular matrix gives NaN effects and an
/// infinite bound.
pub fn estimate_k(s: &SampleSet, delta: f64, sigma_g: f64) -> Result<EstimateWithBound> {
    require_k(s)?;
    let m = interaction_matrix(s);
    let b = instrument_rewards(s);
    estimate_k_from_parts(s.len(), &m, &b, delta, sigma_g)
}

fn estimate_k_from_parts(
    n: usize,
    m: &Matrix,
    b: &[f64],
    delta: f64,
    sigma_g: f64,
) -> Result<EstimateWithBound> {
    let (bound, s_min) = k_bound_from_matrix(n, m, delta, sigma_g);
    let theta_hat = if bound.is_finite() {
        solve_k(m, b)?
    } else {
        vec![f64::NAN; m.dim()]
    };
    Ok(EstimateWithBound {
        theta_hat,
        bound,
        delta,
        denominator: s_min,
    })
}

/// Bound on the error of any pairwise difference `θ̂ᵃ − θ̂ᵇ`.
pub fn pairwise_bound(a: f64) -> f64 {
    std::f64::consts::SQRT_2 * a
}

/// High-probability lower bound on `|Σ(x−x̄)(z−z̄)|` when a `p_c` fraction of
/// agents complies with the recommendation.
pub fn denominator_lower_bound(n: usize, z_bar: f64, p_c: f64, delta: f64) -> f64 {
    let n = n as f64;
    let exact = n * z_bar * (1.0 - z_bar);
    if p_c == 1.0 {
        return exact;
    }
    let penalty = (3.0 - z_bar) * (n * z_bar * (3.0 / delta).ln() / (2.0 * (1.0 - z_bar))).sqrt();
    (exact * p_c - penalty).max(0.0)
}

/// Running sums for the Wald estimate, so a growing log can be re-estimated
/// in constant time per step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WaldAccumulator {
    n: usize,
    sz: f64,
    sx: f64,
    sy: f64,
    szz: f64,
    sxz: f64,
    syz: f64,
}

impl WaldAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(s: &SampleSet) -> Self {
        let mut acc = Self::new();
        for r in &s.records {
            acc.push(r);
        }
        acc
    }

    pub fn push(&mut self, r: &Record) {
        let (z, x) = (r.z as f64, r.x as f64);
        self.n += 1;
        self.sz += z;
        self.sx += x;
        self.sy += r.y;
        self.szz += z * z;
        self.sxz += x * z;
        self.syz += r.y * z;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn denominator(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let d = self.sxz - self.sx * self.sz / self.n as f64;
        // Integer-valued sums: snap rounding residue so an uncorrelated log
        // reports an exact zero.
        if d.abs() < 1e-9 * (1.0 + self.sxz.abs()) {
            0.0
        } else {
            d
        }
    }

    pub fn numerator(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.syz - self.sy * self.sz / self.n as f64
    }

    pub fn estimate(&self, delta: f64, sigma_g: f64) -> EstimateWithBound {
        let den = self.denominator();
        let theta = if den == 0.0 {
            f64::NAN
        } else {
            self.numerator() / den
        };
        EstimateWithBound {
            theta_hat: vec![theta],
            bound: binary_bound_from_parts(self.n, den, delta, sigma_g),
            delta,
            denominator: den,
        }
    }
}

/// Running interaction matrix and instrument-reward vector for `k` arms.
#[derive(Debug, Clone, PartialEq)]
pub struct KArmAccumulator {
    n: usize,
    m: Matrix,
    b: Vec<f64>,
}

impl KArmAccumulator {
    pub fn new(arm_count: usize) -> Self {
        KArmAccumulator {
            n: 0,
            m: Matrix::zeros(arm_count),
            b: vec![0.0; arm_count],
        }
    }

    pub fn from_samples(s: &SampleSet) -> Self {
        let mut acc = Self::new(s.codomain());
        for r in &s.records {
            acc.push(r);
        }
        acc
    }

    pub fn push(&mut self, r: &Record) {
        self.n += 1;
        self.m.add(r.z, r.x, 1.0);
        self.b[r.z] += r.y;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn rewards(&self) -> &[f64] {
        &self.b
    }

    pub fn estimate(&self, delta: f64, sigma_g: f64) -> Result<EstimateWithBound> {
        estimate_k_from_parts(self.n, &self.m, &self.b, delta, sigma_g)
    }

    /// Estimate over the `active` arms only. Records recommending an
    /// inactive arm are dropped; actions on inactive arms are charged at
    /// `fixed[x]` and moved to the reward side. Inactive entries of the
    /// result are copied from `fixed`. The bound keeps the `log(k/δ)` of the
    /// full arm set.
    pub fn estimate_on(
        &self,
        active: &[usize],
        fixed: &[f64],
        delta: f64,
        sigma_g: f64,
    ) -> Result<EstimateWithBound> {
        let k = self.m.dim();
        if active.len() == k {
            return self.estimate(delta, sigma_g);
        }
        let mut is_active = vec![false; k];
        for &a in active {
            is_active[a] = true;
        }
        let d = active.len();
        let mut m = Matrix::zeros(d);
        let mut b = vec![0.0; d];
        let mut n = 0.0;
        for (i, &z) in active.iter().enumerate() {
            b[i] = self.b[z];
            for x in 0..k {
                let c = self.m.get(z, x);
                n += c;
                if is_active[x] {
                    let j = active.iter().position(|&a| a == x).expect("active arm");
                    m.set(i, j, c);
                } else {
                    b[i] -= c * fixed[x];
                }
            }
        }
        let n = n as usize;
        let (bound, s_min) = if linalg::is_singular(&m) {
            (f64::INFINITY, 0.0)
        } else {
            let s_min = linalg::smallest_singular_value(&m);
            let kf = k as f64;
            let a = sigma_g * (2.0 * n as f64 * d as f64 * (kf / delta).ln()).sqrt() / s_min;
            (if s_min > 0.0 { a } else { f64::INFINITY }, s_min)
        };
        let mut theta_hat = fixed.to_vec();
        let sub = if bound.is_finite() {
            solve_k(&m, &b)?
        } else {
            vec![f64::NAN; d]
        };
        for (i, &a) in active.iter().enumerate() {
            theta_hat[a] = sub[i];
        }
        Ok(EstimateWithBound {
            theta_hat,
            bound,
            delta,
            denominator: s_min,
        })
    }
}
