//! Fixtures shared by the benchmarks.

use ivlab_core::harness::presets::racing_policy;
use ivlab_core::mechanism::alternating_samples;
use ivlab_core::{ExperimentSpec, Policy, Preset, Record, RngSeed, SampleSet, World};

/// Alternating binary samples from the racing preset.
pub fn binary_samples(n: usize, seed: u64) -> SampleSet {
    let (policy, world) = racing_setup(seed);
    let certified = vec![true; policy.pop.len()];
    alternating_samples(&policy, &world, &certified, n, RngSeed(seed))
}

/// Deterministic k-arm samples with partial compliance.
pub fn k_arm_samples(n: usize, k: usize) -> SampleSet {
    let theta: Vec<f64> = (0..k).map(|i| 0.1 * i as f64).collect();
    let records = (0..n)
        .map(|i| {
            let z = i % k;
            let x = if i % 3 == 0 { (i * 7 + 1) % k } else { z };
            let g = ((i * 37) % 101) as f64 / 101.0 - 0.5;
            Record::new(z, x, theta[x] + g)
        })
        .collect();
    SampleSet::with_arms(records, k)
}

/// Racing policy and a realized world with a positive effect.
pub fn racing_setup(seed: u64) -> (Policy, World) {
    let spec = ExperimentSpec::defaults(Preset::RacingFig);
    let policy = racing_policy(&spec).expect("preset is valid");
    let world = policy.realize(vec![0.5], RngSeed(seed));
    (policy, world)
}
