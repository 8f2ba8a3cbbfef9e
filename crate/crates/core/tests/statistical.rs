//! Seeded statistical checks that need hundreds of runs.

use ivlab_core::compliance::full_compliance_accuracy_bound;
use ivlab_core::estimator::wald_estimate;
use ivlab_core::harness::presets::Details;
use ivlab_core::harness::{run_experiment, ExperimentSpec, Preset};
use ivlab_core::mechanism::{alternating_samples, CompliancePlan, Policy};
use ivlab_core::stats::RngSeed;

fn binomial_floor(p: f64, n: usize) -> f64 {
    p - 3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn racing_declares_the_sign_of_large_effects() {
    for theta in [0.5, -0.5] {
        let mut spec = ExperimentSpec::defaults(Preset::RacingFig);
        spec.experiment.seeds = 200;
        spec.experiment.theta = vec![theta];
        let out = run_experiment(&spec, 99).unwrap();
        let Details::Racing(runs) = out.details else { unreachable!() };
        let want = usize::from(theta > 0.0);
        let right = runs.iter().filter(|r| r.winner == Some(want)).count();
        let floor = binomial_floor(1.0 - spec.policy.delta, runs.len());
        assert!(right as f64 / runs.len() as f64 >= floor, "theta {theta}: {right}/200");
    }
}

#[test]
fn fully_compliant_rounds_meet_the_accuracy_bound() {
    let spec = ExperimentSpec::defaults(Preset::RacingFig);
    let pop = spec.population.clone();
    let policy = Policy::new(spec.policy.clone(), pop.clone(), CompliancePlan::empty(pop.len())).unwrap();
    let all = vec![true; pop.len()];
    let (n, delta, sigma) = (600, 0.05, spec.policy.sigma_g);
    let bound = full_compliance_accuracy_bound(n, sigma, delta);
    let seeds = 200;
    let hits = (0..seeds)
        .filter(|&i| {
            let seed = RngSeed(5).child(i);
            let world = policy.realize(vec![0.3], seed);
            let s = alternating_samples(&policy, &world, &all, n, seed);
            (wald_estimate(&s).unwrap() - 0.3).abs() <= bound
        })
        .count();
    assert!(hits as f64 / seeds as f64 >= binomial_floor(1.0 - delta, seeds as usize), "{hits}/{seeds}");
}

#[test]
fn k_arm_regret_grows_like_root_t() {
    let spec = ExperimentSpec::defaults(Preset::KarmDemo);
    let out = run_experiment(&spec, 2024).unwrap();
    let r = out.table.column("worst_mean").unwrap();
    let t: Vec<f64> = spec.experiment.horizons.iter().map(|&h| h as f64).collect();
    let k = spec.policy.arm_count as f64;
    for i in 1..r.len() {
        let ratio = r[i] / r[i - 1];
        let shape = ((k * t[i]) * (k * t[i]).ln() / ((k * t[i - 1]) * (k * t[i - 1]).ln())).sqrt();
        assert!((1.5..=3.0).contains(&ratio), "ratio {ratio} at T = {}", t[i]);
        assert!((ratio / shape - 1.0).abs() < 0.35, "ratio {ratio} vs shape {shape}");
    }
}
