//! Shared fixtures and the invariant checks run by both `properties` and
//! `acceptance`.

#![allow(dead_code)]

use std::sync::OnceLock;

use ivlab_core::agents::{agent_action, reward, AgentType, Decision, PopulationSpec};
use ivlab_core::compliance::{
    estimate_xi_probability, exploration_probability_bound, full_compliance_phase, minimum_sampling_length,
    racing_threshold, Preference, PriorSpec, XiConfig,
};
use ivlab_core::estimator::{
    approximation_bound_k, binary_bound_from_parts, estimate_binary, estimate_k, iv_estimate_k, ols_estimate,
    wald_denominator, wald_estimate, Record, SampleSet,
};
use ivlab_core::harness::presets::{assemble_policy, calibration_seed, racing_policy};
use ivlab_core::harness::{parse_samples_csv, run_experiment, samples_to_csv, svg, ExperimentSpec, Preset};
use ivlab_core::harness::{ResultTable, TableMetadata};
use ivlab_core::mechanism::racing::run_racing_with_warm_start;
use ivlab_core::mechanism::regret::round_regret;
use ivlab_core::mechanism::{
    pseudo_regret, run_combined_policy, run_combined_policy_k, run_sampling_stage, Policy, RoundRecord, Stage,
    TrajectoryLog,
};
use ivlab_core::stats::{truncated_tail_probability, GaussianBaseline, RngSeed, SimRng, StreamKind, TruncatedGaussian};
use ivlab_core::Error;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::Rng;

pub type Check = fn() -> Result<(), String>;

/// Runs `test` on `cases` deterministic draws from `strategy`.
pub fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(RngAlgorithm::ChaCha);
    let mut runner = TestRunner::new_with_rng(config, rng);
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

pub fn rng(seed: u64, index: u64) -> SimRng {
    RngSeed(seed).stream(StreamKind::Dataset, index)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

pub fn binary_set(rows: &[(usize, usize, f64)]) -> SampleSet {
    SampleSet::binary(rows.iter().map(|&(z, x, y)| Record::new(z, x, y)).collect())
}

fn binary_rows() -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
    prop::collection::vec((0usize..2, 0usize..2, -5.0f64..5.0), 4..60)
}

/// Binary logs with a nonzero Wald denominator and both actions present.
fn informative_rows() -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
    binary_rows().prop_filter("informative", |rows| {
        let s = binary_set(rows);
        wald_denominator(&s).abs() > 1e-9 && rows.iter().any(|r| r.1 == 0) && rows.iter().any(|r| r.1 == 1)
    })
}

fn k_arm_rows() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
    (2usize..6).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k, -5.0f64..5.0), 2 * k..40)))
}

pub fn population(means: [f64; 2], hyper: [f64; 2], hyper_std: f64, noise: f64) -> PopulationSpec {
    let ty = |m: f64, h: f64| AgentType {
        prior: PriorSpec::binary(
            TruncatedGaussian::unit_interval(m, 1.0).unwrap(),
            GaussianBaseline::new(h, hyper_std, noise).unwrap(),
        ),
        fraction: 0.5,
    };
    PopulationSpec::new(vec![ty(means[0], hyper[0]), ty(means[1], hyper[1])]).unwrap()
}

/// The assembled low-noise binary policy of the regret preset.
pub fn regret_policy() -> &'static Policy {
    static P: OnceLock<Policy> = OnceLock::new();
    P.get_or_init(|| {
        let spec = ExperimentSpec::defaults(Preset::RegretScaling);
        let mut p = assemble_policy(&spec, calibration_seed(2024)).unwrap();
        p.cfg.horizon = 4_000;
        p
    })
}

pub fn karm_policy() -> &'static Policy {
    static P: OnceLock<Policy> = OnceLock::new();
    P.get_or_init(|| {
        let spec = ExperimentSpec::defaults(Preset::KarmDemo);
        let mut p = assemble_policy(&spec, calibration_seed(2024)).unwrap();
        p.cfg.horizon = 4_000;
        p
    })
}

pub fn racing_fig_policy() -> &'static (ExperimentSpec, Policy) {
    static P: OnceLock<(ExperimentSpec, Policy)> = OnceLock::new();
    P.get_or_init(|| {
        let spec = ExperimentSpec::defaults(Preset::RacingFig);
        let p = racing_policy(&spec).unwrap();
        (spec, p)
    })
}

fn racing_log(seed: u64, theta: f64) -> TrajectoryLog {
    let (spec, p) = racing_fig_policy();
    let world = p.realize(vec![theta], RngSeed(seed));
    run_racing_with_warm_start(p, spec.experiment.warm_start, &world, RngSeed(seed))
        .unwrap()
        .0
}

fn karm_log(seed: u64, scale: f64) -> TrajectoryLog {
    let p = karm_policy();
    let world = p.realize(vec![0.0, scale, 2.0 * scale], RngSeed(seed));
    run_combined_policy_k(p, &world, RngSeed(seed)).unwrap().0
}

fn binary_log(seed: u64, theta: f64) -> TrajectoryLog {
    let p = regret_policy();
    let world = p.realize(vec![theta], RngSeed(seed));
    run_combined_policy(p, &world, RngSeed(seed)).unwrap().0
}

// ---- stats ----

pub fn truncated_samples_in_bounds() -> Result<(), String> {
    let s = (-2.0f64..2.0, 0.05f64..3.0, -1.5f64..0.5, 0.1f64..2.0, any::<u64>());
    run(64, s, |(mean, sd, lo, width, seed)| {
        let d = TruncatedGaussian::new(mean, sd, lo, lo + width).unwrap();
        let mut r = rng(seed, 0);
        for _ in 0..200 {
            let v = d.sample(&mut r);
            prop_assert!(v >= lo && v <= lo + width, "{v} outside [{lo}, {}]", lo + width);
        }
        Ok(())
    })
}

pub fn tail_probability_monotone() -> Result<(), String> {
    let s = (-1.0f64..1.0, 0.05f64..3.0, -1.2f64..1.2, 0.0f64..1.0);
    run(128, s, |(mean, sd, t, step)| {
        let d = TruncatedGaussian::unit_interval(mean, sd).unwrap();
        let a = truncated_tail_probability(&d, t);
        let b = truncated_tail_probability(&d, t + step);
        prop_assert!(b <= a + 1e-15, "P[>{t}]={a} < P[>{}]={b}", t + step);
        prop_assert!((0.0..=1.0).contains(&a));
        Ok(())
    })
}

pub fn independent_streams() -> Result<(), String> {
    run(64, (any::<u64>(), 0u64..1000), |(seed, idx)| {
        let root = RngSeed(seed);
        let alone: Vec<u64> = {
            let mut b = root.stream(StreamKind::Arrivals, idx);
            (0..8).map(|_| b.random()).collect()
        };
        let mut a = root.stream(StreamKind::Arrivals, idx + 1);
        let mut b = root.stream(StreamKind::Arrivals, idx);
        let mut interleaved = Vec::new();
        for _ in 0..8 {
            let _: u64 = a.random();
            interleaved.push(b.random::<u64>());
        }
        prop_assert_eq!(&alone, &interleaved);
        let mut c = root.stream(StreamKind::Explore, idx);
        prop_assert_ne!(alone[0], c.random::<u64>());
        prop_assert_ne!(root.child(idx), root.child(idx + 1));
        Ok(())
    })
}

pub fn baseline_draws_follow_hyper_prior() -> Result<(), String> {
    run(8, (-1.0f64..1.0, 0.1f64..2.0, any::<u64>()), |(h, hs, seed)| {
        let b = GaussianBaseline::new(h, hs, 0.5).unwrap();
        let mut r = rng(seed, 1);
        let n = 4000;
        let draws: Vec<f64> = (0..n).map(|_| b.realize_mean(&mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        prop_assert!((mean - h).abs() < 5.0 * hs / (n as f64).sqrt(), "mean {mean} vs {h}");
        let mu = draws[0];
        let g: Vec<f64> = (0..n).map(|_| b.sample(mu, &mut r)).collect();
        let gm = g.iter().sum::<f64>() / n as f64;
        prop_assert!((gm - mu).abs() < 5.0 * 0.5 / (n as f64).sqrt());
        Ok(())
    })
}

// ---- estimator ----

pub fn translation_invariance() -> Result<(), String> {
    run(256, (informative_rows(), -100.0f64..100.0), |(rows, c)| {
        let s = binary_set(&rows);
        let shifted: Vec<_> = rows.iter().map(|&(z, x, y)| (z, x, y + c)).collect();
        let t = binary_set(&shifted);
        let (w0, w1) = (wald_estimate(&s).unwrap(), wald_estimate(&t).unwrap());
        let (o0, o1) = (ols_estimate(&s).unwrap(), ols_estimate(&t).unwrap());
        let tol = 1e-9 * (1.0 + c.abs()) / wald_denominator(&s).abs().min(1.0);
        prop_assert!((w0 - w1).abs() <= tol * (1.0 + w0.abs()), "{w0} vs {w1}");
        prop_assert!((o0 - o1).abs() <= 1e-9 * (1.0 + c.abs()) * (1.0 + o0.abs()) * rows.len() as f64);
        Ok(())
    })
}

pub fn scale_equivariance() -> Result<(), String> {
    let sc = prop_oneof![-10.0f64..-0.1, 0.1f64..10.0];
    run(256, (informative_rows(), sc), |(rows, k)| {
        let s = binary_set(&rows);
        let scaled: Vec<_> = rows.iter().map(|&(z, x, y)| (z, x, y * k)).collect();
        let t = binary_set(&scaled);
        let w = wald_estimate(&s).unwrap();
        prop_assert!(close(wald_estimate(&t).unwrap(), w * k, 1e-9));
        prop_assert!(close(ols_estimate(&t).unwrap(), ols_estimate(&s).unwrap() * k, 1e-9));
        Ok(())
    })
}

pub fn label_flip_invariance() -> Result<(), String> {
    run(256, informative_rows(), |rows| {
        let s = binary_set(&rows);
        let flipped: Vec<_> = rows.iter().map(|&(z, x, y)| (1 - z, x, y)).collect();
        let t = binary_set(&flipped);
        prop_assert!(close(wald_estimate(&t).unwrap(), wald_estimate(&s).unwrap(), 1e-9));
        Ok(())
    })
}

pub fn exact_recovery() -> Result<(), String> {
    run(256, (informative_rows(), -1.0f64..1.0), |(rows, theta)| {
        let clean: Vec<_> = rows.iter().map(|&(z, x, _)| (z, x, theta * x as f64)).collect();
        let w = wald_estimate(&binary_set(&clean)).unwrap();
        prop_assert!((w - theta).abs() <= 1e-12, "{w} vs {theta}");
        Ok(())
    })?;
    let s = k_arm_rows().prop_flat_map(|(k, rows)| (Just(k), Just(rows), prop::collection::vec(-1.0f64..1.0, k)));
    run(256, s, |(k, rows, theta)| {
        let set = SampleSet::with_arms(
            rows.iter()
                .map(|&(z, x, _)| Record::new(z, x, theta[x]))
                .collect(),
            k,
        );
        prop_assume!(approximation_bound_k(&set, 0.1, 1.0).is_finite());
        let est = iv_estimate_k(&set).unwrap();
        for (a, b) in est.iter().zip(&theta) {
            prop_assert!((a - b).abs() <= 1e-12, "{est:?} vs {theta:?}");
        }
        Ok(())
    })
}

pub fn oracle_equivalence_k2() -> Result<(), String> {
    let rows = prop::collection::vec((0usize..2, -3.0f64..3.0), 4..80)
        .prop_filter("both arms", |r| r.iter().any(|x| x.0 == 0) && r.iter().any(|x| x.0 == 1));
    run(256, rows, |rows| {
        let set = SampleSet::with_arms(rows.iter().map(|&(z, y)| Record::new(z, z, y)).collect(), 2);
        let est = iv_estimate_k(&set).unwrap();
        for arm in 0..2 {
            let ys: Vec<f64> = rows.iter().filter(|r| r.0 == arm).map(|r| r.1).collect();
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            prop_assert!((est[arm] - m).abs() <= 1e-9);
        }
        Ok(())
    })
}

pub fn bound_monotonicity() -> Result<(), String> {
    let s = (
        1usize..100_000,
        0.1f64..1000.0,
        1.0f64..3.0,
        0.01f64..0.4,
        0.5f64..0.99,
        0.05f64..5.0,
    );
    run(256, s, |(n, den, kf, delta, dshrink, sigma)| {
        let a = binary_bound_from_parts(n, den, delta, sigma);
        prop_assert!(binary_bound_from_parts(n, den, delta, sigma * kf * 1.01) > a);
        prop_assert!(binary_bound_from_parts(n, den, delta * dshrink, sigma) > a);
        prop_assert!(binary_bound_from_parts(n, den * kf * 1.01, delta, sigma) < a);
        prop_assert_eq!(binary_bound_from_parts(n, -den, delta, sigma), a);
        Ok(())
    })
}

pub fn infinite_bound_sentinel() -> Result<(), String> {
    run(256, binary_rows(), |rows| {
        let s = binary_set(&rows);
        let e = estimate_binary(&s, 0.1, 1.0).unwrap();
        prop_assert_eq!(e.bound.is_infinite(), wald_denominator(&s) == 0.0);
        Ok(())
    })?;
    run(256, k_arm_rows(), |(k, rows)| {
        // Remove every record touching the last arm: the matrix is singular.
        let kept: Vec<Record> = rows
            .iter()
            .filter(|r| r.0 != k - 1 && r.1 != k - 1)
            .map(|&(z, x, y)| Record::new(z, x, y))
            .collect();
        prop_assume!(!kept.is_empty());
        let e = estimate_k(&SampleSet::with_arms(kept, k), 0.1, 1.0).unwrap();
        prop_assert!(e.bound.is_infinite());
        prop_assert!(e.theta_hat.iter().all(|v| v.is_nan()));
        Ok(())
    })
}

pub fn labels_within_codomain() -> Result<(), String> {
    run(128, (k_arm_rows(), 0usize..3), |((k, mut rows), extra)| {
        let i = extra % rows.len();
        rows[i].1 = k + extra;
        let set = SampleSet::with_arms(rows.iter().map(|&(z, x, y)| Record::new(z, x, y)).collect(), k);
        prop_assert!(matches!(set.validate(), Err(Error::ArmOutOfRange { .. })), "accepted out-of-range arm");
        let empty = matches!(iv_estimate_k(&SampleSet::with_arms(vec![], k)), Err(Error::EmptySampleSet));
        prop_assert!(empty);
        Ok(())
    })
}

// ---- compliance ----

pub fn rho_ceiling_increasing_in_p_xi() -> Result<(), String> {
    run(256, (-1.0f64..-0.001, 0.0001f64..0.99, 0.001f64..0.01), |(mu, p, dp)| {
        let a = exploration_probability_bound(mu, p).unwrap();
        let b = exploration_probability_bound(mu, p + dp).unwrap();
        prop_assert!(b > a, "{a} !< {b}");
        prop_assert!((0.0..1.0).contains(&a) && b < 1.0);
        let rejected = matches!(exploration_probability_bound(-mu, p), Err(Error::NotNeverTaker { .. }));
        prop_assert!(rejected);
        Ok(())
    })
}

pub fn racing_threshold_monotone() -> Result<(), String> {
    run(128, (0.01f64..0.9, 0.2f64..2.0, 0.05f64..0.5, 0.1f64..0.8), |(m, sd, shift, tau)| {
        let prior = |mean: f64| {
            PriorSpec::binary(
                TruncatedGaussian::unit_interval(mean, sd).unwrap(),
                GaussianBaseline::new(0.0, 0.0, 1.0).unwrap(),
            )
        };
        // Never-takers: moving the mean further below zero thins P[θ ≥ τ].
        let nt = racing_threshold(&prior(-m), tau);
        let nt_away = racing_threshold(&prior(-m - shift), tau);
        prop_assert!(nt_away <= nt + 1e-15);
        // Always-takers: moving the mean further above zero thins P[θ < −τ].
        let at = racing_threshold(&prior(m), tau);
        let at_away = racing_threshold(&prior(m + shift), tau);
        prop_assert!(at_away <= at + 1e-15);
        Ok(())
    })
}

pub fn xi_estimate_error_and_determinism() -> Result<(), String> {
    let pop = population([-0.5, 0.9], [0.0, 0.1], 1.0, 1.0);
    let cfg = XiConfig {
        ell0: 50,
        ell1: 50,
        delta: 0.1,
        g_gap_bound: 0.0,
        sigma_g: 1.0,
    };
    run(16, (10usize..300, any::<u64>()), |(n, seed)| {
        let a = estimate_xi_probability(&pop, &cfg, 0, n, &mut RngSeed(seed).stream(StreamKind::MonteCarlo, 0)).unwrap();
        let b = estimate_xi_probability(&pop, &cfg, 0, n, &mut RngSeed(seed).stream(StreamKind::MonteCarlo, 0)).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.std_error <= 0.5 / (n as f64).sqrt() + 1e-15);
        prop_assert_eq!(a.iters, n);
        Ok(())
    })
}

pub fn phase_lengths_non_increasing() -> Result<(), String> {
    let s = (0.001f64..0.4, 0.01f64..0.9, 1.0f64..3.0, 0.05f64..0.95, 1usize..100, 0.01f64..0.2);
    run(256, s, |(tp, pc, k, rho, h, delta)| {
        let tp2 = (tp * k).min(1.0);
        let pc2 = (pc * k).min(1.0);
        prop_assert!(minimum_sampling_length(tp2, rho, pc, 1.0, delta) <= minimum_sampling_length(tp, rho, pc, 1.0, delta));
        prop_assert!(minimum_sampling_length(tp, rho, pc2, 1.0, delta) <= minimum_sampling_length(tp, rho, pc, 1.0, delta));
        prop_assert!(full_compliance_phase(tp2, pc, h, 1.0, delta) <= full_compliance_phase(tp, pc, h, 1.0, delta));
        prop_assert!(full_compliance_phase(tp, pc2, h, 1.0, delta) <= full_compliance_phase(tp, pc, h, 1.0, delta));
        Ok(())
    })
}

pub fn assembly_checks() -> Result<(), String> {
    let p = regret_policy();
    let ceiling = p.plan.min_rho_ceiling().ok_or("no ceiling")?;
    if !(p.cfg.rho <= ceiling) {
        return Err(format!("assembled rho {} above ceiling {ceiling}", p.cfg.rho));
    }
    let mut bad = p.cfg.clone();
    bad.ell0 = bad.ell0.max(1);
    bad.rho = 0.123_456_7;
    bad.sampling_length = ivlab_core::mechanism::SamplingLength::Fixed;
    if bad.validate().is_ok() {
        return Err("non-integral rho*ell accepted".into());
    }
    let p_xi = p.plan.xi.iter().flatten().map(|e| e.p).fold(f64::INFINITY, f64::min);
    if p.plan.check_delta(p_xi / 8.0).is_ok() {
        return Err("delta = P[xi]/8 accepted".into());
    }
    p.plan.check_delta(p_xi / 8.5).map_err(|e| e.to_string())
}

// ---- agents ----

pub fn population_validation() -> Result<(), String> {
    let s = (prop::collection::vec(0.05f64..1.0, 1..5), prop::collection::vec(-0.9f64..0.9, 5), 1e-9f64..1e-3);
    run(128, s, |(w, means, eps)| {
        let total: f64 = w.iter().sum();
        let types: Vec<AgentType> = w
            .iter()
            .zip(&means)
            .map(|(wi, &m)| AgentType {
                prior: PriorSpec::binary(
                    TruncatedGaussian::unit_interval(m, 0.5).unwrap(),
                    GaussianBaseline::new(0.0, 0.0, 1.0).unwrap(),
                ),
                fraction: wi / total,
            })
            .collect();
        let mut ok = types.clone();
        let last = ok.len() - 1;
        let rest: f64 = ok[..last].iter().map(|t| t.fraction).sum();
        ok[last].fraction = 1.0 - rest;
        let pop = PopulationSpec::new(ok.clone());
        prop_assert!(pop.is_ok(), "{pop:?}");
        let mut bad = ok.clone();
        bad[0].fraction += eps;
        prop_assert!(bad[0].fraction > 1.0 || PopulationSpec::new(bad).is_err());
        for t in &ok {
            let mean = t.prior.prior_mean_theta();
            let nt = t.prior.preference() == Preference::NeverTaker;
            prop_assert_eq!(nt, mean < 0.0);
            prop_assert_eq!(t.prior.preferred_arm(), usize::from(mean > 0.0));
        }
        Ok(())
    })
}

pub fn reward_is_exact() -> Result<(), String> {
    run(256, (-1.0f64..1.0, 0usize..2, -10.0f64..10.0, prop::collection::vec(-1.0f64..1.0, 2..6)), |(t, x, g, arms)| {
        prop_assert_eq!(reward(&[t], x, g), t * x as f64 + g);
        let i = x % arms.len();
        prop_assert_eq!(reward(&arms, i, g), arms[i] + g);
        prop_assert_eq!(agent_action(1, Some(0), Decision::Certificate(true)), 0);
        prop_assert_eq!(agent_action(1, Some(0), Decision::Certificate(false)), 1);
        prop_assert_eq!(agent_action(i, None, Decision::Certificate(true)), i);
        Ok(())
    })
}

/// Certified types follow every recommendation; uncertified types play
/// their preferred arm. Checked across the sampling and racing stages.
pub fn theory_agents_follow_certificates() -> Result<(), String> {
    run(12, (any::<u64>(), 0.0005f64..0.01), |(seed, theta)| {
        let p = regret_policy();
        let log = binary_log(seed, theta);
        let pref: Vec<usize> = p.pop.types.iter().map(|t| t.prior.preferred_arm()).collect();
        for r in &log.rounds[log.sampling_first_end..log.sampling_end] {
            let z = r.z.expect("recommended");
            if p.plan.sampling_certified[r.type_index] {
                prop_assert_eq!(r.x, z);
                prop_assert!(r.complied);
            } else {
                prop_assert_eq!(r.x, pref[r.type_index]);
            }
        }
        // Never-takers are the certified type when rho is within the ceiling.
        let nt = p.pop.indices_with(Preference::NeverTaker);
        prop_assert!(nt.iter().all(|&u| p.plan.sampling_certified[u]));
        for r in &log.rounds[..log.sampling_first_end] {
            prop_assert!(r.z.is_none());
            prop_assert_eq!(r.x, pref[r.type_index]);
        }
        Ok(())
    })
}

/// Bayesian agents of certified types follow recommendations wherever the
/// posterior is decisive beyond twice its Monte Carlo standard error.
/// Uncertified types carry no lemma and may comply or not.
pub fn bayes_agreement() -> Result<(), String> {
    let base = regret_policy().clone();
    let bayes = base
        .clone()
        .with_bayes_agents_sampling(1500, RngSeed(77))
        .map_err(|e| e.to_string())?;
    let beliefs = bayes.beliefs().expect("beliefs");
    let (mut counted, mut agree) = (0usize, 0usize);
    for seed in 0..20u64 {
        let world = bayes.realize(vec![0.002], RngSeed(seed));
        let (_, log) = run_sampling_stage(&bayes, &world, RngSeed(seed)).map_err(|e| e.to_string())?;
        for r in &log.rounds[log.sampling_first_end..] {
            let z = r.z.expect("recommended");
            let u = r.type_index;
            if !base.plan.sampling_certified[u] {
                continue;
            }
            let m = beliefs.posterior_mean(u, r.t, z)[0];
            let se = beliefs.posterior_std_error(u, r.t, z);
            if m.abs() > 2.0 * se {
                counted += 1;
                agree += usize::from(r.x == z);
            }
        }
    }
    let rate = agree as f64 / counted.max(1) as f64;
    if counted < 500 || rate < 0.95 {
        return Err(format!("agreement {agree}/{counted} = {rate:.3}"));
    }
    Ok(())
}

// ---- mechanism ----

pub fn explore_count_exactness() -> Result<(), String> {
    run(16, (any::<u64>(), prop::collection::vec(1usize..20, 1..5)), |(seed, blocks)| {
        let mut p = regret_policy().clone();
        // Segment lengths in multiples of 5 keep rho*len integral at rho = 0.2.
        let mut acc = 0;
        let checkpoints: Vec<usize> = blocks.iter().map(|b| { acc += 5 * b; acc }).collect();
        p.cfg.ell = acc;
        p.cfg.checkpoints = checkpoints.clone();
        p.cfg.sampling_length = ivlab_core::mechanism::SamplingLength::Fixed;
        let world = p.realize(vec![0.001], RngSeed(seed));
        let (_, log) = run_sampling_stage(&p, &world, RngSeed(seed)).unwrap();
        let stage2 = &log.rounds[log.sampling_first_end..log.sampling_end];
        prop_assert_eq!(stage2.len(), acc);
        let mut start = 0;
        for &c in &checkpoints {
            let n = stage2[start..c].iter().filter(|r| r.explore).count();
            prop_assert_eq!(n as f64, p.cfg.rho * (c - start) as f64);
            start = c;
        }
        let log = racing_log(seed, 0.5);
        check_phase_counts(&log, racing_fig_policy().1.cfg.h)?;
        let log = karm_log(seed, 0.001);
        check_phase_counts(&log, karm_policy().cfg.h)?;
        let k = karm_policy();
        for i in 1..k.cfg.arm_count {
            let explores = log
                .rounds
                .iter()
                .filter(|r| r.stage == (Stage::Sampling { arm: i }) && r.explore)
                .count();
            prop_assert_eq!(explores, k.cfg.ell);
        }
        Ok(())
    })
}

fn check_phase_counts(log: &TrajectoryLog, h: usize) -> Result<(), TestCaseError> {
    for ph in &log.phases {
        let rounds = &log.rounds[ph.start..ph.end];
        if rounds.len() < h * ph.active.len() {
            continue; // cut by the horizon
        }
        for &a in &ph.active {
            let n = rounds.iter().filter(|r| r.z == Some(a)).count();
            prop_assert_eq!(n, h, "phase {} arm {}", ph.q, a);
        }
    }
    Ok(())
}

fn check_best_bound(log: &TrajectoryLog) -> Result<(), TestCaseError> {
    for w in log.phases.windows(2) {
        prop_assert!(w[1].best_bound <= w[0].best_bound);
    }
    for ph in &log.phases {
        prop_assert!(ph.best_bound <= ph.phase_bound || ph.end - ph.start < 2);
    }
    Ok(())
}

fn check_stop(log: &TrajectoryLog) -> Result<(), TestCaseError> {
    if let Some(end) = log.racing_end {
        let w = log.winner.expect("stopped races declare a winner");
        for r in &log.rounds[end..] {
            prop_assert_eq!(r.z, Some(w));
            prop_assert_eq!(r.stage, Stage::Exploit);
        }
    } else {
        prop_assert!(log.winner.is_none());
    }
    Ok(())
}

pub fn best_bound_monotone() -> Result<(), String> {
    run(16, (any::<u64>(), 0.0002f64..0.01), |(seed, s)| {
        check_best_bound(&racing_log(seed, 0.5))?;
        check_best_bound(&karm_log(seed, s))?;
        check_best_bound(&binary_log(seed, s))
    })
}

pub fn stop_permanence() -> Result<(), String> {
    run(16, (any::<u64>(), 0.0002f64..0.01), |(seed, s)| {
        check_stop(&racing_log(seed, 0.5))?;
        check_stop(&karm_log(seed, s))?;
        check_stop(&binary_log(seed, s))
    })
}

pub fn elimination_is_permanent() -> Result<(), String> {
    run(16, (any::<u64>(), 0.0001f64..0.01), |(seed, s)| {
        let log = karm_log(seed, s);
        let mut prev: Option<&Vec<usize>> = None;
        for ph in &log.phases {
            if let Some(p) = prev {
                prop_assert!(ph.active.iter().all(|a| p.contains(a)), "{:?} -> {:?}", p, ph.active);
            }
            prev = Some(&ph.active);
        }
        if let (Some(w), Some(last)) = (log.winner, prev) {
            prop_assert!(last.contains(&w));
        }
        Ok(())
    })
}

pub fn pseudo_regret_oracle() -> Result<(), String> {
    let s = (prop::collection::vec(-1.0f64..1.0, 1..5), prop::collection::vec((0usize..4, 0usize..3), 1..80), 0usize..80);
    run(256, s, |(theta, acts, split)| {
        let arms = if theta.len() == 1 { 2 } else { theta.len() };
        let rounds: Vec<RoundRecord> = acts
            .iter()
            .enumerate()
            .map(|(t, &(x, u))| RoundRecord {
                t,
                stage: Stage::Exploit,
                type_index: u,
                z: Some(x % arms),
                x: x % arms,
                y: 0.0,
                explore: false,
                complied: true,
            })
            .collect();
        let log = TrajectoryLog {
            arm_count: theta.len(),
            sampling_end: split.min(rounds.len()),
            rounds,
            ..TrajectoryLog::default()
        };
        let rep = pseudo_regret(&log, &theta);
        let t_len = log.rounds.len() as f64;
        let expected = if theta.len() == 1 {
            t_len * theta[0].max(0.0) - log.rounds.iter().map(|r| theta[0] * r.x as f64).sum::<f64>()
        } else {
            let best = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t_len * best - log.rounds.iter().map(|r| theta[r.x]).sum::<f64>()
        };
        prop_assert!((rep.pseudo_regret - expected).abs() < 1e-9);
        let post: f64 = log.rounds[log.sampling_end..].iter().map(|r| round_regret(&theta, r.x)).sum();
        prop_assert!((rep.post_sampling_regret - post).abs() < 1e-9);
        prop_assert!((rep.per_type.values().sum::<f64>() - expected).abs() < 1e-9);
        prop_assert_eq!(rep.cumulative.len(), log.rounds.len());
        prop_assert!(rep.cumulative.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        Ok(())
    })
}

pub fn seed_determinism() -> Result<(), String> {
    run(8, (any::<u64>(), 0.0005f64..0.01), |(seed, s)| {
        let a = binary_log(seed, s);
        let b = binary_log(seed, s);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        prop_assert_eq!(karm_log(seed, s), karm_log(seed, s));
        let c = binary_log(seed.wrapping_add(1), s);
        prop_assert_ne!(&a.rounds, &c.rounds);
        Ok(())
    })?;
    let mut spec = ExperimentSpec::defaults(Preset::Coverage);
    spec.experiment.seeds = 4;
    let a = run_experiment(&spec, 11).map_err(|e| e.to_string())?;
    let b = run_experiment(&spec, 11).map_err(|e| e.to_string())?;
    let (ca, cb) = (a.table.to_csv().unwrap(), b.table.to_csv().unwrap());
    if ca != cb || a.table.metadata != b.table.metadata {
        return Err("identical config and seed gave different CSV".into());
    }
    if a.table.metadata.config_hash.len() != 64 || a.table.metadata.config_hash != spec.hash(11) {
        return Err("config hash missing from output".into());
    }
    if run_experiment(&spec, 12).unwrap().table.to_csv().unwrap() == ca {
        return Err("different seeds gave identical CSV".into());
    }
    Ok(())
}

// ---- harness ----

fn table_strategy(finite: bool) -> impl Strategy<Value = ResultTable> {
    let value = if finite {
        prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e6f64..1e6].boxed()
    } else {
        prop_oneof![any::<f64>(), -1e3f64..1e3, 1e-6f64..1e6].boxed()
    };
    (1usize..6, 1usize..12)
        .prop_flat_map(move |(c, r)| {
            (
                prop::collection::vec("[a-z_<&>\", ]{1,8}", c + 1),
                prop::collection::vec(prop::collection::vec(value.clone(), c + 1), r),
                any::<bool>(),
                any::<bool>(),
                "[a-z0-9_<>&]{0,10}",
            )
        })
        .prop_map(|(columns, rows, log_x, log_y, preset)| {
            let mut t = ResultTable::new(
                columns,
                TableMetadata {
                    preset,
                    seeds: vec![1, 2, 3],
                    config_hash: "00ff".into(),
                    log_x,
                    log_y,
                },
            );
            for r in rows {
                t.push(r);
            }
            t
        })
}

pub fn csv_round_trip() -> Result<(), String> {
    run(256, table_strategy(true), |t| {
        let csv = t.to_csv().unwrap();
        let back = ResultTable::from_csv(&csv, t.metadata.clone()).unwrap();
        prop_assert_eq!(back, t);
        prop_assert!(!csv.contains('\r'));
        Ok(())
    })?;
    run(128, binary_rows(), |rows| {
        let s = binary_set(&rows);
        prop_assert_eq!(parse_samples_csv(&samples_to_csv(&s)).unwrap(), s);
        Ok(())
    })
}

pub fn svg_well_formed() -> Result<(), String> {
    run(128, table_strategy(false), |t| {
        let svg = svg::render(&t);
        let doc = roxmltree::Document::parse(&svg).map_err(|e| TestCaseError::fail(format!("{e}: {svg}")))?;
        prop_assert_eq!(doc.root_element().tag_name().name(), "svg");
        let series = t.columns[1..].iter().filter(|c| !c.ends_with("_se")).count();
        let lines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
        prop_assert_eq!(lines, series);
        let desc = doc.descendants().find(|n| n.has_tag_name("desc")).and_then(|n| n.text()).unwrap_or("");
        prop_assert!(desc.contains("config_hash=00ff"));
        Ok(())
    })
}

/// Every invariant check, by name.
pub const CHECKS: &[(&str, Check)] = &[
    ("truncated_samples_in_bounds", truncated_samples_in_bounds),
    ("tail_probability_monotone", tail_probability_monotone),
    ("independent_streams", independent_streams),
    ("baseline_draws_follow_hyper_prior", baseline_draws_follow_hyper_prior),
    ("translation_invariance", translation_invariance),
    ("scale_equivariance", scale_equivariance),
    ("label_flip_invariance", label_flip_invariance),
    ("exact_recovery", exact_recovery),
    ("oracle_equivalence_k2", oracle_equivalence_k2),
    ("bound_monotonicity", bound_monotonicity),
    ("infinite_bound_sentinel", infinite_bound_sentinel),
    ("labels_within_codomain", labels_within_codomain),
    ("rho_ceiling_increasing_in_p_xi", rho_ceiling_increasing_in_p_xi),
    ("racing_threshold_monotone", racing_threshold_monotone),
    ("xi_estimate_error_and_determinism", xi_estimate_error_and_determinism),
    ("phase_lengths_non_increasing", phase_lengths_non_increasing),
    ("assembly_checks", assembly_checks),
    ("population_validation", population_validation),
    ("reward_is_exact", reward_is_exact),
    ("theory_agents_follow_certificates", theory_agents_follow_certificates),
    ("bayes_agreement", bayes_agreement),
    ("explore_count_exactness", explore_count_exactness),
    ("best_bound_monotone", best_bound_monotone),
    ("stop_permanence", stop_permanence),
    ("elimination_is_permanent", elimination_is_permanent),
    ("pseudo_regret_oracle", pseudo_regret_oracle),
    ("seed_determinism", seed_determinism),
    ("csv_round_trip", csv_round_trip),
    ("svg_well_formed", svg_well_formed),
];
