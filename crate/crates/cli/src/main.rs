//! `ivlab`: command-line front end for the simulation core.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ivlab_core::compliance::constants_report;
use ivlab_core::estimator::{estimate_binary, estimate_k, ols_estimate};
use ivlab_core::harness::presets::{assemble_policy, calibration_seed};
use ivlab_core::harness::{emit_result_table, parse_samples_csv, run_experiment, ConfigFile};
use ivlab_core::mechanism::{run_combined_policy, run_combined_policy_k};
use ivlab_core::stats::StreamKind;
use ivlab_core::{ExperimentSpec, PolicyMode, Preset, RngSeed};

#[derive(Parser, Debug)]
#[command(name = "ivlab", version, about = "Incentivized exploration with instrumental variables")]
struct Cli {
    /// Base seed for every random stream.
    #[arg(long, global = true, env = "IVLAB_SEED", default_value_t = 2024)]
    seed: u64,
    /// Directory for emitted artifacts [default: out].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON config overriding the preset defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the compliance constants of each population type.
    Constants {
        #[arg(long, default_value = "fig1")]
        preset: Preset,
        /// Monte Carlo iterations; defaults to the preset value.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Run one policy and write its trajectory log as JSON.
    Simulate {
        #[arg(long, default_value = "regret_scaling")]
        preset: Preset,
        /// Ground-truth effect, comma separated for k arms.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        theta: Option<Vec<f64>>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Run the estimators on a stored sample CSV.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma_g: f64,
    },
    /// Run a preset and emit its result table, metadata and plot.
    Experiment { preset: Preset },
}

type CliResult = Result<(), String>;

impl Cli {
    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Constants { preset, iters } => constants(cli, *preset, *iters),
        Command::Simulate { preset, theta, horizon } => simulate(cli, *preset, theta.clone(), *horizon),
        Command::Estimate { input, delta, sigma_g } => estimate(input, *delta, *sigma_g),
        Command::Experiment { preset } => experiment(cli, *preset),
    }
}

fn spec_for(cli: &Cli, preset: Preset) -> Result<ExperimentSpec, String> {
    match &cli.config {
        Some(path) => {
            let cfg = ConfigFile::load(path).map_err(|e| e.to_string())?;
            ExperimentSpec::with_config(preset, &cfg).map_err(|e| e.to_string())
        }
        None => Ok(ExperimentSpec::defaults(preset)),
    }
}

fn create_out_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

/// Shortest decimal that round-trips at ten places, so `1.4` prints as `1.4`.
fn num(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.10}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "none".into())
}

fn constants(cli: &Cli, preset: Preset, iters: Option<usize>) -> CliResult {
    let spec = spec_for(cli, preset)?;
    let iters = iters.unwrap_or(spec.experiment.mc_iters);
    let cal = calibration_seed(cli.seed);
    let report = constants_report(&spec.population, &spec.policy.xi_config(), spec.policy.tau, iters, |u| {
        cal.stream(StreamKind::MonteCarlo, u as u64)
    })
    .map_err(|e| e.to_string())?;
    let xi = &report.xi;
    println!(
        "xi: ell0 = {}, ell1 = {}, delta = {}, G = {}, sigma_g = {}, margin = {}",
        xi.ell0,
        xi.ell1,
        num(xi.delta),
        num(xi.g_gap_bound),
        num(xi.sigma_g),
        num(xi.margin())
    );
    println!("tau = {}, iters = {iters}, seed = {}", num(report.tau), cli.seed);
    for t in &report.types {
        println!(
            "type {}: {:?}, prior mean theta = {}, P[xi] = {} ± {}, rho ceiling = {}, tau_P = {}, racing threshold = {}",
            t.type_index,
            t.preference,
            num(t.prior_mean_theta),
            num(t.p_xi.p),
            num(t.p_xi.std_error),
            opt_num(t.rho_ceiling),
            num(t.tau_p),
            num(t.racing_threshold),
        );
    }
    if let Some(dir) = &cli.out_dir {
        create_out_dir(dir)?;
        let path = dir.join("constants.json");
        let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
        fs::write(&path, json).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn simulate(cli: &Cli, preset: Preset, theta: Option<Vec<f64>>, horizon: Option<usize>) -> CliResult {
    let spec = spec_for(cli, preset)?;
    let mut policy = assemble_policy(&spec, calibration_seed(cli.seed)).map_err(|e| e.to_string())?;
    if let Some(h) = horizon {
        policy.cfg.horizon = h;
    }
    let theta = theta.unwrap_or_else(|| spec.experiment.theta.clone());
    let seed = RngSeed(cli.seed);
    let world = policy.realize(theta.clone(), seed);
    let (log, report) = match policy.cfg.mode {
        PolicyMode::Binary => run_combined_policy(&policy, &world, seed),
        PolicyMode::KArm => run_combined_policy_k(&policy, &world, seed),
    }
    .map_err(|e| e.to_string())?;

    let dir = cli.out_dir();
    create_out_dir(&dir)?;
    let path = dir.join(format!("{preset}.trajectory.json"));
    let doc = serde_json::json!({
        "preset": preset.name(),
        "seed": cli.seed,
        "config_hash": spec.hash(cli.seed),
        "theta": theta,
        "log": log,
    });
    let text = serde_json::to_string(&doc).map_err(|e| e.to_string())?;
    fs::write(&path, text).map_err(|e| format!("{}: {e}", path.display()))?;

    println!("rounds = {}", log.rounds.len());
    println!("sampling stage ends at {}", log.sampling_end);
    println!("winner = {}", log.winner.map_or("none".into(), |w| w.to_string()));
    println!("pseudo regret = {}", num(report.pseudo_regret));
    println!("post-sampling regret = {}", num(report.post_sampling_regret));
    println!("wrote {}", path.display());
    Ok(())
}

fn estimate(input: &Path, delta: f64, sigma_g: f64) -> CliResult {
    let text = fs::read_to_string(input).map_err(|e| format!("{}: {e}", input.display()))?;
    let samples = parse_samples_csv(&text).map_err(|e| e.to_string())?;
    println!("n = {}", samples.len());
    if samples.is_binary() {
        let est = estimate_binary(&samples, delta, sigma_g).map_err(|e| e.to_string())?;
        println!("θ̂_IV = {}", num(est.scalar()));
        if let Ok(ols) = ols_estimate(&samples) {
            println!("θ̂_OLS = {}", num(ols));
        }
        println!("denominator = {}", num(est.denominator));
        println!("A(S, δ = {}) = {}", num(delta), num(est.bound));
    } else {
        let est = estimate_k(&samples, delta, sigma_g).map_err(|e| e.to_string())?;
        for (i, v) in est.theta_hat.iter().enumerate() {
            println!("θ̂_IV[{i}] = {}", num(*v));
        }
        println!("σ_min = {}", num(est.denominator));
        println!("A(S, δ = {}) = {}", num(delta), num(est.bound));
    }
    Ok(())
}

fn experiment(cli: &Cli, preset: Preset) -> CliResult {
    let spec = spec_for(cli, preset)?;
    let out = run_experiment(&spec, cli.seed).map_err(|e| e.to_string())?;
    let dir = cli.out_dir();
    create_out_dir(&dir)?;
    let path = dir.join(format!("{preset}.csv"));
    emit_result_table(&out.table, &path).map_err(|e| e.to_string())?;
    println!("config hash = {}", out.table.metadata.config_hash);
    println!("rows = {}", out.table.rows.len());
    println!("wrote {}", path.display());
    Ok(())
}
