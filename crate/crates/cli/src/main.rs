//! `marfe`: experiment runner and instance tools.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use marfe_core::experiment::{bound_calculator, run_experiment, ExperimentConfig};
use marfe_core::io;
use marfe_core::keydyn::{make_key_dynamics, make_random_key_dynamics};
use marfe_core::mdp::validate_mdp;
use marfe_core::{random_mdp, Dynamics, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "marfe", version, about = "Cooperative multi-agent reward-free exploration")]
struct Cli {
    /// Worker threads for rollouts and trials (default: all cores).
    #[arg(long, global = true, env = "MARFE_THREADS")]
    threads: Option<usize>,

    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the sufficient agent bound, beta, and a desk-scale recommendation.
    Bound {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
    /// Write a Dirichlet-random MDP.
    GenMdp {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a key-dynamics MDP, from an explicit key or a seeded random one.
    GenKey {
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        actions: usize,
        /// Comma-separated actions, one per step.
        #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
        key: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a file in any of the marfe formats.
    Validate { file: PathBuf },
}

/// Where a failure happened, for the machine-readable error record.
struct Failure {
    stage: &'static str,
    error: Error,
}

fn at(stage: &'static str) -> impl FnOnce(Error) -> Failure {
    move |error| Failure { stage, error }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidSize(_) => "invalid_size",
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::Invariant(_) => "invariant_violation",
        Error::Parse { .. } => "parse",
        Error::Io { .. } => "io",
        Error::Config(_) => "config",
        Error::AgentDeficit { .. } => "agent_deficit",
        Error::Domain(_) => "domain",
        Error::Protocol(_) => "protocol",
    }
}

fn report(f: &Failure) -> u8 {
    let details: Vec<String> = match &f.error {
        Error::Config(list) => list.clone(),
        Error::Invariant(v) => v.iter().map(ToString::to_string).collect(),
        _ => Vec::new(),
    };
    let record = serde_json::json!({
        "error": {
            "kind": error_kind(&f.error),
            "stage": f.stage,
            "message": f.error.to_string(),
            "details": details,
        }
    });
    eprintln!("{record}");
    if matches!(f.error, Error::Config(_)) {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, quiet: bool) -> Result<(), Failure> {
    let (mut cfg, base) = ExperimentConfig::load(config).map_err(|e| match e {
        Error::Io { .. } => Failure {
            stage: "config",
            error: Error::Config(vec![format!("config: {e}")]),
        },
        other => Failure {
            stage: "config",
            error: other,
        },
    })?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        // Relative to the working directory, unlike paths inside the config.
        let cwd = std::env::current_dir().unwrap_or_default();
        cfg.output_dir = Some(cwd.join(out));
    }
    let resolved = cfg.resolve(&base).map_err(at("config"))?;
    info!("running {:?} into {}", resolved.plan, resolved.output_dir.display());
    let summary = run_experiment(&resolved).map_err(at("experiment"))?;
    if !quiet {
        println!("kind: {}", summary.kind);
        println!("output: {}", resolved.output_dir.display());
        for (k, v) in &summary.metrics {
            println!("{k}: {v}");
        }
        println!("artifacts: {}", summary.artifacts.join(", "));
    }
    Ok(())
}

fn validate(file: &Path, quiet: bool) -> Result<(), Failure> {
    let text = fs::read_to_string(file).map_err(|e| Failure {
        stage: "validate",
        error: Error::Io {
            path: file.to_path_buf(),
            source: e,
        },
    })?;
    let tag = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("format").and_then(|f| f.as_str()).map(str::to_string))
        .unwrap_or_default();
    let origin = file.display().to_string();
    let what = match tag.as_str() {
        io::MDP_FORMAT => {
            let mdp = io::mdp_from_str(&text, &origin).map_err(at("validate"))?;
            debug_assert!(validate_mdp(&mdp).is_empty());
            format!("MDP with S={}, A={}, H={}", mdp.num_states(), mdp.num_actions(), mdp.horizon())
        }
        io::REWARD_FORMAT => {
            io::reward_from_str(&text, &origin).map_err(at("validate"))?;
            "reward function".to_string()
        }
        io::POLICY_FORMAT => {
            io::policy_from_str(&text, &origin).map_err(at("validate"))?;
            "policy".to_string()
        }
        io::ESTIMATE_FORMAT => {
            io::estimate_from_str(&text, &origin).map_err(at("validate"))?;
            "estimated dynamics".to_string()
        }
        io::PHASE_LOG_FORMAT => {
            let logs = io::phase_logs_from_str(&text, &origin).map_err(at("validate"))?;
            format!("phase log with {} phases", logs.len())
        }
        _ => {
            return Err(Failure {
                stage: "validate",
                error: Error::Parse {
                    path: origin,
                    line: 0,
                    column: 0,
                    field: "format".into(),
                    message: format!("unrecognized or missing format tag `{tag}`"),
                },
            })
        }
    };
    if !quiet {
        println!("ok: {what}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Run { config, seed, out } => run(&config, seed, out, quiet),
        Command::Bound {
            states,
            actions,
            horizon,
            epsilon,
            delta,
        } => {
            let b = bound_calculator(states, actions, horizon, epsilon, delta).map_err(at("bound"))?;
            if !quiet {
                println!("beta: {}", b.beta);
                println!("alpha: {}", b.alpha);
                println!("sufficient_m: {}", b.sufficient.agents);
                println!("delta_prime: {}", b.sufficient.delta_prime);
                println!("desk_m: {} (c = {})", b.desk_agents, b.desk_constant);
            }
            Ok(())
        }
        Command::GenMdp {
            states,
            actions,
            horizon,
            seed,
            concentration,
            out,
        } => {
            let mdp = random_mdp(states, actions, horizon, seed, concentration).map_err(at("gen-mdp"))?;
            io::write_mdp(&mdp, &out).map_err(at("gen-mdp"))?;
            if !quiet {
                println!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::GenKey {
            horizon,
            actions,
            key,
            seed,
            out,
        } => {
            let instance = match key {
                Some(k) => make_key_dynamics(horizon, actions, &k),
                None => make_random_key_dynamics(horizon, actions, seed.unwrap_or(0)),
            }
            .map_err(at("gen-key"))?;
            io::write_mdp(&instance.mdp, &out).map_err(at("gen-key"))?;
            if !quiet {
                let key: Vec<String> = instance.key.iter().map(ToString::to_string).collect();
                println!("wrote {} (key {})", out.display(), key.join(","));
            }
            Ok(())
        }
        Command::Validate { file } => validate(&file, quiet),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return ExitCode::from(report(&Failure {
                stage: "threads",
                error: Error::Config(vec![format!("threads: {e}")]),
            }));
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => ExitCode::from(report(&f)),
    }
}
