use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rydberg_sweep::config::{ConfigError, RunConfig};
use rydberg_sweep::experiment::{self, ExperimentError};
use rydberg_sweep::presets;

/// Adiabatic preparation of Rydberg crystals in a 1D lattice.
#[derive(Parser)]
#[command(name = "simulate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time series of all observables for one (τ, Γ_r, Γ_z) point.
    Dynamics(RunArgs),
    /// Final observables over the τ list and damping grid.
    TauScan(RunArgs),
    /// Classical level diagram and shell crossings.
    Spectrum(RunArgs),
    /// Compare the trajectory ensemble with the master equation.
    OracleCheck(RunArgs),
    /// Compare observables across truncations.
    Convergence(RunArgs),
    /// List bundled presets, or print one as TOML.
    Presets {
        name: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Bundled configuration by name (see `simulate presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; defaults to `output.dir` or the working directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `ensemble.base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Override a config key, e.g. `--set schedule.tau_us=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load(args: &RunArgs) -> Result<RunConfig, String> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("ensemble.base_seed={seed}"));
    }
    let describe = |origin: &str, e: ConfigError| format!("{origin}: {e}");
    match (&args.config, &args.preset) {
        (Some(path), _) => {
            let src = fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            RunConfig::from_toml(&src, &overrides).map_err(|e| describe(&path.display().to_string(), e))
        }
        (None, Some(name)) => {
            presets::load(name, &overrides).map_err(|e| describe(&format!("preset {name}"), e))
        }
        (None, None) => Err("either --config or --preset is required".into()),
    }
}

fn out_dir(args: &RunArgs, config: &RunConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(command: Command) -> Result<(), (u8, String)> {
    let args = match command {
        Command::Presets { name: None } => {
            for name in presets::names() {
                println!("{name}");
            }
            return Ok(());
        }
        Command::Presets { name: Some(name) } => {
            let src = presets::source(&name)
                .ok_or_else(|| (2, format!("unknown preset `{name}`")))?;
            print!("{src}");
            return Ok(());
        }
        Command::Dynamics(ref a)
        | Command::TauScan(ref a)
        | Command::Spectrum(ref a)
        | Command::OracleCheck(ref a)
        | Command::Convergence(ref a) => a,
    };
    let config = load(args).map_err(|m| (2, m))?;
    let out = out_dir(args, &config);
    let workers = args.workers;
    let fail = |e: ExperimentError| (e.exit_code() as u8, e.to_string());
    match &command {
        Command::Dynamics(_) => {
            let r = experiment::cmd_dynamics(&config, &out, workers).map_err(fail)?;
            println!(
                "dim {}  final P_{}^min = {:.4}  <n> = {:.4}  Q = {:.4}",
                r.dim,
                r.target_n,
                r.fidelity(),
                r.final_observables().mean_n,
                r.final_observables().q.value
            );
        }
        Command::TauScan(_) => {
            let r = experiment::cmd_tau_scan(&config, &out, workers).map_err(fail)?;
            for p in &r.points {
                println!(
                    "Γr={:<5} Γz={:<5} τ={:<5} F={:.4}±{:.4}  w={:.3}  <n>={:.3}  Q={:.3}",
                    p.damping.gamma_r_2pi_khz,
                    p.damping.gamma_z_2pi_khz,
                    p.tau_us,
                    p.fidelity,
                    p.fidelity_se,
                    p.width.width,
                    p.final_mean.mean_n,
                    p.q.value
                );
            }
        }
        Command::Spectrum(_) => {
            let r = experiment::cmd_spectrum(&config, &out).map_err(fail)?;
            for c in &r.crossings.rows {
                println!(
                    "δ_{}→{} = 2π × {:.4} MHz",
                    c.n_from,
                    c.n_to,
                    rydberg_sweep::units::to_2pi_mhz(c.delta)
                );
            }
        }
        Command::OracleCheck(_) => {
            let r = experiment::cmd_oracle_check(&config, &out, workers).map_err(fail)?;
            println!(
                "dim {}  trajectories {}  all {} observables within tolerance",
                r.dim,
                r.trajectories,
                r.comparisons.len()
            );
        }
        Command::Convergence(_) => {
            let r = experiment::cmd_convergence(&config, &out, workers).map_err(fail)?;
            for row in &r.rows {
                println!(
                    "n_max={} d={} dim={:<6} max diff {:.2e} ({})  leakage {:.2e}{}{}",
                    row.truncation.n_max,
                    row.truncation.d,
                    row.dim,
                    row.max_diff,
                    if row.worst_observable.is_empty() { "-" } else { &row.worst_observable },
                    row.leakage,
                    if row.differs { "  DIFFERS" } else { "" },
                    if row.leaks { "  LEAKS" } else { "" },
                );
            }
        }
        Command::Presets { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
