use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use npse_cli::config::{parse_overrides, RunConfig};
use npse_cli::runners::{self, TrajectorySource};
use npse_cli::CliError;

#[derive(Parser)]
#[command(name = "npse", version, about = "Optimal compression of a 1D condensate in a box trap")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; missing keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Physical parameter overrides, e.g. `n_atoms=2000,a_s=0.005`.
    #[arg(long)]
    params: Option<String>,

    /// Output directory (overrides `output_dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Ground states of the initial and final box.
    Groundstate(Common),
    /// Forward run along a trajectory, followed by the hold segment.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// CSV with columns `t, lambda`; defaults to the linear ramp.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Optimize the wall trajectory with the configured optimizer.
    Optimize(Common),
    /// Speed-of-sound estimate of the minimum control time.
    Tmin(Common),
    /// Optimal cost versus basis order.
    SweepBfa(Common),
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let overrides = match &common.params {
        Some(s) => parse_overrides(s)?,
        None => Vec::new(),
    };
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p, &overrides)?,
        None => RunConfig::from_toml_str("", &overrides)?,
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    log::info!("config sha256 {}", cfg.hash());
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Groundstate(c) => {
            let s = runners::run_groundstate(&load(&c)?)?;
            println!("E(lambda_0) = {:.8e}  mu = {:.8e}", s.energy_initial, s.mu_initial);
            println!("E(lambda_T) = {:.8e}  mu = {:.8e}", s.energy_final, s.mu_final);
        }
        Command::Simulate { common, trajectory } => {
            let cfg = load(&common)?;
            let source = match trajectory.or_else(|| cfg.trajectory_file.clone()) {
                Some(p) => TrajectorySource::File(p),
                None => TrajectorySource::Linear,
            };
            let s = runners::run_simulate(&cfg, &source)?;
            println!("J_e = {:.6e}  J_s = {:.6e}", s.costs.j_e(), s.costs.j_s());
            println!("state error after hold = {:.6e}", s.hold_error);
        }
        Command::Optimize(c) => {
            let s = runners::run_optimize(&load(&c)?)?;
            println!(
                "linear ramp: J_e = {:.6e}  J_s = {:.6e}",
                s.ramp.j_e(),
                s.ramp.j_s()
            );
            println!(
                "optimized:   J_e = {:.6e}  J_s = {:.6e}  ({} iterations, {:?})",
                s.result.costs.j_e(),
                s.result.costs.j_s(),
                s.report.iterations,
                s.report.termination
            );
        }
        Command::Tmin(c) => {
            let r = runners::run_tmin(&load(&c)?)?;
            println!("r_comp = {:.6}", r.r_comp);
            println!("flat:    rho = {:.6e}  c_s = {:.6e}  T_min = {:.6e}", r.flat_density, r.flat_speed, r.flat_tmin);
            println!(
                "plateau: rho = {:.6e}  c_s = {:.6e}  T_min = {:.6e}",
                r.plateau_density, r.plateau_speed, r.plateau_tmin
            );
        }
        Command::SweepBfa(c) => {
            for row in runners::run_sweep_bfa(&load(&c)?)? {
                println!("order {:2}  cost {:.6e}  iterations {}", row.order, row.cost, row.iterations);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
