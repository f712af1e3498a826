//! One function per subcommand. Each writes its files into the configured
//! output directory and returns a summary for the terminal.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use npse_core::dynamics::{estimate_tmin, propagate, speed_of_sound};
use npse_core::io::{self, Header};
use npse_core::optimize::{optimize_bfa, optimize_ioa, sweep_bfa_order, BfaSweepRow};
use npse_core::potential::compression_ratio;
use npse_core::{
    BfaCoefficients, BfaOptions, ControlProblem, ControlTrajectory, CostBreakdown, CostKind, OptimizationReport,
    ProblemSetup, TimeGrid, WaveFunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{OptimizerKind, RunConfig};
use crate::CliError;

/// Output directory plus the config hash stamped into every file.
struct Sink {
    dir: PathBuf,
    hash: String,
}

impl Sink {
    fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cfg.output_dir).map_err(|source| CliError::Io {
            path: cfg.output_dir.clone(),
            source,
        })?;
        Ok(Self {
            dir: cfg.output_dir.clone(),
            hash: cfg.hash(),
        })
    }

    fn header(&self) -> Header {
        Header::new().with("config-sha256", &self.hash)
    }

    fn write(&self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> npse_core::Result<()>) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let io_err = |source| CliError::Io {
            path: path.clone(),
            source,
        };
        let file = File::create(&path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        body(&mut w).map_err(|e| match e {
            npse_core::Error::Io(source) => io_err(source),
            other => CliError::from(other),
        })?;
        w.flush().map_err(io_err)?;
        Ok(path)
    }

    /// `key = value` lines after the header.
    fn summary(&self, name: &str, entries: &[(&str, String)]) -> Result<PathBuf, CliError> {
        let header = self.header();
        self.write(name, |w| {
            for (k, v) in header.entries() {
                writeln!(w, "# {k}: {v}")?;
            }
            for (k, v) in entries {
                writeln!(w, "{k} = {v}")?;
            }
            Ok(())
        })
    }
}

fn problem(cfg: &RunConfig, kind: CostKind) -> Result<ControlProblem, CliError> {
    Ok(ProblemSetup {
        params: cfg.physical()?,
        grid: cfg.spatial_grid()?,
        time_grid: cfg.time_grid()?,
        potential: Arc::new(cfg.potential()?),
        lambda_0: cfg.lambda_0,
        lambda_t: cfg.lambda_t,
        cost: kind,
        gamma_reg: cfg.gamma_reg,
        stepper: cfg.stepper(),
        ground_state: cfg.ground_state(),
    }
    .build()?)
}

fn fmt(v: f64) -> String {
    format!("{v:.10e}")
}

#[derive(Debug, Clone)]
pub struct GroundStateSummary {
    pub energy_initial: f64,
    pub energy_final: f64,
    pub mu_initial: f64,
    pub mu_final: f64,
    pub files: Vec<PathBuf>,
}

/// Ground states of the initial and final potentials.
pub fn run_groundstate(cfg: &RunConfig) -> Result<GroundStateSummary, CliError> {
    let sink = Sink::new(cfg)?;
    let pr = problem(cfg, cfg.cost)?;
    let mut files = Vec::new();
    for (name, gs, lam) in [
        ("groundstate_initial.csv", &pr.initial_ground, cfg.lambda_0),
        ("groundstate_final.csv", &pr.final_ground, cfg.lambda_t),
    ] {
        let h = sink
            .header()
            .with("lambda", fmt(lam))
            .with("energy", fmt(gs.energy))
            .with("chem_potential", fmt(gs.chem_potential));
        files.push(sink.write(name, |w| io::write_wavefunction(w, &h, &pr.grid, &gs.psi0))?);
    }
    let s = GroundStateSummary {
        energy_initial: pr.initial_ground.energy,
        energy_final: pr.final_ground.energy,
        mu_initial: pr.initial_ground.chem_potential,
        mu_final: pr.final_ground.chem_potential,
        files,
    };
    let mut files = s.files.clone();
    files.push(sink.summary(
        "groundstate_summary.txt",
        &[
            ("lambda_0", fmt(cfg.lambda_0)),
            ("lambda_t", fmt(cfg.lambda_t)),
            ("energy_initial", fmt(s.energy_initial)),
            ("energy_final", fmt(s.energy_final)),
            ("chem_potential_initial", fmt(s.mu_initial)),
            ("chem_potential_final", fmt(s.mu_final)),
            ("center_density_initial", fmt(center_density(&pr.initial_ground.psi0))),
            ("center_density_final", fmt(center_density(&pr.final_ground.psi0))),
        ],
    )?);
    Ok(GroundStateSummary { files, ..s })
}

fn center_density(psi: &WaveFunction) -> f64 {
    let rho = psi.density();
    let n = rho.len();
    if n % 2 == 1 {
        rho[n / 2]
    } else {
        0.5 * (rho[n / 2 - 1] + rho[n / 2])
    }
}

/// Where `simulate` takes its trajectory from.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySource {
    Linear,
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub costs: CostBreakdown,
    /// State error at the end of the hold segment.
    pub hold_error: f64,
    pub files: Vec<PathBuf>,
}

pub fn read_trajectory_file(path: &Path) -> Result<ControlTrajectory, CliError> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let (_, c) = io::read_trajectory(BufReader::new(f))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(c)
}

/// Forward run along a trajectory, continued with `λ = λT` for the hold time.
pub fn run_simulate(cfg: &RunConfig, source: &TrajectorySource) -> Result<SimulateSummary, CliError> {
    let sink = Sink::new(cfg)?;
    let pr = problem(cfg, cfg.cost)?;
    let control = match source {
        TrajectorySource::Linear => pr.linear_ramp(),
        TrajectorySource::File(p) => read_trajectory_file(p)?,
    };
    if control.len() != pr.time_grid.n_nodes() {
        return Err(CliError::Config(format!(
            "trajectory has {} samples but the time grid has {} nodes",
            control.len(),
            pr.time_grid.n_nodes()
        )));
    }
    simulate_and_write(cfg, &sink, &pr, &control, Vec::new())
}

fn simulate_and_write(
    cfg: &RunConfig,
    sink: &Sink,
    pr: &ControlProblem,
    control: &ControlTrajectory,
    mut extra: Vec<(&str, String)>,
) -> Result<SimulateSummary, CliError> {
    let tg = &pr.time_grid;
    let dt = tg.dt();
    let n_t = tg.n_steps();
    let n_hold = (cfg.hold_time / dt).round() as usize;
    let mut lam = control.samples().to_vec();
    lam.extend(std::iter::repeat_n(pr.lambda_t, n_hold));
    let ext_tg = TimeGrid::new(dt * (n_t + n_hold) as f64, n_t + n_hold)?;
    let ext = ControlTrajectory::new(lam)?;
    let traj = propagate(
        &pr.psi0,
        &ext,
        pr.potential.as_ref(),
        &pr.params,
        &pr.grid,
        &ext_tg,
        &pr.stepper,
        1,
    )?;
    let psi_t = &traj.states[n_t];
    let costs = pr.breakdown_of_final(psi_t, control)?;
    let errors: Vec<(f64, f64)> = traj
        .states
        .iter()
        .enumerate()
        .map(|(n, psi)| {
            let e = npse_core::adjoint::state_error(psi, &pr.cost.psi_des, &pr.grid)?;
            Ok((ext_tg.time(n), e))
        })
        .collect::<npse_core::Result<_>>()?;
    let hold_error = errors.last().map_or(0.0, |e| e.1);

    let stride = cfg.snapshot_stride;
    let picks: Vec<usize> = (0..=n_t + n_hold).filter(|n| n % stride == 0 || *n == n_t + n_hold).collect();
    let times: Vec<f64> = picks.iter().map(|&n| ext_tg.time(n)).collect();
    let snaps: Vec<WaveFunction> = picks.iter().map(|&n| traj.states[n].clone()).collect();

    let h = sink.header();
    let mut files = vec![
        sink.write("trajectory.csv", |w| io::write_trajectory(w, &h, tg, control))?,
        sink.write("density_carpet.csv", |w| {
            io::write_density_carpet(w, &h.clone().with("horizon", fmt(tg.horizon())), &pr.grid, &times, &snaps)
        })?,
        sink.write("final_state.csv", |w| io::write_wavefunction(w, &h, &pr.grid, psi_t))?,
        sink.write("error_evolution.csv", |w| {
            io::write_error_evolution(w, &h.clone().with("horizon", fmt(tg.horizon())), &errors)
        })?,
    ];
    extra.extend([
        ("j_e", fmt(costs.j_e())),
        ("j_s", fmt(costs.j_s())),
        ("energy_error", fmt(costs.energy_error)),
        ("state_error", fmt(costs.state_error)),
        ("regularization", fmt(costs.regularization)),
        ("state_error_after_hold", fmt(hold_error)),
        ("hold_time", fmt(n_hold as f64 * dt)),
    ]);
    files.push(sink.summary("summary.txt", &extra)?);
    Ok(SimulateSummary {
        costs,
        hold_error,
        files,
    })
}

#[derive(Debug, Clone)]
pub struct OptimizeSummary {
    pub report: OptimizationReport,
    pub coefficients: Option<BfaCoefficients>,
    pub ramp: CostBreakdown,
    pub result: SimulateSummary,
}

fn initial_guess(cfg: &RunConfig, pr: &ControlProblem) -> Result<ControlTrajectory, CliError> {
    let ramp = pr.linear_ramp();
    if cfg.initial_noise == 0.0 {
        return Ok(ramp);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let amps: Vec<f64> = (1..=8).map(|k| rng.random_range(-1.0..1.0) / k as f64).collect();
    let n_t = pr.time_grid.n_steps();
    let interior: Vec<f64> = ramp
        .interior()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let s = (i + 1) as f64 / n_t as f64;
            let bump: f64 = amps
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * s).sin())
                .sum();
            l + cfg.initial_noise * bump
        })
        .collect();
    Ok(ramp.with_interior(&interior)?)
}

/// IOA or BFA per the config, then a forward run of the optimum.
pub fn run_optimize(cfg: &RunConfig) -> Result<OptimizeSummary, CliError> {
    if cfg.optimizer == OptimizerKind::None {
        let source = cfg
            .trajectory_file
            .clone()
            .map_or(TrajectorySource::Linear, TrajectorySource::File);
        let result = run_simulate(cfg, &source)?;
        let ramp = result.costs;
        return Ok(OptimizeSummary {
            report: OptimizationReport {
                best_control: match &source {
                    TrajectorySource::Linear => problem(cfg, cfg.cost)?.linear_ramp(),
                    TrajectorySource::File(p) => read_trajectory_file(p)?,
                },
                cost_history: vec![],
                grad_norm_history: vec![],
                records: vec![],
                iterations: 0,
                converged: true,
                termination: npse_core::Termination::MaxIterations,
                wall_time: 0.0,
                cost_evaluations: 1,
                gradient_evaluations: 0,
            },
            coefficients: None,
            ramp,
            result,
        });
    }
    let sink = Sink::new(cfg)?;
    let pr = problem(cfg, cfg.cost)?;
    let ramp = pr.breakdown(&pr.linear_ramp())?;
    log::info!("linear ramp: J_e = {:.4e}, J_s = {:.4e}", ramp.j_e(), ramp.j_s());
    let stop = cfg.stop();
    let (report, coefficients) = match cfg.optimizer {
        OptimizerKind::Ioa => (optimize_ioa(&initial_guess(cfg, &pr)?, &pr, &stop)?, None),
        OptimizerKind::Bfa => {
            let opts = BfaOptions {
                fd_step: cfg.bfa_step,
                parallel: true,
            };
            let r = optimize_bfa(&BfaCoefficients::zeros(cfg.bfa_order)?, &pr, &stop, &opts)?;
            (r.report, Some(r.coefficients))
        }
        OptimizerKind::None => unreachable!("handled above"),
    };
    log::info!(
        "optimizer finished after {} iterations: J = {:.4e} ({:?})",
        report.iterations,
        report.final_cost(),
        report.termination
    );
    let h = sink.header().with("optimizer", format!("{:?}", cfg.optimizer).to_lowercase()).with("cost", cfg.cost);
    sink.write("optimal_trajectory.csv", |w| {
        io::write_trajectory(w, &h, &pr.time_grid, &report.best_control)
    })?;
    sink.write("convergence.csv", |w| io::write_convergence_log(w, &h, &report.records))?;
    if let Some(c) = &coefficients {
        let rows: Vec<Vec<f64>> = c.as_slice().iter().enumerate().map(|(k, a)| vec![(k + 1) as f64, *a]).collect();
        sink.write("bfa_coefficients.csv", |w| io::write_columns(w, &h, &["k", "a_k"], &rows))?;
    }
    let extra = vec![
        ("optimizer", format!("{:?}", cfg.optimizer).to_lowercase()),
        ("cost", cfg.cost.to_string()),
        ("iterations", report.iterations.to_string()),
        ("converged", report.converged.to_string()),
        ("termination", format!("{:?}", report.termination)),
        ("cost_evaluations", report.cost_evaluations.to_string()),
        ("gradient_evaluations", report.gradient_evaluations.to_string()),
        ("linear_ramp_j_e", fmt(ramp.j_e())),
        ("linear_ramp_j_s", fmt(ramp.j_s())),
    ];
    let result = simulate_and_write(cfg, &sink, &pr, &report.best_control, extra)?;
    if !report.converged {
        return Err(CliError::NotConverged {
            iterations: report.iterations,
            termination: report.termination,
        });
    }
    Ok(OptimizeSummary {
        report,
        coefficients,
        ramp,
        result,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TminReport {
    pub r_comp: f64,
    pub flat_density: f64,
    pub flat_speed: f64,
    pub flat_tmin: f64,
    pub plateau_density: f64,
    pub plateau_speed: f64,
    pub plateau_tmin: f64,
}

/// Minimum-control-time estimates from the flat density `1/w0` and from
/// the initial ground state's central density.
pub fn run_tmin(cfg: &RunConfig) -> Result<TminReport, CliError> {
    let sink = Sink::new(cfg)?;
    let params = cfg.physical()?;
    let r_comp = compression_ratio(cfg.w0, cfg.lambda_t)?;
    let gs = npse_core::dynamics::ground_state(
        &cfg.potential()?,
        cfg.lambda_0,
        &params,
        &cfg.spatial_grid()?,
        &cfg.ground_state(),
    )?;
    let width = cfg.w0 - 2.0 * cfg.lambda_0;
    let flat_density = 1.0 / width;
    let plateau_density = center_density(&gs.psi0);
    let flat_speed = speed_of_sound(flat_density, &params);
    let plateau_speed = speed_of_sound(plateau_density, &params);
    let rep = TminReport {
        r_comp,
        flat_density,
        flat_speed,
        flat_tmin: estimate_tmin(width, r_comp, flat_speed)?,
        plateau_density,
        plateau_speed,
        plateau_tmin: estimate_tmin(width, r_comp, plateau_speed)?,
    };
    sink.summary(
        "tmin.txt",
        &[
            ("r_comp", fmt(rep.r_comp)),
            ("flat_density", fmt(rep.flat_density)),
            ("flat_speed_of_sound", fmt(rep.flat_speed)),
            ("flat_tmin", fmt(rep.flat_tmin)),
            ("plateau_density", fmt(rep.plateau_density)),
            ("plateau_speed_of_sound", fmt(rep.plateau_speed)),
            ("plateau_tmin", fmt(rep.plateau_tmin)),
        ],
    )?;
    Ok(rep)
}

/// BFA optimum for each basis order, warm-started.
pub fn run_sweep_bfa(cfg: &RunConfig) -> Result<Vec<BfaSweepRow>, CliError> {
    let sink = Sink::new(cfg)?;
    let pr = problem(cfg, cfg.cost)?;
    let opts = BfaOptions {
        fd_step: cfg.bfa_step,
        parallel: true,
    };
    let rows = sweep_bfa_order(&cfg.bfa_orders, &pr, &cfg.stop(), &opts)?;
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| vec![r.order as f64, r.cost, r.iterations as f64, if r.converged { 1.0 } else { 0.0 }])
        .collect();
    let h = sink.header().with("cost", cfg.cost);
    sink.write("bfa_sweep.csv", |w| {
        io::write_columns(w, &h, &["order", "cost", "iterations", "converged"], &table)
    })?;
    Ok(rows)
}
