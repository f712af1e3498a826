//! H¹ gradients of the cost, and the two optimizers built on them.
//!
//! The gradient of the discrete cost with respect to the interior samples
//! `λ₁ … λ_{n_t−1}` is represented in the discrete Sobolev inner product
//! `(a, b)_H = Σ (a_{k+1} − a_k)(b_{k+1} − b_k)/dt`. Its Riesz representative
//! solves the three-point Poisson problem `G̈ = s` with `G(0) = G(T) = 0`, so
//! `(G, ξ)_H` is exactly the directional derivative of the cost along `ξ`.

use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{
    backward_sweep, regularization_term, second_difference, state_error, terminal_adjoint_energy_sampled,
    terminal_adjoint_state, terminal_cost_sampled, AdjointField, CostKind, CostSpec,
};
use crate::dynamics::{
    ground_state, propagate_observed, total_energy, GroundStateConfig, GroundStateResult, NpseStepperConfig,
};
use crate::error::{ensure, Result};
use crate::grid::{check_len, PhysicalParams, SpatialGrid, TimeGrid, WaveFunction};
use crate::linalg::thomas_in_place;
use crate::potential::{bfa_trajectory, BfaCoefficients, ControlPotential, ControlTrajectory};

/// H¹ gradient sampled on the time nodes; zero at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientField {
    samples: Vec<f64>,
}

impl GradientField {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        ensure(samples.len() >= 3, || "gradient needs at least 3 samples".into())?;
        ensure(samples[0] == 0.0 && samples[samples.len() - 1] == 0.0, || {
            "gradient endpoints must be zero".into()
        })?;
        ensure(samples.iter().all(|v| v.is_finite()), || "gradient must be finite".into())?;
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn h1_inner(&self, other: &[f64], dt: f64) -> Result<f64> {
        check_len(self.samples.len(), other.len())?;
        Ok(h1_inner(&self.samples, other, dt))
    }

    pub fn h1_norm(&self, dt: f64) -> f64 {
        h1_inner(&self.samples, &self.samples, dt).sqrt()
    }
}

/// `Σ (a_{k+1} − a_k)(b_{k+1} − b_k)/dt` over all intervals.
pub fn h1_inner(a: &[f64], b: &[f64], dt: f64) -> f64 {
    a.windows(2)
        .zip(b.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[1] - y[0]))
        .sum::<f64>()
        / dt
}

/// Right-hand side `γλ̈ + Re∫Ψ* ∂λV p dz` of the gradient's Poisson problem
/// at every node (zero at the endpoints).
///
/// `forward` holds `Ψ` at all `n_t + 1` levels; `adjoint` holds the
/// midpoint adjoint of each of the `n_t` steps. Node `k` averages the two
/// steps adjacent to it, each evaluated at the step's midpoint state.
pub fn gradient_source(
    forward: &[WaveFunction],
    adjoint: &[AdjointField],
    control: &ControlTrajectory,
    pot: &dyn ControlPotential,
    gamma_reg: f64,
    grid: &SpatialGrid,
    time_grid: &TimeGrid,
) -> Result<Vec<f64>> {
    control.check_grid(time_grid)?;
    check_len(time_grid.n_nodes(), forward.len())?;
    check_len(time_grid.n_steps(), adjoint.len())?;
    let nz = grid.len();
    for f in forward {
        check_len(nz, f.len())?;
    }
    for a in adjoint {
        check_len(nz, a.len())?;
    }
    let lam = control.samples();
    let dt = time_grid.dt();
    let n_t = time_grid.n_steps();
    let dz = grid.dz();
    let mut src = second_difference(lam, dt);
    for s in src.iter_mut() {
        *s *= gamma_reg;
    }
    // Re dz Σ Ψm* V' a for a step, with Ψm its midpoint state
    let pairing = |n: usize, dv: &[f64]| -> f64 {
        let (p0, p1, a) = (forward[n].values(), forward[n + 1].values(), adjoint[n].values());
        let mut acc = 0.0;
        for j in 1..nz - 1 {
            let m: Complex64 = 0.5 * (p0[j] + p1[j]);
            acc += dv[j] * (m.conj() * a[j]).re;
        }
        acc * dz
    };
    for k in 1..n_t {
        let dv = pot.sample_dlambda(grid, lam[k]);
        src[k] += 0.5 * (pairing(k - 1, &dv) + pairing(k, &dv));
    }
    src[0] = 0.0;
    src[n_t] = 0.0;
    Ok(src)
}

/// Solves `G̈ = source` with `G(0) = G(T) = 0` on the three-point stencil.
pub fn solve_h1_gradient(source: &[f64], time_grid: &TimeGrid) -> Result<GradientField> {
    check_len(time_grid.n_nodes(), source.len())?;
    let dt = time_grid.dt();
    let n_t = time_grid.n_steps();
    let mut interior: Vec<f64> = source[1..n_t].iter().map(|s| s * dt * dt).collect();
    poisson_in_place(&mut interior)?;
    let mut samples = Vec::with_capacity(n_t + 1);
    samples.push(0.0);
    samples.extend(interior);
    samples.push(0.0);
    GradientField::new(samples)
}

/// Solves `x_{k−1} − 2x_k + x_{k+1} = rhs_k` with zero boundary values.
fn poisson_in_place(rhs: &mut [f64]) -> Result<()> {
    let m = rhs.len();
    let sub = vec![1.0; m];
    let diag = vec![-2.0; m];
    let mut scratch = vec![0.0; m];
    thomas_in_place(&sub, &diag, &sub, rhs, &mut scratch)
}

/// Inputs from which a [`ControlProblem`] is built.
#[derive(Clone)]
pub struct ProblemSetup {
    pub params: PhysicalParams,
    pub grid: SpatialGrid,
    pub time_grid: TimeGrid,
    pub potential: Arc<dyn ControlPotential>,
    pub lambda_0: f64,
    pub lambda_t: f64,
    pub cost: CostKind,
    pub gamma_reg: f64,
    pub stepper: NpseStepperConfig,
    pub ground_state: GroundStateConfig,
}

impl ProblemSetup {
    /// Computes both ground states and the desired energy.
    pub fn build(self) -> Result<ControlProblem> {
        self.params.validate()?;
        self.stepper.validate()?;
        let pot = self.potential.as_ref();
        let initial = ground_state(pot, self.lambda_0, &self.params, &self.grid, &self.ground_state)?;
        let fin = ground_state(pot, self.lambda_t, &self.params, &self.grid, &self.ground_state)?;
        let j_e_des = total_energy(&fin.psi0, pot, self.lambda_t, &self.params, &self.grid)?;
        let cost = match self.cost {
            CostKind::State => CostSpec::state(fin.psi0.clone(), self.gamma_reg)?,
            CostKind::Energy => CostSpec::energy(fin.psi0.clone(), j_e_des, self.gamma_reg)?,
        };
        Ok(ControlProblem {
            params: self.params,
            grid: self.grid,
            time_grid: self.time_grid,
            potential: self.potential,
            lambda_0: self.lambda_0,
            lambda_t: self.lambda_t,
            psi0: initial.psi0.clone(),
            cost,
            j_e_des,
            stepper: self.stepper,
            initial_ground: initial,
            final_ground: fin,
        })
    }
}

/// Everything needed to evaluate the cost of a wall trajectory.
#[derive(Clone)]
pub struct ControlProblem {
    pub params: PhysicalParams,
    pub grid: SpatialGrid,
    pub time_grid: TimeGrid,
    pub potential: Arc<dyn ControlPotential>,
    pub lambda_0: f64,
    pub lambda_t: f64,
    /// Initial state, the ground state at `λ0`.
    pub psi0: WaveFunction,
    pub cost: CostSpec,
    /// Ground-state energy at `λT`.
    pub j_e_des: f64,
    pub stepper: NpseStepperConfig,
    pub initial_ground: GroundStateResult,
    pub final_ground: GroundStateResult,
}

/// Terminal errors and regularization of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// `½(1 − |⟨Ψ_des, Ψ(T)⟩|²)`.
    pub state_error: f64,
    /// `∫H(Ψ(T))dz − J_e,des`.
    pub energy_error: f64,
    pub regularization: f64,
}

impl CostBreakdown {
    pub fn j_s(&self) -> f64 {
        self.state_error + self.regularization
    }

    pub fn j_e(&self) -> f64 {
        self.energy_error + self.regularization
    }
}

impl ControlProblem {
    /// Same problem with a different cost functional.
    pub fn with_cost_kind(&self, kind: CostKind) -> Self {
        let mut p = self.clone();
        p.cost.kind = kind;
        p.cost.j_e_des = Some(self.j_e_des);
        p
    }

    pub fn linear_ramp(&self) -> ControlTrajectory {
        ControlTrajectory::linear(&self.time_grid, self.lambda_0, self.lambda_t)
    }

    pub fn bfa_trajectory(&self, coeffs: &BfaCoefficients) -> ControlTrajectory {
        bfa_trajectory(coeffs, &self.time_grid, self.lambda_0, self.lambda_t)
    }

    fn check_control(&self, control: &ControlTrajectory) -> Result<()> {
        control.check_grid(&self.time_grid)?;
        ensure(
            control.lambda_0() == self.lambda_0 && control.lambda_t() == self.lambda_t,
            || {
                format!(
                    "control endpoints ({}, {}) differ from the problem's ({}, {})",
                    control.lambda_0(),
                    control.lambda_t(),
                    self.lambda_0,
                    self.lambda_t
                )
            },
        )
    }

    /// `Ψ(T)` for `control`.
    pub fn final_state(&self, control: &ControlTrajectory) -> Result<WaveFunction> {
        self.check_control(control)?;
        let (psi, _) = propagate_observed(
            &self.psi0,
            control.samples(),
            self.potential.as_ref(),
            &self.params,
            &self.grid,
            self.time_grid.dt(),
            &self.stepper,
            |_, _| Ok(()),
        )?;
        Ok(psi)
    }

    /// `Ψ` at every time level.
    pub fn forward(&self, control: &ControlTrajectory) -> Result<Vec<WaveFunction>> {
        self.check_control(control)?;
        let mut states = Vec::with_capacity(self.time_grid.n_nodes());
        propagate_observed(
            &self.psi0,
            control.samples(),
            self.potential.as_ref(),
            &self.params,
            &self.grid,
            self.time_grid.dt(),
            &self.stepper,
            |_, psi| {
                states.push(WaveFunction::from_raw(psi.to_vec()));
                Ok(())
            },
        )?;
        Ok(states)
    }

    fn terminal_cost(&self, psi_t: &WaveFunction) -> Result<f64> {
        let v = self.potential.sample(&self.grid, self.lambda_t);
        terminal_cost_sampled(psi_t, &self.cost, &v, &self.params, &self.grid)
    }

    /// Cost of `control` (one forward run).
    pub fn cost(&self, control: &ControlTrajectory) -> Result<f64> {
        let psi = self.final_state(control)?;
        Ok(self.terminal_cost(&psi)? + regularization_term(control, self.cost.gamma_reg, &self.time_grid)?)
    }

    /// Both terminal errors of `control` (one forward run).
    pub fn breakdown(&self, control: &ControlTrajectory) -> Result<CostBreakdown> {
        let psi = self.final_state(control)?;
        self.breakdown_of_final(&psi, control)
    }

    pub fn breakdown_of_final(&self, psi_t: &WaveFunction, control: &ControlTrajectory) -> Result<CostBreakdown> {
        let pot = self.potential.as_ref();
        Ok(CostBreakdown {
            state_error: state_error(psi_t, &self.cost.psi_des, &self.grid)?,
            energy_error: total_energy(psi_t, pot, self.lambda_t, &self.params, &self.grid)? - self.j_e_des,
            regularization: regularization_term(control, self.cost.gamma_reg, &self.time_grid)?,
        })
    }

    pub fn terminal_adjoint(&self, psi_t: &WaveFunction) -> Result<AdjointField> {
        match self.cost.kind {
            CostKind::State => terminal_adjoint_state(psi_t, &self.cost.psi_des, &self.grid),
            CostKind::Energy => {
                let v = self.potential.sample(&self.grid, self.lambda_t);
                Ok(terminal_adjoint_energy_sampled(psi_t.values(), &v, &self.params, &self.grid))
            }
        }
    }

    /// Cost and H¹ gradient: forward run, terminal condition, backward run,
    /// Poisson solve.
    pub fn evaluate_cost_and_gradient(&self, control: &ControlTrajectory) -> Result<(f64, GradientField)> {
        let (cost, src) = self.cost_and_source(control)?;
        Ok((cost, solve_h1_gradient(&src, &self.time_grid)?))
    }

    fn cost_and_source(&self, control: &ControlTrajectory) -> Result<(f64, Vec<f64>)> {
        let states = self.forward(control)?;
        let psi_t = states.last().expect("at least two time levels");
        let cost = self.terminal_cost(psi_t)? + regularization_term(control, self.cost.gamma_reg, &self.time_grid)?;
        let p_t = self.terminal_adjoint(psi_t)?;
        let pot = self.potential.as_ref();
        let halves = backward_sweep(
            &states,
            control.samples(),
            pot,
            &self.params,
            &self.grid,
            self.time_grid.dt(),
            &p_t,
        )?;
        let src = gradient_source(
            &states,
            &halves,
            control,
            pot,
            self.cost.gamma_reg,
            &self.grid,
            &self.time_grid,
        )?;
        Ok((cost, src))
    }

    /// `(t, ½(1 − |⟨Ψ_des, Ψ(t)⟩|²))` along `control`, continued with `λ`
    /// held at `λT` for `hold_time`, sampled every `stride` steps.
    pub fn error_evolution(&self, control: &ControlTrajectory, hold_time: f64, stride: usize) -> Result<Vec<(f64, f64)>> {
        self.check_control(control)?;
        ensure(hold_time >= 0.0, || format!("hold time must be >= 0, got {hold_time}"))?;
        ensure(stride >= 1, || "stride must be >= 1".into())?;
        let dt = self.time_grid.dt();
        let n_hold = (hold_time / dt).round() as usize;
        let mut lam = control.samples().to_vec();
        lam.extend(std::iter::repeat_n(self.lambda_t, n_hold));
        let last = lam.len() - 1;
        let des = self.cost.psi_des.values();
        let dz = self.grid.dz();
        let mut out = Vec::new();
        propagate_observed(
            &self.psi0,
            &lam,
            self.potential.as_ref(),
            &self.params,
            &self.grid,
            dt,
            &self.stepper,
            |n, psi| {
                if n % stride == 0 || n == last {
                    let c = crate::grid::overlap_slices(des, psi, dz);
                    out.push((n as f64 * dt, 0.5 * (1.0 - c.norm_sqr())));
                }
                Ok(())
            },
        )?;
        Ok(out)
    }
}

/// Free-function form of [`ControlProblem::evaluate_cost_and_gradient`].
pub fn evaluate_cost_and_gradient(control: &ControlTrajectory, problem: &ControlProblem) -> Result<(f64, GradientField)> {
    problem.evaluate_cost_and_gradient(control)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCriteria {
    /// Stop once the gradient norm (H¹ for IOA, Euclidean for BFA) is below.
    pub grad_tol: f64,
    /// Maximum number of accepted steps.
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction
    /// of its magnitude. Steps that gain less than rounding always stop.
    pub rel_cost_tol: f64,
    /// Trial points per line search.
    pub max_trials: usize,
    /// Armijo constant.
    pub c1: f64,
    /// Curvature constant of the weak Wolfe condition.
    pub c2: f64,
    /// Correction pairs kept by the quasi-Newton update.
    pub memory: usize,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iterations: 1000,
            rel_cost_tol: 0.0,
            max_trials: 30,
            c1: 1e-4,
            c2: 0.9,
            memory: 10,
        }
    }
}

impl StopCriteria {
    pub fn validate(&self) -> Result<()> {
        ensure(self.grad_tol >= 0.0, || "grad_tol must be >= 0".into())?;
        ensure(self.rel_cost_tol >= 0.0, || "rel_cost_tol must be >= 0".into())?;
        ensure(self.memory >= 1, || "memory must be >= 1".into())?;
        ensure(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0, || {
            "line search constants must satisfy 0 < c1 < c2 < 1".into()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    CostStagnation,
    MaxIterations,
    LineSearchFailure,
}

/// One row of the convergence log; iteration 0 is the initial guess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    /// Accepted step length (0 for the initial guess).
    pub step: f64,
    /// Seconds since the start of the run.
    pub wall_time: f64,
    pub cost_evaluations: usize,
    pub gradient_evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub best_control: ControlTrajectory,
    pub cost_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub records: Vec<IterationRecord>,
    /// Accepted quasi-Newton steps.
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub wall_time: f64,
    pub cost_evaluations: usize,
    pub gradient_evaluations: usize,
}

impl OptimizationReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().expect("history holds the initial cost")
    }
}

#[derive(Debug, Clone)]
pub struct BfaReport {
    pub coefficients: BfaCoefficients,
    pub report: OptimizationReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfaOptions {
    /// Forward-difference step per coefficient, µm.
    pub fd_step: f64,
    /// Evaluate the difference probes concurrently.
    pub parallel: bool,
}

impl Default for BfaOptions {
    fn default() -> Self {
        Self {
            fd_step: 1e-6,
            parallel: true,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inverse-Hessian approximation in two-loop form. `H0 = γ·P` with `P` the
/// metric's Riesz map, `γ = sᵀy / yᵀPy` from the newest pair, and
/// `P/‖g‖_P` before any pair is stored.
struct Bfgs {
    pairs: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl Bfgs {
    fn direction(&self, g: &[f64], riesz: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let mut r = riesz(&q);
        let gamma = match self.pairs.last() {
            Some((_, y, rho)) => 1.0 / (rho * dot(y, &riesz(y))),
            None => 1.0 / dot(g, &riesz(g)).sqrt(),
        };
        for ri in r.iter_mut() {
            *ri *= gamma;
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            for (ri, si) in r.iter_mut().zip(s) {
                *ri += (a - b) * si;
            }
        }
        for ri in r.iter_mut() {
            *ri = -*ri;
        }
        r
    }
}

type GradFn<'a> = dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;
type CostFn<'a> = dyn FnMut(&[f64]) -> Result<f64> + 'a;

struct DriverOutcome {
    x: Vec<f64>,
    records: Vec<IterationRecord>,
    iterations: usize,
    termination: Termination,
    cost_evaluations: usize,
    gradient_evaluations: usize,
}

/// Limited-memory BFGS with a weak Wolfe line search. `eval_grad` returns
/// the cost and the Euclidean gradient. When the gradient is much dearer than
/// the cost, `eval_cost` screens trial points for the Armijo condition first.
/// The gradient norm is measured in the metric induced by `riesz`.
fn bfgs_driver(
    x0: Vec<f64>,
    eval_grad: &mut GradFn,
    mut eval_cost: Option<&mut CostFn>,
    riesz: &dyn Fn(&[f64]) -> Vec<f64>,
    stop: &StopCriteria,
) -> Result<DriverOutcome> {
    stop.validate()?;
    let start = Instant::now();
    let mut x = x0;
    let (mut f, mut g) = eval_grad(&x)?;
    let mut n_cost = 1;
    let mut n_grad = 1;
    let mut gnorm = dot(&g, &riesz(&g)).max(0.0).sqrt();
    let mut records = vec![IterationRecord {
        iteration: 0,
        cost: f,
        grad_norm: gnorm,
        step: 0.0,
        wall_time: start.elapsed().as_secs_f64(),
        cost_evaluations: n_cost,
        gradient_evaluations: n_grad,
    }];
    let mut bfgs = Bfgs { pairs: Vec::new() };
    let mut iterations = 0;
    let termination = loop {
        if gnorm <= stop.grad_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= stop.max_iterations {
            break Termination::MaxIterations;
        }
        let mut d = bfgs.direction(&g, riesz);
        let mut slope = dot(&g, &d);
        if slope.is_nan() || slope >= 0.0 {
            bfgs.pairs.clear();
            d = bfgs.direction(&g, riesz);
            slope = dot(&g, &d);
        }
        // Weak Wolfe search by bracketing: expand while the slope is still
        // steep, bisect once the Armijo condition fails.
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut t = 1.0;
        let mut accepted: Option<(f64, Vec<f64>, f64, Vec<f64>)> = None;
        let mut fallback = None;
        for _ in 0..=stop.max_trials {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            let trial = match eval_cost.as_mut() {
                Some(cost) => {
                    n_cost += 1;
                    match cost(&xt) {
                        Ok(ft) if ft.is_finite() && ft <= f + stop.c1 * t * slope => {
                            n_grad += 1;
                            Some(eval_grad(&xt)?)
                        }
                        _ => None,
                    }
                }
                None => {
                    n_cost += 1;
                    n_grad += 1;
                    eval_grad(&xt).ok()
                }
            };
            match trial {
                Some((ft, gt)) if ft.is_finite() && ft <= f + stop.c1 * t * slope => {
                    if dot(&gt, &d) >= stop.c2 * slope {
                        accepted = Some((t, xt, ft, gt));
                        break;
                    }
                    lo = t;
                    fallback = Some((t, xt, ft, gt));
                }
                _ => hi = t,
            }
            t = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * t };
        }
        let Some((t, xn, fn_, gn)) = accepted.or(fallback) else {
            if bfgs.pairs.is_empty() {
                break Termination::LineSearchFailure;
            }
            bfgs.pairs.clear();
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            if bfgs.pairs.len() == stop.memory {
                bfgs.pairs.remove(0);
            }
            bfgs.pairs.push((s, y, 1.0 / sy));
        }
        let decrease = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        gnorm = dot(&g, &riesz(&g)).max(0.0).sqrt();
        iterations += 1;
        records.push(IterationRecord {
            iteration: iterations,
            cost: f,
            grad_norm: gnorm,
            step: t,
            wall_time: start.elapsed().as_secs_f64(),
            cost_evaluations: n_cost,
            gradient_evaluations: n_grad,
        });
        log::debug!("iteration {iterations}: J = {f:.6e}, |grad| = {gnorm:.3e}, step = {t}");
        if decrease <= (stop.rel_cost_tol * f.abs()).max(8.0 * f64::EPSILON * f.abs()) {
            break Termination::CostStagnation;
        }
    };
    Ok(DriverOutcome {
        x,
        records,
        iterations,
        termination,
        cost_evaluations: n_cost,
        gradient_evaluations: n_grad,
    })
}

fn report_from(outcome: DriverOutcome, best_control: ControlTrajectory) -> OptimizationReport {
    let wall_time = outcome.records.last().map_or(0.0, |r| r.wall_time);
    OptimizationReport {
        best_control,
        cost_history: outcome.records.iter().map(|r| r.cost).collect(),
        grad_norm_history: outcome.records.iter().map(|r| r.grad_norm).collect(),
        records: outcome.records,
        iterations: outcome.iterations,
        converged: matches!(
            outcome.termination,
            Termination::GradientTolerance | Termination::CostStagnation
        ),
        termination: outcome.termination,
        wall_time,
        cost_evaluations: outcome.cost_evaluations,
        gradient_evaluations: outcome.gradient_evaluations,
    }
}

/// Adjoint-based optimization over the interior samples of `λ(t)`: BFGS
/// in the H¹ metric.
pub fn optimize_ioa(initial: &ControlTrajectory, problem: &ControlProblem, stop: &StopCriteria) -> Result<OptimizationReport> {
    problem.check_control(initial)?;
    let dt = problem.time_grid.dt();
    // Euclidean gradient e_k = ∂J/∂λ_k is related to the H¹ gradient G by
    // G = W⁻¹e, W = tridiag(−1, 2, −1)/dt
    let riesz = move |e: &[f64]| -> Vec<f64> {
        let mut r: Vec<f64> = e.iter().map(|v| -v * dt).collect();
        poisson_in_place(&mut r).expect("the Dirichlet Laplacian is nonsingular");
        r
    };
    let mut eval_grad = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let c = initial.with_interior(x)?;
        let (f, src) = problem.cost_and_source(&c)?;
        Ok((f, src[1..src.len() - 1].iter().map(|v| -v * dt).collect()))
    };
    let out = bfgs_driver(initial.interior().to_vec(), &mut eval_grad, None, &riesz, stop)?;
    let best = initial.with_interior(&out.x)?;
    Ok(report_from(out, best))
}

/// Derivative-free optimization of the harmonic coefficients added to the
/// linear ramp: BFGS with forward-difference gradients.
pub fn optimize_bfa(
    initial: &BfaCoefficients,
    problem: &ControlProblem,
    stop: &StopCriteria,
    options: &BfaOptions,
) -> Result<BfaReport> {
    ensure(options.fd_step > 0.0, || "fd_step must be > 0".into())?;
    let cost_of = |x: &[f64]| -> Result<f64> { problem.cost(&problem.bfa_trajectory(&BfaCoefficients::new(x.to_vec())?)) };
    let mut eval_grad = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let probe = |i: usize| -> Result<f64> {
            if i == 0 {
                return cost_of(x);
            }
            let mut xp = x.to_vec();
            xp[i - 1] += options.fd_step;
            cost_of(&xp)
        };
        let vals: Vec<f64> = if options.parallel {
            (0..=x.len()).into_par_iter().map(probe).collect::<Result<_>>()?
        } else {
            (0..=x.len()).map(probe).collect::<Result<_>>()?
        };
        let f = vals[0];
        Ok((f, vals[1..].iter().map(|v| (v - f) / options.fd_step).collect()))
    };
    let mut eval_cost = |x: &[f64]| cost_of(x);
    let riesz = |g: &[f64]| g.to_vec();
    let out = bfgs_driver(initial.as_slice().to_vec(), &mut eval_grad, Some(&mut eval_cost), &riesz, stop)?;
    let coefficients = BfaCoefficients::new(out.x.clone())?;
    let best = problem.bfa_trajectory(&coefficients);
    Ok(BfaReport {
        coefficients,
        report: report_from(out, best),
    })
}

/// One row of a basis-order sweep.
#[derive(Debug, Clone)]
pub struct BfaSweepRow {
    pub order: usize,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub coefficients: BfaCoefficients,
}

/// Runs [`optimize_bfa`] for each order, warm-starting from the previous
/// optimum padded with zeros.
pub fn sweep_bfa_order(
    orders: &[usize],
    problem: &ControlProblem,
    stop: &StopCriteria,
    options: &BfaOptions,
) -> Result<Vec<BfaSweepRow>> {
    let mut rows: Vec<BfaSweepRow> = Vec::with_capacity(orders.len());
    for &m in orders {
        let start = match rows.last() {
            Some(prev) => prev.coefficients.resized(m)?,
            None => BfaCoefficients::zeros(m)?,
        };
        let r = optimize_bfa(&start, problem, stop, options)?;
        rows.push(BfaSweepRow {
            order: m,
            cost: r.report.final_cost(),
            iterations: r.report.iterations,
            converged: r.report.converged,
            coefficients: r.coefficients,
        });
    }
    Ok(rows)
}
