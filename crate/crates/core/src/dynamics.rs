//! Forward npSE propagation, ground states, energies and sound speed.
//!
//! The time stepper is the implicit midpoint form of Crank–Nicolson with the
//! nonlinearity replaced by a difference quotient of its primitive,
//!
//! ```text
//! Ψ₁ − Ψ₀ = −i·dt·[K + V̄ + Q(|Ψ₀|², |Ψ₁|²)]·(Ψ₀ + Ψ₁)/2,
//! V̄ = (V(λₙ) + V(λₙ₊₁))/2,   Q(a, b) = (F(b) − F(a))/(b − a),   F' = N,
//! ```
//!
//! with `K = −∂zz/(2m)` on the three-point stencil and homogeneous Dirichlet
//! rows. Every fixed-point iterate is a Cayley transform of a Hermitian matrix,
//! so the discrete norm is conserved to rounding. For static `V` the discrete
//! energy is conserved up to the fixed-point tolerance, and eigenstates of
//! the discrete Hamiltonian are exactly stationary.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grid::{check_len, PhysicalParams, SpatialGrid, TimeGrid, WaveFunction};
use crate::linalg::thomas_in_place;
use crate::potential::{ControlPotential, ControlTrajectory};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// npSE nonlinearity `ω⊥((1 + 3gρ)/√(1 + 2gρ) − 1)` with `g = a_s·N`.
#[inline]
pub fn nonlinear_term(rho: f64, params: &PhysicalParams) -> f64 {
    let g = params.coupling();
    let s = (1.0 + 2.0 * g * rho).sqrt();
    params.omega_perp * ((1.0 + 3.0 * g * rho) / s - 1.0)
}

/// `dN/dρ` of [`nonlinear_term`].
#[inline]
pub fn nonlinear_term_derivative(rho: f64, params: &PhysicalParams) -> f64 {
    let g = params.coupling();
    let q = 1.0 + 2.0 * g * rho;
    let s = q.sqrt();
    params.omega_perp * (3.0 * g / s - (1.0 + 3.0 * g * rho) * g / (q * s))
}

/// Difference quotient `(F(b) − F(a))/(b − a)` of the primitive
/// `F(ρ) = ω⊥ρ(√(1 + 2gρ) − 1)` of [`nonlinear_term`], written without
/// cancellation. Symmetric in `a, b` and equal to `N(a)` at `a = b`.
#[inline]
pub fn nonlinear_quotient(a: f64, b: f64, params: &PhysicalParams) -> f64 {
    let g = params.coupling();
    let sa = (1.0 + 2.0 * g * a).sqrt();
    let s = sa + (1.0 + 2.0 * g * b).sqrt();
    params.omega_perp * (0.5 * s + g * (a + b) / s - 1.0)
}

/// `∂/∂a` of [`nonlinear_quotient`]`(a, b)`; half of `dN/dρ` at `a = b`.
#[inline]
pub fn nonlinear_quotient_derivative(a: f64, b: f64, params: &PhysicalParams) -> f64 {
    let g = params.coupling();
    let sa = (1.0 + 2.0 * g * a).sqrt();
    let s = sa + (1.0 + 2.0 * g * b).sqrt();
    params.omega_perp * (0.5 * g / sa + g / s - g * g * (a + b) / (sa * s * s))
}

/// Interaction part of the energy density, `ω⊥√(1 + 2gρ)·ρ`.
#[inline]
fn interaction_energy_density(rho: f64, params: &PhysicalParams) -> f64 {
    params.omega_perp * (1.0 + 2.0 * params.coupling() * rho).sqrt() * rho
}

/// Local speed of sound of the npSE at density `ρ` (µm/ms).
pub fn speed_of_sound(rho: f64, params: &PhysicalParams) -> f64 {
    let g = params.coupling();
    let gr = g * rho.max(0.0);
    let c2 = params.omega_perp * gr * (2.0 + 3.0 * gr) / (params.mass * (1.0 + 2.0 * gr).powf(1.5));
    c2.sqrt()
}

/// Geometric lower-bound estimate `T_min ≈ (w0/c_s0)·(1 + r_comp)/2` (ms).
pub fn estimate_tmin(w0: f64, r_comp: f64, c_s0: f64) -> Result<f64> {
    ensure(c_s0 > 0.0 && c_s0.is_finite(), || {
        format!("speed of sound must be > 0, got {c_s0}")
    })?;
    Ok(w0 / c_s0 * 0.5 * (1.0 + r_comp))
}

/// Coefficients of the three-point kinetic operator `−∂zz/(2m)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kinetic {
    pub diag: f64,
    pub off: f64,
}

impl Kinetic {
    pub fn new(grid: &SpatialGrid, params: &PhysicalParams) -> Self {
        let c = 1.0 / (2.0 * params.mass * grid.dz() * grid.dz());
        Self {
            diag: 2.0 * c,
            off: -c,
        }
    }

    /// `(Kψ)_j` for an interior node.
    #[inline]
    pub fn apply_at(&self, psi: &[Complex64], j: usize) -> Complex64 {
        psi[j] * self.diag + (psi[j - 1] + psi[j + 1]) * self.off
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpseStepperConfig {
    /// Relative L² change below which the implicit nonlinear solve stops.
    pub fixed_point_tol: f64,
    pub max_fixed_point_iters: usize,
}

impl Default for NpseStepperConfig {
    fn default() -> Self {
        Self {
            fixed_point_tol: 1e-10,
            max_fixed_point_iters: 50,
        }
    }
}

impl NpseStepperConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.fixed_point_tol > 0.0, || "fixed_point_tol must be > 0".into())?;
        ensure(self.max_fixed_point_iters >= 1, || {
            "max_fixed_point_iters must be >= 1".into()
        })
    }
}

/// Reusable Crank–Nicolson stepper with preallocated work arrays.
pub(crate) struct Stepper<'a> {
    params: &'a PhysicalParams,
    cfg: NpseStepperConfig,
    kin: Kinetic,
    sub: Vec<Complex64>,
    diag: Vec<Complex64>,
    sup: Vec<Complex64>,
    rhs: Vec<Complex64>,
    scratch: Vec<Complex64>,
    rho0: Vec<f64>,
    pub fixed_point_iterations: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(grid: &SpatialGrid, params: &'a PhysicalParams, cfg: NpseStepperConfig) -> Self {
        let m = grid.len() - 2;
        Self {
            params,
            cfg,
            kin: Kinetic::new(grid, params),
            sub: vec![ZERO; m],
            diag: vec![ZERO; m],
            sup: vec![ZERO; m],
            rhs: vec![ZERO; m],
            scratch: vec![ZERO; m],
            rho0: vec![0.0; grid.len()],
            fixed_point_iterations: 0,
        }
    }

    /// One step from `psi0` into `psi1`; `v0`, `v1` are the potentials at
    /// the two time levels. `dt` may be negative.
    pub fn step(
        &mut self,
        psi0: &[Complex64],
        psi1: &mut [Complex64],
        v0: &[f64],
        v1: &[f64],
        dt: f64,
        step_index: usize,
    ) -> Result<()> {
        let n = psi0.len();
        let m = n - 2;
        let a = 0.5 * dt;
        let linear = self.params.coupling() == 0.0 || self.params.omega_perp == 0.0;
        for (r, p) in self.rho0.iter_mut().zip(psi0) {
            *r = p.norm_sqr();
        }
        psi1.copy_from_slice(psi0);
        let off = Complex64::new(0.0, a * self.kin.off);

        let max_iters = if linear { 1 } else { self.cfg.max_fixed_point_iters };
        let mut change = f64::INFINITY;
        for it in 0..max_iters {
            for i in 0..m {
                let j = i + 1;
                let nl = if linear {
                    0.0
                } else {
                    nonlinear_quotient(self.rho0[j], psi1[j].norm_sqr(), self.params)
                };
                let h = self.kin.diag + 0.5 * (v0[j] + v1[j]) + nl;
                self.diag[i] = Complex64::new(1.0, a * h);
                self.sub[i] = off;
                self.sup[i] = off;
                let hpsi = psi0[j] * h + (psi0[j - 1] + psi0[j + 1]) * self.kin.off;
                self.rhs[i] = psi0[j] - Complex64::new(0.0, a) * hpsi;
            }
            thomas_in_place(&self.sub, &self.diag, &self.sup, &mut self.rhs, &mut self.scratch)?;

            let mut diff2 = 0.0;
            let mut norm2 = 0.0;
            for i in 0..m {
                diff2 += (self.rhs[i] - psi1[i + 1]).norm_sqr();
                norm2 += self.rhs[i].norm_sqr();
                psi1[i + 1] = self.rhs[i];
            }
            self.fixed_point_iterations += 1;
            if !norm2.is_finite() || !diff2.is_finite() {
                return Err(Error::NonFinite { step: step_index });
            }
            change = if norm2 > 0.0 { (diff2 / norm2).sqrt() } else { 0.0 };
            if linear || (it > 0 && change < self.cfg.fixed_point_tol) {
                return Ok(());
            }
        }
        Err(Error::FixedPointNotConverged {
            step: step_index,
            iterations: max_iters,
            residual: change,
        })
    }
}

/// Advances `psi` by one Crank–Nicolson step from `λₙ` to `λₙ₊₁`.
#[allow(clippy::too_many_arguments)]
pub fn step_forward(
    psi: &WaveFunction,
    lam_n: f64,
    lam_np1: f64,
    pot: &dyn ControlPotential,
    params: &PhysicalParams,
    grid: &SpatialGrid,
    cfg: &NpseStepperConfig,
    dt: f64,
) -> Result<WaveFunction> {
    check_len(grid.len(), psi.len())?;
    cfg.validate()?;
    let v0 = pot.sample(grid, lam_n);
    let v1 = pot.sample(grid, lam_np1);
    let mut out = vec![ZERO; psi.len()];
    Stepper::new(grid, params, *cfg).step(psi.values(), &mut out, &v0, &v1, dt, 0)?;
    Ok(WaveFunction::from_raw(out))
}

/// Propagates through every node of `control`, calling `observe(n, Ψₙ)` for
/// `n = 0..=n_t`. Returns the final state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn propagate_observed(
    psi0: &WaveFunction,
    control: &[f64],
    pot: &dyn ControlPotential,
    params: &PhysicalParams,
    grid: &SpatialGrid,
    dt: f64,
    cfg: &NpseStepperConfig,
    mut observe: impl FnMut(usize, &[Complex64]) -> Result<()>,
) -> Result<(WaveFunction, usize)> {
    check_len(grid.len(), psi0.len())?;
    cfg.validate()?;
    let mut stepper = Stepper::new(grid, params, *cfg);
    let mut cur = psi0.values().to_vec();
    let mut next = vec![ZERO; cur.len()];
    let mut v_cur = pot.sample(grid, control[0]);
    observe(0, &cur)?;
    for n in 0..control.len() - 1 {
        let v_next = if control[n + 1] == control[n] {
            v_cur.clone()
        } else {
            pot.sample(grid, control[n + 1])
        };
        stepper.step(&cur, &mut next, &v_cur, &v_next, dt, n)?;
        std::mem::swap(&mut cur, &mut next);
        v_cur = v_next;
        observe(n + 1, &cur)?;
    }
    Ok((WaveFunction::from_raw(cur), stepper.fixed_point_iterations))
}

/// Recorded snapshots of a forward propagation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<WaveFunction>,
    pub fixed_point_iterations: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &WaveFunction {
        self.states.last().expect("trajectory always records the final state")
    }
}

/// Forward propagation along `control`, recording every `record_every`-th
/// level plus the final one.
#[allow(clippy::too_many_arguments)]
pub fn propagate(
    psi0: &WaveFunction,
    control: &ControlTrajectory,
    pot: &dyn ControlPotential,
    params: &PhysicalParams,
    grid: &SpatialGrid,
    time_grid: &TimeGrid,
    cfg: &NpseStepperConfig,
    record_every: usize,
) -> Result<Trajectory> {
    control.check_grid(time_grid)?;
    ensure(record_every >= 1, || "record_every must be >= 1".into())?;
    let n_t = time_grid.n_steps();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let (_, iters) = propagate_observed(
        psi0,
        control.samples(),
        pot,
        params,
        grid,
        time_grid.dt(),
        cfg,
        |n, psi| {
            if n % record_every == 0 || n == n_t {
                times.push(time_grid.time(n));
                states.push(WaveFunction::from_raw(psi.to_vec()));
            }
            Ok(())
        },
    )?;
    Ok(Trajectory {
        times,
        states,
        fixed_point_iterations: iters,
    })
}

/// Pointwise energy density
/// `Re[−Ψ*∂zzΨ/(2m)] + V|Ψ|² + ω⊥√(1 + 2gρ)|Ψ|²` with `V = V(z, λ)`.
///
/// The imaginary part of the kinetic term is a total derivative and drops out
/// of the integral under Dirichlet conditions, so only the real part is kept.
pub fn hamiltonian_density(
    psi: &WaveFunction,
    pot: &dyn ControlPotential,
    lambda: f64,
    params: &PhysicalParams,
    grid: &SpatialGrid,
) -> Result<Vec<f64>> {
    check_len(grid.len(), psi.len())?;
    let v = pot.sample(grid, lambda);
    Ok(hamiltonian_density_sampled(psi.values(), &v, params, grid))
}

pub(crate) fn hamiltonian_density_sampled(
    psi: &[Complex64],
    v: &[f64],
    params: &PhysicalParams,
    grid: &SpatialGrid,
) -> Vec<f64> {
    let kin = Kinetic::new(grid, params);
    let n = psi.len();
    let mut h = vec![0.0; n];
    for j in 1..n - 1 {
        let rho = psi[j].norm_sqr();
        let k = (psi[j].conj() * kin.apply_at(psi, j)).re;
        h[j] = k + v[j] * rho + interaction_energy_density(rho, params);
    }
    h
}

/// `∫ H(Ψ) dz` at wall displacement `λ`.
pub fn total_energy(
    psi: &WaveFunction,
    pot: &dyn ControlPotential,
    lambda: f64,
    params: &PhysicalParams,
    grid: &SpatialGrid,
) -> Result<f64> {
    let h = hamiltonian_density(psi, pot, lambda, params, grid)?;
    Ok(grid.integrate_unchecked(&h))
}

pub(crate) fn total_energy_sampled(
    psi: &[Complex64],
    v: &[f64],
    params: &PhysicalParams,
    grid: &SpatialGrid,
) -> f64 {
    grid.integrate_unchecked(&hamiltonian_density_sampled(psi, v, params, grid))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundStateConfig {
    pub initial_dtau: f64,
    pub max_dtau: f64,
    /// Relative energy change per iteration required for convergence.
    pub energy_tol: f64,
    /// L² residual of `HΨ − μΨ` required for convergence.
    pub residual_tol: f64,
    pub max_iterations: usize,
    /// Residual below which imaginary time hands over to Newton polishing.
    pub newton_threshold: f64,
}

impl Default for GroundStateConfig {
    fn default() -> Self {
        Self {
            initial_dtau: 1e-3,
            max_dtau: 1e3,
            energy_tol: 1e-12,
            residual_tol: 1e-8,
            max_iterations: 200_000,
            newton_threshold: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundStateResult {
    pub psi0: WaveFunction,
    pub energy: f64,
    pub chem_potential: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Ground state of `V(·, λ)`.
///
/// Backward-Euler imaginary time with the nonlinearity lagged and the step
/// doubled while the energy decreases, followed by Newton iteration on the
/// stationary equation `H(ψ)ψ = μψ`, `‖ψ‖ = 1`.
pub fn ground_state(
    pot: &dyn ControlPotential,
    lambda: f64,
    params: &PhysicalParams,
    grid: &SpatialGrid,
    cfg: &GroundStateConfig,
) -> Result<GroundStateResult> {
    let v = pot.sample(grid, lambda);
    ground_state_sampled(&v, params, grid, cfg)
}

struct RealState<'a> {
    v: &'a [f64],
    params: &'a PhysicalParams,
    kin: Kinetic,
    dz: f64,
}

impl RealState<'_> {
    fn apply_h(&self, psi: &[f64], out: &mut [f64]) {
        let n = psi.len();
        out[0] = 0.0;
        out[n - 1] = 0.0;
        for j in 1..n - 1 {
            let rho = psi[j] * psi[j];
            out[j] = self.kin.diag * psi[j]
                + self.kin.off * (psi[j - 1] + psi[j + 1])
                + (self.v[j] + nonlinear_term(rho, self.params)) * psi[j];
        }
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.dz * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Energy with the kinetic term in summation-by-parts form.
    fn energy(&self, psi: &[f64]) -> f64 {
        let n = psi.len();
        let grad: f64 = (0..n - 1).map(|j| (psi[j + 1] - psi[j]).powi(2)).sum();
        let kinetic = grad / (2.0 * self.params.mass * self.dz);
        let pot: f64 = (1..n - 1)
            .map(|j| {
                let rho = psi[j] * psi[j];
                self.v[j] * rho + interaction_energy_density(rho, self.params)
            })
            .sum();
        kinetic + self.dz * pot
    }

    /// Rayleigh quotient and L² residual of the stationary equation.
    fn residual(&self, psi: &[f64], hpsi: &mut [f64]) -> (f64, f64) {
        self.apply_h(psi, hpsi);
        let mu = self.dot(psi, hpsi) / self.dot(psi, psi);
        let r2: f64 = psi.iter().zip(hpsi.iter()).map(|(p, h)| (h - mu * p).powi(2)).sum();
        (mu, (self.dz * r2).sqrt())
    }

    fn normalize(&self, psi: &mut [f64]) {
        let s = 1.0 / self.dot(psi, psi).sqrt();
        psi.iter_mut().for_each(|p| *p *= s);
    }

    /// One Newton step on `(ψ, μ)`; returns the updated pair.
    fn newton_step(&self, psi: &[f64], mu: f64) -> Result<(Vec<f64>, f64)> {
        let n = psi.len();
        let m = n - 2;
        let mut hpsi = vec![0.0; n];
        self.apply_h(psi, &mut hpsi);
        let mut diag = vec![0.0; m];
        let offs = vec![self.kin.off; m];
        let mut x1 = vec![0.0; m];
        let mut x2 = vec![0.0; m];
        for i in 0..m {
            let j = i + 1;
            let rho = psi[j] * psi[j];
            diag[i] = self.kin.diag
                + self.v[j]
                + nonlinear_term(rho, self.params)
                + 2.0 * nonlinear_term_derivative(rho, self.params) * rho
                - mu;
            x1[i] = -(hpsi[j] - mu * psi[j]);
            x2[i] = psi[j];
        }
        let mut scratch = vec![0.0; m];
        thomas_in_place(&offs, &diag, &offs, &mut x1, &mut scratch)?;
        thomas_in_place(&offs, &diag, &offs, &mut x2, &mut scratch)?;
        let inner = &psi[1..n - 1];
        let c = 0.5 * (self.dot(inner, inner) - 1.0);
        let dmu = (-c - self.dot(inner, &x1)) / self.dot(inner, &x2);
        let mut out = psi.to_vec();
        for i in 0..m {
            out[i + 1] += x1[i] + dmu * x2[i];
        }
        Ok((out, mu + dmu))
    }
}

pub(crate) fn ground_state_sampled(
    v: &[f64],
    params: &PhysicalParams,
    grid: &SpatialGrid,
    cfg: &GroundStateConfig,
) -> Result<GroundStateResult> {
    check_len(grid.len(), v.len())?;
    ensure(v.iter().all(|x| x.is_finite()), || "potential must be finite".into())?;
    let n = grid.len();
    let m = n - 2;
    let st = RealState {
        v,
        params,
        kin: Kinetic::new(grid, params),
        dz: grid.dz(),
    };

    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut psi: Vec<f64> = (0..n)
        .map(|j| {
            if j == 0 || j == n - 1 {
                0.0
            } else {
                1.0 / (1.0 + (v[j] - vmin))
            }
        })
        .collect();
    st.normalize(&mut psi);

    let mut hpsi = vec![0.0; n];
    let mut energy = st.energy(&psi);
    let (mut mu, mut residual) = st.residual(&psi, &mut hpsi);
    let mut dtau = cfg.initial_dtau;
    let mut iterations = 0;
    let offs_base = vec![st.kin.off; m];
    let mut diag = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut newton_failures = 0usize;
    let mut threshold = cfg.newton_threshold;

    while iterations < cfg.max_iterations {
        iterations += 1;
        if residual < threshold {
            // Newton polish; fall back to imaginary time if it does not help
            let (mut cand, _) = st.newton_step(&psi, mu)?;
            st.normalize(&mut cand);
            let (cand_rq, cand_res) = st.residual(&cand, &mut hpsi);
            if cand_res.is_finite() && cand_res < residual {
                let cand_energy = st.energy(&cand);
                let de = (cand_energy - energy).abs() / energy.abs().max(f64::MIN_POSITIVE);
                psi = cand;
                energy = cand_energy;
                mu = cand_rq;
                residual = cand_res;
                if residual < cfg.residual_tol && de < cfg.energy_tol {
                    break;
                }
                continue;
            }
            if residual < cfg.residual_tol {
                // Newton has stagnated at rounding level
                break;
            }
            newton_failures += 1;
            threshold *= 0.1;
            if newton_failures > 20 {
                return Err(Error::GroundStateNotConverged { iterations, residual });
            }
        }

        let a = dtau;
        for i in 0..m {
            let j = i + 1;
            let rho = psi[j] * psi[j];
            diag[i] = 1.0 + a * (st.kin.diag + v[j] + nonlinear_term(rho, params));
            rhs[i] = psi[j];
        }
        let offs: Vec<f64> = offs_base.iter().map(|o| a * o).collect();
        thomas_in_place(&offs, &diag, &offs, &mut rhs, &mut scratch)?;
        let mut cand = vec![0.0; n];
        cand[1..n - 1].copy_from_slice(&rhs);
        st.normalize(&mut cand);
        let cand_energy = st.energy(&cand);
        if !cand_energy.is_finite() {
            return Err(Error::GroundStateNotConverged { iterations, residual });
        }
        if cand_energy <= energy {
            dtau = (2.0 * dtau).min(cfg.max_dtau);
        } else {
            dtau = (0.5 * dtau).max(cfg.initial_dtau);
        }
        psi = cand;
        energy = cand_energy;
        let (rq, res) = st.residual(&psi, &mut hpsi);
        mu = rq;
        residual = res;
    }
    if residual >= cfg.residual_tol {
        return Err(Error::GroundStateNotConverged { iterations, residual });
    }
    // a positive, even representative
    if psi.iter().sum::<f64>() < 0.0 {
        psi.iter_mut().for_each(|p| *p = -*p);
    }
    let psi0 = WaveFunction::from_raw(psi.iter().map(|&p| Complex64::new(p, 0.0)).collect());
    Ok(GroundStateResult {
        psi0,
        energy,
        chem_potential: mu,
        iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{norm_squared, overlap};
    use crate::potential::{BoxPotential, HarmonicPotential};
    use std::f64::consts::PI;

    fn p() -> PhysicalParams {
        PhysicalParams::typical()
    }

    #[test]
    fn nonlinearity_values() {
        assert_eq!(nonlinear_term(0.0, &p()), 0.0);
        assert_eq!(nonlinear_term(0.3, &p().linear()), 0.0);
        // 10·(1.63/√1.42 − 1), evaluated independently
        let expected = 10.0 * (1.63 / 1.42f64.sqrt() - 1.0);
        assert!((nonlinear_term(0.01, &p()) - expected).abs() < 1e-12);
        assert!((expected - 3.6786).abs() < 1e-4);
    }

    #[test]
    fn nonlinearity_derivative_matches_fd() {
        for &rho in &[0.0, 0.003, 0.01, 0.04, 0.2] {
            let h = 1e-7;
            let fd = (nonlinear_term(rho + h, &p()) - nonlinear_term((rho - h).max(0.0), &p()))
                / (rho + h - (rho - h).max(0.0));
            let an = nonlinear_term_derivative(rho, &p());
            assert!((fd - an).abs() < 1e-5 * an.abs(), "rho={rho} fd={fd} an={an}");
        }
    }

    #[test]
    fn quotient_is_the_primitive_difference() {
        let prim = |r: f64| {
            let g = p().coupling();
            p().omega_perp * r * ((1.0 + 2.0 * g * r).sqrt() - 1.0)
        };
        for &(a, b) in &[(0.0, 0.01), (0.02, 0.005), (0.1, 0.3), (0.013, 0.0131)] {
            let naive = (prim(b) - prim(a)) / (b - a);
            let q = nonlinear_quotient(a, b, &p());
            assert!((q - naive).abs() < 1e-9 * naive.abs().max(1.0), "a={a} b={b}");
            assert_eq!(q, nonlinear_quotient(b, a, &p()));
        }
        for &r in &[0.0, 0.004, 0.05] {
            assert!((nonlinear_quotient(r, r, &p()) - nonlinear_term(r, &p())).abs() < 1e-13);
            let half = 0.5 * nonlinear_term_derivative(r, &p());
            assert!((nonlinear_quotient_derivative(r, r, &p()) - half).abs() < 1e-12 * half.max(1.0));
        }
    }

    #[test]
    fn quotient_derivative_matches_fd() {
        for &(a, b) in &[(0.01, 0.02), (0.03, 0.001), (0.2, 0.2)] {
            let h = 1e-7;
            let fd = (nonlinear_quotient(a + h, b, &p()) - nonlinear_quotient(a - h, b, &p())) / (2.0 * h);
            let an = nonlinear_quotient_derivative(a, b, &p());
            assert!((fd - an).abs() < 1e-6 * an.abs(), "fd={fd} an={an}");
        }
    }

    #[test]
    fn sound_speed_values() {
        assert_eq!(speed_of_sound(0.0, &p()), 0.0);
        let c = speed_of_sound(0.01, &p());
        // √(2.1·2.63/(1.368·1.42^1.5))
        let expected = (2.1 * 2.63 / (1.368 * 1.42f64.powf(1.5))).sqrt();
        assert!((c - expected).abs() < 1e-12);
        assert!((c - 1.545).abs() < 1e-3);
        let mut prev = 0.0;
        for k in 1..100 {
            let c = speed_of_sound(k as f64 * 1e-3, &p());
            assert!(c > prev);
            prev = c;
        }
    }

    #[test]
    fn tmin_estimate() {
        assert_eq!(estimate_tmin(100.0, 1.0, 2.0).unwrap(), 50.0);
        let a = estimate_tmin(100.0, 0.5, 1.6).unwrap();
        let b = estimate_tmin(100.0, 0.5, 0.8).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
        assert!(estimate_tmin(100.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn harmonic_ground_state() {
        let omega = 0.5;
        let params = PhysicalParams::new(1.368, 0.0, 0.0, 0.0).unwrap();
        let pot = HarmonicPotential {
            mass: params.mass,
            omega,
        };
        let grid = SpatialGrid::new(24.0, 1024).unwrap();
        let gs = ground_state(&pot, 0.0, &params, &grid, &GroundStateConfig::default()).unwrap();
        assert!((gs.energy - 0.5 * omega).abs() < 1e-4 * 0.5 * omega, "E = {}", gs.energy);
        assert!((norm_squared(&gs.psi0, &grid).unwrap() - 1.0).abs() < 1e-12);
        // Gaussian of width 1/√(mω)
        let s2 = 1.0 / (params.mass * omega);
        let gauss = WaveFunction::from_real(&grid, |z| (-z * z / (2.0 * s2)).exp())
            .normalized(&grid)
            .unwrap();
        let f = overlap(&gauss, &gs.psi0, &grid).unwrap().norm();
        assert!(f > 1.0 - 1e-6);
    }

    #[test]
    fn energy_density_matches_solver_energy() {
        let grid = SpatialGrid::new(120.0, 256).unwrap();
        let pot = BoxPotential::default();
        let gs = ground_state(&pot, 0.0, &p(), &grid, &GroundStateConfig::default()).unwrap();
        let e = total_energy(&gs.psi0, &pot, 0.0, &p(), &grid).unwrap();
        assert!((e - gs.energy).abs() < 1e-8 * gs.energy.abs());
        assert!(gs.residual < 1e-8);
    }

    #[test]
    fn energy_of_zero_field_and_plane_wave() {
        let grid = SpatialGrid::new(20.0, 2001).unwrap();
        let pot = BoxPotential::new(200.0, 1000.0, 3.0).unwrap();
        let h = hamiltonian_density(&WaveFunction::zeros(2001), &pot, 0.0, &p(), &grid).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));

        let k = 1.3;
        let params = PhysicalParams::new(1.368, 0.0, 0.0, 0.0).unwrap();
        let psi = WaveFunction::from_fn(&grid, |z| Complex64::from_polar(1.0, k * z));
        let h = hamiltonian_density(&psi, &pot, 0.0, &params, &grid).unwrap();
        // V ≈ 0 deep inside a wide box; interior nodes only
        let expected = k * k / (2.0 * params.mass);
        assert!((h[1000] - expected).abs() < 1e-4 * expected);
    }

    #[test]
    fn variational_principle() {
        let grid = SpatialGrid::new(120.0, 256).unwrap();
        let pot = BoxPotential::default();
        let gs = ground_state(&pot, 0.0, &p(), &grid, &GroundStateConfig::default()).unwrap();
        let pert = WaveFunction::from_fn(&grid, |z| {
            Complex64::new(0.02 * (z / 7.0).sin(), 0.01 * (z / 11.0).cos())
        });
        let vals: Vec<Complex64> = gs.psi0.values().iter().zip(pert.values()).map(|(a, b)| a + b).collect();
        let other = WaveFunction::new(vals).unwrap().normalized(&grid).unwrap();
        let e = total_energy(&other, &pot, 0.0, &p(), &grid).unwrap();
        assert!(e > gs.energy);
    }

    #[test]
    fn ground_state_is_stationary_with_phase_rotation() {
        let grid = SpatialGrid::new(120.0, 256).unwrap();
        let pot = BoxPotential::default();
        let gs = ground_state(&pot, 0.0, &p(), &grid, &GroundStateConfig::default()).unwrap();
        let dt = 0.01;
        let next = step_forward(&gs.psi0, 0.0, 0.0, &pot, &p(), &grid, &NpseStepperConfig::default(), dt).unwrap();
        for (a, b) in gs.psi0.values().iter().zip(next.values()) {
            assert!((a.norm() - b.norm()).abs() < 1e-10);
        }
        let phase = overlap(&gs.psi0, &next, &grid).unwrap().arg();
        let expected = -2.0 * (0.5 * gs.chem_potential * dt).atan();
        assert!((phase - expected).abs() < 1e-9);
        assert!((phase + gs.chem_potential * dt).abs() < 1e-5);
    }

    #[test]
    fn linear_box_mode_rotates_at_eigenfrequency() {
        // ideal hard box: Dirichlet walls of the grid itself, V = 0
        let params = PhysicalParams::new(1.368, 0.0, 0.0, 0.0).unwrap();
        let w = 40.0;
        let grid = SpatialGrid::new(w, 801).unwrap();
        let flat = BoxPotential::new(1e-9, 1e6, 1.0).unwrap();
        let psi = WaveFunction::from_real(&grid, |z| (PI * (z + 0.5 * w) / w).sin())
            .normalized(&grid)
            .unwrap();
        let tg = TimeGrid::new(50.0, 500).unwrap();
        let ctrl = ControlTrajectory::constant(&tg, 0.0);
        let tr = propagate(&psi, &ctrl, &flat, &params, &grid, &tg, &NpseStepperConfig::default(), 500).unwrap();
        let fin = tr.final_state();
        let e1 = PI * PI / (2.0 * params.mass * w * w);
        let ov = overlap(&psi, fin, &grid).unwrap();
        assert!((ov.norm() - 1.0).abs() < 1e-10);
        let phase = -ov.arg();
        assert!((phase - e1 * 50.0).abs() < 1e-3 * e1 * 50.0, "{phase} vs {}", e1 * 50.0);
    }

    #[test]
    fn norm_conserved_and_final_state_recorded() {
        let grid = SpatialGrid::new(120.0, 128).unwrap();
        let pot = BoxPotential::default();
        let gs = ground_state(&pot, 0.0, &p(), &grid, &GroundStateConfig::default()).unwrap();
        let tg = TimeGrid::new(5.0, 101).unwrap();
        let ctrl = ControlTrajectory::linear(&tg, 0.0, 10.0);
        let tr = propagate(&gs.psi0, &ctrl, &pot, &p(), &grid, &tg, &NpseStepperConfig::default(), 10).unwrap();
        assert_eq!(tr.times.len(), 12);
        assert_eq!(*tr.times.last().unwrap(), 5.0);
        for s in &tr.states {
            assert!((norm_squared(s, &grid).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn minimal_constant_grid_returns_input() {
        let grid = SpatialGrid::new(120.0, 64).unwrap();
        let params = p().linear();
        let psi = WaveFunction::zeros(64);
        let tg = TimeGrid::new(1e-9, 2).unwrap();
        let ctrl = ControlTrajectory::constant(&tg, 0.0);
        let tr = propagate(&psi, &ctrl, &BoxPotential::default(), &params, &grid, &tg, &NpseStepperConfig::default(), 1).unwrap();
        assert_eq!(tr.final_state(), &psi);
    }

    #[test]
    fn fixed_point_failure_is_reported() {
        let grid = SpatialGrid::new(120.0, 64).unwrap();
        let pot = BoxPotential::default();
        let gs = ground_state(&pot, 0.0, &p(), &grid, &GroundStateConfig::default()).unwrap();
        let cfg = NpseStepperConfig {
            fixed_point_tol: 1e-15,
            max_fixed_point_iters: 2,
        };
        let r = step_forward(&gs.psi0, 0.0, 5.0, &pot, &p(), &grid, &cfg, 1.0);
        assert!(matches!(r, Err(Error::FixedPointNotConverged { .. })));
    }
}
