//! Cost functionals, adjoint coefficients and backward adjoint propagation.
//!
//! The backward stepper is the exact transpose of the linearized forward
//! Crank–Nicolson step (in the real inner product `Re∫a*b dz`), written in
//! the variable `p = i·q` for the Lagrange multiplier `q`. In that variable
//! the scheme is a Crank–Nicolson discretization of
//!
//! ```text
//! i ∂t p = (−∂zz/(2m) + V + A(Ψ)) p + B(Ψ) p*
//! ```
//!
//! with `A`, `B` evaluated from the forward states on the two sides of each
//! step, and the terminal conditions below are those of the continuous
//! optimality system. Because the discrete adjoint is exact, the resulting
//! gradient is the gradient of the discrete cost.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    nonlinear_quotient, nonlinear_quotient_derivative, total_energy, total_energy_sampled, Kinetic,
};
use crate::error::{ensure, Error, Result};
use crate::grid::{check_len, overlap, PhysicalParams, SpatialGrid, TimeGrid, WaveFunction};
use crate::linalg::{block2_thomas_in_place, Mat2};
use crate::potential::{ControlPotential, ControlTrajectory};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    State,
    Energy,
}

impl std::fmt::Display for CostKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostKind::State => f.write_str("state"),
            CostKind::Energy => f.write_str("energy"),
        }
    }
}

/// Which terminal cost to use, the regularization weight, and the target.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub kind: CostKind,
    pub gamma_reg: f64,
    /// Ground state of the final potential.
    pub psi_des: WaveFunction,
    /// Energy of `psi_des` in the final potential; required for
    /// [`CostKind::Energy`].
    pub j_e_des: Option<f64>,
}

impl CostSpec {
    pub fn state(psi_des: WaveFunction, gamma_reg: f64) -> Result<Self> {
        ensure(gamma_reg >= 0.0, || format!("gamma_reg must be >= 0, got {gamma_reg}"))?;
        Ok(Self {
            kind: CostKind::State,
            gamma_reg,
            psi_des,
            j_e_des: None,
        })
    }

    pub fn energy(psi_des: WaveFunction, j_e_des: f64, gamma_reg: f64) -> Result<Self> {
        ensure(gamma_reg >= 0.0, || format!("gamma_reg must be >= 0, got {gamma_reg}"))?;
        ensure(j_e_des.is_finite(), || "desired energy must be finite".into())?;
        Ok(Self {
            kind: CostKind::Energy,
            gamma_reg,
            psi_des,
            j_e_des: Some(j_e_des),
        })
    }
}

/// Adjoint state `p(z, t)` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointField {
    values: Vec<Complex64>,
}

impl AdjointField {
    pub fn new(mut values: Vec<Complex64>) -> Result<Self> {
        ensure(values.len() >= 3, || "adjoint field too short".into())?;
        ensure(values.iter().all(|v| v.re.is_finite() && v.im.is_finite()), || {
            "adjoint field must be finite".into()
        })?;
        let n = values.len();
        values[0] = ZERO;
        values[n - 1] = ZERO;
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![ZERO; n],
        }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// `∫|p|² dz`.
    pub fn norm_squared(&self, grid: &SpatialGrid) -> f64 {
        let rho: Vec<f64> = self.values.iter().map(|v| v.norm_sqr()).collect();
        grid.integrate_unchecked(&rho)
    }
}

/// `(γ/2)∫(∂tλ)² dt` on the time grid.
///
/// Uses the one-sided difference on every interval (midpoint quadrature of
/// the squared slope), which is exact for piecewise-linear `λ` and whose
/// gradient is the three-point `−γ·dt·λ̈`.
pub fn regularization_term(control: &ControlTrajectory, gamma_reg: f64, time_grid: &TimeGrid) -> Result<f64> {
    control.check_grid(time_grid)?;
    let dt = time_grid.dt();
    let s: f64 = control
        .samples()
        .windows(2)
        .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
        .sum();
    Ok(0.5 * gamma_reg * s / dt)
}

/// Discrete second derivative `λ̈` at every node; zero at the endpoints.
pub(crate) fn second_difference(samples: &[f64], dt: f64) -> Vec<f64> {
    let n = samples.len();
    let mut out = vec![0.0; n];
    for k in 1..n - 1 {
        out[k] = (samples[k + 1] - 2.0 * samples[k] + samples[k - 1]) / (dt * dt);
    }
    out
}

/// `½(1 − |⟨Ψ_des, Ψ⟩|²)`.
pub fn state_error(psi: &WaveFunction, psi_des: &WaveFunction, grid: &SpatialGrid) -> Result<f64> {
    let c = overlap(psi_des, psi, grid)?;
    Ok(0.5 * (1.0 - c.norm_sqr()))
}

/// State cost `½(1 − |⟨Ψ_des, Ψ(T)⟩|²) + (γ/2)∫λ̇² dt`.
pub fn cost_state(
    psi_t: &WaveFunction,
    spec: &CostSpec,
    control: &ControlTrajectory,
    grid: &SpatialGrid,
    time_grid: &TimeGrid,
) -> Result<f64> {
    Ok(state_error(psi_t, &spec.psi_des, grid)? + regularization_term(control, spec.gamma_reg, time_grid)?)
}

/// Energy cost `∫H(Ψ(T))dz − J_e,des + (γ/2)∫λ̇² dt`, `H` taken at `λ_T`.
#[allow(clippy::too_many_arguments)]
pub fn cost_energy(
    psi_t: &WaveFunction,
    spec: &CostSpec,
    control: &ControlTrajectory,
    pot: &dyn ControlPotential,
    lam_t: f64,
    params: &PhysicalParams,
    grid: &SpatialGrid,
    time_grid: &TimeGrid,
) -> Result<f64> {
    let des = spec.j_e_des.ok_or(Error::MissingDesiredEnergy)?;
    let e = total_energy(psi_t, pot, lam_t, params, grid)?;
    Ok(e - des + regularization_term(control, spec.gamma_reg, time_grid)?)
}

pub(crate) fn terminal_cost_sampled(
    psi_t: &WaveFunction,
    spec: &CostSpec,
    v_t: &[f64],
    params: &PhysicalParams,
    grid: &SpatialGrid,
) -> Result<f64> {
    match spec.kind {
        CostKind::State => state_error(psi_t, &spec.psi_des, grid),
        CostKind::Energy => {
            let des = spec.j_e_des.ok_or(Error::MissingDesiredEnergy)?;
            Ok(total_energy_sampled(psi_t.values(), v_t, params, grid) - des)
        }
    }
}

/// `A(Ψ) = ω⊥((1 + 6gρ)/√(1 + 2gρ) − 1 − (1 + 3gρ)gρ/(1 + 2gρ)^{3/2})`.
pub fn coeff_a(rho: f64, params: &PhysicalParams) -> f64 {
    let g = params.coupling();
    let q = 1.0 + 2.0 * g * rho;
    let s = q.sqrt();
    params.omega_perp * ((1.0 + 6.0 * g * rho) / s - 1.0 - (1.0 + 3.0 * g * rho) * g * rho / (q * s))
}

/// `B(Ψ) = ω⊥(3gΨ²/√(1 + 2gρ) − (1 + 3gρ)gΨ²/(1 + 2gρ)^{3/2})`.
pub fn coeff_b(psi: Complex64, params: &PhysicalParams) -> Complex64 {
    let g = params.coupling();
    let rho = psi.norm_sqr();
    let q = 1.0 + 2.0 * g * rho;
    let s = q.sqrt();
    let psi2 = psi * psi;
    psi2 * (params.omega_perp * (3.0 * g / s - (1.0 + 3.0 * g * rho) * g / (q * s)))
}

/// Coefficients of the linearized nonlinearity of one time step with respect
/// to the state on one side.
///
/// The step evaluates `Q(ρ_side, ρ_other)·Ψm` with `Ψm` the midpoint state;
/// its derivative in the direction `ξ` of `side` is `½(α ξ + β ξ*)`. When
/// both sides coincide, `α = A(Ψ)` and `β = B(Ψ)`.
#[inline]
pub fn step_linearization(
    side: Complex64,
    rho_other: f64,
    psi_mid: Complex64,
    params: &PhysicalParams,
) -> (Complex64, Complex64) {
    let rho = side.norm_sqr();
    let q = nonlinear_quotient(rho, rho_other, params);
    let dq = 2.0 * nonlinear_quotient_derivative(rho, rho_other, params);
    (q + psi_mid * side.conj() * dq, psi_mid * side * dq)
}

/// Terminal adjoint for the state cost: `p(T) = i·Ψ_des·⟨Ψ_des, Ψ(T)⟩`.
pub fn terminal_adjoint_state(psi_t: &WaveFunction, psi_des: &WaveFunction, grid: &SpatialGrid) -> Result<AdjointField> {
    let c = overlap(psi_des, psi_t, grid)?;
    let f = I * c;
    AdjointField::new(psi_des.values().iter().map(|v| v * f).collect())
}

/// Terminal adjoint for the energy cost:
/// `p(T) = −2i[−∂zz/(2m) + V(z, λT) + ω⊥((1 + 3gρ)/√(1 + 2gρ) + 1)]Ψ(T)`.
///
/// Any real constant inside the bracket adds a multiple of `Ψ(T)` that has
/// no effect on the gradient, because the forward scheme conserves the norm
/// exactly.
pub fn terminal_adjoint_energy(
    psi_t: &WaveFunction,
    pot: &dyn ControlPotential,
    lam_t: f64,
    params: &PhysicalParams,
    grid: &SpatialGrid,
) -> Result<AdjointField> {
    check_len(grid.len(), psi_t.len())?;
    let v = pot.sample(grid, lam_t);
    Ok(terminal_adjoint_energy_sampled(psi_t.values(), &v, params, grid))
}

pub(crate) fn terminal_adjoint_energy_sampled(
    psi: &[Complex64],
    v: &[f64],
    params: &PhysicalParams,
    grid: &SpatialGrid,
) -> AdjointField {
    let kin = Kinetic::new(grid, params);
    let g = params.coupling();
    let n = psi.len();
    let mut out = vec![ZERO; n];
    for j in 1..n - 1 {
        let rho = psi[j].norm_sqr();
        let bracket = params.omega_perp * ((1.0 + 3.0 * g * rho) / (1.0 + 2.0 * g * rho).sqrt() + 1.0);
        let h = kin.apply_at(psi, j) + psi[j] * (v[j] + bracket);
        out[j] = Complex64::new(0.0, -2.0) * h;
    }
    AdjointField { values: out }
}

/// Result of one backward adjoint step from `t_{n+1}` to `t_n`.
#[derive(Debug, Clone)]
pub struct AdjointStep {
    /// Adjoint at the step midpoint; enters the gradient.
    pub half: AdjointField,
    /// Adjoint at `t_n`; input of the next backward step.
    pub node: AdjointField,
}

/// Reusable backward stepper.
pub(crate) struct AdjointStepper<'a> {
    params: &'a PhysicalParams,
    kin: Kinetic,
    lower: Vec<Mat2>,
    diag: Vec<Mat2>,
    upper: Vec<Mat2>,
    rhs: Vec<[f64; 2]>,
    work: Vec<Mat2>,
    alpha0: Vec<Complex64>,
    beta0: Vec<Complex64>,
}

impl<'a> AdjointStepper<'a> {
    pub fn new(grid: &SpatialGrid, params: &'a PhysicalParams) -> Self {
        let n = grid.len();
        let m = n - 2;
        Self {
            params,
            kin: Kinetic::new(grid, params),
            lower: vec![[[0.0; 2]; 2]; m],
            diag: vec![[[0.0; 2]; 2]; m],
            upper: vec![[[0.0; 2]; 2]; m],
            rhs: vec![[0.0; 2]; m],
            work: vec![[[0.0; 2]; 2]; m],
            alpha0: vec![ZERO; n],
            beta0: vec![ZERO; n],
        }
    }

    /// Given `p_{n+1}`, the forward states `Ψₙ`, `Ψₙ₊₁` and the step's mean
    /// potential, writes the midpoint adjoint into `half` and `pₙ` into
    /// `node`.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        p_next: &[Complex64],
        psi_n: &[Complex64],
        psi_np1: &[Complex64],
        v_n: &[f64],
        v_np1: &[f64],
        dt: f64,
        half: &mut [Complex64],
        node: &mut [Complex64],
    ) -> Result<()> {
        let n = psi_n.len();
        let m = n - 2;
        let c = 0.5 * dt;
        let ko = self.kin.off;
        for i in 0..m {
            let j = i + 1;
            let psi_mid = 0.5 * (psi_n[j] + psi_np1[j]);
            let (a1, b1) = step_linearization(psi_np1[j], psi_n[j].norm_sqr(), psi_mid, self.params);
            let (a0, b0) = step_linearization(psi_n[j], psi_np1[j].norm_sqr(), psi_mid, self.params);
            self.alpha0[j] = a0.conj();
            self.beta0[j] = b0;
            let a1 = a1.conj();
            let h = self.kin.diag + 0.5 * (v_n[j] + v_np1[j]);
            // (I − i·c·M) with M a = (K + V̄ + ᾱ) a + β a*, split into (Re, Im)
            self.diag[i] = [
                [1.0 + c * (a1.im + b1.im), c * (h + a1.re - b1.re)],
                [-c * (h + a1.re + b1.re), 1.0 - c * (b1.im - a1.im)],
            ];
            self.lower[i] = [[0.0, c * ko], [-c * ko, 0.0]];
            self.upper[i] = self.lower[i];
            self.rhs[i] = [p_next[j].re, p_next[j].im];
        }
        block2_thomas_in_place(&self.lower, &self.diag, &self.upper, &mut self.rhs, &mut self.work)?;

        half[0] = ZERO;
        half[n - 1] = ZERO;
        for i in 0..m {
            half[i + 1] = Complex64::new(self.rhs[i][0], self.rhs[i][1]);
        }
        node[0] = ZERO;
        node[n - 1] = ZERO;
        for j in 1..n - 1 {
            let a = half[j];
            let h = self.kin.diag + 0.5 * (v_n[j] + v_np1[j]);
            let s = a * h + (half[j - 1] + half[j + 1]) * ko + self.alpha0[j] * a + self.beta0[j] * a.conj();
            node[j] = a + I * c * s;
        }
        if half.iter().chain(node.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite { step: 0 });
        }
        Ok(())
    }
}

/// One backward adjoint step; see the module documentation.
#[allow(clippy::too_many_arguments)]
pub fn step_adjoint_backward(
    p_next: &AdjointField,
    psi_n: &WaveFunction,
    psi_np1: &WaveFunction,
    lam_n: f64,
    lam_np1: f64,
    pot: &dyn ControlPotential,
    params: &PhysicalParams,
    grid: &SpatialGrid,
    dt: f64,
) -> Result<AdjointStep> {
    let n = grid.len();
    check_len(n, p_next.len())?;
    check_len(n, psi_n.len())?;
    check_len(n, psi_np1.len())?;
    let v_n = pot.sample(grid, lam_n);
    let v_np1 = pot.sample(grid, lam_np1);
    let mut half = vec![ZERO; n];
    let mut node = vec![ZERO; n];
    AdjointStepper::new(grid, params).step(
        p_next.values(),
        psi_n.values(),
        psi_np1.values(),
        &v_n,
        &v_np1,
        dt,
        &mut half,
        &mut node,
    )?;
    Ok(AdjointStep {
        half: AdjointField { values: half },
        node: AdjointField { values: node },
    })
}

/// Backward sweep over a full forward trajectory (`states[n] = Ψₙ` for
/// every time level). Returns the midpoint adjoints of all steps.
pub fn backward_sweep(
    states: &[WaveFunction],
    control: &[f64],
    pot: &dyn ControlPotential,
    params: &PhysicalParams,
    grid: &SpatialGrid,
    dt: f64,
    p_t: &AdjointField,
) -> Result<Vec<AdjointField>> {
    ensure(states.len() >= 2, || "backward sweep needs at least one step".into())?;
    check_len(states.len(), control.len())?;
    let nz = grid.len();
    check_len(nz, p_t.len())?;
    for s in states {
        check_len(nz, s.len())?;
    }
    let n_t = states.len() - 1;
    let mut stepper = AdjointStepper::new(grid, params);
    let mut halves = Vec::with_capacity(n_t);
    let mut p = p_t.values().to_vec();
    let mut node = vec![ZERO; nz];
    let mut v_next = pot.sample(grid, control[n_t]);
    for n in (0..n_t).rev() {
        let v_n = if control[n] == control[n + 1] {
            v_next.clone()
        } else {
            pot.sample(grid, control[n])
        };
        let mut half = vec![ZERO; nz];
        stepper
            .step(&p, states[n].values(), states[n + 1].values(), &v_n, &v_next, dt, &mut half, &mut node)
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFinite { step: n },
                other => other,
            })?;
        halves.push(AdjointField { values: half });
        std::mem::swap(&mut p, &mut node);
        v_next = v_n;
    }
    halves.reverse();
    Ok(halves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ground_state, nonlinear_term, step_forward, GroundStateConfig, NpseStepperConfig};
    use crate::grid::norm_squared;
    use crate::potential::BoxPotential;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn params() -> PhysicalParams {
        PhysicalParams::typical()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn regularization_values() {
        let tg = TimeGrid::new(45.0, 450).unwrap();
        assert_eq!(regularization_term(&ControlTrajectory::constant(&tg, 3.0), 1e-5, &tg).unwrap(), 0.0);
        let lin = ControlTrajectory::linear(&tg, 0.0, 25.0);
        let r = regularization_term(&lin, 1e-5, &tg).unwrap();
        let expected = 0.5e-5 * 25.0 * 25.0 / 45.0;
        assert!((r - expected).abs() < 1e-12 * expected);
        let r2 = regularization_term(&lin, 2e-5, &tg).unwrap();
        assert!((r2 - 2.0 * r).abs() < 1e-15);
    }

    #[test]
    fn a_and_b_vanish_in_trivial_limits() {
        assert_eq!(coeff_a(0.0, &params()), 0.0);
        assert_eq!(coeff_a(0.3, &params().linear()), 0.0);
        assert_eq!(coeff_b(c(0.0, 0.0), &params()), c(0.0, 0.0));
        assert_eq!(coeff_b(c(0.1, 0.2), &params().linear()), c(0.0, 0.0));
    }

    #[test]
    fn b_is_phase_covariant() {
        let psi = c(0.07, -0.03);
        for k in 0..8 {
            let th = 0.7 * k as f64;
            let rot = Complex64::from_polar(1.0, th);
            let lhs = coeff_b(psi * rot, &params());
            let rhs = coeff_b(psi, &params()) * Complex64::from_polar(1.0, 2.0 * th);
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    /// Finite-difference oracle for the linearization of `N(|Ψ|²)Ψ`.
    fn linearization_fd(psi: Complex64, xi: Complex64, p: &PhysicalParams) -> Complex64 {
        let f = |e: f64| {
            let q = psi + xi * e;
            q * nonlinear_term(q.norm_sqr(), p)
        };
        let h = 1e-6;
        (f(h) - f(-h)) / (2.0 * h)
    }

    #[test]
    fn a_and_b_linearize_the_nonlinearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = params();
        for _ in 0..100 {
            let rho: f64 = rng.random_range(0.0..0.05);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            let psi = Complex64::from_polar(rho.sqrt(), phase);
            let xi = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let fd = linearization_fd(psi, xi, &p);
            let an = coeff_a(psi.norm_sqr(), &p) * xi + coeff_b(psi, &p) * xi.conj();
            assert!((fd - an).norm() <= 1e-6 * fd.norm().max(1e-12), "fd={fd} an={an}");
        }
    }

    #[test]
    fn step_linearization_reduces_to_a_and_b() {
        let p = params();
        let psi = c(0.08, 0.05);
        let (al, be) = step_linearization(psi, psi.norm_sqr(), psi, &p);
        assert!((al - coeff_a(psi.norm_sqr(), &p)).norm() < 1e-14);
        assert!((be - coeff_b(psi, &p)).norm() < 1e-14);
    }

    #[test]
    fn step_linearization_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = params();
        let rnd = |rng: &mut ChaCha8Rng| c(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
        for _ in 0..100 {
            let (side, other, xi) = (rnd(&mut rng), rnd(&mut rng), rnd(&mut rng));
            let f = |e: f64| {
                let s = side + xi * e;
                0.5 * (s + other) * nonlinear_quotient(s.norm_sqr(), other.norm_sqr(), &p)
            };
            let h = 1e-6;
            let fd = (f(h) - f(-h)) / (2.0 * h);
            let (al, be) = step_linearization(side, other.norm_sqr(), 0.5 * (side + other), &p);
            let an = 0.5 * (al * xi + be * xi.conj());
            assert!((fd - an).norm() <= 1e-6 * fd.norm().max(1e-9), "fd={fd} an={an}");
        }
    }

    fn small_setup() -> (SpatialGrid, BoxPotential, WaveFunction) {
        let grid = SpatialGrid::new(120.0, 128).unwrap();
        let pot = BoxPotential::default();
        let gs = ground_state(&pot, 0.0, &params(), &grid, &GroundStateConfig::default()).unwrap();
        (grid, pot, gs.psi0)
    }

    #[test]
    fn state_cost_examples() {
        let (grid, _, psi) = small_setup();
        let tg = TimeGrid::new(10.0, 10).unwrap();
        let ctrl = ControlTrajectory::constant(&tg, 0.0);
        let spec = CostSpec::state(psi.clone(), 1e-5).unwrap();
        assert!(cost_state(&psi, &spec, &ctrl, &grid, &tg).unwrap().abs() < 1e-14);
        for k in 0..6 {
            let rot = psi.scaled(Complex64::from_polar(1.0, k as f64));
            assert!(cost_state(&rot, &spec, &ctrl, &grid, &tg).unwrap().abs() < 1e-14);
        }
        // odd mode is orthogonal to the even ground state
        let odd = WaveFunction::from_real(&grid, |z| z * (-z * z / 200.0).exp())
            .normalized(&grid)
            .unwrap();
        assert!((cost_state(&odd, &spec, &ctrl, &grid, &tg).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn energy_cost_examples() {
        let (grid, pot, psi) = small_setup();
        let tg = TimeGrid::new(10.0, 10).unwrap();
        let ctrl = ControlTrajectory::constant(&tg, 0.0);
        let e = total_energy(&psi, &pot, 0.0, &params(), &grid).unwrap();
        let spec = CostSpec::energy(psi.clone(), e, 1e-5).unwrap();
        let j = cost_energy(&psi, &spec, &ctrl, &pot, 0.0, &params(), &grid, &tg).unwrap();
        assert!(j.abs() < 1e-14);
        let exc: Vec<Complex64> = psi
            .values()
            .iter()
            .zip(grid.coords())
            .map(|(v, z)| v * (1.0 + 0.1 * (z / 9.0).sin()))
            .collect();
        let exc = WaveFunction::new(exc).unwrap().normalized(&grid).unwrap();
        assert!(cost_energy(&exc, &spec, &ctrl, &pot, 0.0, &params(), &grid, &tg).unwrap() > 0.0);

        let missing = CostSpec::state(psi.clone(), 0.0).unwrap();
        assert!(matches!(
            cost_energy(&psi, &missing, &ctrl, &pot, 0.0, &params(), &grid, &tg),
            Err(Error::MissingDesiredEnergy)
        ));
    }

    #[test]
    fn terminal_state_adjoint() {
        let (grid, _, psi) = small_setup();
        let p = terminal_adjoint_state(&psi, &psi, &grid).unwrap();
        for (a, b) in p.values().iter().zip(psi.values()) {
            assert!((a - I * b).norm() < 1e-14);
        }
        let odd = WaveFunction::from_real(&grid, |z| z * (-z * z / 200.0).exp());
        let p = terminal_adjoint_state(&odd, &psi, &grid).unwrap();
        assert!(p.values().iter().all(|v| v.norm() < 1e-14));
        let p2 = terminal_adjoint_state(&psi.scaled(c(2.5, 0.0)), &psi, &grid).unwrap();
        let p1 = terminal_adjoint_state(&psi, &psi, &grid).unwrap();
        for (a, b) in p2.values().iter().zip(p1.values()) {
            assert!((a - b * 2.5).norm() < 1e-13);
        }
    }

    #[test]
    fn terminal_energy_adjoint_linear_box_mode() {
        let grid = SpatialGrid::new(120.0, 241).unwrap();
        let p = params().linear();
        let pot = BoxPotential::new(1e-12, 1e4, 1.0).unwrap();
        assert!(terminal_adjoint_energy(&WaveFunction::zeros(241), &pot, 0.0, &p, &grid)
            .unwrap()
            .values()
            .iter()
            .all(|v| *v == ZERO));
        // discrete box mode: eigenvector of the three-point Laplacian
        let l = 120.0;
        let mode = WaveFunction::from_real(&grid, |z| (PI * (z + 0.5 * l) / l).sin());
        let dz = grid.dz();
        let e1 = (1.0 - (PI * dz / l).cos()) / (p.mass * dz * dz);
        let pt = terminal_adjoint_energy(&mode, &pot, 0.0, &p, &grid).unwrap();
        let f = Complex64::new(0.0, -2.0) * (e1 + 2.0 * p.omega_perp);
        for (a, b) in pt.values().iter().zip(mode.values()) {
            assert!((a - b * f).norm() < 1e-10);
        }
    }

    #[test]
    fn backward_step_linear_preserves_norm_and_is_linear() {
        let grid = SpatialGrid::new(120.0, 128).unwrap();
        let p = params().linear();
        let pot = BoxPotential::default();
        let psi = WaveFunction::from_real(&grid, |z| (-z * z / 300.0).exp());
        let p_t = AdjointField::new(
            grid.coords()
                .iter()
                .map(|z| Complex64::from_polar((-z * z / 100.0).exp(), 0.3 * z))
                .collect(),
        )
        .unwrap();
        let mut cur = p_t.clone();
        let n0 = cur.norm_squared(&grid);
        for _ in 0..1000 {
            cur = step_adjoint_backward(&cur, &psi, &psi, 0.0, 0.0, &pot, &p, &grid, 0.01).unwrap().node;
        }
        assert!((cur.norm_squared(&grid) - n0).abs() < 1e-8 * n0);

        // real-linearity with the nonlinear coefficients switched on
        let pp = params();
        let psi = WaveFunction::from_real(&grid, |z| 0.1 * (-z * z / 300.0).exp());
        let psi2 = step_forward(&psi, 0.0, 1.0, &pot, &pp, &grid, &NpseStepperConfig::default(), 0.01).unwrap();
        let s1 = step_adjoint_backward(&p_t, &psi, &psi2, 0.0, 1.0, &pot, &pp, &grid, 0.01).unwrap();
        let s2 = step_adjoint_backward(&p_t.scaled(c(-1.7, 0.0)), &psi, &psi2, 0.0, 1.0, &pot, &pp, &grid, 0.01).unwrap();
        for (a, b) in s1.node.values().iter().zip(s2.node.values()) {
            assert!((a * -1.7 - b).norm() < 1e-12);
        }
        assert!(norm_squared(&psi2, &grid).unwrap() > 0.0);
    }
}
