//! Moving-wall box potential and the control parametrizations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grid::{SpatialGrid, TimeGrid};

/// A longitudinal potential `V(z, λ)` steered by one scalar control `λ`.
pub trait ControlPotential: Send + Sync {
    fn value(&self, z: f64, lambda: f64) -> f64;

    /// `∂V/∂λ` at `(z, λ)`.
    fn dlambda(&self, z: f64, lambda: f64) -> f64;

    fn sample(&self, grid: &SpatialGrid, lambda: f64) -> Vec<f64> {
        grid.coords().iter().map(|&z| self.value(z, lambda)).collect()
    }

    fn sample_dlambda(&self, grid: &SpatialGrid, lambda: f64) -> Vec<f64> {
        grid.coords().iter().map(|&z| self.dlambda(z, lambda)).collect()
    }
}

/// Optical box with error-function walls displaced symmetrically by `λ`.
///
/// `V(z, λ) = V_max − V_max/2·erf((z + w0/2 − λ)/σ) + V_max/2·erf((z − w0/2 + λ)/σ)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPotential {
    pub v_max: f64,
    pub w0: f64,
    pub sigma: f64,
}

impl BoxPotential {
    pub const DEFAULT_V_MAX: f64 = 200.0;
    pub const DEFAULT_W0: f64 = 100.0;
    pub const DEFAULT_SIGMA: f64 = 3.0;

    pub fn new(v_max: f64, w0: f64, sigma: f64) -> Result<Self> {
        ensure(v_max.is_finite() && v_max > 0.0, || format!("v_max must be > 0, got {v_max}"))?;
        ensure(w0.is_finite() && w0 > 0.0, || format!("w0 must be > 0, got {w0}"))?;
        ensure(sigma.is_finite() && sigma > 0.0 && sigma < w0, || {
            format!("sigma must lie in (0, w0), got {sigma}")
        })?;
        Ok(Self { v_max, w0, sigma })
    }

    #[inline]
    fn wall_args(&self, z: f64, lambda: f64) -> (f64, f64) {
        let half = 0.5 * self.w0 - lambda;
        ((z + half) / self.sigma, (z - half) / self.sigma)
    }
}

impl Default for BoxPotential {
    fn default() -> Self {
        Self {
            v_max: Self::DEFAULT_V_MAX,
            w0: Self::DEFAULT_W0,
            sigma: Self::DEFAULT_SIGMA,
        }
    }
}

impl ControlPotential for BoxPotential {
    fn value(&self, z: f64, lambda: f64) -> f64 {
        let (u1, u2) = self.wall_args(z, lambda);
        let h = 0.5 * self.v_max;
        self.v_max - h * libm::erf(u1) + h * libm::erf(u2)
    }

    fn dlambda(&self, z: f64, lambda: f64) -> f64 {
        let (u1, u2) = self.wall_args(z, lambda);
        self.v_max / (self.sigma * PI.sqrt()) * ((-u1 * u1).exp() + (-u2 * u2).exp())
    }
}

/// Harmonic trap `m ω² (z − λ)² / 2` whose center is the control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicPotential {
    pub mass: f64,
    pub omega: f64,
}

impl ControlPotential for HarmonicPotential {
    fn value(&self, z: f64, lambda: f64) -> f64 {
        0.5 * self.mass * self.omega * self.omega * (z - lambda) * (z - lambda)
    }

    fn dlambda(&self, z: f64, lambda: f64) -> f64 {
        -self.mass * self.omega * self.omega * (z - lambda)
    }
}

/// Wall displacement `λ(t)` sampled on the nodes of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTrajectory {
    samples: Vec<f64>,
}

impl ControlTrajectory {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        ensure(samples.len() >= 3, || "a control trajectory needs at least 3 samples".into())?;
        ensure(samples.iter().all(|v| v.is_finite()), || {
            "control samples must be finite".into()
        })?;
        Ok(Self { samples })
    }

    pub fn constant(time_grid: &TimeGrid, lambda: f64) -> Self {
        Self {
            samples: vec![lambda; time_grid.n_nodes()],
        }
    }

    pub fn linear(time_grid: &TimeGrid, lambda_0: f64, lambda_t: f64) -> Self {
        let samples = (0..time_grid.n_nodes())
            .map(|n| ramp_value(time_grid.time(n), time_grid.horizon(), lambda_0, lambda_t))
            .collect();
        Self { samples }
    }

    #[inline]
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn lambda_0(&self) -> f64 {
        self.samples[0]
    }

    pub fn lambda_t(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }

    /// Interior samples, the free variables of the optimization.
    pub fn interior(&self) -> &[f64] {
        &self.samples[1..self.samples.len() - 1]
    }

    /// Same endpoints, new interior.
    pub fn with_interior(&self, interior: &[f64]) -> Result<Self> {
        crate::grid::check_len(self.samples.len() - 2, interior.len())?;
        let mut samples = self.samples.clone();
        samples[1..interior.len() + 1].copy_from_slice(interior);
        Self::new(samples)
    }

    pub fn check_grid(&self, time_grid: &TimeGrid) -> Result<()> {
        crate::grid::check_len(time_grid.n_nodes(), self.samples.len())
    }
}

fn ramp_value(t: f64, horizon: f64, lambda_0: f64, lambda_t: f64) -> f64 {
    if t >= horizon {
        lambda_t
    } else {
        lambda_0 + (t / horizon) * (lambda_t - lambda_0)
    }
}

/// Linear ramp from `λ0` to `λT` over `[0, T]`, held at `λT` afterwards.
pub fn linear_ramp(t: f64, horizon: f64, lambda_0: f64, lambda_t: f64) -> Result<f64> {
    ensure(horizon > 0.0, || format!("horizon must be > 0, got {horizon}"))?;
    ensure(t >= 0.0, || format!("time must be >= 0, got {t}"))?;
    Ok(ramp_value(t, horizon, lambda_0, lambda_t))
}

/// Coefficients `a_k` of the harmonic modes `sin(kπt/T)` added to the ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfaCoefficients(Vec<f64>);

impl BfaCoefficients {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        ensure(!a.is_empty(), || "basis order must be >= 1".into())?;
        ensure(a.iter().all(|v| v.is_finite()), || "coefficients must be finite".into())?;
        Ok(Self(a))
    }

    pub fn zeros(order: usize) -> Result<Self> {
        Self::new(vec![0.0; order])
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Copy padded with zeros (or truncated) to `order` modes.
    pub fn resized(&self, order: usize) -> Result<Self> {
        let mut a = self.0.clone();
        a.resize(order, 0.0);
        Self::new(a)
    }
}

/// Expands basis coefficients on the time grid; the endpoints are pinned.
pub fn bfa_trajectory(
    coeffs: &BfaCoefficients,
    time_grid: &TimeGrid,
    lambda_0: f64,
    lambda_t: f64,
) -> ControlTrajectory {
    let n_t = time_grid.n_steps();
    let mut samples: Vec<f64> = (0..=n_t)
        .map(|n| {
            let base = ramp_value(time_grid.time(n), time_grid.horizon(), lambda_0, lambda_t);
            let s = n as f64 / n_t as f64;
            let modes: f64 = coeffs
                .as_slice()
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * PI * s).sin())
                .sum();
            base + modes
        })
        .collect();
    samples[0] = lambda_0;
    samples[n_t] = lambda_t;
    ControlTrajectory { samples }
}

/// Final-to-initial box width ratio `(w0 − 2λT)/w0`.
pub fn compression_ratio(w0: f64, lambda_t: f64) -> Result<f64> {
    ensure(w0 > 0.0, || format!("w0 must be > 0, got {w0}"))?;
    ensure((0.0..0.5 * w0).contains(&lambda_t), || {
        format!("lambda_T must lie in [0, w0/2), got {lambda_t} (walls would cross)")
    })?;
    Ok((w0 - 2.0 * lambda_t) / w0)
}

/// Inverse of [`compression_ratio`].
pub fn displacement_for_ratio(w0: f64, r_comp: f64) -> Result<f64> {
    ensure(r_comp > 0.0 && r_comp <= 1.0, || {
        format!("r_comp must lie in (0, 1], got {r_comp}")
    })?;
    Ok(0.5 * w0 * (1.0 - r_comp))
}
