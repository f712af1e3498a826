//! Physical parameters, discretization grids, wave functions and the discrete
//! inner products shared by every other module.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Smallest admissible number of spatial nodes.
pub const MIN_SPATIAL_POINTS: usize = 16;

/// Normalized physical constants of the npSE (ħ = 1, ms, µm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub mass: f64,
    pub omega_perp: f64,
    pub a_s: f64,
    pub n_atoms: f64,
}

impl PhysicalParams {
    pub fn new(mass: f64, omega_perp: f64, a_s: f64, n_atoms: f64) -> Result<Self> {
        let p = Self {
            mass,
            omega_perp,
            a_s,
            n_atoms,
        };
        p.validate()?;
        Ok(p)
    }

    /// Typical experimental values for ⁸⁷Rb on an atom chip.
    pub fn typical() -> Self {
        Self {
            mass: 1.368,
            omega_perp: 10.0,
            a_s: 4.2e-3,
            n_atoms: 5.0e3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.mass, self.omega_perp, self.a_s, self.n_atoms]
            .iter()
            .all(|v| v.is_finite());
        ensure(all_finite, || "physical parameters must be finite".into())?;
        ensure(self.mass > 0.0, || format!("mass must be > 0, got {}", self.mass))?;
        ensure(self.omega_perp >= 0.0, || {
            format!("omega_perp must be >= 0, got {}", self.omega_perp)
        })?;
        ensure(self.a_s >= 0.0, || format!("a_s must be >= 0, got {}", self.a_s))?;
        ensure(self.n_atoms >= 0.0, || {
            format!("n_atoms must be >= 0, got {}", self.n_atoms)
        })
    }

    /// The single coupling `a_s·N` entering all nonlinear terms.
    #[inline]
    pub fn coupling(&self) -> f64 {
        self.a_s * self.n_atoms
    }

    /// Same parameters with the interaction switched off.
    pub fn linear(&self) -> Self {
        Self {
            a_s: 0.0,
            ..*self
        }
    }
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self::typical()
    }
}

/// Uniform node-endpoint grid on `[-L/2, L/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct SpatialGrid {
    length: f64,
    dz: f64,
    z: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    length: f64,
    n_z: usize,
}

impl TryFrom<GridSpec> for SpatialGrid {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        SpatialGrid::new(s.length, s.n_z)
    }
}

impl From<SpatialGrid> for GridSpec {
    fn from(g: SpatialGrid) -> Self {
        GridSpec {
            length: g.length,
            n_z: g.len(),
        }
    }
}

impl SpatialGrid {
    pub fn new(length: f64, n_z: usize) -> Result<Self> {
        ensure(length.is_finite() && length > 0.0, || {
            format!("domain length must be finite and > 0, got {length}")
        })?;
        ensure(n_z >= MIN_SPATIAL_POINTS, || {
            format!("need at least {MIN_SPATIAL_POINTS} spatial points, got {n_z}")
        })?;
        let dz = length / (n_z - 1) as f64;
        let half = 0.5 * length;
        let mut z: Vec<f64> = (0..n_z).map(|j| -half + j as f64 * dz).collect();
        z[0] = -half;
        z[n_z - 1] = half;
        Ok(Self { length, dz, z })
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.z.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    #[inline]
    pub fn dz(&self) -> f64 {
        self.dz
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.z
    }

    /// Trapezoidal quadrature of nodal samples.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        check_len(self.len(), f.len())?;
        Ok(self.integrate_unchecked(f))
    }

    pub(crate) fn integrate_unchecked(&self, f: &[f64]) -> f64 {
        let n = f.len();
        let inner: f64 = f.iter().sum();
        self.dz * (inner - 0.5 * (f[0] + f[n - 1]))
    }
}

/// Uniform time grid `t_n = n·dt`, `n = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimeSpec", into = "TimeSpec")]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
struct TimeSpec {
    horizon: f64,
    n_t: usize,
}

impl TryFrom<TimeSpec> for TimeGrid {
    type Error = Error;
    fn try_from(s: TimeSpec) -> Result<Self> {
        TimeGrid::new(s.horizon, s.n_t)
    }
}

impl From<TimeGrid> for TimeSpec {
    fn from(g: TimeGrid) -> Self {
        TimeSpec {
            horizon: g.horizon,
            n_t: g.n_steps,
        }
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        ensure(horizon.is_finite() && horizon > 0.0, || {
            format!("time horizon must be finite and > 0, got {horizon}")
        })?;
        ensure(n_steps >= 2, || format!("need at least 2 time steps, got {n_steps}"))?;
        Ok(Self {
            horizon,
            n_steps,
            dt: horizon / n_steps as f64,
        })
    }

    /// Grid with spacing as close as possible to `dt`.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        ensure(dt.is_finite() && dt > 0.0, || format!("dt must be > 0, got {dt}"))?;
        Self::new(horizon, ((horizon / dt).round() as usize).max(2))
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of time nodes, `n_steps + 1`.
    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Node time; the last node is exactly the horizon.
    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        if n >= self.n_steps {
            self.horizon
        } else {
            n as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|n| self.time(n)).collect()
    }
}

/// Complex mean field sampled on a [`SpatialGrid`], in µm^(-1/2).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    values: Vec<Complex64>,
}

impl WaveFunction {
    /// Wraps samples; the Dirichlet endpoints are forced to zero.
    pub fn new(mut values: Vec<Complex64>) -> Result<Self> {
        ensure(values.len() >= MIN_SPATIAL_POINTS, || {
            format!("wave function needs at least {MIN_SPATIAL_POINTS} samples")
        })?;
        ensure(values.iter().all(|v| v.re.is_finite() && v.im.is_finite()), || {
            "wave function samples must be finite".into()
        })?;
        let n = values.len();
        values[0] = Complex64::new(0.0, 0.0);
        values[n - 1] = Complex64::new(0.0, 0.0);
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn from_fn(grid: &SpatialGrid, f: impl Fn(f64) -> Complex64) -> Self {
        let n = grid.len();
        let values = grid
            .coords()
            .iter()
            .enumerate()
            .map(|(j, &z)| {
                if j == 0 || j + 1 == n {
                    Complex64::new(0.0, 0.0)
                } else {
                    f(z)
                }
            })
            .collect();
        Self { values }
    }

    pub fn from_real(grid: &SpatialGrid, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |z| Complex64::new(f(z), 0.0))
    }

    pub(crate) fn from_raw(values: Vec<Complex64>) -> Self {
        Self { values }
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Rescales to unit norm; fails for the zero field.
    pub fn normalized(&self, grid: &SpatialGrid) -> Result<Self> {
        let n2 = norm_squared(self, grid)?;
        ensure(n2 > 0.0 && n2.is_finite(), || {
            "cannot normalize a zero or non-finite field".into()
        })?;
        Ok(self.scaled(Complex64::new(1.0 / n2.sqrt(), 0.0)))
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// `∫|Ψ|² dz` by the trapezoidal rule.
pub fn norm_squared(psi: &WaveFunction, grid: &SpatialGrid) -> Result<f64> {
    check_len(grid.len(), psi.len())?;
    let rho = psi.density();
    Ok(grid.integrate_unchecked(&rho))
}

/// `∫ a* b dz` by the trapezoidal rule; conjugate-linear in `a`.
pub fn overlap(a: &WaveFunction, b: &WaveFunction, grid: &SpatialGrid) -> Result<Complex64> {
    check_len(grid.len(), a.len())?;
    check_len(grid.len(), b.len())?;
    Ok(overlap_slices(a.values(), b.values(), grid.dz()))
}

pub(crate) fn overlap_slices(a: &[Complex64], b: &[Complex64], dz: f64) -> Complex64 {
    let n = a.len();
    let mut acc: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    acc -= 0.5 * (a[0].conj() * b[0] + a[n - 1].conj() * b[n - 1]);
    acc * dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn grid_spacing_and_endpoints() {
        let g = SpatialGrid::new(120.0, 121).unwrap();
        assert_eq!(g.dz(), 1.0);
        assert_eq!(g.coords()[0], -60.0);
        assert_eq!(g.coords()[120], 60.0);

        let g = SpatialGrid::new(120.0, 512).unwrap();
        assert_eq!(g.dz(), 120.0 / 511.0);
        assert_eq!(g.coords()[511], 60.0);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(SpatialGrid::new(0.0, 512).is_err());
        assert!(SpatialGrid::new(-1.0, 512).is_err());
        assert!(SpatialGrid::new(f64::NAN, 512).is_err());
        assert!(SpatialGrid::new(120.0, 15).is_err());
        assert!(TimeGrid::new(45.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
    }

    #[test]
    fn time_grid_last_node_is_horizon() {
        let tg = TimeGrid::new(45.0, 4500).unwrap();
        assert_eq!(tg.dt(), 0.01);
        assert_eq!(tg.time(4500), 45.0);
        assert_eq!(tg.n_nodes(), 4501);
    }

    #[test]
    fn norm_of_zero_and_flat_window() {
        let g = SpatialGrid::new(120.0, 121).unwrap();
        assert_eq!(norm_squared(&WaveFunction::zeros(121), &g).unwrap(), 0.0);

        // flat 1/sqrt(w) on a grid-aligned window of width w, with linear
        // ramps of one cell on each side the trapezoid integrates exactly
        let w: f64 = 40.0;
        let amp = 1.0 / w.sqrt();
        let psi = WaveFunction::from_real(&g, |z| if z.abs() <= 0.5 * w { amp } else { 0.0 });
        // window edges sit on nodes, so |Ψ|² is piecewise linear with half-cells
        // at the ends: integral = (w + dz) * amp², trapezoid is exact for it
        let exact = (w + g.dz()) * amp * amp;
        let n2 = norm_squared(&psi, &g).unwrap();
        assert!((n2 - exact).abs() < 1e-14);
        let psi = psi.normalized(&g).unwrap();
        assert!((norm_squared(&psi, &g).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn norm_is_quadratic() {
        let g = SpatialGrid::new(10.0, 64).unwrap();
        let psi = WaveFunction::from_fn(&g, |z| c((z * 0.3).cos(), z.sin()));
        let n1 = norm_squared(&psi, &g).unwrap();
        let n2 = norm_squared(&psi.scaled(c(2.0, 0.0)), &g).unwrap();
        assert!((n2 - 4.0 * n1).abs() < 1e-12 * n2);
    }

    #[test]
    fn overlap_properties() {
        let g = SpatialGrid::new(100.0, 201).unwrap();
        let psi = WaveFunction::from_real(&g, |z| (PI * (z + 50.0) / 100.0).sin())
            .normalized(&g)
            .unwrap();
        let s = overlap(&psi, &psi, &g).unwrap();
        assert!((s - c(1.0, 0.0)).norm() < 1e-14);
        let ipsi = psi.scaled(c(0.0, 1.0));
        assert!((overlap(&psi, &ipsi, &g).unwrap() - c(0.0, 1.0)).norm() < 1e-14);

        // box modes on a grid-aligned box are discretely orthogonal
        let m2 = WaveFunction::from_real(&g, |z| (2.0 * PI * (z + 50.0) / 100.0).sin());
        assert!(overlap(&psi, &m2, &g).unwrap().norm() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = SpatialGrid::new(10.0, 32).unwrap();
        let psi = WaveFunction::zeros(33);
        assert!(matches!(
            norm_squared(&psi, &g),
            Err(Error::DimensionMismatch { expected: 32, found: 33 })
        ));
    }

    #[test]
    fn new_wavefunction_enforces_dirichlet() {
        let psi = WaveFunction::new(vec![c(1.0, 1.0); 20]).unwrap();
        assert_eq!(psi.values()[0], c(0.0, 0.0));
        assert_eq!(psi.values()[19], c(0.0, 0.0));
        assert!(WaveFunction::new(vec![c(f64::NAN, 0.0); 20]).is_err());
    }

    #[test]
    fn grid_serde_roundtrip() {
        let g = SpatialGrid::new(120.0, 512).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: SpatialGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(g, back);
        let tg = TimeGrid::new(45.0, 4500).unwrap();
        let back: TimeGrid = serde_json::from_str(&serde_json::to_string(&tg).unwrap()).unwrap();
        assert_eq!(tg, back);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn overlap_is_hermitian(re in proptest::collection::vec(-1.0..1.0f64, 32),
                                    im in proptest::collection::vec(-1.0..1.0f64, 32),
                                    re2 in proptest::collection::vec(-1.0..1.0f64, 32)) {
                let g = SpatialGrid::new(7.0, 32).unwrap();
                let a = WaveFunction::new(re.iter().zip(&im).map(|(&x, &y)| c(x, y)).collect()).unwrap();
                let b = WaveFunction::new(re2.iter().zip(&re).map(|(&x, &y)| c(x, -y)).collect()).unwrap();
                let ab = overlap(&a, &b, &g).unwrap();
                let ba = overlap(&b, &a, &g).unwrap();
                prop_assert!((ab - ba.conj()).norm() <= 1e-14 * (1.0 + ab.norm()));
                let aa = overlap(&a, &a, &g).unwrap();
                prop_assert!((aa.re - norm_squared(&a, &g).unwrap()).abs() < 1e-13);
            }

            #[test]
            fn trapezoid_exact_on_piecewise_linear(vals in proptest::collection::vec(-5.0..5.0f64, 16..64)) {
                // the integral of the piecewise-linear interpolant, cell by cell
                let g = SpatialGrid::new(3.0, vals.len()).unwrap();
                let exact: f64 = vals.windows(2).map(|w| 0.5 * (w[0] + w[1]) * g.dz()).sum();
                let q = g.integrate(&vals).unwrap();
                prop_assert!((q - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
            }

            #[test]
            fn grid_json_roundtrip_bit_exact(len in 1e-3..1e4f64, n in 16usize..4096) {
                let g = SpatialGrid::new(len, n).unwrap();
                let back: SpatialGrid = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
                prop_assert_eq!(g.coords().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                                back.coords().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
        }
    }
}
