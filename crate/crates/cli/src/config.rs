//! Run configuration: a flat TOML file with strict key checking.
//!
//! Physical parameters default to the typical experimental values used
//! throughout (`m = 1.368`, `ω⊥ = 10`, `a_s = 4.2e-3`, `N = 5000`, in units
//! of ms and µm), the wall width to `σ = 3 µm` and `γ_reg` to `1e-5`. The
//! compression is given either by `lambda_t` or by `r_comp`, never both.

use std::path::{Path, PathBuf};

use npse_core::potential::displacement_for_ratio;
use npse_core::{
    BoxPotential, CostKind, GroundStateConfig, NpseStepperConfig, PhysicalParams, SpatialGrid, StopCriteria, TimeGrid,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Ioa,
    Bfa,
    None,
}

/// Config file as written by the user; every key is optional except the
/// compression width.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mass: Option<f64>,
    omega_perp: Option<f64>,
    a_s: Option<f64>,
    n_atoms: Option<f64>,
    length: Option<f64>,
    n_z: Option<i64>,
    horizon: Option<f64>,
    n_t: Option<i64>,
    dt: Option<f64>,
    v_max: Option<f64>,
    w0: Option<f64>,
    sigma: Option<f64>,
    lambda_0: Option<f64>,
    lambda_t: Option<f64>,
    r_comp: Option<f64>,
    cost: Option<CostKind>,
    gamma_reg: Option<f64>,
    optimizer: Option<OptimizerKind>,
    grad_tol: Option<f64>,
    max_iters: Option<i64>,
    rel_cost_tol: Option<f64>,
    bfa_order: Option<i64>,
    bfa_step: Option<f64>,
    bfa_orders: Option<Vec<i64>>,
    initial_noise: Option<f64>,
    seed: Option<u64>,
    hold_time: Option<f64>,
    snapshot_stride: Option<i64>,
    output_dir: Option<PathBuf>,
    trajectory_file: Option<PathBuf>,
    fixed_point_tol: Option<f64>,
    max_fixed_point_iters: Option<i64>,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mass: f64,
    pub omega_perp: f64,
    pub a_s: f64,
    pub n_atoms: f64,
    pub length: f64,
    pub n_z: usize,
    pub horizon: f64,
    pub n_t: usize,
    pub v_max: f64,
    pub w0: f64,
    pub sigma: f64,
    pub lambda_0: f64,
    pub lambda_t: f64,
    pub cost: CostKind,
    pub gamma_reg: f64,
    pub optimizer: OptimizerKind,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub rel_cost_tol: f64,
    pub bfa_order: usize,
    pub bfa_step: f64,
    pub bfa_orders: Vec<usize>,
    /// Amplitude (µm) of a seeded random smooth perturbation added to the
    /// IOA initial guess; `0` starts from the plain linear ramp.
    pub initial_noise: f64,
    pub seed: u64,
    pub hold_time: f64,
    pub snapshot_stride: usize,
    /// Excluded from the hash so that identical runs in different
    /// directories carry the same stamp.
    #[serde(skip)]
    pub output_dir: PathBuf,
    pub trajectory_file: Option<PathBuf>,
    pub fixed_point_tol: f64,
    pub max_fixed_point_iters: usize,
}

/// Keys accepted by `--params`.
pub const PARAM_KEYS: [&str; 4] = ["mass", "omega_perp", "a_s", "n_atoms"];

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn count(name: &str, v: i64, min: i64) -> Result<usize, CliError> {
    if v < min {
        return Err(config_err(format!("{name} must be >= {min}, got {v}")));
    }
    Ok(v as usize)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[(String, f64)]) -> Result<Self, CliError> {
        let mut raw: RawConfig = toml::from_str(text).map_err(|e| {
            let place = e.span().map(|s| format!("line {}: ", line_of(text, s.start))).unwrap_or_default();
            config_err(format!("{place}{}", e.message()))
        })?;
        for (k, v) in overrides {
            match k.as_str() {
                "mass" => raw.mass = Some(*v),
                "omega_perp" => raw.omega_perp = Some(*v),
                "a_s" => raw.a_s = Some(*v),
                "n_atoms" => raw.n_atoms = Some(*v),
                other => {
                    return Err(config_err(format!(
                        "--params accepts only {}, got {other:?}",
                        PARAM_KEYS.join(", ")
                    )))
                }
            }
        }
        Self::resolve(raw)
    }

    pub fn load(path: &Path, overrides: &[(String, f64)]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    fn resolve(raw: RawConfig) -> Result<Self, CliError> {
        let typical = PhysicalParams::typical();
        let w0 = raw.w0.unwrap_or(BoxPotential::DEFAULT_W0);
        let lambda_t = match (raw.lambda_t, raw.r_comp) {
            (Some(_), Some(_)) => return Err(config_err("set either lambda_t or r_comp, not both")),
            (None, None) => return Err(config_err("one of lambda_t or r_comp is required")),
            (Some(l), None) => l,
            (None, Some(r)) => displacement_for_ratio(w0, r).map_err(|e| config_err(e.to_string()))?,
        };
        let horizon = raw.horizon.unwrap_or(45.0);
        let n_t = match (raw.n_t, raw.dt) {
            (Some(_), Some(_)) => return Err(config_err("set either n_t or dt, not both")),
            (Some(n), None) => count("n_t", n, 2)?,
            (None, Some(dt)) => {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(config_err(format!("dt must be > 0, got {dt}")));
                }
                (horizon / dt).round().max(2.0) as usize
            }
            (None, None) => (horizon / 0.01).round().max(2.0) as usize,
        };
        let cfg = Self {
            mass: raw.mass.unwrap_or(typical.mass),
            omega_perp: raw.omega_perp.unwrap_or(typical.omega_perp),
            a_s: raw.a_s.unwrap_or(typical.a_s),
            n_atoms: raw.n_atoms.unwrap_or(typical.n_atoms),
            length: raw.length.unwrap_or(120.0),
            n_z: count("n_z", raw.n_z.unwrap_or(512), 16)?,
            horizon,
            n_t,
            v_max: raw.v_max.unwrap_or(BoxPotential::DEFAULT_V_MAX),
            w0,
            sigma: raw.sigma.unwrap_or(BoxPotential::DEFAULT_SIGMA),
            lambda_0: raw.lambda_0.unwrap_or(0.0),
            lambda_t,
            cost: raw.cost.unwrap_or(CostKind::Energy),
            gamma_reg: raw.gamma_reg.unwrap_or(1e-5),
            optimizer: raw.optimizer.unwrap_or(OptimizerKind::Ioa),
            grad_tol: raw.grad_tol.unwrap_or(1e-6),
            max_iters: count("max_iters", raw.max_iters.unwrap_or(1000), 0)?,
            rel_cost_tol: raw.rel_cost_tol.unwrap_or(0.0),
            bfa_order: count("bfa_order", raw.bfa_order.unwrap_or(4), 1)?,
            bfa_step: raw.bfa_step.unwrap_or(1e-6),
            bfa_orders: raw
                .bfa_orders
                .unwrap_or_else(|| (1..=8).collect())
                .into_iter()
                .map(|m| count("bfa_orders entry", m, 1))
                .collect::<Result<_, _>>()?,
            initial_noise: raw.initial_noise.unwrap_or(0.0),
            seed: raw.seed.unwrap_or(0),
            hold_time: raw.hold_time.unwrap_or(15.0),
            snapshot_stride: count("snapshot_stride", raw.snapshot_stride.unwrap_or(50), 1)?,
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            trajectory_file: raw.trajectory_file,
            fixed_point_tol: raw.fixed_point_tol.unwrap_or(NpseStepperConfig::default().fixed_point_tol),
            max_fixed_point_iters: count(
                "max_fixed_point_iters",
                raw.max_fixed_point_iters
                    .unwrap_or(NpseStepperConfig::default().max_fixed_point_iters as i64),
                1,
            )?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: npse_core::Error| config_err(e.to_string());
        self.physical().map_err(wrap)?;
        self.spatial_grid().map_err(wrap)?;
        self.time_grid().map_err(wrap)?;
        self.potential().map_err(wrap)?;
        self.stepper().validate().map_err(wrap)?;
        self.stop().validate().map_err(wrap)?;
        npse_core::potential::compression_ratio(self.w0, self.lambda_t).map_err(wrap)?;
        if !(0.0..0.5 * self.w0).contains(&self.lambda_0) {
            return Err(config_err(format!("lambda_0 must lie in [0, w0/2), got {}", self.lambda_0)));
        }
        if self.w0 >= self.length {
            return Err(config_err(format!(
                "box width w0 = {} must be smaller than the domain length {}",
                self.w0, self.length
            )));
        }
        for (name, v) in [
            ("gamma_reg", self.gamma_reg),
            ("hold_time", self.hold_time),
            ("initial_noise", self.initial_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.bfa_step > 0.0 && self.bfa_step.is_finite()) {
            return Err(config_err(format!("bfa_step must be > 0, got {}", self.bfa_step)));
        }
        Ok(())
    }

    pub fn physical(&self) -> npse_core::Result<PhysicalParams> {
        PhysicalParams::new(self.mass, self.omega_perp, self.a_s, self.n_atoms)
    }

    pub fn spatial_grid(&self) -> npse_core::Result<SpatialGrid> {
        SpatialGrid::new(self.length, self.n_z)
    }

    pub fn time_grid(&self) -> npse_core::Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.n_t)
    }

    pub fn potential(&self) -> npse_core::Result<BoxPotential> {
        BoxPotential::new(self.v_max, self.w0, self.sigma)
    }

    pub fn stepper(&self) -> NpseStepperConfig {
        NpseStepperConfig {
            fixed_point_tol: self.fixed_point_tol,
            max_fixed_point_iters: self.max_fixed_point_iters,
        }
    }

    pub fn ground_state(&self) -> GroundStateConfig {
        GroundStateConfig::default()
    }

    pub fn stop(&self) -> StopCriteria {
        StopCriteria {
            grad_tol: self.grad_tol,
            max_iterations: self.max_iters,
            rel_cost_tol: self.rel_cost_tol,
            ..Default::default()
        }
    }

    /// Canonical TOML form of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("resolved config always serializes")
    }

    /// SHA-256 of [`RunConfig::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

/// Parses `key=value,key=value`.
pub fn parse_overrides(s: &str) -> Result<Vec<(String, f64)>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| config_err(format!("expected key=value in --params, got {pair:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| config_err(format!("--params value for {} is not a number: {v:?}", k.trim())))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}
