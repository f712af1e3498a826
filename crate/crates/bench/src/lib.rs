//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use npse_core::{
    BoxPotential, ControlProblem, CostKind, GroundStateConfig, NpseStepperConfig, PhysicalParams, ProblemSetup,
    SpatialGrid, TimeGrid,
};

/// Compression problem with the typical parameters on an `n_z × n_t` grid.
pub fn problem(n_z: usize, n_t: usize, horizon: f64, cost: CostKind) -> ControlProblem {
    ProblemSetup {
        params: PhysicalParams::typical(),
        grid: SpatialGrid::new(120.0, n_z).expect("grid"),
        time_grid: TimeGrid::new(horizon, n_t).expect("time grid"),
        potential: Arc::new(BoxPotential::new(200.0, 100.0, 3.0).expect("potential")),
        lambda_0: 0.0,
        lambda_t: 37.5,
        cost,
        gamma_reg: 1e-5,
        stepper: NpseStepperConfig::default(),
        ground_state: GroundStateConfig::default(),
    }
    .build()
    .expect("problem")
}
