//! Desk-scale reactive-transport generator.
//!
//! Flow is a quasi-static Darcy proxy `u = -eps^3 grad p`, `div u = 0` on a
//! staggered grid, solved with preconditioned conjugate gradients. Solute is
//! transported by conservative upwind advection plus central diffusion and
//! dissolves the matrix at rate `k_r c (1 - eps)`.

mod flow;
mod porosity;
mod reaction;
mod transport;

use serde::{Deserialize, Serialize};

use crate::dataset::{FieldSnapshot, SimulationSeries};
use crate::error::{Error, Result};

pub use flow::{solve_flow, FlowField, FlowParams};
pub use porosity::{init_porosity, percolates, PorosityConfig};
pub use reaction::{step_dissolution, ReactionParams};
pub use transport::{stable_dt, step_transport, TransportBoundary, TransportParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Columns (flow direction).
    pub nx: usize,
    /// Rows.
    pub ny: usize,
    /// Grid spacing (m).
    pub dx: f64,
    /// Solver step (s); transport is sub-stepped inside it when the CFL limit is tighter.
    pub dt: f64,
    /// Solver steps between emitted snapshots.
    pub snapshot_interval: usize,
    /// Number of emitted snapshots, including the initial state.
    pub snapshots: usize,
    /// Diffusion coefficient (m^2/s).
    pub diffusion: f64,
    /// Dissolution rate constant `k_r` (1/s).
    pub reaction_rate: f64,
    /// Solute consumed per unit porosity gained.
    pub stoichiometry: f64,
    /// Kinematic pressure at the inlet (left) and outlet (right) faces (m^2/s^2).
    pub inlet_pressure: f64,
    pub outlet_pressure: f64,
    /// Injected concentration (kmol/m^3).
    pub inlet_concentration: f64,
    pub porosity: PorosityConfig,
    pub boundary: TransportBoundary,
    pub seed: u64,
    /// Largest admissible discrete velocity divergence after a pressure solve (1/s).
    pub divergence_tolerance: f64,
    pub max_pressure_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            nx: 128,
            ny: 128,
            dx: 1e-4,
            dt: 2.0,
            snapshot_interval: 2,
            snapshots: 60,
            diffusion: 1e-9,
            reaction_rate: 1.2e-2,
            stoichiometry: 0.5,
            inlet_pressure: 2.5e-6,
            outlet_pressure: 0.0,
            inlet_concentration: 1.0,
            porosity: PorosityConfig::default(),
            boundary: TransportBoundary::InletOutlet,
            seed: 0,
            divergence_tolerance: 1e-10,
            max_pressure_iterations: 5000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 16 || self.ny < 16 {
            return Err(Error::invalid(format!("grid {}x{} is below the 16x16 minimum", self.ny, self.nx)));
        }
        let positive = [("dx", self.dx), ("dt", self.dt)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
        let non_negative = [
            ("diffusion", self.diffusion),
            ("reaction_rate", self.reaction_rate),
            ("stoichiometry", self.stoichiometry),
            ("inlet_concentration", self.inlet_concentration),
        ];
        if let Some((name, v)) = non_negative.iter().find(|(_, v)| !(*v >= 0.0)) {
            return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
        }
        if self.snapshot_interval == 0 || self.snapshots == 0 {
            return Err(Error::invalid("snapshot_interval and snapshots must be at least 1"));
        }
        self.porosity.validate()
    }

    pub fn flow_params(&self) -> FlowParams {
        FlowParams {
            nx: self.nx,
            ny: self.ny,
            dx: self.dx,
            inlet_pressure: self.inlet_pressure,
            outlet_pressure: self.outlet_pressure,
            divergence_tolerance: self.divergence_tolerance,
            max_iterations: self.max_pressure_iterations,
        }
    }

    pub fn transport_params(&self) -> TransportParams {
        TransportParams {
            nx: self.nx,
            ny: self.ny,
            dx: self.dx,
            diffusion: self.diffusion,
            inlet_concentration: self.inlet_concentration,
            boundary: self.boundary,
        }
    }

    pub fn reaction_params(&self) -> ReactionParams {
        ReactionParams { reaction_rate: self.reaction_rate, stoichiometry: self.stoichiometry }
    }

    /// Physical time between snapshots.
    pub fn dt_snapshot(&self) -> f64 {
        self.dt * self.snapshot_interval as f64
    }
}

/// Full solver state on the cell grid plus staggered velocities.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub concentration: Vec<f64>,
    pub porosity: Vec<f64>,
    pub flow: FlowField,
    /// Cells whose dissolution update had to be clamped.
    pub clamp_events: u64,
    pub transport_substeps: u64,
}

impl SolverState {
    pub fn snapshot(&self, nx: usize, ny: usize) -> Result<FieldSnapshot> {
        let (ux, uy) = self.flow.cell_velocities(nx, ny);
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        FieldSnapshot::from_fields(ny, nx, [&f(&self.concentration), &f(&self.porosity), &f(&ux), &f(&uy)])
    }
}

/// Run one simulation and record its snapshots.
pub fn run_simulation(config: &SolverConfig, sim_id: &str) -> Result<SimulationSeries> {
    let run = || -> Result<SimulationSeries> {
        config.validate()?;
        let (porosity, used_seed) = init_porosity(config.nx, config.ny, &config.porosity, config.seed)?;
        if used_seed != config.seed {
            log::info!("{sim_id}: porosity seed {} did not percolate, used {used_seed}", config.seed);
        }
        let flow_params = config.flow_params();
        let transport = config.transport_params();
        let reaction = config.reaction_params();
        let flow = solve_flow(&porosity, &flow_params, None)?;
        let mut state = SolverState {
            concentration: vec![0.0; config.nx * config.ny],
            porosity,
            flow,
            clamp_events: 0,
            transport_substeps: 0,
        };
        let mut snaps = vec![state.snapshot(config.nx, config.ny)?];
        while snaps.len() < config.snapshots {
            for _ in 0..config.snapshot_interval {
                advance(&mut state, config, &flow_params, &transport, &reaction)?;
            }
            snaps.push(state.snapshot(config.nx, config.ny)?);
        }
        if state.clamp_events > 0 {
            log::warn!("{sim_id}: {} dissolution clamp events", state.clamp_events);
        }
        SimulationSeries::new(sim_id, config.seed, config.dx, config.dt_snapshot(), snaps)
    };
    run().map_err(|e| match e {
        Error::Simulation { .. } => e,
        other => Error::in_simulation(sim_id, other),
    })
}

/// One solver step: sub-stepped transport, dissolution, then a flow re-solve.
pub fn advance(
    state: &mut SolverState,
    config: &SolverConfig,
    flow_params: &FlowParams,
    transport: &TransportParams,
    reaction: &ReactionParams,
) -> Result<()> {
    let limit = stable_dt(&state.flow, transport);
    let substeps = if limit.is_finite() { (config.dt / (0.95 * limit)).ceil().max(1.0) as usize } else { 1 };
    let h = config.dt / substeps as f64;
    for _ in 0..substeps {
        step_transport(&mut state.concentration, &state.flow, transport, h)?;
    }
    state.transport_substeps += substeps as u64;
    state.clamp_events += step_dissolution(&mut state.concentration, &mut state.porosity, reaction, config.dt);
    state.flow = solve_flow(&state.porosity, flow_params, Some(&state.flow.pressure))?;
    Ok(())
}

/// Generate one series per seed; simulation ids are `sim_000`, `sim_001`, ...
pub fn generate_dataset(template: &SolverConfig, seeds: &[u64]) -> Result<Vec<SimulationSeries>> {
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::invalid(format!("duplicate simulation seed {dup}")));
    }
    seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let cfg = SolverConfig { seed, ..template.clone() };
            let id = format!("sim_{i:03}");
            log::info!("generating {id} (seed {seed})");
            run_simulation(&cfg, &id)
        })
        .collect()
}
