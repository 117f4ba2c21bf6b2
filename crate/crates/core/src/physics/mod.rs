//! Differentiable numerical core: boundary molarity, the point-Jacobi
//! elliptic solve, explicit porosity stepping and (multi-cycle) rollouts.

mod jacobi;
mod rollout;
mod stencil;
mod step;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::GAS_CONSTANT;

pub use jacobi::{jacobi_solve, jacobi_solve_values, JacobiOutcome};
pub use rollout::{
    multicycle_rollout, rollout, rollout_taped, snap_observations, step_count, CycleSchedule,
    CycleSpec, CycleTrajectory, MachiningEvent, MulticycleTrajectory, Snapshot, TapedState,
};
pub use stencil::{BalanceResidual, BoundarySpec, Face, JacobiSweep, Stencil, StencilMode};
pub use step::{one_step, porosity_step, StepDiagnostics, StepOutput, Stepper};

/// Which outer faces carry the Dirichlet boundary molarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirichletFaces {
    pub outer: bool,
    pub top: bool,
    pub bottom: bool,
}

impl Default for DirichletFaces {
    fn default() -> Self {
        Self {
            outer: true,
            top: true,
            bottom: true,
        }
    }
}

impl DirichletFaces {
    pub fn boundary(&self, value: f64) -> BoundarySpec {
        let f = |on: bool| {
            if on {
                Face::Dirichlet(value)
            } else {
                Face::ZeroFlux
            }
        };
        BoundarySpec {
            outer: f(self.outer),
            top: f(self.top),
            bottom: f(self.bottom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative residual `‖N − Den·C‖ / ‖D·sb‖` at which sweeps stop.
    pub jacobi_tol: f64,
    pub jacobi_max_sweeps: usize,
    /// s
    pub dt: f64,
    pub stepper: Stepper,
    pub warm_start: bool,
    pub stencil: StencilMode,
    pub faces: DirichletFaces,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            jacobi_tol: 1e-8,
            jacobi_max_sweeps: 200,
            dt: 3600.0,
            stepper: Stepper::Euler,
            warm_start: true,
            stencil: StencilMode::Literal,
            faces: DirichletFaces::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.jacobi_tol > 0.0) {
            return Err(Error::contract("jacobi_tol must be positive"));
        }
        if self.jacobi_max_sweeps == 0 {
            return Err(Error::contract("jacobi_max_sweeps must be at least 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::contract(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if !(self.faces.outer || self.faces.top || self.faces.bottom) {
            return Err(Error::Singular);
        }
        Ok(())
    }
}

/// Boundary molarity `P_r / (R T)`, mol/m³.
pub fn molarity_bc(partial_pressure: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::contract(format!(
            "temperature {temperature} must be positive"
        )));
    }
    if !(partial_pressure >= 0.0) {
        return Err(Error::contract(format!(
            "partial pressure {partial_pressure} must be non-negative"
        )));
    }
    Ok(partial_pressure / (GAS_CONSTANT * temperature))
}
