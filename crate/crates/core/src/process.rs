//! Material constants and operating conditions shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Universal gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314;

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Deposit and preform constants entering the porosity update and `Ŝ_v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Molar mass of the deposit, kg/mol.
    pub molar_mass: f64,
    /// Deposit density, kg/m³.
    pub deposit_density: f64,
    /// Stoichiometric coefficient.
    pub stoichiometry: f64,
    /// Initial porosity of the preform.
    pub eps0: f64,
    /// Fibre filament radius, m.
    pub fiber_radius: f64,
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.molar_mass,
            self.deposit_density,
            self.stoichiometry,
            self.fiber_radius,
        ];
        if pos.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::contract("material constants must be positive"));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return Err(Error::contract(format!(
                "initial porosity {} outside (0, 1)",
                self.eps0
            )));
        }
        Ok(())
    }

    /// `q M_d / ρ_d`, the porosity loss per mole deposited per unit volume.
    pub fn deposition_factor(&self) -> f64 {
        self.stoichiometry * self.molar_mass / self.deposit_density
    }
}

/// One isothermal, isobaric densification cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingCondition {
    /// K
    pub temperature: f64,
    /// Pa
    pub total_pressure: f64,
    /// Precursor partial pressure, Pa.
    pub partial_pressure: f64,
    /// s
    pub duration: f64,
}

impl OperatingCondition {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::contract(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if !(self.partial_pressure >= 0.0 && self.partial_pressure <= self.total_pressure) {
            return Err(Error::contract(format!(
                "partial pressure {} must lie in [0, {}]",
                self.partial_pressure, self.total_pressure
            )));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::contract(format!(
                "duration {} must be non-negative",
                self.duration
            )));
        }
        Ok(())
    }
}
