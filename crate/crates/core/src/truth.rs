//! Closed-form constitutive relations used as ground truth in twin experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{segment_masses, AxiGrid, CviState, SegmentSpec};
use crate::io::{Dataset, MeasurementRecord, ObservableKind};
use crate::neural::{NormalizationSpec, OperatorSet};
use crate::physics::{molarity_bc, multicycle_rollout, CycleSchedule, SolverConfig};
use crate::process::{Material, GAS_CONSTANT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthParams {
    /// kg/mol
    pub molar_mass: f64,
    /// kg/m³
    pub deposit_density: f64,
    pub stoichiometry: f64,
    /// Arrhenius prefactor, m/s.
    pub k0: f64,
    /// Activation energy, J/mol.
    pub activation_energy: f64,
    pub tortuosity: f64,
    pub eps0: f64,
    /// Characteristic pore radius, m.
    pub pore_radius: f64,
    /// Fibre filament radius, m.
    pub fiber_radius: f64,
    /// J/(mol K)
    pub gas_constant: f64,
}

impl Default for TruthParams {
    fn default() -> Self {
        Self {
            molar_mass: 0.01199,
            deposit_density: 2260.0,
            stoichiometry: 1.0,
            k0: 2.62,
            activation_energy: 1.46e5,
            tortuosity: 6.78,
            eps0: 0.6,
            pore_radius: 1e-5,
            fiber_radius: 5e-6,
            gas_constant: GAS_CONSTANT,
        }
    }
}

impl TruthParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.molar_mass,
            self.deposit_density,
            self.stoichiometry,
            self.k0,
            self.activation_energy,
            self.tortuosity,
            self.eps0,
            self.pore_radius,
            self.fiber_radius,
            self.gas_constant,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::contract("truth parameters must all be positive"));
        }
        self.material().validate()
    }

    pub fn material(&self) -> Material {
        Material {
            molar_mass: self.molar_mass,
            deposit_density: self.deposit_density,
            stoichiometry: self.stoichiometry,
            eps0: self.eps0,
            fiber_radius: self.fiber_radius,
        }
    }
}

/// Arrhenius deposition rate constant, m/s.
pub fn true_k(t: f64, p: &TruthParams) -> f64 {
    p.k0 * (-p.activation_energy / (p.gas_constant * t)).exp()
}

/// Binary diffusion coefficient, m²/s.
pub fn binary_diffusivity(t: f64, pressure: f64) -> f64 {
    1e-5 * t.powf(1.75) / pressure
}

/// Knudsen diffusion coefficient, m²/s.
pub fn knudsen_diffusivity(t: f64, p: &TruthParams) -> f64 {
    let mean_speed = (8.0 * p.gas_constant * t / (std::f64::consts::PI * p.molar_mass)).sqrt();
    2.0 / 3.0 * mean_speed * p.pore_radius
}

/// Effective diffusivity, m²/s. Linear in `eps`.
pub fn true_deff(eps: f64, t: f64, pressure: f64, p: &TruthParams) -> f64 {
    let dab = binary_diffusivity(t, pressure);
    let dk = knudsen_diffusivity(t, p);
    eps * dk * dab / (p.tortuosity * (dk + dab))
}

fn sv_prefactor(p: &TruthParams) -> f64 {
    (1.0 - p.eps0) / (p.fiber_radius * p.eps0)
}

fn sv_slope(p: &TruthParams) -> f64 {
    p.eps0 / (1.0 - p.eps0)
}

/// Surface-to-volume ratio, 1/m, and whether the square-root bracket was clamped.
pub fn true_sv_checked(eps: f64, p: &TruthParams) -> (f64, bool) {
    if eps <= 0.0 {
        return (0.0, false);
    }
    let bracket = 1.0 - sv_slope(p) * (eps / p.eps0).ln();
    let clamped = bracket < 0.0;
    (sv_prefactor(p) * eps * bracket.max(0.0).sqrt(), clamped)
}

pub fn true_sv(eps: f64, p: &TruthParams) -> f64 {
    true_sv_checked(eps, p).0
}

/// Pointwise `true_sv` over a field with the number of clamp events.
pub fn true_sv_field(eps: &[f64], p: &TruthParams) -> (Vec<f64>, usize) {
    let mut clamps = 0;
    let out = eps
        .iter()
        .map(|&e| {
            let (v, c) = true_sv_checked(e, p);
            clamps += c as usize;
            v
        })
        .collect();
    if clamps > 0 {
        log::debug!("surface-to-volume bracket clamped at {clamps} cells");
    }
    (out, clamps)
}

/// `true_sv` recorded on a tape.
pub(crate) fn true_sv_taped(tape: &mut Tape, eps: Var, p: &TruthParams) -> Result<Var> {
    let floor = tape.scalar_constant(p.eps0 * 1e-12)?;
    let safe = tape.max(eps, floor)?;
    let ratio = tape.scale(safe, 1.0 / p.eps0)?;
    let log = tape.ln(ratio)?;
    let bracket = tape.affine(log, -sv_slope(p), 1.0)?;
    let zero = tape.scalar_constant(0.0)?;
    let bracket = tape.max(bracket, zero)?;
    let root = tape.sqrt(bracket)?;
    let lead = tape.scale(eps, sv_prefactor(p))?;
    tape.mul(lead, root)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation as a fraction of each series' final clean value.
    pub relative_sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            relative_sigma: 0.0,
            seed: 0,
        }
    }
}

/// What a synthetic run reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SyntheticObservable {
    /// Deposit mass per segment (or whole sample for a single segment).
    MassGain,
    /// Whole-sample mass including a preform of the given bulk fibre density, kg/m³.
    TotalMass { fiber_density: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRun {
    pub id: String,
    pub schedule: CycleSchedule,
}

/// Forward truth rollouts sampled at the schedule's observation times.
///
/// Each run draws its noise from its own stream, `split(noise.seed, run
/// index)`, so runs may be generated in any order. The returned dataset
/// carries the clean values as its shadow. Values are clamped at zero after
/// noise is added.
pub fn generate_synthetic(
    runs: &[SyntheticRun],
    segments: &SegmentSpec,
    observable: SyntheticObservable,
    noise: &NoiseSpec,
    grid: &AxiGrid,
    truth: &TruthParams,
    solver: &SolverConfig,
) -> Result<Dataset> {
    truth.validate()?;
    if !(noise.relative_sigma >= 0.0) {
        return Err(Error::contract("noise sigma must be non-negative"));
    }
    if matches!(observable, SyntheticObservable::TotalMass { .. }) && segments.count() > 1 {
        return Err(Error::contract(
            "total-mass observations are whole-sample only",
        ));
    }
    let ops = OperatorSet::truth(*truth, NormalizationSpec::default());
    let per_run: Vec<Result<(Vec<MeasurementRecord>, Vec<f64>)>> = runs
        .par_iter()
        .enumerate()
        .map(|(k, run)| {
            synth_run(
                run, k, segments, observable, noise, grid, truth, &ops, solver,
            )
        })
        .collect();
    let mut noisy = Vec::new();
    let mut clean_values = Vec::new();
    for r in per_run {
        let (recs, clean) = r?;
        noisy.extend(recs);
        clean_values.extend(clean);
    }
    let clean: Vec<MeasurementRecord> = noisy
        .iter()
        .zip(&clean_values)
        .map(|(r, &v)| MeasurementRecord {
            value_kg: v,
            ..r.clone()
        })
        .collect();
    let mut ds = Dataset::from_records(noisy)?;
    ds.attach_clean(&Dataset::from_records(clean)?)?;
    Ok(ds)
}

#[allow(clippy::too_many_arguments)]
fn synth_run(
    run: &SyntheticRun,
    index: usize,
    segments: &SegmentSpec,
    observable: SyntheticObservable,
    noise: &NoiseSpec,
    grid: &AxiGrid,
    truth: &TruthParams,
    ops: &OperatorSet,
    solver: &SolverConfig,
) -> Result<(Vec<MeasurementRecord>, Vec<f64>)> {
    let first = run
        .schedule
        .cycles
        .first()
        .ok_or_else(|| Error::contract("run without cycles"))?;
    let c_bc = molarity_bc(
        first.condition.partial_pressure,
        first.condition.temperature,
    )?;
    let state0 = CviState::pristine(grid, truth.eps0, c_bc)?;
    let traj = multicycle_rollout(&state0, grid, ops, &run.schedule, solver)?;
    let v0 = grid.total_volume();
    let kind = match observable {
        SyntheticObservable::MassGain => ObservableKind::MassGain,
        SyntheticObservable::TotalMass { .. } => ObservableKind::TotalMass,
    };
    // (record, clean deposit part, series key)
    let mut rows: Vec<(MeasurementRecord, f64, i64)> = Vec::new();
    let mut push = |cycle: usize,
                    cond: &crate::process::OperatingCondition,
                    time: f64,
                    seg: i64,
                    total: f64,
                    dep: f64| {
        rows.push((
            MeasurementRecord {
                run_id: run.id.clone(),
                time_s: time,
                segment_id: seg,
                value_kg: total,
                observable_kind: kind,
                temperature_k: cond.temperature,
                partial_pressure_pa: cond.partial_pressure,
                total_pressure_pa: cond.total_pressure,
                cycle_index: cycle,
            },
            dep,
            seg,
        ));
    };
    if let SyntheticObservable::TotalMass { fiber_density } = observable {
        let baseline = fiber_density * (1.0 - truth.eps0) * v0;
        push(0, &first.condition, 0.0, -1, baseline, 0.0);
    }
    for (c, cyc) in traj.cycles.iter().enumerate() {
        let seg_ranges = segments.snapped(cyc.grid.nz())?;
        for &step in &cyc.observation_steps {
            let snap = &cyc.snapshots[step];
            let time = snap.state.time;
            if matches!(observable, SyntheticObservable::TotalMass { .. }) && c == 0 && time == 0.0
            {
                continue;
            }
            let masses =
                segment_masses(&snap.state, &cyc.grid, truth.deposit_density, &seg_ranges)?;
            match observable {
                SyntheticObservable::MassGain if masses.len() == 1 => {
                    push(c, &cyc.condition, time, -1, masses[0], masses[0])
                }
                SyntheticObservable::MassGain => {
                    for (s, &m) in masses.iter().enumerate() {
                        push(c, &cyc.condition, time, s as i64, m, m);
                    }
                }
                SyntheticObservable::TotalMass { fiber_density } => {
                    let dep: f64 = masses.iter().sum();
                    let base = fiber_density * (1.0 - truth.eps0) * cyc.grid.total_volume();
                    push(c, &cyc.condition, time, -1, base + dep, dep);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::split(noise.seed, index as u64));
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut noisy = Vec::with_capacity(rows.len());
    let mut clean = Vec::with_capacity(rows.len());
    for (k, (rec, _, key)) in rows.iter().enumerate() {
        let final_dep = rows.iter().rev().find(|r| r.2 == *key).map_or(0.0, |r| r.1);
        let z: f64 = std.sample(&mut rng);
        let is_baseline = kind == ObservableKind::TotalMass && k == 0;
        let value = if is_baseline || noise.relative_sigma == 0.0 {
            rec.value_kg
        } else {
            (rec.value_kg + noise.relative_sigma * final_dep * z).max(0.0)
        };
        clean.push(rec.value_kg);
        noisy.push(MeasurementRecord {
            value_kg: value,
            ..rec.clone()
        });
    }
    Ok((noisy, clean))
}
