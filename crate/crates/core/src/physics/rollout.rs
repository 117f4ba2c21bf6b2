use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::stencil::Stencil;
use super::step::{one_step, StepDiagnostics, StepOutput};
use super::{molarity_bc, SolverConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::grid::{apply_machining, AxiGrid, CviState, ScalarField, TrimSpec};
use crate::neural::{BoundOperators, OperatorSet};
use crate::process::OperatingCondition;

/// Number of steps of size `dt` spanning `duration`; the ratio must be integral.
pub fn step_count(duration: f64, dt: f64) -> Result<usize> {
    let ratio = duration / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::contract(format!(
            "duration {duration} s is not a whole number of {dt} s steps"
        )));
    }
    Ok(n as usize)
}

/// Step indices nearest to each observation time (relative to cycle start).
pub fn snap_observations(times: &[f64], dt: f64, n_steps: usize) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            let k = (t / dt).round();
            if !(t >= 0.0) || k as usize > n_steps {
                return Err(Error::contract(format!(
                    "observation time {t} s outside the cycle"
                )));
            }
            if (t - k * dt).abs() > 1e-9 * dt {
                log::warn!("observation at {t} s snapped to step {k} ({} s)", k * dt);
            }
            Ok(k as usize)
        })
        .collect()
}

/// State and closure fields at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub state: CviState,
    pub deff: Vec<f64>,
    /// `K·S_v`, 1/s.
    pub ks: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CycleTrajectory {
    pub grid: AxiGrid,
    pub condition: OperatingCondition,
    /// One snapshot per step, including both ends.
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Snapshot index of each requested observation.
    pub observation_steps: Vec<usize>,
}

impl CycleTrajectory {
    pub fn start_time(&self) -> f64 {
        self.snapshots[0].state.time
    }

    pub fn final_state(&self) -> &CviState {
        &self.snapshots.last().expect("at least one snapshot").state
    }
}

fn stencil_for(
    grid: &AxiGrid,
    cond: &OperatingCondition,
    cfg: &SolverConfig,
) -> Result<(Arc<Stencil>, f64)> {
    let c_bc = molarity_bc(cond.partial_pressure, cond.temperature)?;
    let stencil = Stencil::new(grid, &cfg.faces.boundary(c_bc), cfg.stencil)?;
    Ok((Arc::new(stencil), c_bc))
}

/// Untaped auto-regressive rollout over one cycle.
///
/// `state0.molarity` seeds the first elliptic solve.
pub fn rollout(
    state0: &CviState,
    grid: &AxiGrid,
    ops: &OperatorSet,
    cond: &OperatingCondition,
    cfg: &SolverConfig,
    observation_times: &[f64],
) -> Result<CycleTrajectory> {
    cfg.validate()?;
    cond.validate()?;
    ops.validate()?;
    if !state0.porosity.matches(grid) {
        return Err(Error::contract("state does not match the grid"));
    }
    let n_steps = step_count(cond.duration, cfg.dt)?;
    let observation_steps = snap_observations(observation_times, cfg.dt, n_steps)?;
    let (stencil, _) = stencil_for(grid, cond, cfg)?;

    let mut snapshots = Vec::with_capacity(n_steps + 1);
    let mut diagnostics = Vec::with_capacity(n_steps);
    let mut eps = state0.porosity.values().to_vec();
    let mut c_guess = state0.molarity.values().to_vec();
    for n in 0..=n_steps {
        let time = state0.time + n as f64 * cfg.dt;
        let mut tape = Tape::without_grad();
        let bound = ops.bind(&mut tape)?;
        let e = tape.constant(eps.clone())?;
        let c0 = tape.constant(c_guess.clone())?;
        let last_good = || CviState {
            porosity: ScalarField::new(grid, eps.clone()).expect("finite porosity"),
            molarity: ScalarField::new(grid, c_guess.clone()).expect("finite molarity"),
            eps0: state0.eps0,
            time,
        };
        let out = one_step(&mut tape, &bound, &stencil, e, c0, cond, cfg, n)
            .map_err(|err| err.with_last_good(&last_good()))?;
        let c = tape.value(out.c).to_vec();
        snapshots.push(Snapshot {
            state: CviState::new(
                ScalarField::new(grid, eps.clone())?,
                ScalarField::new(grid, c.clone())?,
                state0.eps0,
                time,
            )?,
            deff: tape.value(out.deff).to_vec(),
            ks: tape.value(out.ks).to_vec(),
        });
        if n < n_steps {
            diagnostics.push(out.diagnostics);
            eps = tape.value(out.eps_next).to_vec();
            if cfg.warm_start {
                c_guess = c;
            }
        }
    }
    Ok(CycleTrajectory {
        grid: grid.clone(),
        condition: *cond,
        snapshots,
        diagnostics,
        observation_steps,
    })
}

/// What a taped rollout hands to its observer at each time level. `step` is
/// `None` at the final level, where no solve is performed.
pub struct TapedState {
    pub index: usize,
    pub eps: Var,
    pub step: Option<StepOutput>,
}

/// Taped rollout of `n_steps` steps. `observe` sees every time level in order
/// and may record further nodes (loss terms) on the same tape.
#[allow(clippy::too_many_arguments)]
pub fn rollout_taped<F>(
    tape: &mut Tape,
    ops: &BoundOperators<'_>,
    stencil: &Arc<Stencil>,
    eps0: Var,
    c0: Var,
    cond: &OperatingCondition,
    cfg: &SolverConfig,
    n_steps: usize,
    mut observe: F,
) -> Result<Var>
where
    F: FnMut(&mut Tape, &TapedState) -> Result<()>,
{
    let mut eps = eps0;
    let mut c_guess = c0;
    for n in 0..n_steps {
        let out = one_step(tape, ops, stencil, eps, c_guess, cond, cfg, n)?;
        observe(
            tape,
            &TapedState {
                index: n,
                eps,
                step: Some(out),
            },
        )?;
        eps = out.eps_next;
        if cfg.warm_start {
            c_guess = out.c;
        }
    }
    observe(
        tape,
        &TapedState {
            index: n_steps,
            eps,
            step: None,
        },
    )?;
    Ok(eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSpec {
    pub condition: OperatingCondition,
    /// Relative to the cycle start, s.
    pub observation_times: Vec<f64>,
    /// Machining applied once this cycle ends.
    pub trim_after: Option<TrimSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSchedule {
    pub cycles: Vec<CycleSpec>,
}

impl CycleSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.cycles.is_empty() {
            return Err(Error::contract("schedule has no cycles"));
        }
        for c in &self.cycles {
            c.condition.validate()?;
            if !(c.condition.duration > 0.0) {
                return Err(Error::contract("cycle durations must be positive"));
            }
            if c.observation_times
                .iter()
                .any(|&t| !(0.0..=c.condition.duration).contains(&t))
            {
                return Err(Error::contract("observation time outside its cycle"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachiningEvent {
    pub after_cycle: usize,
    pub time: f64,
    pub deposit_before: f64,
    pub deposit_after: f64,
    /// Deposit mass summed over the removed cells.
    pub trimmed_deposit: f64,
}

#[derive(Debug, Clone)]
pub struct MulticycleTrajectory {
    pub cycles: Vec<CycleTrajectory>,
    pub machining: Vec<MachiningEvent>,
}

fn total_deposit(state: &CviState, grid: &AxiGrid, rho_d: f64) -> f64 {
    let vol = grid.volumes();
    state
        .deposit_fraction()
        .iter()
        .zip(&vol)
        .map(|(f, v)| rho_d * f * v)
        .sum()
}

/// Consecutive cycles with machining in between. Porosity carries across
/// machining on the surviving cells; molarity restarts at the next cycle's
/// boundary value.
pub fn multicycle_rollout(
    state0: &CviState,
    grid: &AxiGrid,
    ops: &OperatorSet,
    schedule: &CycleSchedule,
    cfg: &SolverConfig,
) -> Result<MulticycleTrajectory> {
    schedule.validate()?;
    let rho_d = ops.material.deposit_density;
    let mut grid = grid.clone();
    let mut state = state0.clone();
    let mut cycles = Vec::with_capacity(schedule.cycles.len());
    let mut machining = Vec::new();
    for (k, spec) in schedule.cycles.iter().enumerate() {
        let c_bc = molarity_bc(spec.condition.partial_pressure, spec.condition.temperature)?;
        if k > 0 {
            state.molarity = ScalarField::uniform(&grid, c_bc);
        }
        let traj = rollout(
            &state,
            &grid,
            ops,
            &spec.condition,
            cfg,
            &spec.observation_times,
        )?;
        state = traj.final_state().clone();
        cycles.push(traj);
        if let Some(trim) = spec.trim_after.filter(|t| !t.is_identity()) {
            let (new_grid, kept_idx) = trim.retained_cells(&grid)?;
            let before = total_deposit(&state, &grid, rho_d);
            let mut keep = vec![false; grid.len()];
            kept_idx.iter().for_each(|&i| keep[i] = true);
            let vol = grid.volumes();
            let frac = state.deposit_fraction();
            let trimmed: f64 = (0..grid.len())
                .filter(|&i| !keep[i])
                .map(|i| rho_d * frac[i] * vol[i])
                .sum();
            let (g2, s2) = apply_machining(&state, &grid, &trim)?;
            debug_assert_eq!(g2, new_grid);
            let after = total_deposit(&s2, &g2, rho_d);
            machining.push(MachiningEvent {
                after_cycle: k,
                time: state.time,
                deposit_before: before,
                deposit_after: after,
                trimmed_deposit: trimmed,
            });
            grid = g2;
            state = s2;
        }
    }
    Ok(MulticycleTrajectory { cycles, machining })
}
