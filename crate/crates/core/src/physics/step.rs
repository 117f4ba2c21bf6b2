use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::jacobi::jacobi_solve;
use super::stencil::Stencil;
use super::SolverConfig;
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::neural::BoundOperators;
use crate::process::{Material, OperatingCondition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepper {
    #[default]
    Euler,
    /// Classical RK4 in time with `C` and `K` held at their start-of-step values.
    Rk4FrozenC,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub residual: f64,
    pub sweeps: usize,
    pub clamps: usize,
}

/// Values produced by [`one_step`]. `c`, `deff` and `ks` belong to the
/// input porosity; `eps_next` is the advanced porosity.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub eps_next: Var,
    pub c: Var,
    pub deff: Var,
    pub ks: Var,
    pub diagnostics: StepDiagnostics,
}

/// Advances porosity by `dt` under `dε/dt = −(q M_d/ρ_d)·K·S_v(ε)·C`,
/// clamping the result to `[0, ε₀]`. Returns the new porosity and the number
/// of clamped cells.
#[allow(clippy::too_many_arguments)]
pub fn porosity_step(
    tape: &mut Tape,
    eps: Var,
    c: Var,
    k: Var,
    sv: &mut dyn FnMut(&mut Tape, Var) -> Result<Var>,
    material: &Material,
    dt: f64,
    stepper: Stepper,
) -> Result<(Var, usize)> {
    let rate_scale = -material.deposition_factor();
    let kc = tape.mul(k, c)?;
    let mut rate = |tape: &mut Tape, e: Var| -> Result<Var> {
        let s = sv(tape, e)?;
        let r = tape.mul(kc, s)?;
        tape.scale(r, rate_scale)
    };
    let raw = match stepper {
        Stepper::Euler => {
            let r = rate(tape, eps)?;
            let inc = tape.scale(r, dt)?;
            tape.add(eps, inc)?
        }
        Stepper::Rk4FrozenC => {
            let stage = |tape: &mut Tape, r: Var, h: f64| -> Result<Var> {
                let inc = tape.scale(r, h)?;
                let e = tape.add(eps, inc)?;
                tape.clamp(e, 0.0, material.eps0)
            };
            let k1 = rate(tape, eps)?;
            let e2 = stage(tape, k1, 0.5 * dt)?;
            let k2 = rate(tape, e2)?;
            let e3 = stage(tape, k2, 0.5 * dt)?;
            let k3 = rate(tape, e3)?;
            let e4 = stage(tape, k3, dt)?;
            let k4 = rate(tape, e4)?;
            let k23 = tape.add(k2, k3)?;
            let k23 = tape.scale(k23, 2.0)?;
            let s = tape.add(k1, k23)?;
            let s = tape.add(s, k4)?;
            let inc = tape.scale(s, dt / 6.0)?;
            tape.add(eps, inc)?
        }
    };
    let clamps = tape
        .value(raw)
        .iter()
        .filter(|&&v| !(0.0..=material.eps0).contains(&v))
        .count();
    let next = tape.clamp(raw, 0.0, material.eps0)?;
    Ok((next, clamps))
}

/// One time step: closures at `eps`, elliptic solve for `C` (started from
/// `c_start`), porosity update.
#[allow(clippy::too_many_arguments)]
pub fn one_step(
    tape: &mut Tape,
    ops: &BoundOperators<'_>,
    stencil: &Arc<Stencil>,
    eps: Var,
    c_start: Var,
    cond: &OperatingCondition,
    cfg: &SolverConfig,
    step: usize,
) -> Result<StepOutput> {
    let material = ops.set().material;
    let deff = ops.eval_deff(tape, eps, cond)?;
    let k = ops.eval_k(tape, cond)?;
    let sv = ops.eval_sv(tape, eps)?;
    let ks = tape.mul(k, sv)?;
    let sol = jacobi_solve(
        tape,
        stencil,
        deff,
        ks,
        c_start,
        cfg.jacobi_tol,
        cfg.jacobi_max_sweeps,
        step,
    )?;
    let mut sv_at = |tape: &mut Tape, e: Var| -> Result<Var> {
        if e == eps {
            Ok(sv)
        } else {
            ops.eval_sv(tape, e)
        }
    };
    let (eps_next, clamps) = porosity_step(
        tape,
        eps,
        sol.c,
        k,
        &mut sv_at,
        &material,
        cfg.dt,
        cfg.stepper,
    )?;
    Ok(StepOutput {
        eps_next,
        c: sol.c,
        deff,
        ks,
        diagnostics: StepDiagnostics {
            residual: sol.residual,
            sweeps: sol.sweeps,
            clamps,
        },
    })
}
