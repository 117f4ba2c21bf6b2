use std::sync::Arc;

use super::stencil::{JacobiSweep, Stencil};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct JacobiOutcome {
    pub c: Var,
    /// Relative residual of the returned iterate.
    pub residual: f64,
    pub sweeps: usize,
}

fn relative(stencil: &Stencil, c: &[f64], d: &[f64], ks: &[f64]) -> f64 {
    let r = stencil.residual(c, d, ks);
    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let b = stencil.rhs_norm(d);
    if b > 0.0 {
        norm / b
    } else {
        norm
    }
}

/// Plain point-Jacobi iteration on value slices.
///
/// Returns the iterate, its relative residual and the sweeps used. `step`
/// only labels divergence errors.
pub fn jacobi_solve_values(
    stencil: &Stencil,
    d: &[f64],
    ks: &[f64],
    init: &[f64],
    tol: f64,
    max_sweeps: usize,
    step: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let b = stencil.rhs_norm(d);
    let den = stencil.diagonal(d, ks);
    let mut c = init.to_vec();
    let mut next = vec![0.0; c.len()];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        stencil.sweep_into(&c, d, ks, &mut next);
        sweeps += 1;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step,
                sweep: sweeps,
                last_good: None,
            });
        }
        // R(C^k) = Den·(C^{k+1} − C^k) is checked on the iterate just left.
        let done = converged(&den, &c, &next, b, tol);
        std::mem::swap(&mut c, &mut next);
        if done {
            break;
        }
    }
    let res = relative(stencil, &c, d, ks);
    Ok((c, res, sweeps))
}

fn converged(den: &[f64], c: &[f64], next: &[f64], b: f64, tol: f64) -> bool {
    let norm = den
        .iter()
        .zip(c.iter().zip(next))
        .map(|(w, (a, n))| (w * (n - a)) * (w * (n - a)))
        .sum::<f64>()
        .sqrt();
    norm <= tol * if b > 0.0 { b } else { 1.0 }
}

/// Point-Jacobi solve of the discrete balance for `C`, starting from `init`.
///
/// On a gradient tape every sweep is recorded as one node, so reverse mode
/// differentiates the computed iterate exactly. Without gradients the sweeps
/// run untaped and only the result is stored.
#[allow(clippy::too_many_arguments)]
pub fn jacobi_solve(
    tape: &mut Tape,
    stencil: &Arc<Stencil>,
    d: Var,
    ks: Var,
    init: Var,
    tol: f64,
    max_sweeps: usize,
    step: usize,
) -> Result<JacobiOutcome> {
    if !tape.grad_enabled() {
        let (c, residual, sweeps) = jacobi_solve_values(
            stencil,
            tape.value(d),
            tape.value(ks),
            tape.value(init),
            tol,
            max_sweeps,
            step,
        )?;
        let c = tape.constant(c)?;
        return Ok(JacobiOutcome {
            c,
            residual,
            sweeps,
        });
    }
    let op = Arc::new(JacobiSweep {
        stencil: stencil.clone(),
        corrupt: tape.corrupt_fused_adjoint(),
    });
    let b = stencil.rhs_norm(tape.value(d));
    let den = stencil.diagonal(tape.value(d), tape.value(ks));
    let mut c = init;
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        let next = tape.fused(&[c, d, ks], op.clone()).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence {
                step,
                sweep: sweeps + 1,
                last_good: None,
            },
            other => other,
        })?;
        sweeps += 1;
        let done = converged(&den, tape.value(c), tape.value(next), b, tol);
        c = next;
        if done {
            break;
        }
    }
    let residual = relative(stencil, tape.value(c), tape.value(d), tape.value(ks));
    Ok(JacobiOutcome {
        c,
        residual,
        sweeps,
    })
}
