use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::{ResidualForm, RunPlan, TrainingProblem};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::neural::{BoundOperators, OperatorSet};
use crate::physics::{rollout_taped, BalanceResidual, TapedState};

/// The four loss terms with weights applied; `total` is their sum in order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Observable misfit.
    pub term1: f64,
    /// `β₁‖θ‖₂`
    pub term2: f64,
    /// `β₂ Σ‖v_{t+k} − v_t‖₂`
    pub term3: f64,
    /// `β₃‖residual‖`
    pub term4: f64,
}

impl LossBreakdown {
    fn assemble(term1: f64, term2: f64, term3: f64, term4: f64) -> Self {
        Self {
            total: term1 + term2 + term3 + term4,
            term1,
            term2,
            term3,
            term4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    pub max_residual: f64,
    pub max_sweeps: usize,
    pub clamps: usize,
}

impl SolveStats {
    fn merge(&mut self, other: &SolveStats) {
        self.max_residual = self.max_residual.max(other.max_residual);
        self.max_sweeps = self.max_sweeps.max(other.max_sweeps);
        self.clamps += other.clamps;
    }
}

#[derive(Debug, Clone, Default)]
pub struct LossEvaluation {
    pub loss: LossBreakdown,
    /// Flat gradient in the operator layout; empty for value-only evaluation.
    pub gradient: Vec<f64>,
    pub stats: SolveStats,
    /// Per-run relative residuals of every solve, in step order.
    pub residuals: Vec<Vec<f64>>,
}

struct RunTerms {
    term1: Var,
    term3: Var,
    term4: Var,
}

fn zero(tape: &mut Tape) -> Result<Var> {
    tape.scalar_constant(0.0)
}

/// Records one run's rollout and its loss terms (weights applied to 3 and 4).
fn record_run(
    tape: &mut Tape,
    ops: &BoundOperators<'_>,
    problem: &TrainingProblem,
    run: &RunPlan,
    stats: &mut SolveStats,
    residuals: &mut Vec<f64>,
) -> Result<RunTerms> {
    let eps0 = problem.eps0;
    let mut term1 = zero(tape)?;
    let mut term3 = zero(tape)?;
    let mut res_sq = zero(tape)?;
    let mut eps = tape.constant(vec![eps0; problem.grid.len()])?;
    for cycle in &run.cycles {
        let c0 = tape.constant(vec![cycle.c_bc; cycle.grid.len()])?;
        let sb = tape.constant(cycle.stencil.boundary_source().to_vec())?;
        let has_source = cycle.stencil.boundary_source().iter().any(|&v| v != 0.0);
        let residual_op = Arc::new(BalanceResidual {
            stencil: cycle.stencil.clone(),
        });
        let inv_c = if cycle.c_bc > 0.0 {
            1.0 / cycle.c_bc
        } else {
            1.0
        };
        let mut prev_smooth: Option<(Var, Var)> = None;
        let mut observe = |tape: &mut Tape, st: &TapedState| -> Result<()> {
            if let Some(targets) = cycle.observations.get(&st.index) {
                let mut parts = Vec::with_capacity(targets.len());
                for t in targets {
                    let w = &cycle.weights[cycle.weight_index(t.segment)];
                    let vsum: f64 = w.iter().sum();
                    let wv = tape.constant(w.as_ref().clone())?;
                    let we = tape.mul(st.eps, wv)?;
                    let s = tape.sum(we)?;
                    let rho = ops.set().material.deposit_density;
                    // (ρ(ε₀ΣV − Σ V ε) − m̂) / scale
                    let r = tape.affine(
                        s,
                        -rho / run.scale,
                        (rho * eps0 * vsum - t.value) / run.scale,
                    )?;
                    parts.push(r);
                }
                let v = tape.concat(&parts)?;
                let sq = tape.mul(v, v)?;
                let s = tape.sum(sq)?;
                let norm = tape.sqrt(s)?;
                term1 = tape.add(term1, norm)?;
            }
            let Some(step) = st.step else { return Ok(()) };
            stats.merge(&SolveStats {
                max_residual: step.diagnostics.residual,
                max_sweeps: step.diagnostics.sweeps,
                clamps: step.diagnostics.clamps,
            });
            residuals.push(step.diagnostics.residual);
            if problem.weights.beta2 > 0.0 && st.index % problem.smooth_every == 0 {
                let c_scaled = tape.scale(step.c, inv_c)?;
                if let Some((pe, pc)) = prev_smooth {
                    let de = tape.sub(st.eps, pe)?;
                    let dc = tape.sub(c_scaled, pc)?;
                    let v = tape.concat(&[de, dc])?;
                    let sq = tape.mul(v, v)?;
                    let s = tape.sum(sq)?;
                    let norm = tape.sqrt(s)?;
                    term3 = tape.add(term3, norm)?;
                }
                prev_smooth = Some((st.eps, c_scaled));
            }
            if problem.weights.beta3 > 0.0 {
                let mut r = tape.fused(&[step.c, step.deff, step.ks], residual_op.clone())?;
                if problem.residual_form == ResidualForm::Literal {
                    // D∇²C − D·KS·C = (D∇²C − KS·C) + KS·C·(1 − D)
                    let ksc = tape.mul(step.ks, step.c)?;
                    let one_minus_d = tape.affine(step.deff, -1.0, 1.0)?;
                    let extra = tape.mul(ksc, one_minus_d)?;
                    r = tape.add(r, extra)?;
                }
                let rr = tape.mul(r, r)?;
                let mut rel = tape.sum(rr)?;
                if has_source {
                    let b = tape.mul(step.deff, sb)?;
                    let bb = tape.mul(b, b)?;
                    let bn = tape.sum(bb)?;
                    rel = tape.div(rel, bn)?;
                }
                res_sq = tape.add(res_sq, rel)?;
            }
            Ok(())
        };
        let eps_end = rollout_taped(
            tape,
            ops,
            &cycle.stencil,
            eps,
            c0,
            &cycle.condition,
            &problem.solver,
            cycle.n_steps,
            &mut observe,
        )?;
        eps = match &cycle.keep_after {
            Some(keep) => tape.gather(eps_end, keep.clone())?,
            None => eps_end,
        };
    }
    let term3 = tape.scale(term3, problem.weights.beta2)?;
    let rn = tape.sqrt(res_sq)?;
    let term4 = tape.scale(rn, problem.weights.beta3)?;
    Ok(RunTerms {
        term1,
        term3,
        term4,
    })
}

struct RunResult {
    terms: [f64; 3],
    gradient: Vec<f64>,
    stats: SolveStats,
    residuals: Vec<f64>,
}

fn eval_run(
    set: &OperatorSet,
    problem: &TrainingProblem,
    run: &RunPlan,
    with_grad: bool,
) -> Result<RunResult> {
    let mut tape = if with_grad {
        Tape::new()
    } else {
        Tape::without_grad()
    };
    tape.set_corrupt_fused_adjoint(problem.corrupt_adjoint);
    let ops = set.bind(&mut tape)?;
    let mut stats = SolveStats::default();
    let mut residuals = Vec::new();
    let t = record_run(&mut tape, &ops, problem, run, &mut stats, &mut residuals)?;
    let terms = [
        tape.scalar(t.term1),
        tape.scalar(t.term3),
        tape.scalar(t.term4),
    ];
    let gradient = if with_grad {
        let a = tape.add(t.term1, t.term3)?;
        let total = tape.add(a, t.term4)?;
        tape.backward(total)?
    } else {
        Vec::new()
    };
    Ok(RunResult {
        terms,
        gradient,
        stats,
        residuals,
    })
}

/// `β₁‖θ‖₂` and its gradient, on its own tape.
fn param_norm(theta: &[f64], beta1: f64) -> Result<(f64, Vec<f64>)> {
    if theta.is_empty() || beta1 == 0.0 {
        return Ok((0.0, vec![0.0; theta.len()]));
    }
    let mut tape = Tape::new();
    let p = tape.param(theta.to_vec())?;
    let sq = tape.mul(p, p)?;
    let s = tape.sum(sq)?;
    let n = tape.sqrt(s)?;
    let t = tape.scale(n, beta1)?;
    Ok((tape.scalar(t), tape.backward(t)?))
}

fn evaluate(
    set: &OperatorSet,
    problem: &TrainingProblem,
    with_grad: bool,
) -> Result<LossEvaluation> {
    if problem.runs.is_empty() {
        return Err(Error::contract("loss needs at least one run"));
    }
    if problem
        .runs
        .iter()
        .any(|r| r.cycles.iter().all(|c| c.observations.is_empty()))
    {
        return Err(Error::contract("every run needs at least one observation"));
    }
    let results: Vec<Result<RunResult>> = problem
        .runs
        .par_iter()
        .map(|run| eval_run(set, problem, run, with_grad))
        .collect();
    let theta = set.flat_params();
    let (term2, g2) = param_norm(&theta, problem.weights.beta1)?;
    let mut sums = [0.0; 3];
    let mut gradient = if with_grad { g2 } else { Vec::new() };
    let mut stats = SolveStats::default();
    let mut residuals = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        for (s, v) in sums.iter_mut().zip(r.terms) {
            *s += v;
        }
        for (g, v) in gradient.iter_mut().zip(&r.gradient) {
            *g += v;
        }
        stats.merge(&r.stats);
        residuals.push(r.residuals);
    }
    let loss = LossBreakdown::assemble(sums[0], term2, sums[1], sums[2]);
    if !loss.total.is_finite() {
        return Err(Error::Evaluation("non-finite loss".into()));
    }
    Ok(LossEvaluation {
        loss,
        gradient,
        stats,
        residuals,
    })
}

/// Loss value and breakdown without gradients.
pub fn loss(set: &OperatorSet, problem: &TrainingProblem) -> Result<LossEvaluation> {
    evaluate(set, problem, false)
}

/// Loss and its gradient with respect to the flat operator parameters.
pub fn loss_and_grad(set: &OperatorSet, problem: &TrainingProblem) -> Result<LossEvaluation> {
    evaluate(set, problem, true)
}
