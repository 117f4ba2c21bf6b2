mod common;

use common::*;
use icvi_core::autodiff::{Tape, Var};
use icvi_core::neural::{default_specs, NormalizationSpec, OperatorSet};
use icvi_core::physics::{molarity_bc, one_step, SolverConfig, Stencil};
use icvi_core::process::OperatingCondition;
use icvi_core::training::{adam_update, cosine_lr, AdamState, OptimizerConfig};
use icvi_core::truth::{true_deff, true_k, true_sv, TruthParams};
use std::sync::Arc;

const TEMPS: [f64; 5] = [1150.0, 1200.0, 1250.0, 1300.0, 1350.0];
const PRESSURES: [f64; 4] = [800.0, 1600.0, 3200.0, 6400.0];

fn eps_samples() -> Vec<f64> {
    (0..12).map(|k| 0.05 + 0.05 * k as f64).collect()
}

fn log_misfit(tape: &mut Tape, pred: Var, truth: &[f64]) -> Var {
    let l = tape.ln(pred).unwrap();
    let c = tape
        .constant(truth.iter().map(|v| -v.ln()).collect())
        .unwrap();
    let r = tape.add(l, c).unwrap();
    let sq = tape.mul(r, r).unwrap();
    tape.sum(sq).unwrap()
}

/// Pointwise log-space regression of every closure onto the truth model.
fn distill() -> OperatorSet {
    let tp = TruthParams::default();
    let mut set = OperatorSet::neural(
        default_specs(&[16, 16], 2e-4, 3e-6),
        21,
        NormalizationSpec::default(),
        tp.material(),
    )
    .unwrap();
    let eps = eps_samples();
    let opt = OptimizerConfig {
        learning_rate: 1e-2,
        epochs: 1500,
        ..Default::default()
    };
    let mut state = AdamState::new(set.param_count());
    for step in 0..opt.epochs {
        let mut tape = Tape::new();
        let ops = set.bind(&mut tape).unwrap();
        let e = tape.constant(eps.clone()).unwrap();
        let mut total = tape.scalar_constant(0.0).unwrap();
        for &t in &TEMPS {
            for &p in &PRESSURES {
                let cond = OperatingCondition {
                    temperature: t,
                    total_pressure: p,
                    partial_pressure: p,
                    duration: 0.0,
                };
                let d = ops.eval_deff(&mut tape, e, &cond).unwrap();
                let truth: Vec<f64> = eps.iter().map(|&x| true_deff(x, t, p, &tp)).collect();
                let m = log_misfit(&mut tape, d, &truth);
                total = tape.add(total, m).unwrap();
            }
            let cond = OperatingCondition {
                temperature: t,
                total_pressure: 1600.0,
                partial_pressure: 1600.0,
                duration: 0.0,
            };
            let k = ops.eval_k(&mut tape, &cond).unwrap();
            let m = log_misfit(&mut tape, k, &[true_k(t, &tp)]);
            total = tape.add(total, m).unwrap();
        }
        let sv = ops.eval_sv(&mut tape, e).unwrap();
        let truth: Vec<f64> = eps.iter().map(|&x| true_sv(x, &tp)).collect();
        let m = log_misfit(&mut tape, sv, &truth);
        total = tape.add(total, m).unwrap();
        let grad = tape.backward(total).unwrap();
        let mut theta = set.flat_params();
        adam_update(
            &mut theta,
            &grad,
            &mut state,
            cosine_lr(step, opt.epochs, &opt),
            &opt,
        )
        .unwrap();
        set.set_flat_params(&theta).unwrap();
    }
    set
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn distilled_closures_reproduce_truth() {
    let tp = TruthParams::default();
    let set = distill();
    let cond = OperatingCondition {
        temperature: 1250.0,
        total_pressure: 1600.0,
        partial_pressure: 1600.0,
        duration: 0.0,
    };
    let d = set.deff_field(&[0.6], &cond).unwrap()[0];
    assert!((d - 1.25e-4).abs() / 1.25e-4 < 0.05, "D_eff {d}");
    assert!(rel(d, true_deff(0.6, 1250.0, 1600.0, &tp)) < 0.03);
    let k = set.k_value(&cond).unwrap();
    assert!(rel(k, 2.07e-6) < 0.03, "K {k}");
    let sv = set.sv_field(&[0.3, 0.45]).unwrap();
    assert!(rel(sv[0], true_sv(0.3, &tp)) < 0.03);
    assert!(rel(sv[1], true_sv(0.45, &tp)) < 0.03);

    // one step from a pristine preform against the truth step
    let g = grid(8, 16);
    let c = condition(1250.0, 1600.0, 10.0);
    let cfg = SolverConfig {
        dt: hours(10.0),
        jacobi_tol: 1e-10,
        jacobi_max_sweeps: 20_000,
        ..Default::default()
    };
    let c_bc = molarity_bc(c.partial_pressure, c.temperature).unwrap();
    let stencil = Arc::new(Stencil::new(&g, &cfg.faces.boundary(c_bc), cfg.stencil).unwrap());
    let step = |ops: &OperatorSet| -> Vec<f64> {
        let mut tape = Tape::without_grad();
        let bound = ops.bind(&mut tape).unwrap();
        let eps = tape.constant(vec![tp.eps0; g.len()]).unwrap();
        let c0 = tape.constant(vec![c_bc; g.len()]).unwrap();
        let out = one_step(&mut tape, &bound, &stencil, eps, c0, &c, &cfg, 0).unwrap();
        tape.value(out.eps_next).to_vec()
    };
    let a = step(&set);
    let b = step(&truth_ops());
    for (x, y) in a.iter().zip(&b) {
        let (dx, dy) = (tp.eps0 - x, tp.eps0 - y);
        assert!(rel(dx, dy) < 0.05, "porosity drop {dx} vs {dy}");
    }
}
