mod common;

use common::*;
use icvi_core::grid::{segment_masses, SegmentSpec, TrimSpec};
use icvi_core::physics::{
    molarity_bc, multicycle_rollout, rollout, CycleSchedule, CycleSpec, SolverConfig,
};
use icvi_core::truth::TruthParams;

fn solver(dt_h: f64) -> SolverConfig {
    SolverConfig {
        dt: hours(dt_h),
        jacobi_tol: 1e-10,
        jacobi_max_sweeps: 20_000,
        ..Default::default()
    }
}

#[test]
fn truth_rollout_respects_invariants() {
    let g = grid(8, 16);
    let cond = condition(1300.0, 3200.0, 350.0);
    let traj = rollout(
        &pristine(&g, &cond),
        &g,
        &truth_ops(),
        &cond,
        &solver(10.0),
        &[],
    )
    .unwrap();
    let c_bc = molarity_bc(cond.partial_pressure, cond.temperature).unwrap();
    let eps0 = TruthParams::default().eps0;
    let seg = SegmentSpec::new(vec![0.0, 0.25, 0.625, 1.0]).unwrap();
    let rho = TruthParams::default().deposit_density;
    for w in traj.snapshots.windows(2) {
        let (a, b) = (w[0].state.porosity.values(), w[1].state.porosity.values());
        assert!(a.iter().zip(b).all(|(x, y)| y <= x), "porosity increased");
    }
    for s in &traj.snapshots {
        assert!(s
            .state
            .porosity
            .values()
            .iter()
            .all(|e| (0.0..=eps0).contains(e)));
        assert!(s
            .state
            .molarity
            .values()
            .iter()
            .all(|c| *c >= 0.0 && *c <= c_bc * (1.0 + 1e-12)));
        let parts = segment_masses(&s.state, &g, rho, &seg).unwrap();
        let whole = segment_masses(&s.state, &g, rho, &SegmentSpec::whole()).unwrap()[0];
        let sum: f64 = parts.iter().sum();
        assert!((sum - whole).abs() <= 1e-12 * whole.abs().max(f64::MIN_POSITIVE));
    }
    let last = traj.final_state().porosity.values();
    assert!(last.iter().all(|e| *e < eps0));
    // densification is faster at the surface than on the axis
    assert!(last[g.index(g.nr() - 1, g.nz() / 2)] < last[g.index(0, g.nz() / 2)]);
}

#[test]
fn deposit_matches_reaction_integral() {
    let g = grid(8, 16);
    let cond = condition(1300.0, 3200.0, 350.0);
    let cfg = solver(2.0);
    let traj = rollout(&pristine(&g, &cond), &g, &truth_ops(), &cond, &cfg, &[]).unwrap();
    let m = deposit(traj.final_state(), &g);
    let integral = reaction_integral(&traj.snapshots, &g, cfg.dt);
    assert!(
        (m - integral).abs() / m < 5e-3,
        "mass {m} integral {integral}"
    );
}

#[test]
fn time_step_refinement_is_first_order() {
    let g = grid(8, 16);
    let cond = condition(1300.0, 3200.0, 350.0);
    let mass = |dt_h: f64| {
        let traj = rollout(
            &pristine(&g, &cond),
            &g,
            &truth_ops(),
            &cond,
            &solver(dt_h),
            &[],
        )
        .unwrap();
        deposit(traj.final_state(), &g)
    };
    let (m1, m2, m4) = (mass(10.0), mass(5.0), mass(2.5));
    assert!((m1 - m2).abs() / m2 < 5e-3);
    let ratio = (m1 - m2) / (m2 - m4);
    assert!((1.6..2.4).contains(&ratio), "Richardson ratio {ratio}");
}

fn three_cycles(trim: Option<TrimSpec>) -> CycleSchedule {
    let cond = condition(1250.0, 1600.0, 100.0);
    let times: Vec<f64> = (1..=5).map(|k| hours(20.0 * k as f64)).collect();
    let mut cycles: Vec<CycleSpec> = (0..3)
        .map(|_| CycleSpec {
            condition: cond,
            observation_times: times.clone(),
            trim_after: trim,
        })
        .collect();
    cycles[2].trim_after = None;
    CycleSchedule { cycles }
}

#[test]
fn multicycle_sawtooth_bookkeeping() {
    let g = grid(8, 16);
    let trim = TrimSpec {
        radial_trim: 2.0 * g.dr(),
        top_trim: g.dz(),
        bottom_trim: g.dz(),
    };
    let sched = three_cycles(Some(trim));
    let cond = sched.cycles[0].condition;
    let traj = multicycle_rollout(
        &pristine(&g, &cond),
        &g,
        &truth_ops(),
        &sched,
        &solver(10.0),
    )
    .unwrap();
    assert_eq!(traj.cycles.len(), 3);
    assert_eq!(traj.machining.len(), 2);
    for cyc in &traj.cycles {
        let masses: Vec<f64> = cyc
            .snapshots
            .iter()
            .map(|s| deposit(&s.state, &cyc.grid))
            .collect();
        assert!(
            masses.windows(2).all(|w| w[1] > w[0]),
            "phase is not a monotone rise"
        );
    }
    for (k, ev) in traj.machining.iter().enumerate() {
        let before = deposit(traj.cycles[k].final_state(), &traj.cycles[k].grid);
        let after = deposit(
            &traj.cycles[k + 1].snapshots[0].state,
            &traj.cycles[k + 1].grid,
        );
        assert!(after < before);
        let drop = before - after;
        assert!(
            (drop - ev.trimmed_deposit).abs() <= 1e-10 * ev.trimmed_deposit,
            "drop {drop} trimmed {}",
            ev.trimmed_deposit
        );
    }
}

#[test]
fn zero_trim_matches_one_long_cycle() {
    let g = grid(8, 16);
    let sched = three_cycles(Some(TrimSpec::default()));
    let cond = sched.cycles[0].condition;
    let cfg = solver(10.0);
    let multi = multicycle_rollout(&pristine(&g, &cond), &g, &truth_ops(), &sched, &cfg).unwrap();
    assert!(multi.machining.is_empty());
    let long = condition(cond.temperature, cond.total_pressure, 300.0);
    let single = rollout(&pristine(&g, &long), &g, &truth_ops(), &long, &cfg, &[]).unwrap();
    let a = multi.cycles[2].final_state().porosity.values();
    let b = single.final_state().porosity.values();
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-8, "{x} vs {y}");
    }
}

#[test]
fn oversized_trim_is_invalid_geometry() {
    let g = grid(8, 16);
    let trim = TrimSpec {
        radial_trim: g.radius(),
        top_trim: 0.0,
        bottom_trim: 0.0,
    };
    let sched = three_cycles(Some(trim));
    let cond = sched.cycles[0].condition;
    let r = multicycle_rollout(
        &pristine(&g, &cond),
        &g,
        &truth_ops(),
        &sched,
        &solver(10.0),
    );
    assert!(
        matches!(r, Err(icvi_core::Error::InvalidGeometry(_))),
        "{r:?}"
    );
}

#[test]
fn rollouts_are_bitwise_repeatable() {
    let g = grid(8, 16);
    let cond = condition(1200.0, 800.0, 70.0);
    let run = || {
        rollout(
            &pristine(&g, &cond),
            &g,
            &truth_ops(),
            &cond,
            &solver(10.0),
            &[],
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        assert_eq!(x.state, y.state);
        assert_eq!(x.ks, y.ks);
    }
}
