#![allow(dead_code)]

use icvi_core::grid::{AxiGrid, CviState};
use icvi_core::neural::{NormalizationSpec, OperatorSet};
use icvi_core::physics::{molarity_bc, Snapshot};
use icvi_core::process::{OperatingCondition, SECONDS_PER_HOUR};
use icvi_core::truth::TruthParams;

pub fn hours(h: f64) -> f64 {
    h * SECONDS_PER_HOUR
}

pub fn grid(nr: usize, nz: usize) -> AxiGrid {
    AxiGrid::new(0.02, 0.04, nr, nz).unwrap()
}

pub fn truth_ops() -> OperatorSet {
    OperatorSet::truth(TruthParams::default(), NormalizationSpec::default())
}

pub fn condition(t: f64, p: f64, h: f64) -> OperatingCondition {
    OperatingCondition {
        temperature: t,
        total_pressure: p,
        partial_pressure: p,
        duration: hours(h),
    }
}

pub fn pristine(grid: &AxiGrid, cond: &OperatingCondition) -> CviState {
    let c = molarity_bc(cond.partial_pressure, cond.temperature).unwrap();
    CviState::pristine(grid, TruthParams::default().eps0, c).unwrap()
}

pub fn deposit(state: &CviState, grid: &AxiGrid) -> f64 {
    let rho = TruthParams::default().deposit_density;
    state
        .deposit_fraction()
        .iter()
        .zip(grid.volumes())
        .map(|(f, v)| rho * f * v)
        .sum()
}

/// `q M_d ∫∫ K S_v C dV dt` by the trapezoid rule over stored levels.
pub fn reaction_integral(snaps: &[Snapshot], grid: &AxiGrid, dt: f64) -> f64 {
    let tp = TruthParams::default();
    let vol = grid.volumes();
    let rate = |s: &Snapshot| -> f64 {
        let c = s.state.molarity.values();
        (0..vol.len()).map(|i| s.ks[i] * c[i] * vol[i]).sum::<f64>()
    };
    let rates: Vec<f64> = snaps.iter().map(rate).collect();
    let trap: f64 = rates.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum();
    tp.stoichiometry * tp.molar_mass * trap
}

use icvi_core::grid::SegmentSpec;
use icvi_core::io::Dataset;
use icvi_core::physics::{CycleSchedule, CycleSpec, SolverConfig};
use icvi_core::training::{LossWeights, ProblemSettings, ResidualForm, TrainingProblem};
use icvi_core::truth::{generate_synthetic, NoiseSpec, SyntheticObservable, SyntheticRun};

pub fn segments() -> SegmentSpec {
    SegmentSpec::new(vec![0.0, 0.25, 0.625, 1.0]).unwrap()
}

/// Segmented mass-gain runs at each `(T, P)`, observed every `obs_h` hours.
pub fn twin_dataset(
    conds: &[(f64, f64)],
    duration_h: f64,
    obs_h: f64,
    g: &AxiGrid,
    solver: &SolverConfig,
    noise: f64,
) -> Dataset {
    let n_obs = (duration_h / obs_h).round() as usize;
    let runs: Vec<SyntheticRun> = conds
        .iter()
        .map(|&(t, p)| SyntheticRun {
            id: format!("T{t}_P{p}"),
            schedule: CycleSchedule {
                cycles: vec![CycleSpec {
                    condition: condition(t, p, duration_h),
                    observation_times: (1..=n_obs).map(|k| hours(obs_h * k as f64)).collect(),
                    trim_after: None,
                }],
            },
        })
        .collect();
    let noise = NoiseSpec {
        relative_sigma: noise,
        seed: 11,
    };
    generate_synthetic(
        &runs,
        &segments(),
        SyntheticObservable::MassGain,
        &noise,
        g,
        &TruthParams::default(),
        solver,
    )
    .unwrap()
}

pub fn problem(
    ds: &Dataset,
    g: &AxiGrid,
    solver: &SolverConfig,
    weights: LossWeights,
) -> TrainingProblem {
    let settings = ProblemSettings {
        grid: g.clone(),
        eps0: TruthParams::default().eps0,
        segments: segments(),
        solver: *solver,
        weights,
        smooth_every: 1,
        residual_form: ResidualForm::PdeConsistent,
        cycles: None,
    };
    TrainingProblem::from_dataset(ds, settings).unwrap()
}
