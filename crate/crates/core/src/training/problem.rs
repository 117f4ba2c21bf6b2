//! Turns a measurement dataset into per-run rollout plans with precomputed
//! grids, stencils and observation weights.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{AxiGrid, SegmentSpec, TrimSpec};
use crate::io::{Dataset, ObservableKind};
use crate::physics::{molarity_bc, snap_observations, step_count, SolverConfig, Stencil};
use crate::process::OperatingCondition;

/// Weights `β₁` (parameter norm), `β₂` (trajectory smoothness), `β₃` (PDE residual).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta1: 1e-4,
            beta2: 1e-3,
            beta3: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            beta1: 0.0,
            beta2: 0.0,
            beta3: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.beta1, self.beta2, self.beta3]
            .iter()
            .any(|b| !(b.is_finite() && *b >= 0.0))
        {
            return Err(Error::contract(
                "loss weights must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Which residual the `β₃` term penalises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualForm {
    /// Residual of the discretised balance, zero at the exact discrete solution.
    #[default]
    PdeConsistent,
    /// `D_eff·(∇²C − C·K·S_v)`.
    Literal,
}

/// Duration and post-cycle machining of one cycle, shared by every run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleLayout {
    /// s
    pub duration: f64,
    pub trim_after: Option<TrimSpec>,
}

/// One observed value: `segment` `None` is the whole sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub segment: Option<usize>,
    /// Deposit mass, kg.
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct CyclePlan {
    pub condition: OperatingCondition,
    pub grid: AxiGrid,
    pub stencil: Arc<Stencil>,
    pub c_bc: f64,
    pub n_steps: usize,
    /// Time level → targets observed there.
    pub observations: BTreeMap<usize, Vec<Target>>,
    /// Cell volumes masked to each segment; last entry is the whole sample.
    pub weights: Vec<Arc<Vec<f64>>>,
    /// Cells kept by the machining after this cycle.
    pub keep_after: Option<Arc<Vec<usize>>>,
}

impl CyclePlan {
    pub fn weight_index(&self, segment: Option<usize>) -> usize {
        segment.unwrap_or(self.weights.len() - 1)
    }
}

#[derive(Debug, Clone)]
pub struct RunPlan {
    pub id: String,
    pub cycles: Vec<CyclePlan>,
    /// Largest observed deposit mass; observables are divided by it.
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingProblem {
    pub grid: AxiGrid,
    pub eps0: f64,
    pub segments: SegmentSpec,
    pub runs: Vec<RunPlan>,
    pub solver: SolverConfig,
    pub weights: LossWeights,
    /// Smoothness term uses every `smooth_every`-th time level.
    pub smooth_every: usize,
    pub residual_form: ResidualForm,
    /// Negative-control hook: perturbs the adjoint of every Jacobi sweep.
    pub corrupt_adjoint: bool,
}

/// Settings that are not part of the data.
#[derive(Debug, Clone)]
pub struct ProblemSettings {
    pub grid: AxiGrid,
    pub eps0: f64,
    pub segments: SegmentSpec,
    pub solver: SolverConfig,
    pub weights: LossWeights,
    pub smooth_every: usize,
    pub residual_form: ResidualForm,
    /// Required when runs have more than one cycle.
    pub cycles: Option<Vec<CycleLayout>>,
}

impl TrainingProblem {
    pub fn from_dataset(ds: &Dataset, settings: ProblemSettings) -> Result<Self> {
        settings.solver.validate()?;
        settings.weights.validate()?;
        if ds.runs.is_empty() {
            return Err(Error::contract("dataset has no runs"));
        }
        if settings.smooth_every == 0 {
            return Err(Error::contract("smooth_every must be at least 1"));
        }
        ds.check_segments(settings.segments.count())?;
        let segments = settings.segments.snapped(settings.grid.nz())?;
        let runs = ds
            .runs
            .iter()
            .map(|run| plan_run(run, &settings, &segments))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: settings.grid,
            eps0: settings.eps0,
            segments,
            runs,
            solver: settings.solver,
            weights: settings.weights,
            smooth_every: settings.smooth_every,
            residual_form: settings.residual_form,
            corrupt_adjoint: false,
        })
    }

    pub fn observation_count(&self) -> usize {
        self.runs
            .iter()
            .flat_map(|r| &r.cycles)
            .flat_map(|c| c.observations.values())
            .map(Vec::len)
            .sum()
    }
}

fn segment_weights(grid: &AxiGrid, segments: &SegmentSpec) -> Result<Vec<Arc<Vec<f64>>>> {
    let vol = grid.volumes();
    let mut out = Vec::with_capacity(segments.count() + 1);
    for range in segments.cell_ranges(grid.nz())? {
        let mut w = vec![0.0; grid.len()];
        for i in 0..grid.nr() {
            for j in range.clone() {
                let p = grid.index(i, j);
                w[p] = vol[p];
            }
        }
        out.push(Arc::new(w));
    }
    out.push(Arc::new(vol));
    Ok(out)
}

fn plan_run(run: &crate::io::Run, s: &ProblemSettings, segments: &SegmentSpec) -> Result<RunPlan> {
    let n_cycles = run.cycle_count();
    let layouts: Vec<Option<CycleLayout>> = match &s.cycles {
        Some(c) if c.len() >= n_cycles => c.iter().take(n_cycles).map(|l| Some(*l)).collect(),
        Some(c) => {
            return Err(Error::contract(format!(
                "run {} has {n_cycles} cycles but only {} are configured",
                run.id,
                c.len()
            )))
        }
        None if n_cycles > 1 => {
            return Err(Error::contract(format!(
                "run {} has several cycles; a cycle layout is required",
                run.id
            )))
        }
        None => vec![None],
    };
    let baseline = run.baseline();
    let v0 = s.grid.total_volume();
    let mut grid = s.grid.clone();
    let mut start = 0.0;
    let mut cycles = Vec::with_capacity(n_cycles);
    let mut scale: f64 = 0.0;
    for (k, layout) in layouts.iter().enumerate() {
        let (t, p_total, p_r) = run
            .cycle_condition(k)
            .ok_or_else(|| Error::contract(format!("run {} has no rows for cycle {k}", run.id)))?;
        let rows: Vec<_> = run.records.iter().filter(|r| r.cycle_index == k).collect();
        let duration = match layout {
            Some(l) => l.duration,
            None => {
                let last = rows.iter().map(|r| r.time_s).fold(0.0, f64::max);
                (last / s.solver.dt).ceil() * s.solver.dt
            }
        };
        let condition = OperatingCondition {
            temperature: t,
            total_pressure: p_total,
            partial_pressure: p_r,
            duration,
        };
        condition.validate()?;
        let n_steps = step_count(duration, s.solver.dt)?;
        let mut observations: BTreeMap<usize, Vec<Target>> = BTreeMap::new();
        let base_now = baseline.map(|b| b * grid.total_volume() / v0);
        for r in rows {
            if run.kind == ObservableKind::TotalMass && r.time_s == 0.0 {
                continue;
            }
            let rel = r.time_s - start;
            if rel < -1e-9 * duration.max(1.0) || rel > duration * (1.0 + 1e-12) {
                return Err(Error::contract(format!(
                    "run {}: observation at {} s lies outside cycle {k}",
                    run.id, r.time_s
                )));
            }
            let step = snap_observations(&[rel.clamp(0.0, duration)], s.solver.dt, n_steps)?[0];
            let value = match base_now {
                Some(b) => r.value_kg - b,
                None => r.value_kg,
            };
            scale = scale.max(value.abs());
            let segment = (r.segment_id >= 0).then_some(r.segment_id as usize);
            observations
                .entry(step)
                .or_default()
                .push(Target { segment, value });
        }
        let c_bc = molarity_bc(p_r, t)?;
        let stencil = Arc::new(Stencil::new(
            &grid,
            &s.solver.faces.boundary(c_bc),
            s.solver.stencil,
        )?);
        let weights = segment_weights(&grid, &segments.snapped(grid.nz())?)?;
        let trim = layout
            .and_then(|l| l.trim_after)
            .filter(|t| !t.is_identity());
        let (next_grid, keep_after) = match trim {
            Some(t) if k + 1 < n_cycles => {
                let (g, keep) = t.retained_cells(&grid)?;
                (g, Some(Arc::new(keep)))
            }
            _ => (grid.clone(), None),
        };
        cycles.push(CyclePlan {
            condition,
            grid: grid.clone(),
            stencil,
            c_bc,
            n_steps,
            observations,
            weights,
            keep_after,
        });
        grid = next_grid;
        start += duration;
    }
    if scale <= 0.0 {
        log::warn!(
            "run {} shows no deposit; its observables are left unscaled",
            run.id
        );
        scale = 1.0;
    }
    Ok(RunPlan {
        id: run.id.clone(),
        cycles,
        scale,
    })
}
