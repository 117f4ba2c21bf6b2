use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{segment_masses, AxiGrid, CviState, SegmentSpec};
use crate::neural::OperatorSet;
use crate::physics::{
    molarity_bc, multicycle_rollout, CycleSchedule, MulticycleTrajectory, SolverConfig,
};

/// Half-width multiplier on the ensemble standard deviation.
pub const CI_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Deposit mass, kg.
    Mass,
    Porosity,
    Molarity,
    Deff,
    Ks,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [
        Quantity::Mass,
        Quantity::Porosity,
        Quantity::Molarity,
        Quantity::Deff,
        Quantity::Ks,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Quantity::Mass => "mass",
            Quantity::Porosity => "porosity",
            Quantity::Molarity => "molarity",
            Quantity::Deff => "deff",
            Quantity::Ks => "ks",
        }
    }
}

/// Named cell picked on whatever grid a cycle runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    /// Axis cell at mid-height.
    Center,
    /// Outermost top cell.
    Surface,
}

impl Probe {
    pub fn name(&self) -> &'static str {
        match self {
            Probe::Center => "center",
            Probe::Surface => "surface",
        }
    }

    pub fn cell(&self, grid: &AxiGrid) -> usize {
        match self {
            Probe::Center => grid.index(0, grid.nz() / 2),
            Probe::Surface => grid.index(grid.nr() - 1, grid.nz() - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqSeries {
    pub quantity: Quantity,
    /// Segment (`segment_0`, …, `whole`) or probe name.
    pub location: String,
    /// Cycle boundaries appear twice, before and after machining.
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub half_width: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqField {
    pub quantity: Quantity,
    pub cycle: usize,
    pub time: f64,
    pub grid: AxiGrid,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub half_width: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UqPrediction {
    pub series: Vec<UqSeries>,
    /// Whole-grid moments at the end of each cycle.
    pub fields: Vec<UqField>,
    pub members_used: usize,
}

impl UqPrediction {
    pub fn find(&self, quantity: Quantity, location: &str) -> Option<&UqSeries> {
        self.series
            .iter()
            .find(|s| s.quantity == quantity && s.location == location)
    }
}

/// Population mean and variance (`1/M`).
pub fn moments(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    (mean, var)
}

/// One member's samples keyed like the series of a prediction.
struct Samples {
    times: Vec<f64>,
    series: Vec<(Quantity, String, Vec<f64>)>,
    fields: Vec<(Quantity, usize, f64, AxiGrid, Vec<f64>)>,
}

fn sample(
    traj: &MulticycleTrajectory,
    segments: &SegmentSpec,
    rho_d: f64,
    quantities: &[Quantity],
) -> Result<Samples> {
    let mut times = Vec::new();
    let mut series: Vec<(Quantity, String, Vec<f64>)> = Vec::new();
    let mut fields = Vec::new();
    let probes = [Probe::Center, Probe::Surface];
    for q in quantities {
        if *q == Quantity::Mass {
            if segments.count() > 1 {
                for s in 0..segments.count() {
                    series.push((*q, format!("segment_{s}"), Vec::new()));
                }
            }
            series.push((*q, "whole".into(), Vec::new()));
        } else {
            for p in probes {
                series.push((*q, p.name().into(), Vec::new()));
            }
        }
    }
    for (k, cyc) in traj.cycles.iter().enumerate() {
        let seg = segments.snapped(cyc.grid.nz())?;
        let cells = probes.map(|p| p.cell(&cyc.grid));
        for snap in &cyc.snapshots {
            times.push(snap.state.time);
            let masses = segment_masses(&snap.state, &cyc.grid, rho_d, &seg)?;
            let mut slot = 0;
            for q in quantities {
                let field: &[f64] = match q {
                    Quantity::Mass => {
                        if masses.len() > 1 {
                            for m in &masses {
                                series[slot].2.push(*m);
                                slot += 1;
                            }
                        }
                        series[slot].2.push(masses.iter().sum());
                        slot += 1;
                        continue;
                    }
                    Quantity::Porosity => snap.state.porosity.values(),
                    Quantity::Molarity => snap.state.molarity.values(),
                    Quantity::Deff => &snap.deff,
                    Quantity::Ks => &snap.ks,
                };
                for &c in &cells {
                    series[slot].2.push(field[c]);
                    slot += 1;
                }
            }
        }
        let last = cyc.snapshots.last().expect("non-empty trajectory");
        for q in quantities {
            let values = match q {
                Quantity::Mass => continue,
                Quantity::Porosity => last.state.porosity.values().to_vec(),
                Quantity::Molarity => last.state.molarity.values().to_vec(),
                Quantity::Deff => last.deff.clone(),
                Quantity::Ks => last.ks.clone(),
            };
            fields.push((*q, k, last.state.time, cyc.grid.clone(), values));
        }
    }
    Ok(Samples {
        times,
        series,
        fields,
    })
}

fn reduce(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = rows[0].len();
    let mut mean = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    let mut hw = Vec::with_capacity(n);
    let mut buf = vec![0.0; rows.len()];
    for k in 0..n {
        for (b, r) in buf.iter_mut().zip(rows) {
            *b = r[k];
        }
        let (m, v) = moments(&buf);
        mean.push(m);
        var.push(v);
        hw.push(CI_SIGMAS * v.sqrt());
    }
    (mean, var, hw)
}

/// Ensemble mean, population variance and `3σ` half-width of every quantity
/// along a schedule. Members whose rollout fails are skipped while at least
/// two remain. A single member yields zero variance.
pub fn uq_predict(
    members: &[OperatorSet],
    grid: &AxiGrid,
    schedule: &CycleSchedule,
    solver: &SolverConfig,
    segments: &SegmentSpec,
    quantities: &[Quantity],
) -> Result<UqPrediction> {
    if members.is_empty() {
        return Err(Error::contract("prediction needs at least one member"));
    }
    let first = schedule
        .cycles
        .first()
        .ok_or_else(|| Error::contract("empty schedule"))?;
    let c_bc = molarity_bc(
        first.condition.partial_pressure,
        first.condition.temperature,
    )?;
    let runs: Vec<Result<Samples>> = members
        .par_iter()
        .map(|ops| {
            let state0 = CviState::pristine(grid, ops.material.eps0, c_bc)?;
            let traj = multicycle_rollout(&state0, grid, ops, schedule, solver)?;
            sample(&traj, segments, ops.material.deposit_density, quantities)
        })
        .collect();
    let mut ok = Vec::with_capacity(runs.len());
    for (k, r) in runs.into_iter().enumerate() {
        match r {
            Ok(s) => ok.push(s),
            Err(
                e @ (Error::Divergence { .. }
                | Error::NonFinite { .. }
                | Error::Evaluation(_)
                | Error::Singular),
            ) => {
                log::warn!("member {k} excluded from prediction: {e}")
            }
            Err(e) => return Err(e),
        }
    }
    if ok.len() < members.len().min(2) {
        return Err(Error::Evaluation(format!(
            "only {} member rollout(s) succeeded",
            ok.len()
        )));
    }
    let times = ok[0].times.clone();
    let series = (0..ok[0].series.len())
        .map(|i| {
            let rows: Vec<&[f64]> = ok.iter().map(|s| s.series[i].2.as_slice()).collect();
            let (mean, variance, half_width) = reduce(&rows);
            UqSeries {
                quantity: ok[0].series[i].0,
                location: ok[0].series[i].1.clone(),
                times: times.clone(),
                mean,
                variance,
                half_width,
            }
        })
        .collect();
    let fields = (0..ok[0].fields.len())
        .map(|i| {
            let rows: Vec<&[f64]> = ok.iter().map(|s| s.fields[i].4.as_slice()).collect();
            let (mean, variance, half_width) = reduce(&rows);
            let (q, cycle, time, ref g, _) = ok[0].fields[i];
            UqField {
                quantity: q,
                cycle,
                time,
                grid: g.clone(),
                mean,
                variance,
                half_width,
            }
        })
        .collect();
    Ok(UqPrediction {
        series,
        fields,
        members_used: ok.len(),
    })
}
