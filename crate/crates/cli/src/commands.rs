use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use icvi_core::grid::AxiGrid;
use icvi_core::grid::CviState;
use icvi_core::io::{
    config_digest, export_fields, export_train_records, export_trajectory, read_checkpoint,
    read_measurements, write_checkpoint, write_manifest, write_measurements, Checkpoint, Dataset,
    ExportManifest, FieldSnapshot, ManifestFile, TrainingMetadata,
};
use icvi_core::neural::{NormalizationSpec, OperatorSet};
use icvi_core::physics::{molarity_bc, multicycle_rollout, CycleSchedule, CycleSpec, SolverConfig};
use icvi_core::process::{OperatingCondition, SECONDS_PER_HOUR};
use icvi_core::training::{
    block_gradcheck, train_ensemble, uq_predict, BlockCheck, CycleLayout, EnsembleConfig, Probe,
    ProblemSettings, Quantity, TrainingProblem, UqPrediction,
};
use icvi_core::truth::{
    binary_diffusivity, generate_synthetic, true_deff, true_k, true_sv, NoiseSpec, SyntheticRun,
    TruthParams,
};

use crate::config::{observation_times, ConditionConfig, ObservableConfig, RunConfig};
use crate::error::{CliError, Result};
use crate::hull::{classify, Regime};

/// Everything a command needs besides its own flags.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub config_bytes: Vec<u8>,
    pub out: PathBuf,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Context {
    fn digest(&self) -> String {
        config_digest(&self.config_bytes)
    }

    fn manifest(&self) -> ExportManifest {
        ExportManifest::new(self.digest())
    }

    fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or(CliError::MissingFlag("dataset"))
    }

    fn checkpoint_in(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or(CliError::MissingFlag("checkpoint"))
    }

    fn checkpoint_out(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoint.json"))
    }

    fn prepare_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| icvi_core::Error::Io {
            path: self.out.clone(),
            source: e,
        })?;
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| icvi_core::Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(())
}

fn synthetic_runs(cfg: &RunConfig) -> Result<Vec<SyntheticRun>> {
    let mut runs: Vec<SyntheticRun> = cfg
        .conditions
        .iter()
        .enumerate()
        .map(|(k, c)| SyntheticRun {
            id: c.label(k),
            schedule: c.schedule(),
        })
        .collect();
    if cfg.cycles.is_some() {
        runs.push(SyntheticRun {
            id: "multicycle".into(),
            schedule: cfg.cycle_schedule()?,
        });
    }
    if runs.is_empty() {
        return Err(CliError::Config {
            pointer: "/conditions".into(),
            msg: "no conditions or cycles to simulate".into(),
        });
    }
    Ok(runs)
}

/// Solver used for truth data: the configured one, converged tightly.
fn truth_solver(cfg: &RunConfig) -> SolverConfig {
    let s = cfg.solver();
    SolverConfig {
        jacobi_tol: s.jacobi_tol.min(1e-10),
        jacobi_max_sweeps: s.jacobi_max_sweeps.max(20_000),
        ..s
    }
}

/// `R √(K S_v / D_eff)` of the pristine preform.
fn thiele(truth: &TruthParams, grid: &AxiGrid, cond: &OperatingCondition) -> f64 {
    let ks = true_k(cond.temperature, truth) * true_sv(truth.eps0, truth);
    let d = true_deff(truth.eps0, cond.temperature, cond.total_pressure, truth);
    grid.radius() * (ks / d).sqrt()
}

/// Writes `measurements.csv`, `measurements_clean.csv` and their manifest.
pub fn synth(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.cfg;
    let truth = cfg.truth()?;
    let grid = cfg.grid()?;
    let segments = cfg.segments()?;
    let runs = synthetic_runs(cfg)?;
    for r in &runs {
        let c = r.schedule.cycles[0].condition;
        log::info!(
            "run {}: Thiele modulus {:.3}, binary diffusivity {:.3e} m²/s",
            r.id,
            thiele(&truth, &grid, &c),
            binary_diffusivity(c.temperature, c.total_pressure)
        );
    }
    let ds = generate_synthetic(
        &runs,
        &segments,
        cfg.observable(),
        &cfg.noise(),
        &grid,
        &truth,
        &truth_solver(cfg),
    )?;
    let kind = match cfg.noise.observable {
        ObservableConfig::MassGain => "mass_gain",
        ObservableConfig::TotalMass => "total_mass",
    };
    ctx.prepare_out()?;
    let noisy = ctx.out.join("measurements.csv");
    let clean = ctx.out.join("measurements_clean.csv");
    write_measurements(&ds, &noisy)?;
    let shadow = ds
        .clean_shadow()
        .ok_or_else(|| icvi_core::Error::Contract("synthetic data lacks a clean shadow".into()))?;
    write_measurements(&shadow, &clean)?;
    let mut manifest = ctx
        .manifest()
        .label("runs", ds.runs.len().to_string())
        .label("relative_sigma", format!("{:e}", cfg.noise.relative_sigma))
        .label("noise_seed", cfg.seeds.noise.to_string());
    for f in ["measurements.csv", "measurements_clean.csv"] {
        manifest.files.push(ManifestFile {
            file: f.into(),
            quantity: kind.into(),
            time_s: None,
            grid: Some(grid.clone()),
        });
    }
    let side = ctx.out.join("measurements.manifest.json");
    write_manifest(&manifest, &side)?;
    println!(
        "synth: {} runs, {} records -> {}",
        ds.runs.len(),
        ds.records().count(),
        noisy.display()
    );
    Ok(vec![noisy, clean, side])
}

fn training_conditions(ds: &Dataset) -> Vec<OperatingCondition> {
    ds.runs
        .iter()
        .filter_map(|r| r.cycle_condition(0))
        .map(|(t, total, partial)| OperatingCondition {
            temperature: t,
            total_pressure: total,
            partial_pressure: partial,
            duration: 0.0,
        })
        .collect()
}

pub fn problem_settings(cfg: &RunConfig, ds: &Dataset) -> Result<ProblemSettings> {
    let multi = ds.runs.iter().any(|r| r.cycle_count() > 1);
    let cycles = if multi {
        let sched = cfg.cycle_schedule()?;
        Some(
            sched
                .cycles
                .iter()
                .map(|c| CycleLayout {
                    duration: c.condition.duration,
                    trim_after: c.trim_after,
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(ProblemSettings {
        grid: cfg.grid()?,
        eps0: cfg.material.eps0,
        segments: cfg.segments()?,
        solver: cfg.solver(),
        weights: cfg.weights(),
        smooth_every: cfg.training.smooth_every,
        residual_form: cfg.training.residual_form,
        cycles,
    })
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub files: Vec<PathBuf>,
}

/// Trains the ensemble on `--dataset`; writes the checkpoint and loss curves.
pub fn train(ctx: &Context) -> Result<TrainOutcome> {
    let cfg = &ctx.cfg;
    let path = ctx.dataset_path()?;
    let bytes = std::fs::read(path).map_err(|e| icvi_core::Error::Io {
        path: path.into(),
        source: e,
    })?;
    let ds = read_measurements(path)?;
    let problem = TrainingProblem::from_dataset(&ds, problem_settings(cfg, &ds)?)?;
    let ens = EnsembleConfig::from_master(cfg.ensemble.members, cfg.seeds.master);
    cfg.init_operators(0)?;
    let init = |seed: u64| {
        cfg.init_operators(seed)
            .map_err(|e| icvi_core::Error::Contract(e.to_string()))
    };
    let members = train_ensemble(&ens, init, &problem, &cfg.optimizer())?;
    let meta = TrainingMetadata {
        master_seed: cfg.seeds.master,
        epochs: cfg.training.epochs,
        conditions: training_conditions(&ds),
        dataset_digest: config_digest(&bytes),
    };
    let ck = Checkpoint::from_members(&members, &problem.grid, &problem.solver, meta)?;
    ctx.prepare_out()?;
    let ck_path = ctx.checkpoint_out();
    write_checkpoint(&ck, &ck_path)?;
    let rec_path = ctx.out.join("train_records.csv");
    let records: Vec<(u64, &_)> = members.iter().map(|m| (m.seed, &m.record)).collect();
    export_train_records(&records, &rec_path)?;
    for m in &members {
        let init = m.record.initial_loss().unwrap_or(f64::NAN);
        let fin = m.record.final_loss.map_or(f64::NAN, |l| l.total);
        println!("member seed {}: loss {init:.4e} -> {fin:.4e}", m.seed);
    }
    Ok(TrainOutcome {
        checkpoint: ck,
        files: vec![ck_path, rec_path],
    })
}

/// A prediction for one condition together with its regime.
pub struct Forecast {
    pub label: String,
    pub condition: OperatingCondition,
    pub regime: Regime,
    pub prediction: UqPrediction,
}

fn load_ensemble(path: &Path) -> Result<(Checkpoint, Vec<OperatorSet>)> {
    let ck = read_checkpoint(path)?;
    let sets = ck.operator_sets()?;
    Ok((ck, sets))
}

/// Ensemble predictions for the given conditions, exported under `--out`.
pub fn predict(ctx: &Context, conditions: &[ConditionConfig]) -> Result<Vec<Forecast>> {
    if conditions.is_empty() {
        return Err(CliError::Config {
            pointer: "/predict".into(),
            msg: "no prediction conditions".into(),
        });
    }
    let (ck, sets) = load_ensemble(ctx.checkpoint_in()?)?;
    let segments = ctx.cfg.segments()?;
    let mut out = Vec::with_capacity(conditions.len());
    for (k, c) in conditions.iter().enumerate() {
        let cond = c.condition();
        let schedule = c.schedule();
        let prediction = uq_predict(
            &sets,
            &ck.grid,
            &schedule,
            &ck.solver,
            &segments,
            &Quantity::ALL,
        )?;
        let regime = classify(&ck.training.conditions, &cond);
        out.push(Forecast {
            label: c.label(k),
            condition: cond,
            regime,
            prediction,
        });
    }
    ctx.prepare_out()?;
    let mut summary = String::from(
        "label,temperature_K,total_pressure_Pa,partial_pressure_Pa,regime,members_used\n",
    );
    for f in &out {
        let m = condition_manifest(ctx, &f.condition).label("regime", f.regime.name());
        export_trajectory(
            &f.prediction,
            ctx.out.join(format!("predict_{}.csv", f.label)),
            &m,
        )?;
        let fields: Vec<FieldSnapshot> = f
            .prediction
            .fields
            .iter()
            .flat_map(FieldSnapshot::from_uq)
            .collect();
        export_fields(&fields, ctx.out.join(format!("fields_{}", f.label)), &m)?;
        writeln!(
            summary,
            "{},{:e},{:e},{:e},{},{}",
            f.label,
            f.condition.temperature,
            f.condition.total_pressure,
            f.condition.partial_pressure,
            f.regime.name(),
            f.prediction.members_used
        )
        .unwrap();
        println!(
            "predict {}: {} ({} members)",
            f.label,
            f.regime.name(),
            f.prediction.members_used
        );
    }
    write_text(&ctx.out.join("predict_summary.csv"), &summary)?;
    Ok(out)
}

fn condition_manifest(ctx: &Context, c: &OperatingCondition) -> ExportManifest {
    ctx.manifest()
        .label("temperature_K", format!("{:e}", c.temperature))
        .label("total_pressure_Pa", format!("{:e}", c.total_pressure))
        .label("partial_pressure_Pa", format!("{:e}", c.partial_pressure))
}

/// Mean porosity CI half-width at each probe and their average.
pub fn band_widths(pred: &UqPrediction) -> (f64, f64, f64) {
    let mean_hw = |p: Probe| {
        pred.find(Quantity::Porosity, p.name())
            .map_or(f64::NAN, |s| {
                s.half_width.iter().sum::<f64>() / s.half_width.len() as f64
            })
    };
    let (c, s) = (mean_hw(Probe::Center), mean_hw(Probe::Surface));
    (c, s, 0.5 * (c + s))
}

pub struct SweepPoint {
    pub condition: OperatingCondition,
    pub regime: Regime,
    pub band_center: f64,
    pub band_surface: f64,
    pub band_mean: f64,
}

fn spaced(lo: f64, hi: f64, n: usize, log: bool) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| {
            let f = k as f64 / (n - 1) as f64;
            if k == n - 1 {
                hi
            } else if log {
                lo * (hi / lo).powf(f)
            } else {
                lo + f * (hi - lo)
            }
        })
        .collect()
}

/// Porosity UQ over a `T × P_r` grid (pressure log-spaced).
pub fn sweep(ctx: &Context) -> Result<Vec<SweepPoint>> {
    let sw = ctx.cfg.sweep.as_ref().ok_or_else(|| CliError::Config {
        pointer: "/sweep".into(),
        msg: "missing section".into(),
    })?;
    let (ck, sets) = load_ensemble(ctx.checkpoint_in()?)?;
    let segments = ctx.cfg.segments()?;
    let temps = spaced(sw.temperature_K[0], sw.temperature_K[1], sw.nt, false);
    let pressures = spaced(
        sw.partial_pressure_Pa[0],
        sw.partial_pressure_Pa[1],
        sw.np,
        true,
    );
    let mut points = Vec::new();
    let mut preds = Vec::new();
    for &t in &temps {
        for &p in &pressures {
            let cond = OperatingCondition {
                temperature: t,
                total_pressure: sw.total_pressure_Pa.unwrap_or(p),
                partial_pressure: p,
                duration: sw.duration_h * SECONDS_PER_HOUR,
            };
            let schedule = CycleSchedule {
                cycles: vec![CycleSpec {
                    condition: cond,
                    observation_times: observation_times(sw.duration_h, sw.observe_every_h),
                    trim_after: None,
                }],
            };
            let pred = uq_predict(
                &sets,
                &ck.grid,
                &schedule,
                &ck.solver,
                &segments,
                &[Quantity::Porosity],
            )?;
            let (c, s, m) = band_widths(&pred);
            points.push(SweepPoint {
                condition: cond,
                regime: classify(&ck.training.conditions, &cond),
                band_center: c,
                band_surface: s,
                band_mean: m,
            });
            preds.push(pred);
        }
    }
    let dir = ctx.out.join("sweep");
    std::fs::create_dir_all(&dir).map_err(|e| icvi_core::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let mut summary = String::from(
        "point,temperature_K,total_pressure_Pa,partial_pressure_Pa,regime,band_center,band_surface,band_mean\n",
    );
    for (k, (pt, pred)) in points.iter().zip(&preds).enumerate() {
        let m = condition_manifest(ctx, &pt.condition).label("regime", pt.regime.name());
        export_trajectory(pred, dir.join(format!("point_{k:03}.csv")), &m)?;
        let c = &pt.condition;
        writeln!(
            summary,
            "{k},{:e},{:e},{:e},{},{:e},{:e},{:e}",
            c.temperature,
            c.total_pressure,
            c.partial_pressure,
            pt.regime.name(),
            pt.band_center,
            pt.band_surface,
            pt.band_mean
        )
        .unwrap();
    }
    write_text(&ctx.out.join("sweep_summary.csv"), &summary)?;
    println!(
        "sweep: {} points -> {}",
        points.len(),
        ctx.out.join("sweep_summary.csv").display()
    );
    Ok(points)
}

/// Sawtooth mass trajectory, machining ledger and end-of-cycle fields.
/// Uses the checkpoint ensemble when given, the truth model otherwise.
pub fn multicycle(ctx: &Context) -> Result<UqPrediction> {
    let cfg = &ctx.cfg;
    let schedule = cfg.cycle_schedule()?;
    let mut manifest = ctx.manifest();
    if let Some(path) = &ctx.dataset {
        let ds = read_measurements(path)?;
        if !ds
            .runs
            .iter()
            .any(|r| r.cycle_count() == schedule.cycles.len())
        {
            return Err(icvi_core::Error::Schema {
                row: 0,
                msg: format!(
                    "no run in {} has {} cycles",
                    path.display(),
                    schedule.cycles.len()
                ),
            }
            .into());
        }
        let bytes = std::fs::read(path).map_err(|e| icvi_core::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        manifest = manifest.label("dataset_digest", config_digest(&bytes));
    }
    let (grid, solver, sets, source) = match &ctx.checkpoint {
        Some(p) => {
            let (ck, sets) = load_ensemble(p)?;
            (ck.grid.clone(), ck.solver, sets, "ensemble")
        }
        None => {
            let truth = cfg.truth()?;
            (
                cfg.grid()?,
                truth_solver(cfg),
                vec![OperatorSet::truth(truth, NormalizationSpec::default())],
                "truth",
            )
        }
    };
    let segments = cfg.segments()?;
    let pred = uq_predict(&sets, &grid, &schedule, &solver, &segments, &Quantity::ALL)?;
    let first = schedule.cycles[0].condition;
    let c_bc = molarity_bc(first.partial_pressure, first.temperature)?;
    let mut ledger =
        String::from("member,after_cycle,time_s,deposit_before_kg,deposit_after_kg,trimmed_kg\n");
    for (m, ops) in sets.iter().enumerate() {
        let state0 = CviState::pristine(&grid, ops.material.eps0, c_bc)?;
        let traj = multicycle_rollout(&state0, &grid, ops, &schedule, &solver)?;
        for ev in &traj.machining {
            writeln!(
                ledger,
                "{m},{},{:e},{:e},{:e},{:e}",
                ev.after_cycle, ev.time, ev.deposit_before, ev.deposit_after, ev.trimmed_deposit
            )
            .unwrap();
        }
    }
    ctx.prepare_out()?;
    let manifest = manifest
        .label("source", source)
        .label("cycles", schedule.cycles.len().to_string());
    export_trajectory(&pred, ctx.out.join("multicycle.csv"), &manifest)?;
    write_text(&ctx.out.join("machining.csv"), &ledger)?;
    let fields: Vec<FieldSnapshot> = pred
        .fields
        .iter()
        .flat_map(FieldSnapshot::from_uq)
        .collect();
    export_fields(&fields, ctx.out.join("multicycle_fields"), &manifest)?;
    println!(
        "multicycle: {} cycles from the {source} -> {}",
        schedule.cycles.len(),
        ctx.out.join("multicycle.csv").display()
    );
    Ok(pred)
}

/// AD-vs-difference check on a small twin; fails above the configured tolerance.
pub fn gradcheck(ctx: &Context, corrupt_adjoint: bool) -> Result<Vec<BlockCheck>> {
    let cfg = &ctx.cfg;
    let g = &cfg.gradcheck;
    if g.nr > 8 || g.nz > 8 || g.steps > 5 || g.steps == 0 {
        return Err(CliError::Config {
            pointer: "/gradcheck".into(),
            msg: format!(
                "{}x{} grid with {} steps exceeds the small profile (8x8, 1 to 5 steps)",
                g.nr, g.nz, g.steps
            ),
        });
    }
    let grid = AxiGrid::new(cfg.geometry.radius_m, cfg.geometry.height_m, g.nr, g.nz)?;
    let truth = cfg.truth_or_default();
    let solver = SolverConfig {
        dt: g.dt_h * SECONDS_PER_HOUR,
        jacobi_tol: 1e-300,
        jacobi_max_sweeps: g.sweeps,
        ..cfg.solver()
    };
    let duration_h = g.dt_h * g.steps as f64;
    let picks: Vec<(f64, f64)> = if cfg.conditions.is_empty() {
        vec![(1250.0, 1600.0), (1300.0, 3200.0)]
    } else {
        cfg.conditions
            .iter()
            .take(2)
            .map(|c| (c.temperature_K, c.total_pressure_Pa))
            .collect()
    };
    let runs: Vec<SyntheticRun> = picks
        .iter()
        .map(|&(t, p)| SyntheticRun {
            id: format!("T{t}_P{p}"),
            schedule: CycleSchedule {
                cycles: vec![CycleSpec {
                    condition: OperatingCondition {
                        temperature: t,
                        total_pressure: p,
                        partial_pressure: p,
                        duration: duration_h * SECONDS_PER_HOUR,
                    },
                    observation_times: observation_times(duration_h, g.dt_h),
                    trim_after: None,
                }],
            },
        })
        .collect();
    let segments = cfg.segments()?;
    let noise = NoiseSpec {
        relative_sigma: cfg.noise.relative_sigma,
        seed: cfg.seeds.noise,
    };
    let converged = SolverConfig {
        jacobi_tol: 1e-12,
        jacobi_max_sweeps: 20_000,
        ..solver
    };
    let ds = generate_synthetic(
        &runs,
        &segments,
        cfg.observable(),
        &noise,
        &grid,
        &truth,
        &converged,
    )?;
    let settings = ProblemSettings {
        grid: grid.clone(),
        eps0: truth.eps0,
        segments,
        solver,
        weights: cfg.weights(),
        smooth_every: 1,
        residual_form: cfg.training.residual_form,
        cycles: None,
    };
    let mut problem = TrainingProblem::from_dataset(&ds, settings)?;
    problem.corrupt_adjoint = corrupt_adjoint;
    let set = OperatorSet::neural(
        cfg.specs(),
        cfg.seeds.master,
        cfg.normalization(),
        cfg.material(),
    )?;
    let report = block_gradcheck(&set, &problem, g.step_size)?;
    let mut failed = Vec::new();
    for b in &report {
        let ok = b.relative_error <= g.tolerance;
        println!(
            "{:<11} params {:>5}  max |ad-fd| {:.3e}  max |fd| {:.3e}  rel {:.3e}  {}",
            b.block.name(),
            b.params,
            b.max_abs_error,
            b.max_abs_gradient,
            b.relative_error,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(format!("{} at {:.3e}", b.block.name(), b.relative_error));
        }
    }
    if failed.is_empty() {
        Ok(report)
    } else {
        Err(CliError::GradcheckFailed(failed.join(", ")))
    }
}
