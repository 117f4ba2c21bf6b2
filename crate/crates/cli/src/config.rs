//! Run configuration: TOML merged over profile defaults, then validated.
#![allow(non_snake_case)]

use std::collections::BTreeSet;
use std::path::Path;

use icvi_core::grid::{AxiGrid, SegmentSpec, TrimSpec};
use icvi_core::neural::{default_specs, Closure, MlpSpec, NormalizationSpec, OperatorSet};
use icvi_core::physics::{
    CycleSchedule, CycleSpec, DirichletFaces, SolverConfig, StencilMode, Stepper,
};
use icvi_core::process::{Material, OperatingCondition, SECONDS_PER_HOUR};
use icvi_core::training::{LossWeights, OptimizerConfig, ResidualForm};
use icvi_core::truth::{NoiseSpec, SyntheticObservable, TruthParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Fast,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub radius_m: f64,
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nr: usize,
    pub nz: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub molar_mass_kg_mol: f64,
    pub deposit_density_kg_m3: f64,
    pub stoichiometry: f64,
    pub eps0: f64,
    pub fiber_radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub k0_m_s: f64,
    pub activation_energy_J_mol: f64,
    pub tortuosity: f64,
    pub pore_radius_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorName {
    Deff,
    K,
    Sv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorsConfig {
    pub hidden: Vec<usize>,
    pub deff_scale_m2_s: f64,
    pub k_scale_m_s: f64,
    /// Closures replaced by networks; the rest use the truth relations.
    pub trainable: Vec<OperatorName>,
    pub temperature_range_K: [f64; 2],
    pub pressure_range_Pa: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dt_h: f64,
    pub jacobi_tol: f64,
    pub jacobi_max_sweeps: usize,
    pub stepper: Stepper,
    pub stencil: StencilMode,
    pub warm_start: bool,
    pub dirichlet_outer: bool,
    pub dirichlet_top: bool,
    pub dirichlet_bottom: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub smooth_every: usize,
    pub residual_form: ResidualForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionConfig {
    pub id: Option<String>,
    pub temperature_K: f64,
    pub total_pressure_Pa: f64,
    /// Defaults to the total pressure.
    pub partial_pressure_Pa: Option<f64>,
    pub duration_h: f64,
    pub observe_every_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrimConfig {
    #[serde(default)]
    pub radial_m: f64,
    #[serde(default)]
    pub top_m: f64,
    #[serde(default)]
    pub bottom_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleConfig {
    pub temperature_K: f64,
    pub total_pressure_Pa: f64,
    pub partial_pressure_Pa: Option<f64>,
    pub duration_h: f64,
    pub observe_every_h: f64,
    /// Machining after this cycle.
    pub trim: Option<TrimConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentsConfig {
    /// Fractions of the height, from 0 to 1.
    pub z_fractions: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableConfig {
    MassGain,
    TotalMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub relative_sigma: f64,
    pub observable: ObservableConfig,
    /// Bulk density of the fibre preform, for total-mass observables.
    pub fiber_density_kg_m3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsConfig {
    pub master: u64,
    pub noise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub temperature_K: [f64; 2],
    pub partial_pressure_Pa: [f64; 2],
    pub nt: usize,
    pub np: usize,
    /// Fixed total pressure; equal to the partial pressure when absent.
    pub total_pressure_Pa: Option<f64>,
    pub duration_h: f64,
    pub observe_every_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub nr: usize,
    pub nz: usize,
    pub steps: usize,
    pub dt_h: f64,
    pub sweeps: usize,
    pub step_size: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub grid: GridConfig,
    pub material: MaterialConfig,
    pub truth: Option<TruthConfig>,
    pub operators: OperatorsConfig,
    pub solver: SolverSection,
    pub training: TrainingSection,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub conditions: Vec<ConditionConfig>,
    pub segments: SegmentsConfig,
    pub cycles: Option<Vec<CycleConfig>>,
    pub noise: NoiseConfig,
    pub seeds: SeedsConfig,
    pub output: OutputConfig,
    pub predict: Option<Vec<ConditionConfig>>,
    pub sweep: Option<SweepConfig>,
    pub gradcheck: GradcheckConfig,
}

fn defaults(profile: Profile) -> RunConfig {
    let tp = TruthParams::default();
    let paper = profile == Profile::Paper;
    RunConfig {
        geometry: GeometryConfig {
            radius_m: 0.02,
            height_m: 0.04,
        },
        grid: if paper {
            GridConfig { nr: 16, nz: 32 }
        } else {
            GridConfig { nr: 8, nz: 16 }
        },
        material: MaterialConfig {
            molar_mass_kg_mol: tp.molar_mass,
            deposit_density_kg_m3: tp.deposit_density,
            stoichiometry: tp.stoichiometry,
            eps0: tp.eps0,
            fiber_radius_m: tp.fiber_radius,
        },
        truth: None,
        operators: OperatorsConfig {
            hidden: if paper { vec![32, 32] } else { vec![16, 16] },
            deff_scale_m2_s: 2e-4,
            k_scale_m_s: 3e-6,
            trainable: vec![OperatorName::Deff, OperatorName::K, OperatorName::Sv],
            temperature_range_K: [1100.0, 1400.0],
            pressure_range_Pa: [100.0, 1e5],
        },
        solver: SolverSection {
            dt_h: if paper { 1.0 } else { 17.5 },
            jacobi_tol: if paper { 1e-8 } else { 1e-6 },
            jacobi_max_sweeps: if paper { 5000 } else { 200 },
            stepper: Stepper::Euler,
            stencil: StencilMode::Literal,
            warm_start: true,
            dirichlet_outer: true,
            dirichlet_top: true,
            dirichlet_bottom: true,
        },
        training: TrainingSection {
            epochs: 500,
            learning_rate: 1e-3,
            beta1: 1e-4,
            beta2: 1e-3,
            beta3: 1e-3,
            smooth_every: 5,
            residual_form: ResidualForm::PdeConsistent,
        },
        ensemble: EnsembleSection {
            members: if paper { 8 } else { 4 },
        },
        conditions: Vec::new(),
        segments: SegmentsConfig {
            z_fractions: vec![0.0, 0.25, 0.625, 1.0],
        },
        cycles: None,
        noise: NoiseConfig {
            relative_sigma: 0.01,
            observable: ObservableConfig::MassGain,
            fiber_density_kg_m3: 1800.0,
        },
        seeds: SeedsConfig {
            master: 0,
            noise: 1,
        },
        output: OutputConfig { dir: "out".into() },
        predict: None,
        sweep: None,
        gradcheck: GradcheckConfig {
            nr: 8,
            nz: 8,
            steps: 5,
            dt_h: 10.0,
            sweeps: 40,
            step_size: 1e-4,
            tolerance: 1e-4,
        },
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b[2].c` → `/a/b/2/c`
fn pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        use serde_path_to_error::Segment;
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push_str(&format!("/{key}"))
            }
            Segment::Unknown => out.push_str("/?"),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

fn schema(pointer: impl Into<String>, msg: impl Into<String>) -> CliError {
    CliError::Config {
        pointer: pointer.into(),
        msg: msg.into(),
    }
}

impl RunConfig {
    /// Profile defaults with `text` laid over them, validated.
    pub fn from_toml(text: &str, profile: Profile) -> Result<Self> {
        let user: toml::Value =
            toml::from_str(text).map_err(|e| schema("/", e.message().to_string()))?;
        let mut base = toml::Value::try_from(defaults(profile)).expect("defaults serialize");
        merge(&mut base, user);
        let cfg: RunConfig = serde_path_to_error::deserialize(base).map_err(|e| {
            let p = pointer(e.path());
            schema(p, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, profile: Profile) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| {
            CliError::Core(icvi_core::Error::Io {
                path: path.into(),
                source: e,
            })
        })?;
        let text =
            String::from_utf8(bytes.clone()).map_err(|_| schema("/", "config is not UTF-8"))?;
        Ok((Self::from_toml(&text, profile)?, bytes))
    }

    pub fn defaults(profile: Profile) -> Self {
        defaults(profile)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, p: &str| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(schema(p, format!("must be positive, got {v}")))
            }
        };
        pos(self.geometry.radius_m, "/geometry/radius_m")?;
        pos(self.geometry.height_m, "/geometry/height_m")?;
        if self.grid.nr < 4 || self.grid.nz < 4 {
            return Err(schema("/grid", "at least 4 cells per direction"));
        }
        let m = &self.material;
        pos(m.molar_mass_kg_mol, "/material/molar_mass_kg_mol")?;
        pos(m.deposit_density_kg_m3, "/material/deposit_density_kg_m3")?;
        pos(m.stoichiometry, "/material/stoichiometry")?;
        pos(m.fiber_radius_m, "/material/fiber_radius_m")?;
        if !(m.eps0 > 0.0 && m.eps0 < 1.0) {
            return Err(schema("/material/eps0", "must lie in (0, 1)"));
        }
        if let Some(t) = &self.truth {
            pos(t.k0_m_s, "/truth/k0_m_s")?;
            pos(t.activation_energy_J_mol, "/truth/activation_energy_J_mol")?;
            pos(t.tortuosity, "/truth/tortuosity")?;
            pos(t.pore_radius_m, "/truth/pore_radius_m")?;
        }
        let o = &self.operators;
        if o.hidden.iter().any(|&w| w == 0) {
            return Err(schema("/operators/hidden", "widths must be at least 1"));
        }
        pos(o.deff_scale_m2_s, "/operators/deff_scale_m2_s")?;
        pos(o.k_scale_m_s, "/operators/k_scale_m_s")?;
        if o.trainable.iter().collect::<BTreeSet<_>>().len() != o.trainable.len() {
            return Err(schema("/operators/trainable", "duplicate entries"));
        }
        if o.trainable.len() < 3 && self.truth.is_none() {
            return Err(schema(
                "/truth",
                "required when some closures are not trainable",
            ));
        }
        if !(o.temperature_range_K[0] < o.temperature_range_K[1]) {
            return Err(schema(
                "/operators/temperature_range_K",
                "min must be below max",
            ));
        }
        if !(o.pressure_range_Pa[0] > 0.0 && o.pressure_range_Pa[0] < o.pressure_range_Pa[1]) {
            return Err(schema("/operators/pressure_range_Pa", "need 0 < min < max"));
        }
        let s = &self.solver;
        pos(s.dt_h, "/solver/dt_h")?;
        pos(s.jacobi_tol, "/solver/jacobi_tol")?;
        if s.jacobi_max_sweeps == 0 {
            return Err(schema("/solver/jacobi_max_sweeps", "must be at least 1"));
        }
        if !(s.dirichlet_outer || s.dirichlet_top || s.dirichlet_bottom) {
            return Err(schema("/solver", "at least one Dirichlet face"));
        }
        let t = &self.training;
        pos(t.learning_rate, "/training/learning_rate")?;
        for (v, p) in [
            (t.beta1, "/training/beta1"),
            (t.beta2, "/training/beta2"),
            (t.beta3, "/training/beta3"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(schema(p, "must be non-negative"));
            }
        }
        if t.smooth_every == 0 {
            return Err(schema("/training/smooth_every", "must be at least 1"));
        }
        if self.ensemble.members < 2 {
            return Err(schema("/ensemble/members", "at least 2 members"));
        }
        for (k, c) in self.conditions.iter().enumerate() {
            check_condition(c, &format!("/conditions/{k}"), s.dt_h)?;
        }
        if let Some(list) = &self.predict {
            for (k, c) in list.iter().enumerate() {
                check_condition(c, &format!("/predict/{k}"), s.dt_h)?;
            }
        }
        if let Some(cycles) = &self.cycles {
            if cycles.is_empty() {
                return Err(schema("/cycles", "at least one cycle"));
            }
            for (k, c) in cycles.iter().enumerate() {
                let p = format!("/cycles/{k}");
                pos(c.temperature_K, &format!("{p}/temperature_K"))?;
                pos(c.total_pressure_Pa, &format!("{p}/total_pressure_Pa"))?;
                pos(c.duration_h, &format!("{p}/duration_h"))?;
                pos(c.observe_every_h, &format!("{p}/observe_every_h"))?;
                whole_steps(c.duration_h, s.dt_h, &format!("{p}/duration_h"))?;
                if let Some(pr) = c.partial_pressure_Pa {
                    if !(pr >= 0.0 && pr <= c.total_pressure_Pa) {
                        return Err(schema(
                            format!("{p}/partial_pressure_Pa"),
                            "must lie in [0, total]",
                        ));
                    }
                }
                if let Some(tr) = &c.trim {
                    for (v, n) in [
                        (tr.radial_m, "radial_m"),
                        (tr.top_m, "top_m"),
                        (tr.bottom_m, "bottom_m"),
                    ] {
                        if !(v >= 0.0 && v.is_finite()) {
                            return Err(schema(format!("{p}/trim/{n}"), "must be non-negative"));
                        }
                    }
                }
            }
        }
        let z = &self.segments.z_fractions;
        if z.len() < 2
            || z[0] != 0.0
            || *z.last().unwrap() != 1.0
            || z.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(schema(
                "/segments/z_fractions",
                "must increase strictly from 0 to 1",
            ));
        }
        if !(self.noise.relative_sigma >= 0.0) {
            return Err(schema("/noise/relative_sigma", "must be non-negative"));
        }
        pos(self.noise.fiber_density_kg_m3, "/noise/fiber_density_kg_m3")?;
        if let Some(sw) = &self.sweep {
            if !(sw.temperature_K[0] <= sw.temperature_K[1]) || !(sw.temperature_K[0] > 0.0) {
                return Err(schema("/sweep/temperature_K", "need 0 < min <= max"));
            }
            if !(sw.partial_pressure_Pa[0] <= sw.partial_pressure_Pa[1])
                || !(sw.partial_pressure_Pa[0] > 0.0)
            {
                return Err(schema("/sweep/partial_pressure_Pa", "need 0 < min <= max"));
            }
            if sw.nt == 0 || sw.np == 0 {
                return Err(schema("/sweep", "nt and np must be at least 1"));
            }
            pos(sw.duration_h, "/sweep/duration_h")?;
            pos(sw.observe_every_h, "/sweep/observe_every_h")?;
            whole_steps(sw.duration_h, s.dt_h, "/sweep/duration_h")?;
        }
        let g = &self.gradcheck;
        pos(g.dt_h, "/gradcheck/dt_h")?;
        pos(g.step_size, "/gradcheck/step_size")?;
        pos(g.tolerance, "/gradcheck/tolerance")?;
        Ok(())
    }

    pub fn grid(&self) -> Result<AxiGrid> {
        AxiGrid::new(
            self.geometry.radius_m,
            self.geometry.height_m,
            self.grid.nr,
            self.grid.nz,
        )
        .map_err(CliError::Core)
    }

    pub fn material(&self) -> Material {
        let m = &self.material;
        Material {
            molar_mass: m.molar_mass_kg_mol,
            deposit_density: m.deposit_density_kg_m3,
            stoichiometry: m.stoichiometry,
            eps0: m.eps0,
            fiber_radius: m.fiber_radius_m,
        }
    }

    /// Truth parameters, or a schema error naming `/truth` when absent.
    pub fn truth(&self) -> Result<TruthParams> {
        let t = self
            .truth
            .as_ref()
            .ok_or_else(|| schema("/truth", "missing section"))?;
        let m = self.material();
        Ok(TruthParams {
            molar_mass: m.molar_mass,
            deposit_density: m.deposit_density,
            stoichiometry: m.stoichiometry,
            k0: t.k0_m_s,
            activation_energy: t.activation_energy_J_mol,
            tortuosity: t.tortuosity,
            eps0: m.eps0,
            pore_radius: t.pore_radius_m,
            fiber_radius: m.fiber_radius,
            gas_constant: TruthParams::default().gas_constant,
        })
    }

    /// The configured truth, or the built-in kinetics on the configured material.
    pub fn truth_or_default(&self) -> TruthParams {
        self.truth().unwrap_or_else(|_| {
            let m = self.material();
            TruthParams {
                molar_mass: m.molar_mass,
                deposit_density: m.deposit_density,
                stoichiometry: m.stoichiometry,
                eps0: m.eps0,
                fiber_radius: m.fiber_radius,
                ..TruthParams::default()
            }
        })
    }

    pub fn segments(&self) -> Result<SegmentSpec> {
        SegmentSpec::new(self.segments.z_fractions.clone()).map_err(CliError::Core)
    }

    pub fn solver(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            jacobi_tol: s.jacobi_tol,
            jacobi_max_sweeps: s.jacobi_max_sweeps,
            dt: s.dt_h * SECONDS_PER_HOUR,
            stepper: s.stepper,
            warm_start: s.warm_start,
            stencil: s.stencil,
            faces: DirichletFaces {
                outer: s.dirichlet_outer,
                top: s.dirichlet_top,
                bottom: s.dirichlet_bottom,
            },
        }
    }

    pub fn normalization(&self) -> NormalizationSpec {
        let o = &self.operators;
        NormalizationSpec {
            temperature: (o.temperature_range_K[0], o.temperature_range_K[1]),
            pressure: (o.pressure_range_Pa[0], o.pressure_range_Pa[1]),
        }
    }

    pub fn specs(&self) -> [MlpSpec; 3] {
        default_specs(
            &self.operators.hidden,
            self.operators.deff_scale_m2_s,
            self.operators.k_scale_m_s,
        )
    }

    /// Initial operators for an ensemble member seed.
    pub fn init_operators(&self, seed: u64) -> Result<OperatorSet> {
        let mut ops =
            OperatorSet::neural(self.specs(), seed, self.normalization(), self.material())?;
        let keep = |n: OperatorName| self.operators.trainable.contains(&n);
        if !(keep(OperatorName::Deff) && keep(OperatorName::K) && keep(OperatorName::Sv)) {
            let tp = self.truth()?;
            if !keep(OperatorName::Deff) {
                ops.deff = Closure::Truth(tp);
            }
            if !keep(OperatorName::K) {
                ops.k = Closure::Truth(tp);
            }
            if !keep(OperatorName::Sv) {
                ops.sv = Closure::Truth(tp);
            }
        }
        Ok(ops)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            beta1: self.training.beta1,
            beta2: self.training.beta2,
            beta3: self.training.beta3,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.training.learning_rate,
            epochs: self.training.epochs,
            ..Default::default()
        }
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            relative_sigma: self.noise.relative_sigma,
            seed: self.seeds.noise,
        }
    }

    pub fn observable(&self) -> SyntheticObservable {
        match self.noise.observable {
            ObservableConfig::MassGain => SyntheticObservable::MassGain,
            ObservableConfig::TotalMass => SyntheticObservable::TotalMass {
                fiber_density: self.noise.fiber_density_kg_m3,
            },
        }
    }

    /// Multicycle schedule from the `cycles` section.
    pub fn cycle_schedule(&self) -> Result<CycleSchedule> {
        let cycles = self
            .cycles
            .as_ref()
            .ok_or_else(|| schema("/cycles", "missing section"))?;
        Ok(CycleSchedule {
            cycles: cycles
                .iter()
                .map(|c| CycleSpec {
                    condition: OperatingCondition {
                        temperature: c.temperature_K,
                        total_pressure: c.total_pressure_Pa,
                        partial_pressure: c.partial_pressure_Pa.unwrap_or(c.total_pressure_Pa),
                        duration: c.duration_h * SECONDS_PER_HOUR,
                    },
                    observation_times: observation_times(c.duration_h, c.observe_every_h),
                    trim_after: c.trim.as_ref().map(|t| TrimSpec {
                        radial_trim: t.radial_m,
                        top_trim: t.top_m,
                        bottom_trim: t.bottom_m,
                    }),
                })
                .collect(),
        })
    }
}

pub fn check_condition(c: &ConditionConfig, p: &str, dt_h: f64) -> Result<()> {
    for (v, n) in [
        (c.temperature_K, "temperature_K"),
        (c.total_pressure_Pa, "total_pressure_Pa"),
        (c.duration_h, "duration_h"),
        (c.observe_every_h, "observe_every_h"),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(schema(
                format!("{p}/{n}"),
                format!("must be positive, got {v}"),
            ));
        }
    }
    if let Some(pr) = c.partial_pressure_Pa {
        if !(pr >= 0.0 && pr <= c.total_pressure_Pa) {
            return Err(schema(
                format!("{p}/partial_pressure_Pa"),
                "must lie in [0, total]",
            ));
        }
    }
    whole_steps(c.duration_h, dt_h, &format!("{p}/duration_h"))
}

fn whole_steps(duration_h: f64, dt_h: f64, p: &str) -> Result<()> {
    let ratio = duration_h / dt_h;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio {
        return Err(schema(
            p,
            format!("not a multiple of the time step {dt_h} h"),
        ));
    }
    Ok(())
}

/// Every `every_h` hours up to and including the end, in seconds.
pub fn observation_times(duration_h: f64, every_h: f64) -> Vec<f64> {
    let n = (duration_h / every_h + 1e-9).floor() as usize;
    (1..=n)
        .map(|k| k as f64 * every_h * SECONDS_PER_HOUR)
        .collect()
}

impl ConditionConfig {
    pub fn condition(&self) -> OperatingCondition {
        OperatingCondition {
            temperature: self.temperature_K,
            total_pressure: self.total_pressure_Pa,
            partial_pressure: self.partial_pressure_Pa.unwrap_or(self.total_pressure_Pa),
            duration: self.duration_h * SECONDS_PER_HOUR,
        }
    }

    /// File-safe label: the id, or `T<K>_P<Pa>`.
    pub fn label(&self, index: usize) -> String {
        let raw = match &self.id {
            Some(id) => id.clone(),
            None => format!(
                "T{}_P{}",
                self.temperature_K,
                self.partial_pressure_Pa.unwrap_or(self.total_pressure_Pa)
            ),
        };
        let clean: String = raw
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        if clean.trim_matches('.').is_empty() {
            format!("condition_{index}")
        } else {
            clean
        }
    }

    pub fn schedule(&self) -> CycleSchedule {
        CycleSchedule {
            cycles: vec![CycleSpec {
                condition: self.condition(),
                observation_times: observation_times(self.duration_h, self.observe_every_h),
                trim_after: None,
            }],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_both_profiles() {
        RunConfig::defaults(Profile::Fast).validate().unwrap();
        RunConfig::defaults(Profile::Paper).validate().unwrap();
        let cfg = RunConfig::from_toml("", Profile::Fast).unwrap();
        assert_eq!(cfg.ensemble.members, 4);
        assert_eq!(
            RunConfig::from_toml("", Profile::Paper)
                .unwrap()
                .ensemble
                .members,
            8
        );
    }

    #[test]
    fn user_values_override_profile() {
        let cfg =
            RunConfig::from_toml("[grid]\nnr = 12\n[solver]\ndt_h = 2.5\n", Profile::Fast).unwrap();
        assert_eq!(cfg.grid.nr, 12);
        assert_eq!(cfg.grid.nz, 16);
        assert_eq!(cfg.solver().dt, 9000.0);
    }

    #[test]
    fn unknown_keys_report_a_pointer() {
        let err = RunConfig::from_toml("[solver]\ndt_hours = 1.0\n", Profile::Fast).unwrap_err();
        match err {
            CliError::Config { pointer, .. } => assert_eq!(pointer, "/solver/dt_hours"),
            e => panic!("{e:?}"),
        }
        let err = RunConfig::from_toml(
            "[[conditions]]\ntemperature_K = 1200.0\ntotal_pressure_Pa = 800.0\nduration_h = 35.0\nobserve_every_h = \"x\"\n",
            Profile::Fast,
        )
        .unwrap_err();
        match err {
            CliError::Config { pointer, .. } => {
                assert_eq!(pointer, "/conditions/0/observe_every_h")
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn inverted_sweep_range_is_rejected() {
        let text = "[sweep]\ntemperature_K = [1300.0, 1200.0]\npartial_pressure_Pa = [800.0, 3200.0]\nnt = 2\nnp = 2\nduration_h = 35.0\nobserve_every_h = 35.0\n";
        match RunConfig::from_toml(text, Profile::Fast).unwrap_err() {
            CliError::Config { pointer, .. } => assert_eq!(pointer, "/sweep/temperature_K"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn missing_truth_is_a_schema_error() {
        let cfg = RunConfig::from_toml("", Profile::Fast).unwrap();
        assert!(matches!(cfg.truth(), Err(CliError::Config { .. })));
        let cfg = RunConfig::from_toml("[operators]\ntrainable = [\"k\"]\n", Profile::Fast);
        assert!(matches!(cfg, Err(CliError::Config { .. })));
    }

    #[test]
    fn hours_become_seconds() {
        assert_eq!(observation_times(70.0, 35.0), vec![126000.0, 252000.0]);
        let c = ConditionConfig {
            id: None,
            temperature_K: 1200.0,
            total_pressure_Pa: 800.0,
            partial_pressure_Pa: None,
            duration_h: 35.0,
            observe_every_h: 35.0,
        };
        assert_eq!(c.condition().duration, 126000.0);
        assert_eq!(c.condition().partial_pressure, 800.0);
        assert_eq!(c.label(0), "T1200_P800");
    }
}
