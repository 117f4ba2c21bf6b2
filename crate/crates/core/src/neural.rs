//! Pointwise neural closures for the effective diffusivity, the deposition
//! rate and the surface-to-volume correction.
//!
//! Each closure slot holds either a trainable MLP or the analytic truth
//! relation, so twin experiments can learn one operator while the others are
//! supplied exactly. Trainable blocks are laid out in the fixed order
//! `D_eff`, `K`, `S_v` in the flat parameter vector.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Tape, Var};
use crate::error::{Error, Result};
use crate::process::{Material, OperatingCondition};
use crate::truth::{self, TruthParams};

/// Default bound on the surface-to-volume correction.
pub const SV_CORRECTION_BOUND: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutputMap {
    Identity,
    /// `scale · softplus(raw)`
    SoftplusPositive {
        scale: f64,
    },
    /// `bound · tanh(raw)`
    BoundedCorrection {
        bound: f64,
    },
}

impl OutputMap {
    pub fn apply(&self, raw: f64) -> f64 {
        match *self {
            OutputMap::Identity => raw,
            OutputMap::SoftplusPositive { scale } => scale * softplus(raw),
            OutputMap::BoundedCorrection { bound } => bound * raw.tanh(),
        }
    }

    fn apply_taped(&self, tape: &mut Tape, raw: Var) -> Result<Var> {
        match *self {
            OutputMap::Identity => Ok(raw),
            OutputMap::SoftplusPositive { scale } => {
                let s = tape.softplus(raw)?;
                tape.scale(s, scale)
            }
            OutputMap::BoundedCorrection { bound } => {
                let t = tape.tanh(raw)?;
                tape.scale(t, bound)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
    pub output_map: OutputMap,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize, output_map: OutputMap) -> Self {
        Self {
            input,
            hidden,
            output,
            activation: Activation::Tanh,
            output_map,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::contract("MLP widths must be at least 1"));
        }
        match self.output_map {
            OutputMap::SoftplusPositive { scale } if !(scale > 0.0) => {
                Err(Error::contract("softplus output scale must be positive"))
            }
            OutputMap::BoundedCorrection { bound } if !(bound > 0.0 && bound < 1.0) => {
                Err(Error::contract("correction bound must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    /// `(n_in, n_out)` per affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// Flat parameters: for each layer, row-major weights `(n_out x n_in)` then bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams(pub Vec<f64>);

/// Xavier-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<MlpParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.param_count());
    for (n_in, n_out) in spec.layers() {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        out.extend((0..n_in * n_out).map(|_| dist.sample(&mut rng)));
        out.extend(std::iter::repeat(0.0).take(n_out));
    }
    Ok(MlpParams(out))
}

/// Plain evaluation of one input row; returns pre-output-map values.
pub fn mlp_apply(params: &MlpParams, spec: &MlpSpec, inputs: &[f64]) -> Result<Vec<f64>> {
    if inputs.len() != spec.input {
        return Err(Error::contract(format!(
            "MLP expects {} inputs, got {}",
            spec.input,
            inputs.len()
        )));
    }
    if params.0.len() != spec.param_count() {
        return Err(Error::contract("parameter block does not match MLP spec"));
    }
    let layers = spec.layers();
    let mut x = inputs.to_vec();
    let mut off = 0;
    for (l, &(n_in, n_out)) in layers.iter().enumerate() {
        let w = &params.0[off..off + n_in * n_out];
        let b = &params.0[off + n_in * n_out..off + n_in * n_out + n_out];
        let mut y: Vec<f64> = (0..n_out)
            .map(|o| b[o] + (0..n_in).map(|k| w[o * n_in + k] * x[k]).sum::<f64>())
            .collect();
        if l + 1 < layers.len() {
            y.iter_mut().for_each(|v| *v = v.tanh());
        }
        x = y;
        off += n_in * n_out + n_out;
    }
    Ok(x)
}

/// Taped evaluation of a batch of rows (`x` is row-major `rows x input`).
pub fn mlp_forward(tape: &mut Tape, p: Var, spec: &MlpSpec, x: Var) -> Result<Var> {
    let layers = spec.layers();
    let mut h = x;
    let mut off = 0;
    for (l, &(n_in, n_out)) in layers.iter().enumerate() {
        h = tape.dense(h, p, off, off + n_in * n_out, n_in, n_out)?;
        if l + 1 < layers.len() {
            h = tape.tanh(h)?;
        }
        off += n_in * n_out + n_out;
    }
    Ok(h)
}

/// Affine input scalings shared by the closures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    /// Temperature range mapped to [-1, 1], K.
    pub temperature: (f64, f64),
    /// Pressure range mapped to [-1, 1] on a log scale, Pa.
    pub pressure: (f64, f64),
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            temperature: (1100.0, 1400.0),
            pressure: (100.0, 1.0e5),
        }
    }
}

impl NormalizationSpec {
    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.temperature;
        let (p0, p1) = self.pressure;
        if !(t1 > t0 && t0 > 0.0 && p1 > p0 && p0 > 0.0) {
            return Err(Error::contract(
                "normalisation ranges must be positive and non-degenerate",
            ));
        }
        Ok(())
    }

    /// Normalised temperature and whether it had to be soft-clamped.
    pub fn temperature_feature(&self, t: f64) -> (f64, bool) {
        let (a, b) = self.temperature;
        soft_clamp(2.0 * (t - a) / (b - a) - 1.0)
    }

    pub fn pressure_feature(&self, p: f64) -> (f64, bool) {
        let (a, b) = self.pressure;
        soft_clamp(2.0 * (p.max(f64::MIN_POSITIVE).ln() - a.ln()) / (b.ln() - a.ln()) - 1.0)
    }
}

/// Identity on [-1, 1]; outside, saturates smoothly towards ±2.
fn soft_clamp(x: f64) -> (f64, bool) {
    if x.abs() <= 1.0 {
        (x, false)
    } else {
        (x.signum() * (1.0 + (x.abs() - 1.0).tanh()), true)
    }
}

/// One closure slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    Neural { spec: MlpSpec, params: MlpParams },
    Truth(TruthParams),
}

impl Closure {
    pub fn neural(spec: MlpSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        Ok(Closure::Neural { spec, params })
    }

    pub fn param_count(&self) -> usize {
        match self {
            Closure::Neural { params, .. } => params.0.len(),
            Closure::Truth(_) => 0,
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self, Closure::Neural { .. })
    }
}

/// Which block of the flat parameter vector a slot owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Deff,
    K,
    Sv,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Deff, Block::K, Block::Sv];

    pub fn name(&self) -> &'static str {
        match self {
            Block::Deff => "theta_deff",
            Block::K => "theta_k",
            Block::Sv => "theta_sv",
        }
    }
}

/// Closures for `D_eff`, `K` and `S_v` plus the context they are evaluated in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSet {
    pub deff: Closure,
    pub k: Closure,
    pub sv: Closure,
    pub normalization: NormalizationSpec,
    pub material: Material,
}

/// Default MLP shapes: `D_nn(ε, T, P)`, `K_nn(T)`, `S_nn(Ŝ_v, ε)`.
pub fn default_specs(hidden: &[usize], d_scale: f64, k_scale: f64) -> [MlpSpec; 3] {
    [
        MlpSpec::new(
            3,
            hidden.to_vec(),
            1,
            OutputMap::SoftplusPositive { scale: d_scale },
        ),
        MlpSpec::new(
            1,
            hidden.to_vec(),
            1,
            OutputMap::SoftplusPositive { scale: k_scale },
        ),
        MlpSpec::new(
            2,
            hidden.to_vec(),
            1,
            OutputMap::BoundedCorrection {
                bound: SV_CORRECTION_BOUND,
            },
        ),
    ]
}

impl OperatorSet {
    /// All three closures neural, each block seeded from `seed` by the splitter.
    pub fn neural(
        specs: [MlpSpec; 3],
        seed: u64,
        normalization: NormalizationSpec,
        material: Material,
    ) -> Result<Self> {
        let [sd, sk, ss] = specs;
        Ok(Self {
            deff: Closure::neural(sd, crate::rng::split(seed, 0))?,
            k: Closure::neural(sk, crate::rng::split(seed, 1))?,
            sv: Closure::neural(ss, crate::rng::split(seed, 2))?,
            normalization,
            material,
        })
    }

    /// Every closure replaced by its truth relation.
    pub fn truth(params: TruthParams, normalization: NormalizationSpec) -> Self {
        Self {
            deff: Closure::Truth(params),
            k: Closure::Truth(params),
            sv: Closure::Truth(params),
            normalization,
            material: params.material(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        self.normalization.validate()?;
        for (c, n_in) in [(&self.deff, 3), (&self.k, 1), (&self.sv, 2)] {
            if let Closure::Neural { spec, params } = c {
                spec.validate()?;
                if spec.input != n_in || spec.output != 1 {
                    return Err(Error::contract(
                        "closure MLP has the wrong input/output width",
                    ));
                }
                if params.0.len() != spec.param_count() {
                    return Err(Error::contract(
                        "closure parameters do not match their spec",
                    ));
                }
            }
        }
        Ok(())
    }

    fn slot(&self, b: Block) -> &Closure {
        match b {
            Block::Deff => &self.deff,
            Block::K => &self.k,
            Block::Sv => &self.sv,
        }
    }

    fn slot_mut(&mut self, b: Block) -> &mut Closure {
        match b {
            Block::Deff => &mut self.deff,
            Block::K => &mut self.k,
            Block::Sv => &mut self.sv,
        }
    }

    /// Trainable blocks and their lengths, in flat-vector order.
    pub fn layout(&self) -> Vec<(Block, usize)> {
        Block::ALL
            .iter()
            .filter(|b| self.slot(**b).is_neural())
            .map(|&b| (b, self.slot(b).param_count()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|l| l.1).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in Block::ALL {
            if let Closure::Neural { params, .. } = self.slot(b) {
                out.extend_from_slice(&params.0);
            }
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::contract(format!(
                "flat parameter vector has {} entries, layout needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for b in Block::ALL {
            if let Closure::Neural { params, .. } = self.slot_mut(b) {
                let n = params.0.len();
                params.0.copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// Range of each trainable block inside the flat vector.
    pub fn block_ranges(&self) -> Vec<(Block, std::ops::Range<usize>)> {
        let mut off = 0;
        self.layout()
            .into_iter()
            .map(|(b, n)| {
                let r = off..off + n;
                off += n;
                (b, r)
            })
            .collect()
    }

    /// Registers the trainable blocks on `tape` as parameters (layout order).
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundOperators<'_>> {
        let reg = |c: &Closure, tape: &mut Tape| -> Result<Option<Var>> {
            match c {
                Closure::Neural { params, .. } => Ok(Some(tape.param(params.0.clone())?)),
                Closure::Truth(_) => Ok(None),
            }
        };
        let deff = reg(&self.deff, tape)?;
        let k = reg(&self.k, tape)?;
        let sv = reg(&self.sv, tape)?;
        Ok(BoundOperators {
            set: self,
            deff,
            k,
            sv,
        })
    }

    /// Numeric `D_eff` field for porosity values `eps`.
    pub fn deff_field(&self, eps: &[f64], cond: &OperatingCondition) -> Result<Vec<f64>> {
        let mut tape = Tape::without_grad();
        let b = self.bind(&mut tape)?;
        let e = tape.constant(eps.to_vec())?;
        let d = b.eval_deff(&mut tape, e, cond)?;
        Ok(tape.value(d).to_vec())
    }

    pub fn k_value(&self, cond: &OperatingCondition) -> Result<f64> {
        let mut tape = Tape::without_grad();
        let b = self.bind(&mut tape)?;
        let k = b.eval_k(&mut tape, cond)?;
        Ok(tape.scalar(k))
    }

    pub fn sv_field(&self, eps: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::without_grad();
        let b = self.bind(&mut tape)?;
        let e = tape.constant(eps.to_vec())?;
        let s = b.eval_sv(&mut tape, e)?;
        Ok(tape.value(s).to_vec())
    }
}

/// An [`OperatorSet`] whose trainable blocks live on a tape.
pub struct BoundOperators<'a> {
    set: &'a OperatorSet,
    deff: Option<Var>,
    k: Option<Var>,
    sv: Option<Var>,
}

impl BoundOperators<'_> {
    pub fn set(&self) -> &OperatorSet {
        self.set
    }

    /// Parameter node of a trainable block, if that slot is neural.
    pub fn block_var(&self, b: Block) -> Option<Var> {
        match b {
            Block::Deff => self.deff,
            Block::K => self.k,
            Block::Sv => self.sv,
        }
    }

    /// Effective diffusivity field, m²/s.
    pub fn eval_deff(&self, tape: &mut Tape, eps: Var, cond: &OperatingCondition) -> Result<Var> {
        let out = match &self.set.deff {
            Closure::Truth(tp) => {
                let coef = truth::true_deff(1.0, cond.temperature, cond.total_pressure, tp);
                tape.scale(eps, coef)?
            }
            Closure::Neural { spec, .. } => {
                let norm = &self.set.normalization;
                let eps0 = self.set.material.eps0;
                let (tf, tc) = norm.temperature_feature(cond.temperature);
                let (pf, pc) = norm.pressure_feature(cond.total_pressure);
                if tc || pc {
                    log::warn!(
                        "operating point T = {} K, P = {} Pa outside the normalisation range",
                        cond.temperature,
                        cond.total_pressure
                    );
                }
                let ef = tape.affine(eps, 2.0 / eps0, -1.0)?;
                let tv = tape.scalar_constant(tf)?;
                let pv = tape.scalar_constant(pf)?;
                let x = tape.stack_columns(&[ef, tv, pv])?;
                let raw = mlp_forward(tape, self.deff.expect("bound"), spec, x)?;
                spec.output_map.apply_taped(tape, raw)?
            }
        };
        finite_or_eval(tape, out, "D_eff")
    }

    /// Deposition rate constant (length-1 node), m/s.
    pub fn eval_k(&self, tape: &mut Tape, cond: &OperatingCondition) -> Result<Var> {
        let out = match &self.set.k {
            Closure::Truth(tp) => tape.scalar_constant(truth::true_k(cond.temperature, tp))?,
            Closure::Neural { spec, .. } => {
                let (tf, _) = self.set.normalization.temperature_feature(cond.temperature);
                let x = tape.scalar_constant(tf)?;
                let raw = mlp_forward(tape, self.k.expect("bound"), spec, x)?;
                spec.output_map.apply_taped(tape, raw)?
            }
        };
        finite_or_eval(tape, out, "K")
    }

    /// Surface-to-volume ratio field, 1/m. Exactly zero where `ε = 0`.
    pub fn eval_sv(&self, tape: &mut Tape, eps: Var) -> Result<Var> {
        let m = self.set.material;
        let out = match &self.set.sv {
            Closure::Truth(tp) => truth::true_sv_taped(tape, eps, tp)?,
            Closure::Neural { spec, .. } => {
                let base = 2.0 * (1.0 - m.eps0) / m.fiber_radius;
                // Ŝ_v = base · ε/ε₀; its normalised feature is ε/ε₀.
                let sv_hat_feature = tape.scale(eps, 1.0 / m.eps0)?;
                let sv_hat = tape.scale(sv_hat_feature, base)?;
                let ef = tape.affine(eps, 2.0 / m.eps0, -1.0)?;
                let x = tape.stack_columns(&[sv_hat_feature, ef])?;
                let raw = mlp_forward(tape, self.sv.expect("bound"), spec, x)?;
                let corr = spec.output_map.apply_taped(tape, raw)?;
                let factor = tape.affine(corr, 1.0, 1.0)?;
                tape.mul(sv_hat, factor)?
            }
        };
        finite_or_eval(tape, out, "S_v")
    }
}

fn finite_or_eval(tape: &Tape, v: Var, what: &str) -> Result<Var> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!(
            "{what} closure produced a non-finite value"
        )))
    }
}
