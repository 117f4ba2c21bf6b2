use std::path::Path;

use serde::{Deserialize, Serialize};

use super::canonical::to_canonical;
use crate::error::{Error, Result};
use crate::grid::AxiGrid;
use crate::neural::{Block, Closure, MlpParams, MlpSpec, NormalizationSpec, OperatorSet};
use crate::physics::SolverConfig;
use crate::process::{Material, OperatingCondition};
use crate::training::Member;
use crate::truth::TruthParams;

pub const CHECKPOINT_VERSION: u32 = 1;

/// What occupies one closure slot, without the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SlotLayout {
    Neural { spec: MlpSpec, len: usize },
    Truth { params: TruthParams },
}

impl SlotLayout {
    fn of(c: &Closure) -> Self {
        match c {
            Closure::Neural { spec, params } => SlotLayout::Neural {
                spec: spec.clone(),
                len: params.0.len(),
            },
            Closure::Truth(p) => SlotLayout::Truth { params: *p },
        }
    }

    fn closure(&self) -> Result<Closure> {
        match self {
            SlotLayout::Neural { spec, len } => {
                spec.validate()?;
                if spec.param_count() != *len {
                    return Err(Error::Checkpoint(format!(
                        "layout declares {len} parameters but the network needs {}",
                        spec.param_count()
                    )));
                }
                Ok(Closure::Neural {
                    spec: spec.clone(),
                    params: MlpParams(vec![0.0; *len]),
                })
            }
            SlotLayout::Truth { params } => Ok(Closure::Truth(*params)),
        }
    }

    fn len(&self) -> usize {
        match self {
            SlotLayout::Neural { len, .. } => *len,
            SlotLayout::Truth { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterLayout {
    pub deff: SlotLayout,
    pub k: SlotLayout,
    pub sv: SlotLayout,
}

impl ParameterLayout {
    pub fn of(ops: &OperatorSet) -> Self {
        Self {
            deff: SlotLayout::of(&ops.deff),
            k: SlotLayout::of(&ops.k),
            sv: SlotLayout::of(&ops.sv),
        }
    }

    pub fn len(&self) -> usize {
        self.deff.len() + self.k.len() + self.sv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slot(&self, b: Block) -> &SlotLayout {
        match b {
            Block::Deff => &self.deff,
            Block::K => &self.k,
            Block::Sv => &self.sv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMember {
    pub seed: u64,
    pub params: Vec<f64>,
    /// Total loss of the stored parameters, when known.
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub master_seed: u64,
    pub epochs: usize,
    /// Conditions of the training runs, used to classify prediction requests.
    pub conditions: Vec<OperatingCondition>,
    /// Digest of the dataset the ensemble was trained on.
    pub dataset_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub grid: AxiGrid,
    pub material: Material,
    pub normalization: NormalizationSpec,
    pub solver: SolverConfig,
    pub layout: ParameterLayout,
    pub members: Vec<CheckpointMember>,
    pub training: TrainingMetadata,
}

impl Checkpoint {
    /// Snapshot of trained members sharing one layout.
    pub fn from_members(
        members: &[Member],
        grid: &AxiGrid,
        solver: &SolverConfig,
        training: TrainingMetadata,
    ) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Checkpoint("no members to store".into()))?;
        let layout = ParameterLayout::of(&first.operators);
        for m in members {
            if ParameterLayout::of(&m.operators) != layout
                || m.operators.normalization != first.operators.normalization
                || m.operators.material != first.operators.material
            {
                return Err(Error::Checkpoint(format!(
                    "member with seed {} has a different layout",
                    m.seed
                )));
            }
        }
        let ck = Self {
            version: CHECKPOINT_VERSION,
            grid: grid.clone(),
            material: first.operators.material,
            normalization: first.operators.normalization,
            solver: *solver,
            layout,
            members: members
                .iter()
                .map(|m| CheckpointMember {
                    seed: m.seed,
                    params: m.operators.flat_params(),
                    final_loss: m.record.final_loss.map(|l| l.total),
                })
                .collect(),
            training,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.members.is_empty() {
            return Err(Error::Checkpoint("checkpoint holds no members".into()));
        }
        let n = self.layout.len();
        for (k, m) in self.members.iter().enumerate() {
            if m.params.len() != n {
                return Err(Error::Checkpoint(format!(
                    "member {k} has {} parameters, layout needs {n}",
                    m.params.len()
                )));
            }
            if m.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "member {k} has non-finite parameters"
                )));
            }
        }
        self.material
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        self.normalization
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(())
    }

    /// Rebuilds one operator set per member, in stored order.
    pub fn operator_sets(&self) -> Result<Vec<OperatorSet>> {
        self.validate()?;
        let template = OperatorSet {
            deff: self.layout.deff.closure()?,
            k: self.layout.k.closure()?,
            sv: self.layout.sv.closure()?,
            normalization: self.normalization,
            material: self.material,
        };
        self.members
            .iter()
            .map(|m| {
                let mut ops = template.clone();
                ops.set_flat_params(&m.params)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                Ok(ops)
            })
            .collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.members.iter().map(|m| m.seed).collect()
    }
}

pub fn format_checkpoint(ck: &Checkpoint) -> Result<String> {
    ck.validate()?;
    to_canonical(ck)
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        Some(v) => {
            return Err(Error::Checkpoint(format!(
                "unsupported version {v} (expected {CHECKPOINT_VERSION})"
            )))
        }
        None => return Err(Error::Checkpoint("missing version".into())),
    }
    let ck: Checkpoint =
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    ck.validate()?;
    Ok(ck)
}

pub fn write_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_checkpoint(ck)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}
