use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss, loss_and_grad, LossBreakdown, SolveStats};
use super::optim::{adam_update, cosine_lr, AdamState, OptimizerConfig};
use super::problem::TrainingProblem;
use crate::error::{Error, Result};
use crate::neural::OperatorSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainRecord {
    /// Loss at the parameters each update started from.
    pub epochs: Vec<EpochRecord>,
    /// Loss of the returned parameters.
    pub final_loss: Option<LossBreakdown>,
    /// Set when training stopped early; the returned parameters are the last finite ones.
    pub failure: Option<String>,
}

impl TrainRecord {
    pub fn initial_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss.total)
    }
}

/// Full-batch Adam with cosine decay over `opt.epochs` epochs.
pub fn train_single(
    init: &OperatorSet,
    problem: &TrainingProblem,
    opt: &OptimizerConfig,
) -> (OperatorSet, TrainRecord) {
    let mut record = TrainRecord::default();
    if let Err(e) = opt.validate().and_then(|_| init.validate()) {
        record.failure = Some(e.to_string());
        return (init.clone(), record);
    }
    let mut set = init.clone();
    let mut theta = set.flat_params();
    let mut adam = AdamState::new(theta.len());
    for epoch in 0..opt.epochs {
        let eval = match loss_and_grad(&set, problem) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("training stopped at epoch {epoch}: {e}");
                record.failure = Some(format!("epoch {epoch}: {e}"));
                break;
            }
        };
        let lr = cosine_lr(epoch, opt.epochs, opt);
        record.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            loss: eval.loss,
            stats: eval.stats,
        });
        let mut next = theta.clone();
        if let Err(e) = adam_update(&mut next, &eval.gradient, &mut adam, lr, opt) {
            record.failure = Some(format!("epoch {epoch}: {e}"));
            break;
        }
        let mut candidate = set.clone();
        if candidate.set_flat_params(&next).is_err() || next.iter().any(|v| !v.is_finite()) {
            record.failure = Some(format!("epoch {epoch}: non-finite parameters"));
            break;
        }
        theta = next;
        set = candidate;
    }
    match loss(&set, problem) {
        Ok(e) => record.final_loss = Some(e.loss),
        Err(e) if record.failure.is_none() => {
            record.failure = Some(format!("final evaluation: {e}"))
        }
        Err(_) => {}
    }
    (set, record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub seeds: Vec<u64>,
}

impl EnsembleConfig {
    /// `members` seeds split from `master`.
    pub fn from_master(members: usize, master: u64) -> Self {
        Self {
            seeds: (0..members as u64)
                .map(|k| crate::rng::split(master, k))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.len() < 2 {
            return Err(Error::contract("an ensemble needs at least two members"));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::contract("ensemble member seeds must be distinct"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Member {
    pub seed: u64,
    pub operators: OperatorSet,
    pub record: TrainRecord,
}

/// Trains one member per seed. Members that fail are dropped with a warning;
/// at least two must survive.
pub fn train_ensemble<F>(
    cfg: &EnsembleConfig,
    init: F,
    problem: &TrainingProblem,
    opt: &OptimizerConfig,
) -> Result<Vec<Member>>
where
    F: Fn(u64) -> Result<OperatorSet> + Sync,
{
    cfg.validate()?;
    let trained: Vec<Result<Member>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let start = init(seed)?;
            let (operators, record) = train_single(&start, problem, opt);
            Ok(Member {
                seed,
                operators,
                record,
            })
        })
        .collect();
    let mut members = Vec::with_capacity(trained.len());
    for (seed, m) in cfg.seeds.iter().zip(trained) {
        match m {
            Ok(m) if m.record.failure.is_none() => members.push(m),
            Ok(m) => log::warn!(
                "member {seed} dropped: {}",
                m.record.failure.unwrap_or_default()
            ),
            Err(e) => log::warn!("member {seed} dropped: {e}"),
        }
    }
    if members.len() < 2 {
        return Err(Error::Evaluation(format!(
            "only {} ensemble member(s) trained successfully",
            members.len()
        )));
    }
    Ok(members)
}
