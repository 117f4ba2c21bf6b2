//! Loss assembly, optimisation, deep ensembles and ensemble prediction.

mod ensemble;
mod gradcheck;
mod loss;
mod optim;
mod problem;
mod uq;

pub use ensemble::{
    train_ensemble, train_single, EnsembleConfig, EpochRecord, Member, TrainRecord,
};
pub use gradcheck::{block_gradcheck, BlockCheck};
pub use loss::{loss, loss_and_grad, LossBreakdown, LossEvaluation, SolveStats};
pub use optim::{adam_update, cosine_lr, AdamState, OptimizerConfig};
pub use problem::{
    CycleLayout, CyclePlan, LossWeights, ProblemSettings, ResidualForm, RunPlan, Target,
    TrainingProblem,
};
pub use uq::{moments, uq_predict, Probe, Quantity, UqField, UqPrediction, UqSeries, CI_SIGMAS};
