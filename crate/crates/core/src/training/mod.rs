//! Relaxed-stopping rollouts, the mean-variance objective and the
//! gradient-ascent training schedule.

pub mod evaluate;
pub mod gradcheck;
pub mod rollout;
pub mod train;

pub use evaluate::{evaluate, path_outcomes, report_from_outcomes, EvalMode, EvalReport};
pub use gradcheck::{grad_check, grad_check_with_step, toy_instance, GradCheckReport};
pub use rollout::{
    meanvar, objective_gradient, objective_meanvar, objective_with_branches, record_rollout, rollout,
    ObjectiveGradient, RolloutResult, TapedRollout,
};
pub use train::{
    heldout_batch, train, train_best_of, train_from, CurvePoint, Phase, Silent, TrainAbort, TrainConfig,
    TrainObserver, TrainOutcome,
};
