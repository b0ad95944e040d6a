//! Train/test protocols (random, time and leave-one-cluster-out splits),
//! error metrics, and the multi-seed experiment runner.

mod experiment;
mod metrics;
mod split;

pub use experiment::{
    default_models, personal_baseline, run_experiment, EvalReport, ExperimentOptions, ModelKind, SeedEntry,
};
pub use metrics::{group_mae, participant_errors, participant_mae, user_lift, worst_case_error, ParticipantErrors};
pub use split::{
    make_random_split, make_split, make_time_split, make_user_split, Fold, Scenario, SplitPlan, DEFAULT_TIME_SPLIT_K,
    DEFAULT_TRAIN_RATIO,
};
