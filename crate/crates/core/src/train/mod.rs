//! Training loop, voting inference, ablations and run configuration.

mod ablation;
mod config;
mod dataset;
mod record;
mod optim;
mod trainer;
mod vote;

pub use ablation::{ablation_table, grid_rows, run_ablation, AblationGrid, AblationResult, AblationRow};
pub use config::{
    DataConfig, DataSource, NetworkConfig, OptimizerConfig, OptimizerKind, PgaConfig,
    SamplingConfig,
};
pub use dataset::{class_names, load_split, remap_table, VALIDATION_SEED_OFFSET};
pub use record::{EvalRecord, StepRecord, TrainLog};
pub use optim::Optimizer;
pub use trainer::{load_network, save_network, train, CropId, Trainer};
pub use vote::{
    accumulate_votes, evaluate, forward_probabilities, plan_crops, vote_probabilities, VoteResult,
};
