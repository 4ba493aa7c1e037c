//! Experiment plumbing: configuration, checkpoints, logs and the train,
//! evaluate and compare workflows the command-line tool exposes.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod logs;

pub use checkpoint::Checkpoint;
pub use config::{Algorithm, EnvKind, RunConfig};
pub use experiment::{
    compare, evaluate, export_plots, load_policy, make_task, policy_shape, train, train_and_evaluate,
    train_in_memory, Comparison, EvalReport, Purpose, Trainer,
};
