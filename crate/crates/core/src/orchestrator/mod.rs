//! The deploy, collect, train and report loop, its persistence, and the
//! HTTP session service for human followers.

mod config;
mod game;
mod record;
mod run;
pub mod service;

use std::path::PathBuf;

pub use config::{ExperimentConfig, FollowerSource};
pub use game::{game_seeds, play_simulated, replay_execution, Game, PendingTurn, Speaker};
pub use record::{InteractionRecord, Timing};
pub use run::{
    aggregate, bootstrap_d0, collect_simulated, evaluate, learn_from, load_members, load_records,
    member_seed, persist_round, read_report, replay, save_records, series, train_initial,
    Experiment, RoundOutcome, RunLayout,
};
use thiserror::Error;

use crate::bandit::BanditError;
use crate::genmodel::ModelError;
use crate::hexworld::WorldError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged in round {round}: {detail}")]
    Diverged { round: u32, detail: String },
    #[error("missing {}", .0.display())]
    Missing(PathBuf),
    #[error("inconsistent run data: {0}")]
    Inconsistent(String),
    #[error("session service: {0}")]
    Service(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
