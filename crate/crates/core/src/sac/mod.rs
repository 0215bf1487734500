//! Discrete-action soft actor-critic: softmax policy, twin critics with
//! Polyak-averaged targets, and automatic temperature tuning.

mod agent;
mod env;
mod math;
mod replay;

use thiserror::Error;

use crate::approximator::{Checkpoint, NnError};

pub use agent::{
    episode_seed, evaluate, greedy_action, policy_distribution, train, EvalReport, FailureBreakdown,
    LrSchedule, SacAgent, SacConfig, TrainOutput, TrainRecord, UpdateStats, ACTIONS,
};
pub use env::{Bandit, Chain, EnvStep, Environment};
pub use math::{
    argmax, critic_loss, critic_targets, entropy, policy_loss, safe_log, soft_value, softmax, softmax_rows,
    target_entropy, temperature_loss, PROB_FLOOR,
};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Error)]
pub enum SacError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("action {0} out of range")]
    InvalidAction(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: u64,
        reason: String,
        checkpoint: Box<Checkpoint>,
    },
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
    #[error("representation mismatch: {0}")]
    SpecMismatch(String),
    #[error("environment: {0}")]
    Env(String),
    #[error("io: {0}")]
    Io(String),
}
