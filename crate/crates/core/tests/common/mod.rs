//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use flowfact::harness::ExperimentConfig;
use flowfact::sac::{Chain, SacConfig};

/// Small, fast-learning configuration for the toy environments.
pub fn oracle_config(seed: u64) -> SacConfig {
    SacConfig {
        total_steps: 20_000,
        batch_size: 64,
        learning_starts: 64,
        steps_per_update: 1,
        learning_rate: 3e-3,
        embed_dim: 16,
        trunk_hidden: 32,
        seed,
        ..SacConfig::default()
    }
}

/// Best undiscounted return from state 0 within the time limit, by backward
/// induction over (time remaining, state).
pub fn chain_optimum(env: &Chain) -> f64 {
    let mut v = vec![0.0; env.states];
    for _ in 0..env.time_limit {
        let mut next = vec![f64::NEG_INFINITY; env.states];
        for s in 0..env.states - 1 {
            for a in 0..3 {
                let s2 = env.transition(s, a);
                let q = if s2 == env.states - 1 {
                    env.goal_reward
                } else {
                    env.step_reward + v[s2]
                };
                next[s] = next[s].max(q);
            }
        }
        next[env.states - 1] = 0.0;
        v = next;
    }
    v[0]
}

/// Seconds-scale experiment: 8x8 images, 150 training steps.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(
        r#"
[experiment]
seeds = [0]
eval_episodes = 2
eval_fps = [6.0, 8.0, 10.0, 12.0]

[camera]
width = 8
height = 8

[scene]
time_limit = 30

[sac]
total_steps = 150
batch_size = 16
buffer_capacity = 64
learning_starts = 32
conv_channels = [2, 2]
embed_dim = 4
trunk_hidden = 8
"#,
    )
    .unwrap();
    cfg.experiment.output_dir = "unused".into();
    cfg
}
