use crate::approximator::PlaneShape;
use crate::midlevel::{Observation, Plane, RepresentationId};
use crate::scene::Outcome;

use super::SacError;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// Set on the final step of an episode.
    pub outcome: Option<Outcome>,
}

/// Episodic environment with three discrete actions.
pub trait Environment {
    fn observation_shapes(&self) -> Vec<PlaneShape>;
    fn reset(&mut self, seed: u64) -> Result<Observation, SacError>;
    fn step(&mut self, action: usize) -> Result<EnvStep, SacError>;
}

fn one_hot(n: usize, hot: usize) -> Observation {
    let mut data = vec![0.0; n];
    data[hot] = 1.0;
    Observation {
        planes: vec![Plane {
            id: RepresentationId::Seg,
            width: 1,
            height: 1,
            channels: n,
            data,
        }],
        step_index: 0,
    }
}

fn one_hot_shape(n: usize) -> Vec<PlaneShape> {
    vec![PlaneShape {
        id: RepresentationId::Seg,
        height: 1,
        width: 1,
        channels: n,
    }]
}

/// One-step three-armed bandit paying 1, 0, 0.
#[derive(Debug, Clone, Default)]
pub struct Bandit;

impl Bandit {
    pub const REWARDS: [f64; 3] = [1.0, 0.0, 0.0];
}

impl Environment for Bandit {
    fn observation_shapes(&self) -> Vec<PlaneShape> {
        one_hot_shape(1)
    }

    fn reset(&mut self, _seed: u64) -> Result<Observation, SacError> {
        Ok(one_hot(1, 0))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, SacError> {
        let reward = *Self::REWARDS.get(action).ok_or(SacError::InvalidAction(action))?;
        Ok(EnvStep {
            observation: one_hot(1, 0),
            reward,
            done: true,
            outcome: Some(if action == 0 { Outcome::Success } else { Outcome::Timeout }),
        })
    }
}

/// Deterministic chain: action 0 moves right, 1 moves left, 2 stays.
/// Every step costs `step_reward`; entering the last state pays
/// `goal_reward` and ends the episode.
#[derive(Debug, Clone)]
pub struct Chain {
    pub states: usize,
    pub time_limit: usize,
    pub step_reward: f64,
    pub goal_reward: f64,
    state: usize,
    t: usize,
}

impl Default for Chain {
    fn default() -> Self {
        Self {
            states: 5,
            time_limit: 20,
            step_reward: -0.1,
            goal_reward: 5.0,
            state: 0,
            t: 0,
        }
    }
}

impl Chain {
    pub fn transition(&self, state: usize, action: usize) -> usize {
        match action {
            0 => (state + 1).min(self.states - 1),
            1 => state.saturating_sub(1),
            _ => state,
        }
    }
}

impl Environment for Chain {
    fn observation_shapes(&self) -> Vec<PlaneShape> {
        one_hot_shape(self.states)
    }

    fn reset(&mut self, _seed: u64) -> Result<Observation, SacError> {
        self.state = 0;
        self.t = 0;
        Ok(one_hot(self.states, 0))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep, SacError> {
        if action > 2 {
            return Err(SacError::InvalidAction(action));
        }
        self.state = self.transition(self.state, action);
        self.t += 1;
        let goal = self.state == self.states - 1;
        let done = goal || self.t >= self.time_limit;
        Ok(EnvStep {
            observation: one_hot(self.states, self.state),
            reward: if goal { self.goal_reward } else { self.step_reward },
            done,
            outcome: done.then_some(if goal { Outcome::Success } else { Outcome::Timeout }),
        })
    }
}
