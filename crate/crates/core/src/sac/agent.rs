use std::io::Write;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::Environment;
use super::math::{
    argmax, critic_loss, critic_targets, entropy, policy_loss, softmax, softmax_rows, target_entropy,
    temperature_loss,
};
use super::replay::{ReplayBuffer, Transition};
use super::SacError;
use crate::approximator::{Adam, AdamConfig, Batch, Checkpoint, Network, NetworkSpec, PlaneShape, ScalarAdam};
use crate::midlevel::Observation;
use crate::scene::{EpisodeResult, Outcome};

pub const ACTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Linear,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps between update rounds.
    pub steps_per_update: u64,
    /// Gradient updates per round.
    pub updates_per_round: usize,
    /// Transitions stored before the first update (at least `batch_size`).
    pub learning_starts: usize,
    pub gamma: f64,
    pub tau: f64,
    pub initial_alpha: f64,
    pub target_entropy_scale: f64,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub conv_channels: [usize; 2],
    pub embed_dim: usize,
    pub trunk_hidden: usize,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            batch_size: 256,
            buffer_capacity: 10_240,
            steps_per_update: 10,
            updates_per_round: 1,
            learning_starts: 256,
            gamma: 0.99,
            tau: 0.005,
            initial_alpha: 0.5,
            target_entropy_scale: 0.2,
            learning_rate: 3e-4,
            lr_schedule: LrSchedule::Linear,
            conv_channels: [8, 16],
            embed_dim: 64,
            trunk_hidden: 512,
            seed: 0,
        }
    }
}

impl SacConfig {
    pub fn network_spec(&self, planes: Vec<PlaneShape>) -> NetworkSpec {
        NetworkSpec {
            conv_channels: self.conv_channels,
            embed_dim: self.embed_dim,
            trunk_hidden: self.trunk_hidden,
            ..NetworkSpec::new(planes)
        }
    }

    pub fn total_updates(&self) -> u64 {
        (self.total_steps / self.steps_per_update.max(1)) * self.updates_per_round as u64
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            decay_steps: match self.lr_schedule {
                LrSchedule::Linear => Some(self.total_updates()),
                LrSchedule::Constant => None,
            },
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

/// Policy, twin critics with target copies, and the log-temperature.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub config: SacConfig,
    pub policy: Network<f32>,
    pub q1: Network<f32>,
    pub q2: Network<f32>,
    pub q1_target: Network<f32>,
    pub q2_target: Network<f32>,
    pub log_alpha: f64,
    pub target_entropy: f64,
    opt_policy: Adam<f32>,
    opt_q1: Adam<f32>,
    opt_q2: Adam<f32>,
    opt_alpha: ScalarAdam,
}

fn to64(v: Vec<f32>) -> Vec<f64> {
    v.into_iter().map(f64::from).collect()
}

fn to32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

impl SacAgent {
    pub fn new(config: SacConfig, planes: Vec<PlaneShape>) -> Self {
        let spec = config.network_spec(planes);
        let s = config.seed.wrapping_mul(4);
        let policy = Network::new(spec.clone(), s);
        let q1 = Network::new(spec.clone(), s + 1);
        let q2 = Network::new(spec, s + 2);
        let adam = config.adam();
        Self {
            opt_policy: Adam::new(adam, &policy),
            opt_q1: Adam::new(adam, &q1),
            opt_q2: Adam::new(adam, &q2),
            opt_alpha: ScalarAdam::new(adam),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            log_alpha: config.initial_alpha.ln(),
            target_entropy: target_entropy(ACTIONS, config.target_entropy_scale),
            config,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn action_probs(&self, obs: &Observation) -> Result<Vec<f64>, SacError> {
        policy_distribution(&self.policy, obs)
    }

    /// One update of both critics, the policy and the temperature, followed
    /// by Polyak averaging of the target critics.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateStats, SacError> {
        let n = ACTIONS;
        let spec = self.policy.spec().clone();
        let s = Batch::<f32>::from_observations(&spec, batch.iter().map(|t| t.s.as_ref()))?;
        let s2 = Batch::<f32>::from_observations(&spec, batch.iter().map(|t| t.s_next.as_ref()))?;
        let actions: Vec<usize> = batch.iter().map(|t| t.a).collect();
        let rewards: Vec<f64> = batch.iter().map(|t| t.r).collect();
        let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let alpha = self.alpha();

        let next_probs = softmax_rows(&to64(self.policy.predict(&s2)?), n)?;
        let nq1 = to64(self.q1_target.predict(&s2)?);
        let nq2 = to64(self.q2_target.predict(&s2)?);
        let y = critic_targets(&rewards, &dones, &next_probs, &nq1, &nq2, self.config.gamma, alpha, n)?;

        let (q1v, t1) = self.q1.forward(&s)?;
        let (q2v, t2) = self.q2.forward(&s)?;
        let (q1v, q2v) = (to64(q1v), to64(q2v));
        let (l1, g1) = critic_loss(&q1v, &actions, &y, n);
        let (l2, g2) = critic_loss(&q2v, &actions, &y, n);
        if !(l1.is_finite() && l2.is_finite()) {
            return Err(SacError::NonFinite("critic loss".into()));
        }
        let grads = self.q1.backward(t1, &to32(&g1))?;
        self.opt_q1.apply(&mut self.q1, &grads)?;
        let grads = self.q2.backward(t2, &to32(&g2))?;
        self.opt_q2.apply(&mut self.q2, &grads)?;

        let (logits, tp) = self.policy.forward(&s)?;
        let logits = to64(logits);
        let q_min: Vec<f64> = q1v.iter().zip(&q2v).map(|(a, b)| a.min(*b)).collect();
        let (pl, pg) = policy_loss(&logits, &q_min, alpha, n)?;
        if !pl.is_finite() {
            return Err(SacError::NonFinite("policy loss".into()));
        }
        let grads = self.policy.backward(tp, &to32(&pg))?;
        self.opt_policy.apply(&mut self.policy, &grads)?;

        let probs = softmax_rows(&logits, n)?;
        let (al, ga) = temperature_loss(&probs, n, alpha, self.target_entropy);
        self.opt_alpha.apply(&mut self.log_alpha, ga)?;

        let tau = self.config.tau as f32;
        self.q1_target.soft_update_from(&self.q1, tau);
        self.q2_target.soft_update_from(&self.q2, tau);

        let mean_h = probs.chunks_exact(n).map(entropy).sum::<f64>() / batch.len() as f64;
        Ok(UpdateStats {
            critic_loss: 0.5 * (l1 + l2),
            policy_loss: pl,
            alpha_loss: al,
            alpha: self.alpha(),
            entropy: mean_h,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint {
            metadata: serde_json::json!({ "sac": self.config }),
            tensors: Vec::new(),
        };
        ck.push_network("policy", &self.policy);
        ck.push_network("q1", &self.q1);
        ck.push_network("q2", &self.q2);
        ck.push_network("q1_target", &self.q1_target);
        ck.push_network("q2_target", &self.q2_target);
        ck.push_scalar("log_alpha", self.log_alpha);
        ck
    }
}

/// Softmax policy over the three actions.
pub fn policy_distribution(policy: &Network<f32>, obs: &Observation) -> Result<Vec<f64>, SacError> {
    let x = Batch::<f32>::from_observations(policy.spec(), [obs])?;
    softmax(&to64(policy.predict(&x)?))
}

/// Greedy action, lowest index on ties.
pub fn greedy_action(policy: &Network<f32>, obs: &Observation) -> Result<usize, SacError> {
    Ok(argmax(&policy_distribution(policy, obs)?))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub episode: u64,
    pub length: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub outcome: Option<Outcome>,
    pub alpha: f64,
    pub updates: u64,
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub entropy: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub agent: SacAgent,
    pub log: Vec<TrainRecord>,
}

/// Seed for episode `i` of a run.
pub fn episode_seed(run_seed: u64, i: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(run_seed);
    r.set_stream(i);
    r.gen()
}

/// Train a fresh agent. Every `steps_per_update` environment steps, once the
/// buffer holds enough transitions, `updates_per_round` updates run. One log
/// record is produced per finished episode and also written to `log_sink`
/// as a JSON line.
pub fn train<E: Environment>(
    env: &mut E,
    config: &SacConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutput, SacError> {
    let mut agent = SacAgent::new(config.clone(), env.observation_shapes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let warmup = config.learning_starts.max(config.batch_size);
    let mut log = Vec::new();
    let mut episode = 0u64;
    let mut obs = Arc::new(env.reset(episode_seed(config.seed, episode))?);
    let (mut ep_return, mut ep_len) = (0.0, 0usize);
    let mut last: Option<UpdateStats> = None;
    let mut updates = 0u64;
    let abort = |agent: &SacAgent, step: u64, reason: String| SacError::Diverged {
        step,
        reason,
        checkpoint: Box::new(agent.to_checkpoint()),
    };

    for step in 1..=config.total_steps {
        let probs = agent
            .action_probs(&obs)
            .map_err(|e| abort(&agent, step, e.to_string()))?;
        let a = WeightedIndex::new(&probs)
            .map_err(|e| abort(&agent, step, format!("policy distribution: {e}")))?
            .sample(&mut rng);
        let st = env.step(a)?;
        let next = Arc::new(st.observation);
        buffer.push(Transition {
            s: obs.clone(),
            a,
            r: st.reward,
            s_next: next.clone(),
            done: st.done,
        });
        ep_return += st.reward;
        ep_len += 1;

        if step % config.steps_per_update.max(1) == 0 && buffer.len() >= warmup {
            for _ in 0..config.updates_per_round {
                let batch = buffer.sample(config.batch_size, &mut rng).expect("buffer is warm");
                match agent.update(&batch) {
                    Ok(s) => last = Some(s),
                    Err(e @ (SacError::NonFinite(_) | SacError::Nn(_))) => {
                        return Err(abort(&agent, step, e.to_string()))
                    }
                    Err(e) => return Err(e),
                }
                updates += 1;
            }
        }

        if st.done {
            let rec = TrainRecord {
                step,
                episode,
                length: ep_len,
                episode_return: ep_return,
                outcome: st.outcome,
                alpha: agent.alpha(),
                updates,
                critic_loss: last.map(|s| s.critic_loss),
                policy_loss: last.map(|s| s.policy_loss),
                alpha_loss: last.map(|s| s.alpha_loss),
                entropy: last.map(|s| s.entropy),
            };
            if let Some(w) = log_sink.as_deref_mut() {
                let line = serde_json::to_string(&rec).expect("record serializes");
                writeln!(w, "{line}").map_err(|e| SacError::Io(e.to_string()))?;
            }
            log.push(rec);
            episode += 1;
            obs = Arc::new(env.reset(episode_seed(config.seed, episode))?);
            ep_return = 0.0;
            ep_len = 0;
        } else {
            obs = next;
        }
    }
    Ok(TrainOutput { agent, log })
}

/// OOB versus collision split of failed episodes. Timeouts are counted
/// separately and are not part of either share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureBreakdown {
    pub episodes: usize,
    pub successes: usize,
    pub oob: usize,
    pub collisions: usize,
    pub timeouts: usize,
    /// Fraction of OOB + collision failures that were OOB.
    pub oob_share: Option<f64>,
    pub collision_share: Option<f64>,
    /// `oob_share / collision_share`; `None` when there were no collisions.
    pub ratio: Option<f64>,
}

impl FailureBreakdown {
    pub fn from_outcomes<'a, I: IntoIterator<Item = &'a Outcome>>(outcomes: I) -> Self {
        let mut b = FailureBreakdown {
            episodes: 0,
            successes: 0,
            oob: 0,
            collisions: 0,
            timeouts: 0,
            oob_share: None,
            collision_share: None,
            ratio: None,
        };
        for o in outcomes {
            b.episodes += 1;
            match o {
                Outcome::Success => b.successes += 1,
                Outcome::Oob => b.oob += 1,
                Outcome::Collision => b.collisions += 1,
                Outcome::Timeout => b.timeouts += 1,
            }
        }
        let failures = b.oob + b.collisions;
        if failures > 0 {
            b.oob_share = Some(b.oob as f64 / failures as f64);
            b.collision_share = Some(b.collisions as f64 / failures as f64);
        }
        if b.collisions > 0 {
            b.ratio = Some(b.oob as f64 / b.collisions as f64);
        }
        b
    }

    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub success_rate: f64,
    pub breakdown: FailureBreakdown,
    pub results: Vec<EpisodeResult>,
}

/// Greedy evaluation over `episodes` episodes seeded from `seed`.
pub fn evaluate<E: Environment>(
    policy: &Network<f32>,
    env: &mut E,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, SacError> {
    if episodes == 0 {
        return Err(SacError::NoEpisodes);
    }
    let shapes = env.observation_shapes();
    if shapes != policy.spec().planes {
        return Err(SacError::SpecMismatch(format!(
            "environment provides {shapes:?}, checkpoint expects {:?}",
            policy.spec().planes
        )));
    }
    let mut results = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut obs = env.reset(episode_seed(seed, i as u64))?;
        let (mut ret, mut steps) = (0.0, 0);
        loop {
            let st = env.step(greedy_action(policy, &obs)?)?;
            ret += st.reward;
            steps += 1;
            if st.done {
                results.push(EpisodeResult {
                    outcome: st.outcome.unwrap_or(Outcome::Timeout),
                    steps,
                    episode_return: ret,
                });
                break;
            }
            obs = st.observation;
        }
    }
    let breakdown = FailureBreakdown::from_outcomes(results.iter().map(|r| &r.outcome));
    Ok(EvalReport {
        success_rate: breakdown.success_rate(),
        breakdown,
        results,
    })
}
