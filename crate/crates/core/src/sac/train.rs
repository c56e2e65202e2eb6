use std::io::Write;
use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ReplayBuffer, SacAgent, SacConfig, Transition};
use crate::error::{Error, Result};
use crate::nn::Scalar;

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The episode is over (step budget exhausted or task finished).
    pub done: bool,
    /// The episode ended by reaching a terminal state rather than a time
    /// limit; only this masks bootstrapping.
    pub terminal: bool,
}

/// An episodic task family the agent is trained on round-robin.
pub trait Environment: Clone + Send + Sync {
    fn obs_dim(&self) -> usize;
    fn action_low(&self) -> Vec<f64>;
    fn action_high(&self) -> Vec<f64>;
    /// Number of tasks (objects) cycled through.
    fn n_tasks(&self) -> usize;
    fn reset_task(&mut self, task: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
    /// Takes an action in the environment's own box.
    fn step_action(&mut self, action: &[f64]) -> Result<StepOutcome>;
    /// Exploration action used before learning starts.
    fn random_action(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub total_steps: usize,
    pub validation_interval: usize,
    pub episodes_per_task: usize,
    pub seq_len: usize,
    pub validation_seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            total_steps: 90_000,
            validation_interval: 1_800,
            episodes_per_task: 5,
            seq_len: 10,
            validation_seed: 0x7a11_da7e,
        }
    }
}

impl Schedule {
    /// Validation points including the one before learning.
    pub fn curve_len(&self) -> usize {
        self.total_steps / self.validation_interval + 1
    }
}

/// One training-log line, written at every validation point.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    /// Means over the updates since the previous row (NaN when none ran).
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub validation_mean: f64,
    pub per_task: Vec<f64>,
}

pub fn write_training_log<W: Write>(w: &mut W, rows: &[TrainLogRow]) -> std::io::Result<()> {
    writeln!(w, "step,critic_loss,actor_loss,alpha,validation_mean")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.step, r.critic_loss, r.actor_loss, r.alpha, r.validation_mean)?;
    }
    Ok(())
}

pub struct TrainOutcome<T> {
    pub agent: SacAgent<T>,
    pub log: Vec<TrainLogRow>,
}

/// Mean reward per task over `episodes_per_task` deterministic-policy
/// episodes of at most `seq_len` steps each. Each task runs on its own
/// environment copy with a seed derived from `seed` and the task index.
pub fn validate_policy<T: Scalar, E: Environment>(
    agent: &SacAgent<T>,
    env: &E,
    episodes_per_task: usize,
    seq_len: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..env.n_tasks())
        .into_par_iter()
        .map(|task| {
            let mut env = env.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (task as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let (mut sum, mut count) = (0.0, 0usize);
            for _ in 0..episodes_per_task {
                let mut obs = env.reset_task(task, &mut rng)?;
                for _ in 0..seq_len {
                    let (a, _) = agent.policy_sample(&obs, &mut rng, true)?;
                    let out = env.step_action(&a)?;
                    sum += out.reward;
                    count += 1;
                    obs = out.obs;
                    if out.done {
                        break;
                    }
                }
            }
            Ok(if count == 0 { 0.0 } else { sum / count as f64 })
        })
        .collect()
}

pub fn train_agent<T: Scalar, E: Environment>(
    env: &mut E,
    config: &SacConfig,
    schedule: &Schedule,
    pre_agent: Option<&SacAgent<T>>,
) -> Result<TrainOutcome<T>> {
    train_agent_with(env, config, schedule, pre_agent, &mut |_| ControlFlow::Continue(()))
}

/// SAC training: random actions for the first `learning_starts_per_task *
/// n_tasks` steps, then one update per step. Episodes cycle over tasks.
/// `on_row` sees every log row as it is produced and may end training early.
pub fn train_agent_with<T: Scalar, E: Environment>(
    env: &mut E,
    config: &SacConfig,
    schedule: &Schedule,
    pre_agent: Option<&SacAgent<T>>,
    on_row: &mut dyn FnMut(&TrainLogRow) -> ControlFlow<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let n_tasks = env.n_tasks();
    if n_tasks == 0 {
        return Err(Error::domain("environment has no tasks"));
    }
    if schedule.validation_interval == 0 || schedule.seq_len == 0 {
        return Err(Error::domain("validation interval and sequence length must be positive"));
    }
    let learning_starts = config.learning_starts_per_task * n_tasks;
    if schedule.total_steps > 0 && schedule.total_steps < learning_starts {
        return Err(Error::domain(format!(
            "schedule of {} steps ends before learning starts at {learning_starts}",
            schedule.total_steps
        )));
    }
    let mut agent = SacAgent::new(config.clone(), env.obs_dim(), env.action_low(), env.action_high())?;
    if let Some(pre) = pre_agent {
        agent.init_from(pre)?;
    }
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, env.obs_dim(), agent.act_dim())?;
    let mut env_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xe4f1_0000);
    let mut agent_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xa6e7_0000);

    let mut log = Vec::with_capacity(schedule.curve_len());
    let mut acc = (0.0, 0.0, 0usize);
    let first = log_row(&agent, env, schedule, 0, &mut acc)?;
    let flow = on_row(&first);
    log.push(first);
    if flow.is_break() {
        return Ok(TrainOutcome { agent, log });
    }

    let mut task = 0;
    let mut obs = env.reset_task(task, &mut env_rng)?;
    for step in 1..=schedule.total_steps {
        let action_n = if step <= learning_starts {
            agent.to_normalized(&env.random_action(&mut env_rng))
        } else {
            agent.sample_normalized(&obs, &mut agent_rng, false).0
        };
        let out = env.step_action(&agent.to_box(&action_n))?;
        buffer.push(&Transition {
            obs: obs.clone(),
            action: action_n,
            reward: out.reward,
            next_obs: out.obs.clone(),
            terminal: out.terminal,
        })?;
        obs = out.obs;
        if out.done {
            task = (task + 1) % n_tasks;
            obs = env.reset_task(task, &mut env_rng)?;
        }
        if step > learning_starts {
            for _ in 0..config.gradient_steps {
                if let Some(l) = agent.update(&buffer, &mut agent_rng)? {
                    acc.0 += l.critic;
                    acc.1 += l.actor;
                    acc.2 += 1;
                }
            }
        }
        if step % schedule.validation_interval == 0 {
            let row = log_row(&agent, env, schedule, step, &mut acc)?;
            let flow = on_row(&row);
            log.push(row);
            if flow.is_break() {
                break;
            }
        }
    }
    Ok(TrainOutcome { agent, log })
}

/// Validates on environment copies (never the training episode) and drains
/// the loss accumulator `(critic_sum, actor_sum, updates)`.
fn log_row<T: Scalar, E: Environment>(
    agent: &SacAgent<T>,
    env: &E,
    schedule: &Schedule,
    step: usize,
    acc: &mut (f64, f64, usize),
) -> Result<TrainLogRow> {
    let per_task = validate_policy(agent, env, schedule.episodes_per_task, schedule.seq_len, schedule.validation_seed)?;
    let mean = per_task.iter().sum::<f64>() / per_task.len() as f64;
    let n = acc.2 as f64;
    let row = TrainLogRow {
        step,
        critic_loss: if acc.2 == 0 { f64::NAN } else { acc.0 / n },
        actor_loss: if acc.2 == 0 { f64::NAN } else { acc.1 / n },
        alpha: agent.alpha(),
        validation_mean: mean,
        per_task,
    };
    *acc = (0.0, 0.0, 0);
    Ok(row)
}
