use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Environment, StepOutcome};
use crate::error::{Error, Result};

/// One-step goal reaching: observe `g ~ U[-0.5, 0.5]`, act `a` in
/// `[-1, 1]`, receive `-|a - g|`. The optimal return is 0.
#[derive(Clone, Debug, Default)]
pub struct GoalEnv {
    goal: Option<f64>,
}

impl GoalEnv {
    pub fn new() -> Self {
        GoalEnv::default()
    }

    /// Expected return of uniformly random actions: `-E|a - g| = -13/24`.
    pub fn random_return() -> f64 {
        -13.0 / 24.0
    }

    /// Fraction of the gap between random and optimal return closed by
    /// `mean_return`.
    pub fn normalized_score(mean_return: f64) -> f64 {
        (mean_return - Self::random_return()) / (0.0 - Self::random_return())
    }
}

impl Environment for GoalEnv {
    fn obs_dim(&self) -> usize {
        1
    }

    fn action_low(&self) -> Vec<f64> {
        vec![-1.0]
    }

    fn action_high(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn n_tasks(&self) -> usize {
        1
    }

    fn reset_task(&mut self, _task: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let g = rng.random_range(-0.5..=0.5);
        self.goal = Some(g);
        Ok(vec![g])
    }

    fn step_action(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let g = self.goal.take().ok_or_else(|| Error::protocol("step before reset"))?;
        Ok(StepOutcome {
            obs: vec![g],
            reward: -(action[0] - g).abs(),
            done: true,
            terminal: true,
        })
    }

    fn random_action(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random_range(-1.0..=1.0)]
    }
}
