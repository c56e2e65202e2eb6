use rand::Rng;

use crate::error::{Error, Result};

/// One stored step. `action` is in the policy's normalized `[-1, 1]` box;
/// `terminal` marks true terminations only (not time-limit cut-offs), so it
/// is what masks the bootstrap.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// A sampled batch, sample-major: `obs[i * obs_dim + k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub terminals: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    next: usize,
    size: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    terminals: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::domain("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            obs_dim,
            act_dim,
            next: 0,
            size: 0,
            obs: vec![0.0; capacity * obs_dim],
            actions: vec![0.0; capacity * act_dim],
            rewards: vec![0.0; capacity],
            next_obs: vec![0.0; capacity * obs_dim],
            terminals: vec![false; capacity],
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim || t.action.len() != self.act_dim {
            return Err(Error::domain("transition shape does not match the buffer"));
        }
        let i = self.next;
        let (o, a) = (self.obs_dim, self.act_dim);
        self.obs[i * o..(i + 1) * o].copy_from_slice(&t.obs);
        self.next_obs[i * o..(i + 1) * o].copy_from_slice(&t.next_obs);
        self.actions[i * a..(i + 1) * a].copy_from_slice(&t.action);
        self.rewards[i] = t.reward;
        self.terminals[i] = t.terminal;
        self.next = (self.next + 1) % self.capacity;
        self.size = (self.size + 1).min(self.capacity);
        Ok(())
    }

    /// Stored transitions from oldest to newest.
    pub fn get(&self, k: usize) -> Option<Transition> {
        if k >= self.size {
            return None;
        }
        let start = if self.size < self.capacity { 0 } else { self.next };
        let i = (start + k) % self.capacity;
        let (o, a) = (self.obs_dim, self.act_dim);
        Some(Transition {
            obs: self.obs[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[i * o..(i + 1) * o].to_vec(),
            terminal: self.terminals[i],
        })
    }

    /// Slot indices of a uniform draw with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.size == 0 {
            return Err(Error::domain("cannot sample from an empty replay buffer"));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.size)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut b = Batch {
            obs_dim: o,
            act_dim: a,
            obs: Vec::with_capacity(n * o),
            actions: Vec::with_capacity(n * a),
            rewards: Vec::with_capacity(n),
            next_obs: Vec::with_capacity(n * o),
            terminals: Vec::with_capacity(n),
        };
        for &i in &idx {
            b.obs.extend_from_slice(&self.obs[i * o..(i + 1) * o]);
            b.actions.extend_from_slice(&self.actions[i * a..(i + 1) * a]);
            b.rewards.push(self.rewards[i]);
            b.next_obs.extend_from_slice(&self.next_obs[i * o..(i + 1) * o]);
            b.terminals.push(self.terminals[i]);
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(v: f64) -> Transition {
        Transition {
            obs: vec![v],
            action: vec![v],
            reward: v,
            next_obs: vec![v + 1.0],
            terminal: false,
        }
    }

    #[test]
    fn fifo_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3, 1, 1).unwrap();
        for i in 0..4 {
            b.push(&tr(i as f64)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|k| b.get(k).unwrap().reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_sampling_fails_and_shapes_are_checked() {
        let mut b = ReplayBuffer::new(2, 1, 1).unwrap();
        assert!(b.sample(1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(b.push(&Transition { obs: vec![], ..tr(0.0) }).is_err());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut b = ReplayBuffer::new(10, 1, 1).unwrap();
        for i in 0..10 {
            b.push(&tr(i as f64)).unwrap();
        }
        let a = b.sample_indices(50, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let c = b.sample_indices(50, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, c);
        let batch = b.sample(4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(batch.len(), 4);
        for k in 0..4 {
            assert_eq!(batch.next_obs[k], batch.obs[k] + 1.0);
        }
    }
}
