//! Soft Actor-Critic: squashed-Gaussian actor, twin critics with Polyak
//! targets and a learned entropy temperature.
//!
//! The actor works in a normalized action box `[-1, 1]^d`; actions handed to
//! the environment are mapped affinely into `[low, high]`. The replay buffer
//! and critics see normalized actions.

mod replay;
mod toy;
mod train;

pub use replay::{Batch, ReplayBuffer, Transition};
pub use toy::GoalEnv;
pub use train::{
    train_agent, train_agent_with, validate_policy, write_training_log, Environment, Schedule, StepOutcome,
    TrainLogRow, TrainOutcome,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint, Grads, Mlp, MlpTrace, Params, Scalar};

pub const CHECKPOINT_KIND: &str = "sac-agent";
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub batch_size: usize,
    pub tau: f64,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub buffer_capacity: usize,
    /// Random-action steps per environment task before updates begin.
    pub learning_starts_per_task: usize,
    pub target_update_interval: usize,
    pub gradient_steps: usize,
    pub hidden: Vec<usize>,
    pub init_log_alpha: f64,
    /// `None` means `-action_dim`.
    pub target_entropy: Option<f64>,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            batch_size: 256,
            tau: 0.005,
            gamma: 0.99,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            buffer_capacity: 100_000,
            learning_starts_per_task: 1000,
            target_update_interval: 1,
            gradient_steps: 1,
            hidden: vec![256, 256],
            init_log_alpha: 0.0,
            target_entropy: None,
            seed: 1,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::domain("tau must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::domain("gamma must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(Error::domain("batch size must be positive and at most the buffer capacity"));
        }
        if ![self.actor_lr, self.critic_lr, self.alpha_lr].iter().all(|&lr| lr > 0.0) {
            return Err(Error::domain("learning rates must be positive"));
        }
        if self.target_update_interval == 0 || self.gradient_steps == 0 {
            return Err(Error::domain("target update interval and gradient steps must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::domain("hidden widths must be positive"));
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// `y = r + gamma (1 - terminal) (min(q1, q2) - alpha logp)`.
pub fn soft_target(reward: f64, terminal: bool, gamma: f64, q1: f64, q2: f64, logp: f64, alpha: f64) -> f64 {
    if terminal {
        return reward;
    }
    reward + gamma * (q1.min(q2) - alpha * logp)
}

/// Reparameterized actor samples for a batch, feature-major `[act][B]`.
pub struct PolicySample<T> {
    trace: MlpTrace<T>,
    pub pre_tanh: Vec<f64>,
    pub actions: Vec<f64>,
    /// Log-density in the normalized box, per sample.
    pub log_prob: Vec<f64>,
    pub sigma: Vec<f64>,
    pub noise: Vec<f64>,
    /// Whether the raw log-std was inside the clamp range (gradient flows).
    pub in_range: Vec<bool>,
}

/// Per-update diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateLosses {
    pub critic: f64,
    pub actor: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub mean_log_prob: f64,
}

#[derive(Clone, Debug)]
pub struct SacAgent<T> {
    config: SacConfig,
    obs_dim: usize,
    act_dim: usize,
    low: Vec<f64>,
    high: Vec<f64>,
    actor: Mlp<T>,
    q1: Mlp<T>,
    q2: Mlp<T>,
    q1_target: Mlp<T>,
    q2_target: Mlp<T>,
    log_alpha: f64,
    actor_opt: Adam<T>,
    q1_opt: Adam<T>,
    q2_opt: Adam<T>,
    alpha_opt: Adam<f64>,
    updates: u64,
}

fn to_feature_major<T: Scalar>(rows: &[f64], dim: usize) -> Vec<T> {
    let b = rows.len() / dim;
    let mut out = vec![T::zero(); rows.len()];
    for i in 0..b {
        for k in 0..dim {
            out[k * b + i] = T::of(rows[i * dim + k]);
        }
    }
    out
}

fn alpha_params(log_alpha: f64) -> Params<f64> {
    let mut p = Params::new();
    p.push("log_alpha", &[1], vec![log_alpha], true);
    p
}

impl<T: Scalar> SacAgent<T> {
    /// `low`/`high` bound the environment's action box.
    pub fn new(config: SacConfig, obs_dim: usize, low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if low.len() != high.len() || low.is_empty() {
            return Err(Error::domain("action bounds must be non-empty and of equal length"));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(Error::domain("action box must have low < high"));
        }
        let act_dim = low.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let sizes = |inp: usize, out: usize| {
            let mut s = vec![inp];
            s.extend_from_slice(&config.hidden);
            s.push(out);
            s
        };
        let actor = Mlp::new("actor", &sizes(obs_dim, 2 * act_dim), &mut rng);
        let q1 = Mlp::new("q1", &sizes(obs_dim + act_dim, 1), &mut rng);
        let q2 = Mlp::new("q2", &sizes(obs_dim + act_dim, 1), &mut rng);
        let q1_target = q1.clone();
        let q2_target = q2.clone();
        Ok(SacAgent {
            actor_opt: Adam::new(actor.params(), config.actor_lr),
            q1_opt: Adam::new(q1.params(), config.critic_lr),
            q2_opt: Adam::new(q2.params(), config.critic_lr),
            alpha_opt: Adam::new(&alpha_params(config.init_log_alpha), config.alpha_lr),
            log_alpha: config.init_log_alpha,
            config,
            obs_dim,
            act_dim,
            low,
            high,
            actor,
            q1,
            q2,
            q1_target,
            q2_target,
            updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn set_log_alpha(&mut self, v: f64) {
        self.log_alpha = v;
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.act_dim as f64))
    }

    pub fn actor(&self) -> &Mlp<T> {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp<T> {
        &mut self.actor
    }

    pub fn critics(&self) -> [&Mlp<T>; 2] {
        [&self.q1, &self.q2]
    }

    pub fn critics_mut(&mut self) -> [&mut Mlp<T>; 2] {
        [&mut self.q1, &mut self.q2]
    }

    pub fn targets(&self) -> [&Mlp<T>; 2] {
        [&self.q1_target, &self.q2_target]
    }

    pub fn targets_mut(&mut self) -> [&mut Mlp<T>; 2] {
        [&mut self.q1_target, &mut self.q2_target]
    }

    pub fn action_low(&self) -> &[f64] {
        &self.low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.high
    }

    /// Normalized action to the environment box.
    pub fn to_box(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(&u, (&l, &h))| l + (u + 1.0) * 0.5 * (h - l))
            .collect()
    }

    /// Environment action to the normalized box.
    pub fn to_normalized(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(&v, (&l, &h))| 2.0 * (v - l) / (h - l) - 1.0)
            .collect()
    }

    /// `sum ln((high - low) / 2)`: log-Jacobian of the box mapping.
    pub fn log_box_scale(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| ((h - l) / 2.0).ln()).sum()
    }

    /// Samples `tanh(mu + sigma * noise)` for a feature-major observation
    /// batch with explicit standard-normal `noise` (`[act][B]`).
    pub fn sample_with_noise(&self, obs_fm: &[T], b: usize, noise: &[f64]) -> PolicySample<T> {
        let d = self.act_dim;
        assert_eq!(noise.len(), d * b, "noise shape");
        let trace = self.actor.forward(obs_fm, b);
        let out = trace.output();
        let mut s = PolicySample {
            pre_tanh: vec![0.0; d * b],
            actions: vec![0.0; d * b],
            log_prob: vec![0.0; b],
            sigma: vec![0.0; d * b],
            noise: noise.to_vec(),
            in_range: vec![true; d * b],
            trace: trace.clone(),
        };
        for k in 0..d {
            for i in 0..b {
                let j = k * b + i;
                let mu = out[j].as_f64();
                let raw = out[(d + k) * b + i].as_f64();
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                s.in_range[j] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
                let sigma = ls.exp();
                let eps = noise[j];
                let u = mu + sigma * eps;
                s.pre_tanh[j] = u;
                s.actions[j] = u.tanh();
                s.sigma[j] = sigma;
                s.log_prob[i] += -0.5 * eps * eps - ls - HALF_LN_2PI - log_one_minus_tanh_sq(u);
            }
        }
        s
    }

    /// Deterministic normalized action `tanh(mu)`, sample-major.
    pub fn mean_actions(&self, obs_rows: &[f64]) -> Vec<f64> {
        let b = obs_rows.len() / self.obs_dim;
        let out = self.actor.infer(&to_feature_major::<T>(obs_rows, self.obs_dim), b);
        let mut a = vec![0.0; b * self.act_dim];
        for i in 0..b {
            for k in 0..self.act_dim {
                a[i * self.act_dim + k] = out[k * b + i].as_f64().tanh();
            }
        }
        a
    }

    /// Normalized action for one observation, with its normalized-box
    /// log-density in stochastic mode.
    pub fn sample_normalized<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R, deterministic: bool) -> (Vec<f64>, Option<f64>) {
        if deterministic {
            return (self.mean_actions(obs), None);
        }
        let noise: Vec<f64> = (0..self.act_dim).map(|_| rng.sample(StandardNormal)).collect();
        let s = self.sample_with_noise(&to_feature_major::<T>(obs, self.obs_dim), 1, &noise);
        (s.actions, Some(s.log_prob[0]))
    }

    /// Environment-box action for one observation. In stochastic mode the
    /// log-density is with respect to the environment box (tanh and affine
    /// change of variables included).
    pub fn policy_sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R, deterministic: bool) -> Result<(Vec<f64>, Option<f64>)> {
        if obs.len() != self.obs_dim {
            return Err(Error::domain(format!("observation has {} values, policy expects {}", obs.len(), self.obs_dim)));
        }
        let (a, lp) = self.sample_normalized(obs, rng, deterministic);
        Ok((self.to_box(&a), lp.map(|l| l - self.log_box_scale())))
    }

    fn critic_input(&self, obs_fm: &[T], act_fm: &[f64], b: usize) -> Vec<T> {
        let mut x = Vec::with_capacity((self.obs_dim + self.act_dim) * b);
        x.extend_from_slice(obs_fm);
        x.extend(act_fm.iter().map(|&v| T::of(v)));
        x
    }

    /// Soft Bellman targets with next actions drawn using `next_noise`.
    pub fn q_targets(&self, batch: &Batch, gamma: f64, next_noise: &[f64]) -> Vec<f64> {
        let b = batch.len();
        let next_fm = to_feature_major::<T>(&batch.next_obs, self.obs_dim);
        let s = self.sample_with_noise(&next_fm, b, next_noise);
        let x = self.critic_input(&next_fm, &s.actions, b);
        let t1 = self.q1_target.infer(&x, b);
        let t2 = self.q2_target.infer(&x, b);
        let alpha = self.alpha();
        (0..b)
            .map(|i| {
                soft_target(
                    batch.rewards[i],
                    batch.terminals[i],
                    gamma,
                    t1[i].as_f64(),
                    t2[i].as_f64(),
                    s.log_prob[i],
                    alpha,
                )
            })
            .collect()
    }

    /// `0.5 * (mean (q1 - y)^2 + mean (q2 - y)^2)` and its gradients for
    /// both online critics.
    pub fn critic_loss_and_grads(&self, batch: &Batch, y: &[f64]) -> (f64, Grads<T>, Grads<T>) {
        let b = batch.len();
        let obs_fm = to_feature_major::<T>(&batch.obs, self.obs_dim);
        let act_fm = to_feature_major::<f64>(&batch.actions, self.act_dim);
        let x = self.critic_input(&obs_fm, &act_fm, b);
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(2);
        for q in [&self.q1, &self.q2] {
            let tr = q.forward(&x, b);
            let mut dout = Vec::with_capacity(b);
            for (i, &yi) in y.iter().enumerate() {
                let e = tr.output()[i].as_f64() - yi;
                loss += 0.5 * e * e / b as f64;
                dout.push(T::of(e / b as f64));
            }
            grads.push(q.backward(&tr, &dout, true).0.expect("parameter gradients requested"));
        }
        let g2 = grads.pop().expect("two critics");
        let g1 = grads.pop().expect("two critics");
        (loss, g1, g2)
    }

    /// `mean(alpha logp - min(q1, q2))` over reparameterized actions and the
    /// actor gradient, for observations `obs_rows` and noise `[act][B]`.
    pub fn actor_loss_and_grads(&self, obs_rows: &[f64], noise: &[f64], alpha: f64) -> (f64, Grads<T>, f64) {
        let b = obs_rows.len() / self.obs_dim;
        let d = self.act_dim;
        let obs_fm = to_feature_major::<T>(obs_rows, self.obs_dim);
        let s = self.sample_with_noise(&obs_fm, b, noise);
        let x = self.critic_input(&obs_fm, &s.actions, b);
        let t1 = self.q1.forward(&x, b);
        let t2 = self.q2.forward(&x, b);
        // Gradient of min(q1, q2) w.r.t. the action, through the smaller one.
        let mut d1 = vec![T::zero(); b];
        let mut d2 = vec![T::zero(); b];
        let mut loss = 0.0;
        for i in 0..b {
            let (v1, v2) = (t1.output()[i].as_f64(), t2.output()[i].as_f64());
            let qmin = v1.min(v2);
            loss += (alpha * s.log_prob[i] - qmin) / b as f64;
            if v1 <= v2 {
                d1[i] = T::one();
            } else {
                d2[i] = T::one();
            }
        }
        let (_, dx1) = self.q1.backward(&t1, &d1, false);
        let (_, dx2) = self.q2.backward(&t2, &d2, false);
        let off = self.obs_dim * b;
        let mut dout = vec![T::zero(); 2 * d * b];
        let inv_b = 1.0 / b as f64;
        for k in 0..d {
            for i in 0..b {
                let j = k * b + i;
                let dq = dx1[off + j].as_f64() + dx2[off + j].as_f64();
                let t = s.actions[j];
                let dtanh = 1.0 - t * t;
                let (sigma, eps) = (s.sigma[j], s.noise[j]);
                let dmu = alpha * 2.0 * t - dq * dtanh;
                let dls = alpha * (-1.0 + 2.0 * t * sigma * eps) - dq * dtanh * sigma * eps;
                dout[j] = T::of(dmu * inv_b);
                dout[(d + k) * b + i] = if s.in_range[j] { T::of(dls * inv_b) } else { T::zero() };
            }
        }
        let (g, _) = self.actor.backward(&s.trace, &dout, true);
        let mean_lp = s.log_prob.iter().sum::<f64>() / b as f64;
        (loss, g.expect("parameter gradients requested"), mean_lp)
    }

    /// One gradient step: temperature, critics, actor, then Polyak targets.
    /// Returns `None` (and changes nothing) while the buffer holds fewer
    /// transitions than a batch.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<Option<UpdateLosses>> {
        let bsz = self.config.batch_size;
        if buffer.len() < bsz {
            return Ok(None);
        }
        let batch = buffer.sample(bsz, rng)?;
        let d = self.act_dim;
        let pi_noise: Vec<f64> = (0..d * bsz).map(|_| rng.sample(StandardNormal)).collect();
        let next_noise: Vec<f64> = (0..d * bsz).map(|_| rng.sample(StandardNormal)).collect();

        // Temperature: loss -log_alpha * (logp + target_entropy), logp detached.
        let obs_fm = to_feature_major::<T>(&batch.obs, self.obs_dim);
        let pi = self.sample_with_noise(&obs_fm, bsz, &pi_noise);
        let mean_lp = pi.log_prob.iter().sum::<f64>() / bsz as f64;
        let alpha = self.alpha();
        let h = self.target_entropy();
        let alpha_loss = -self.log_alpha * (mean_lp + h);
        let mut ap = alpha_params(self.log_alpha);
        self.alpha_opt.step(&mut ap, &Grads { blocks: vec![vec![-(mean_lp + h)]] });
        self.log_alpha = ap.data(0)[0];

        let y = self.q_targets(&batch, self.config.gamma, &next_noise);
        let (critic_loss, g1, g2) = self.critic_loss_and_grads(&batch, &y);
        self.q1_opt.step(self.q1.params_mut(), &g1);
        self.q2_opt.step(self.q2.params_mut(), &g2);

        let (actor_loss, ga, _) = self.actor_loss_and_grads(&batch.obs, &pi_noise, alpha);
        self.actor_opt.step(self.actor.params_mut(), &ga);

        self.updates += 1;
        if self.updates % self.config.target_update_interval as u64 == 0 {
            let tau = self.config.tau;
            self.q1_target.params_mut().polyak_from(self.q1.params(), tau)?;
            self.q2_target.params_mut().polyak_from(self.q2.params(), tau)?;
        }
        let losses = UpdateLosses {
            critic: critic_loss,
            actor: actor_loss,
            alpha_loss,
            alpha: self.alpha(),
            mean_log_prob: mean_lp,
        };
        if ![losses.critic, losses.actor, losses.alpha_loss, losses.alpha].iter().all(|v| v.is_finite()) {
            return Err(Error::domain("non-finite SAC loss"));
        }
        Ok(Some(losses))
    }

    /// Starts from `pre`'s networks and temperature; optimizer state is fresh.
    pub fn init_from(&mut self, pre: &SacAgent<T>) -> Result<()> {
        if pre.obs_dim != self.obs_dim || pre.act_dim != self.act_dim {
            return Err(Error::domain("pre-trained agent has different dimensions"));
        }
        self.actor.params_mut().copy_from(pre.actor.params())?;
        self.q1.params_mut().copy_from(pre.q1.params())?;
        self.q2.params_mut().copy_from(pre.q2.params())?;
        self.q1_target.params_mut().copy_from(pre.q1_target.params())?;
        self.q2_target.params_mut().copy_from(pre.q2_target.params())?;
        self.log_alpha = pre.log_alpha;
        Ok(())
    }

    /// Largest absolute parameter difference over all networks and the
    /// temperature.
    pub fn max_abs_diff(&self, other: &SacAgent<T>) -> f64 {
        [
            self.actor.params().max_abs_diff(other.actor.params()),
            self.q1.params().max_abs_diff(other.q1.params()),
            self.q2.params().max_abs_diff(other.q2.params()),
            self.q1_target.params().max_abs_diff(other.q1_target.params()),
            self.q2_target.params().max_abs_diff(other.q2_target.params()),
            (self.log_alpha - other.log_alpha).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(CHECKPOINT_KIND);
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        ck.set_meta("obs_dim", self.obs_dim);
        ck.set_meta("act_dim", self.act_dim);
        ck.set_meta(
            "hidden",
            self.config.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        );
        ck.set_meta("action_low", list(&self.low));
        ck.set_meta("action_high", list(&self.high));
        ck.set_meta("updates", self.updates);
        ck.add_params(self.actor.params());
        ck.add_params(self.q1.params());
        ck.add_params(self.q2.params());
        let mut t1 = self.q1_target.params().clone();
        let mut t2 = self.q2_target.params().clone();
        rename(&mut t1, "q1", "q1_target");
        rename(&mut t2, "q2", "q2_target");
        ck.add_params(&t1);
        ck.add_params(&t2);
        ck.add_params(&alpha_params(self.log_alpha));
        ck
    }

    /// Restores an agent; `config` supplies the training hyper-parameters.
    pub fn from_checkpoint(ck: &Checkpoint, mut config: SacConfig) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::domain(format!("checkpoint kind `{}` is not an agent", ck.kind)));
        }
        let floats = |key: &str| -> Result<Vec<f64>> {
            ck.meta(key)
                .ok_or_else(|| Error::domain(format!("checkpoint metadata `{key}` missing")))?
                .split(',')
                .map(|s| s.parse().map_err(|_| Error::domain(format!("bad `{key}` entry"))))
                .collect()
        };
        config.hidden = floats("hidden")?.into_iter().map(|h| h as usize).collect();
        let mut agent = SacAgent::new(config, ck.meta_parse("obs_dim")?, floats("action_low")?, floats("action_high")?)?;
        ck.fill_params(agent.actor.params_mut())?;
        ck.fill_params(agent.q1.params_mut())?;
        ck.fill_params(agent.q2.params_mut())?;
        rename(agent.q1_target.params_mut(), "q1", "q1_target");
        rename(agent.q2_target.params_mut(), "q2", "q2_target");
        ck.fill_params(agent.q1_target.params_mut())?;
        ck.fill_params(agent.q2_target.params_mut())?;
        rename(agent.q1_target.params_mut(), "q1_target", "q1");
        rename(agent.q2_target.params_mut(), "q2_target", "q2");
        let mut ap = alpha_params(0.0);
        ck.fill_params(&mut ap)?;
        agent.log_alpha = ap.data(0)[0];
        agent.updates = ck.meta_parse("updates")?;
        Ok(agent)
    }
}

fn rename<T: Scalar>(p: &mut Params<T>, from: &str, to: &str) {
    p.rename_prefix(from, to);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(obs: usize, act: usize) -> SacAgent<f64> {
        let cfg = SacConfig {
            hidden: vec![8, 8],
            batch_size: 4,
            buffer_capacity: 16,
            ..SacConfig::default()
        };
        SacAgent::new(cfg, obs, vec![-1.0; act], vec![1.0; act]).unwrap()
    }

    #[test]
    fn stable_log_one_minus_tanh_sq() {
        for &u in &[-30.0, -3.0, -0.1, 0.0, 0.7, 5.0, 40.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            if direct.is_finite() && u.abs() < 15.0 {
                assert!((log_one_minus_tanh_sq(u) - direct).abs() < 1e-9, "u={u}");
            }
            assert!(log_one_minus_tanh_sq(u).is_finite());
        }
    }

    #[test]
    fn soft_target_examples() {
        assert_eq!(soft_target(0.3, true, 0.99, 5.0, 6.0, -1.0, 0.2), 0.3);
        assert_eq!(soft_target(0.3, false, 0.0, 5.0, 6.0, -1.0, 0.2), 0.3);
        assert!((soft_target(0.1, false, 0.9, 0.5, 0.5, -1.0, 0.2) - 0.73).abs() < 1e-12);
    }

    #[test]
    fn box_mapping_roundtrip() {
        let a = SacAgent::<f64>::new(
            SacConfig {
                hidden: vec![4],
                ..SacConfig::default()
            },
            2,
            vec![-0.2, 0.3],
            vec![0.2, 0.7],
        )
        .unwrap();
        let n = [0.25, -0.5];
        let back = a.to_normalized(&a.to_box(&n));
        assert!((back[0] - n[0]).abs() < 1e-12 && (back[1] - n[1]).abs() < 1e-12);
        assert_eq!(a.to_box(&[-1.0, 1.0]), vec![-0.2, 0.7]);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut a = tiny(3, 2);
        a.set_log_alpha(-0.7);
        a.targets_mut()[0].params_mut().data_mut(0)[0] = 9.0;
        let ck = a.to_checkpoint();
        let back = SacAgent::<f64>::from_checkpoint(&Checkpoint::read_from(&mut ck.to_bytes().as_slice()).unwrap(), a.config().clone()).unwrap();
        assert_eq!(back.max_abs_diff(&a), 0.0);
        assert_eq!(back.to_checkpoint().to_bytes(), ck.to_bytes());
    }

    #[test]
    fn update_is_a_noop_below_batch_size() {
        let mut a = tiny(2, 1);
        let before = a.clone();
        let mut buf = ReplayBuffer::new(16, 2, 1).unwrap();
        buf.push(&Transition {
            obs: vec![0.0, 1.0],
            action: vec![0.5],
            reward: 1.0,
            next_obs: vec![1.0, 0.0],
            terminal: false,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(a.update(&buf, &mut rng).unwrap().is_none());
        assert_eq!(a.max_abs_diff(&before), 0.0);
        assert_eq!(a.updates(), 0);
    }
}
