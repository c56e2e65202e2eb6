mod common;

use std::ops::ControlFlow;

use nbvlab_core::nn::{Mlp, Scalar};
use nbvlab_core::sac::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn small(seed: u64) -> SacConfig {
    SacConfig {
        batch_size: 16,
        hidden: vec![12, 10],
        buffer_capacity: 1000,
        learning_starts_per_task: 50,
        seed,
        ..SacConfig::default()
    }
}

/// Zero weights; the output layer's bias set to `bias`.
fn make_constant<T: Scalar>(m: &mut Mlp<T>, bias: &[f64]) {
    let p = m.params_mut();
    for i in 0..p.len() {
        p.data_mut(i).iter_mut().for_each(|v| *v = T::zero());
    }
    let last = p.len() - 1;
    for (v, &b) in p.data_mut(last).iter_mut().zip(bias) {
        *v = T::of(b);
    }
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, obs_dim: usize, act_dim: usize) -> Batch {
    let mut u = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    Batch {
        obs_dim,
        act_dim,
        obs: u(b * obs_dim),
        actions: u(b * act_dim),
        rewards: u(b),
        next_obs: u(b * obs_dim),
        terminals: (0..b).map(|i| i % 3 == 0).collect(),
    }
}

#[test]
fn critic_gradients_match_central_differences() {
    let mut agent = SacAgent::<f64>::new(small(3), 3, vec![-1.0; 2], vec![1.0; 2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = random_batch(&mut rng, 7, 3, 2);
    let y: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (_, g1, g2) = agent.critic_loss_and_grads(&batch, &y);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (q, g) in [(0usize, &g1), (1, &g2)] {
        let n_blocks = agent.critics()[q].params().len();
        for bi in 0..n_blocks {
            for k in 0..agent.critics()[q].params().data(bi).len() {
                let orig = agent.critics()[q].params().data(bi)[k];
                agent.critics_mut()[q].params_mut().data_mut(bi)[k] = orig + h;
                let up = agent.critic_loss_and_grads(&batch, &y).0;
                agent.critics_mut()[q].params_mut().data_mut(bi)[k] = orig - h;
                let down = agent.critic_loss_and_grads(&batch, &y).0;
                agent.critics_mut()[q].params_mut().data_mut(bi)[k] = orig;
                worst = worst.max(common::rel_err(g.blocks[bi][k], (up - down) / (2.0 * h), 1e-7));
            }
        }
    }
    assert!(worst < 1e-5, "critic relative error {worst:e}");
}

#[test]
fn actor_gradients_match_central_differences() {
    let mut agent = SacAgent::<f64>::new(small(5), 3, vec![-1.0; 2], vec![1.0; 2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = 6;
    let obs: Vec<f64> = (0..b * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise: Vec<f64> = (0..b * 2).map(|_| rng.sample(StandardNormal)).collect();
    let alpha = 0.3;
    let (_, g, _) = agent.actor_loss_and_grads(&obs, &noise, alpha);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for bi in 0..agent.actor().params().len() {
        for k in 0..agent.actor().params().data(bi).len() {
            let orig = agent.actor().params().data(bi)[k];
            agent.actor_mut().params_mut().data_mut(bi)[k] = orig + h;
            let up = agent.actor_loss_and_grads(&obs, &noise, alpha).0;
            agent.actor_mut().params_mut().data_mut(bi)[k] = orig - h;
            let down = agent.actor_loss_and_grads(&obs, &noise, alpha).0;
            agent.actor_mut().params_mut().data_mut(bi)[k] = orig;
            worst = worst.max(common::rel_err(g.blocks[bi][k], (up - down) / (2.0 * h), 1e-7));
        }
    }
    assert!(worst < 1e-5, "actor relative error {worst:e}");
}

#[test]
fn terminal_and_zero_discount_targets_are_the_reward() {
    let agent = SacAgent::<f64>::new(small(1), 2, vec![-1.0], vec![1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut batch = random_batch(&mut rng, 9, 2, 1);
    batch.terminals = vec![true; 9];
    let noise = vec![0.3; 9];
    assert_eq!(agent.q_targets(&batch, 0.99, &noise), batch.rewards);
    batch.terminals = vec![false; 9];
    assert_eq!(agent.q_targets(&batch, 0.0, &noise), batch.rewards);
}

#[test]
fn constant_networks_give_hand_computed_target() {
    let mut agent = SacAgent::<f64>::new(small(1), 2, vec![-1.0], vec![1.0]).unwrap();
    // mean 0 and log-std chosen so the density at a = 0 is exactly 1.
    make_constant(agent.actor_mut(), &[0.0, -HALF_LN_2PI]);
    let [t1, t2] = agent.targets_mut();
    make_constant(t1, &[0.7]);
    make_constant(t2, &[0.95]);
    let batch = Batch {
        obs_dim: 2,
        act_dim: 1,
        obs: vec![0.0; 2],
        actions: vec![0.0],
        rewards: vec![0.1],
        next_obs: vec![0.4, -0.2],
        terminals: vec![false],
    };
    let y = agent.q_targets(&batch, 0.9, &[0.0]);
    assert!((y[0] - 0.73).abs() < 1e-12, "{}", y[0]);
}

#[test]
fn polyak_update_mixes_with_tau() {
    let mut agent = SacAgent::<f64>::new(small(2), 2, vec![-1.0], vec![1.0]).unwrap();
    let mut buf = ReplayBuffer::new(100, 2, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..40 {
        buf.push(&Transition {
            obs: vec![rng.random(), rng.random()],
            action: vec![rng.random_range(-1.0..1.0)],
            reward: rng.random(),
            next_obs: vec![rng.random(), rng.random()],
            terminal: false,
        })
        .unwrap();
    }
    let before: Vec<Vec<f64>> = (0..agent.targets()[0].params().len())
        .map(|i| agent.targets()[0].params().data(i).to_vec())
        .collect();
    agent.update(&buf, &mut rng).unwrap().unwrap();
    let tau = 0.005;
    for (i, old) in before.iter().enumerate() {
        let online = agent.critics()[0].params().data(i);
        let target = agent.targets()[0].params().data(i);
        for k in 0..old.len() {
            let expect = (1.0 - tau) * old[k] + tau * online[k];
            assert!((target[k] - expect).abs() <= 1e-15 * expect.abs().max(1.0));
        }
    }
}

#[test]
fn temperature_moves_toward_target_entropy() {
    let mut buf = ReplayBuffer::new(100, 2, 1).unwrap();
    for i in 0..32 {
        let x = i as f64 / 32.0;
        buf.push(&Transition { obs: vec![x, -x], action: vec![0.0], reward: x, next_obs: vec![x, x], terminal: false })
            .unwrap();
    }
    // Very narrow policy: entropy far below -1, so alpha must grow.
    let mut narrow = SacAgent::<f64>::new(small(1), 2, vec![-1.0], vec![1.0]).unwrap();
    make_constant(narrow.actor_mut(), &[0.0, -6.0]);
    let a0 = narrow.log_alpha();
    narrow.update(&buf, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(narrow.log_alpha() > a0);
    // Unit-variance pre-tanh policy: entropy above -1, so alpha shrinks.
    let mut wide = SacAgent::<f64>::new(small(1), 2, vec![-1.0], vec![1.0]).unwrap();
    make_constant(wide.actor_mut(), &[0.0, 0.0]);
    wide.update(&buf, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert!(wide.log_alpha() < a0);
}

#[test]
fn no_update_below_batch_size() {
    let mut agent = SacAgent::<f32>::new(small(1), 2, vec![-1.0], vec![1.0]).unwrap();
    let copy = agent.clone();
    let mut buf = ReplayBuffer::new(100, 2, 1).unwrap();
    for _ in 0..15 {
        buf.push(&Transition { obs: vec![0.0; 2], action: vec![0.0], reward: 1.0, next_obs: vec![0.0; 2], terminal: true })
            .unwrap();
    }
    assert!(agent.update(&buf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().is_none());
    assert_eq!(agent.max_abs_diff(&copy), 0.0);
}

/// Density of the squashed Gaussian mapped into `[low, high]`, written out
/// independently of the agent.
fn box_density(a: f64, mu: f64, log_std: f64, low: f64, high: f64) -> f64 {
    let half = (high - low) / 2.0;
    let t = (a - low) / half - 1.0;
    let u = t.atanh();
    let sigma = log_std.exp();
    let gauss = (-0.5 * ((u - mu) / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    gauss / (1.0 - t * t) / half
}

#[test]
fn policy_density_is_normalized_and_matches_samples() {
    let (low, high) = (-2.0, 3.0);
    let mut agent = SacAgent::<f64>::new(small(8), 2, vec![low], vec![high]).unwrap();
    make_constant(agent.actor_mut(), &[0.4, -0.3]);
    // Midpoint rule in the pre-tanh variable avoids the endpoint singularity.
    let n = 200_000;
    let (lo_u, hi_u) = (-12.0f64, 12.0f64);
    let du = (hi_u - lo_u) / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let u = lo_u + (i as f64 + 0.5) * du;
        let t = u.tanh();
        let a = low + (t + 1.0) * (high - low) / 2.0;
        let da_du = (1.0 - t * t) * (high - low) / 2.0;
        total += box_density(a, 0.4, -0.3, low, high) * da_du * du;
    }
    assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (a, lp) = agent.policy_sample(&[0.1, 0.2], &mut rng, false).unwrap();
        assert!(a[0] > low && a[0] < high);
        let expect = box_density(a[0], 0.4, -0.3, low, high).ln();
        assert!((lp.unwrap() - expect).abs() < 1e-8, "{} vs {expect}", lp.unwrap());
    }
    let (mean, lp) = agent.policy_sample(&[0.1, 0.2], &mut rng, true).unwrap();
    assert!(lp.is_none());
    assert!((mean[0] - (low + (0.4f64.tanh() + 1.0) * 2.5)).abs() < 1e-12);
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(10, 1, 1).unwrap();
    for i in 0..25 {
        buf.push(&Transition { obs: vec![i as f64], action: vec![0.0], reward: 0.0, next_obs: vec![0.0], terminal: false })
            .unwrap();
    }
    let n = 100_000;
    let idx = buf.sample_indices(n, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let mut counts = [0usize; 10];
    for i in idx {
        counts[i] += 1;
    }
    let e = n as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 9 degrees of freedom, p = 0.001.
    assert!(chi2 < 27.88, "chi-square {chi2}");
    let kept: Vec<f64> = (0..10).map(|k| buf.get(k).unwrap().obs[0]).collect();
    assert_eq!(kept, (15..25).map(|v| v as f64).collect::<Vec<_>>());
}

#[test]
fn checkpoint_roundtrip_restores_every_network() {
    let agent = SacAgent::<f64>::new(small(4), 8, vec![-1.0; 7], vec![1.0; 7]).unwrap();
    let bytes = agent.to_checkpoint().to_bytes();
    let ck = nbvlab_core::nn::Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
    let back = SacAgent::<f64>::from_checkpoint(&ck, small(4)).unwrap();
    assert_eq!(back.max_abs_diff(&agent), 0.0);
}

#[test]
fn toy_training_is_reproducible_and_logs_every_interval() {
    let schedule = Schedule {
        total_steps: 300,
        validation_interval: 100,
        episodes_per_task: 20,
        seq_len: 1,
        validation_seed: 1,
    };
    let run = || {
        let mut env = GoalEnv::new();
        train_agent::<f32, _>(&mut env, &small(7), &schedule, None).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log.len(), schedule.curve_len());
    let csv = |log: &[TrainLogRow]| {
        let mut v = Vec::new();
        write_training_log(&mut v, log).unwrap();
        v
    };
    assert_eq!(csv(&a.log), csv(&b.log));
    assert_eq!(a.agent.max_abs_diff(&b.agent), 0.0);

    let mut env = GoalEnv::new();
    let stopped = train_agent_with::<f32, _>(&mut env, &small(7), &schedule, None, &mut |r| {
        if r.step >= 100 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert_eq!(stopped.log.len(), 2);
}

#[test]
fn goal_env_random_baseline_matches_analytic_value() {
    let mut env = GoalEnv::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 200_000;
    let mut sum = 0.0;
    for _ in 0..n {
        env.reset_task(0, &mut rng).unwrap();
        let a = env.random_action(&mut rng);
        sum += env.step_action(&a).unwrap().reward;
    }
    assert!((sum / n as f64 - GoalEnv::random_return()).abs() < 3e-3);
    assert!(env.step_action(&[0.0]).is_err());
}

proptest! {
    #[test]
    fn box_mapping_roundtrips(lo in -5.0f64..0.0, w in 0.1f64..5.0, t in -1.0f64..1.0) {
        let agent = SacAgent::<f32>::new(small(1), 1, vec![lo], vec![lo + w]).unwrap();
        let a = agent.to_box(&[t]);
        prop_assert!(a[0] >= lo - 1e-12 && a[0] <= lo + w + 1e-12);
        prop_assert!((agent.to_normalized(&a)[0] - t).abs() < 1e-9);
    }

    #[test]
    fn log_one_minus_tanh_sq_is_stable(u in -400.0f64..400.0) {
        let v = log_one_minus_tanh_sq(u);
        prop_assert!(v.is_finite() && v <= 1e-12);
        if u.abs() < 5.0 {
            prop_assert!((v - (1.0 - u.tanh().powi(2)).ln()).abs() < 1e-9);
        }
    }
}
