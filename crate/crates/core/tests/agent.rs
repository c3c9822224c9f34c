mod common;

use common::gradcheck::{self, Target};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdperl_core::agent::network::NetworkConfig;
use sdperl_core::agent::ppo::{ppo_loss, Sample};
use sdperl_core::agent::{
    compute_gae, gaussian_log_prob, sample_action, PolicyParams, PpoConfig, PpoLearner, Role,
    RolloutBuffer, Tape, Tensor, Transition,
};
use sdperl_core::rng::seeded;

fn check(target: Target, seed: u64) {
    let errs = gradcheck::relative_errors(target, 200, seed);
    let (good, worst) = gradcheck::summary(&errs);
    assert!(good >= 0.95 && worst < 1e-2, "{target:?}: {good} below 1e-3, worst {worst}");
}

#[test]
fn critic_value_gradient_matches_finite_differences() {
    check(Target::CriticValue, 1);
}

#[test]
fn actor_log_prob_gradient_matches_finite_differences() {
    check(Target::ActorLogProb, 2);
}

#[test]
fn ppo_loss_gradient_matches_finite_differences() {
    check(Target::PpoLoss, 3);
}

#[test]
fn padding_slots_do_not_change_outputs() {
    let p = gradcheck::toy_policy(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prob = gradcheck::random_problem(&mut rng, 6);
    for (slots, &filled) in prob.slots.iter().zip(&prob.filled) {
        let mut noisy = slots.clone();
        for v in &mut noisy.data[filled * gradcheck::SLOT_DIM..] {
            *v = 123.0;
        }
        for role in [Role::Actor, Role::Critic] {
            assert_eq!(p.forward(slots, filled, role).unwrap(), p.forward(&noisy, filled, role).unwrap());
        }
    }
}

#[test]
fn sampled_actions_have_the_configured_moments() {
    let mean = [0.5, -1.0];
    let log_std = [0.0, (0.5f64).ln()];
    let mut rng = seeded(6);
    let n = 20_000;
    let mut sums = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let (a, lp) = sample_action(&mean, &log_std, &mut rng);
        assert_eq!(lp, gaussian_log_prob(&a, &mean, &log_std));
        for d in 0..2 {
            sums[d] += a[d];
            sq[d] += a[d] * a[d];
        }
    }
    for d in 0..2 {
        let m = sums[d] / n as f64;
        let var = sq[d] / n as f64 - m * m;
        let sd = log_std[d].exp();
        assert!((m - mean[d]).abs() < 5.0 * sd / (n as f64).sqrt(), "mean {d}: {m}");
        assert!((var.sqrt() - sd).abs() < 0.02 * sd, "sd {d}: {}", var.sqrt());
    }
}

#[test]
fn log_density_matches_closed_form() {
    // standard normal at 1 in each of two dims
    let lp = gaussian_log_prob(&[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
    let want = 2.0 * (-0.5 - 0.5 * (2.0 * std::f64::consts::PI).ln());
    approx::assert_relative_eq!(lp, want, epsilon = 1e-14);
}

#[test]
fn gae_matches_discounted_sums() {
    let rewards = [0.3, -0.1, 0.5, 0.2, 0.0, 0.4];
    let values = [0.1, 0.2, -0.3, 0.4, 0.0, 0.2];
    let dones = [false, false, true, false, false, true];
    let (gamma, lambda) = (0.9, 0.8);
    let (adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda);
    // A_t = Σ_l (γλ)^l δ_{t+l} within the episode
    let delta = |t: usize| {
        let next = if dones[t] { 0.0 } else { values[t + 1] };
        rewards[t] + gamma * next - values[t]
    };
    for t in 0..6 {
        let mut want = 0.0;
        let mut w = 1.0;
        let mut u = t;
        loop {
            want += w * delta(u);
            if dones[u] {
                break;
            }
            w *= gamma * lambda;
            u += 1;
        }
        approx::assert_relative_eq!(adv[t], want, epsilon = 1e-12);
        approx::assert_relative_eq!(ret[t], want + values[t], epsilon = 1e-12);
    }
    // λ = 1 gives discounted return minus value
    let (adv1, _) = compute_gae(&rewards, &values, &dones, gamma, 1.0);
    let mc0 = rewards[0] + gamma * rewards[1] + gamma * gamma * rewards[2];
    approx::assert_relative_eq!(adv1[0], mc0 - values[0], epsilon = 1e-12);
}

#[test]
fn clipping_is_inactive_at_the_old_policy() {
    let p = gradcheck::toy_policy(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut prob = gradcheck::random_problem(&mut rng, 5);
    for i in 0..5 {
        let mean = p.forward(&prob.slots[i], prob.filled[i], Role::Actor).unwrap();
        prob.old_log_probs[i] = gaussian_log_prob(&prob.actions[i], &mean, &p.log_std);
    }
    let cfg = PpoConfig { entropy_coef: 0.0, value_coef: 0.0, ..Default::default() };
    let batch: Vec<Sample<'_>> = (0..5)
        .map(|i| Sample {
            slots: &prob.slots[i],
            filled: prob.filled[i],
            action: &prob.actions[i],
            old_log_prob: prob.old_log_probs[i],
            advantage: prob.advantages[i],
            ret: prob.returns[i],
        })
        .collect();
    let mut tape = Tape::new();
    let vars = p.to_tape(&mut tape);
    let g = ppo_loss(&mut tape, &p, &vars, &batch, &cfg).unwrap();
    for r in &g.ratios {
        assert!((r - 1.0).abs() < 1e-12);
    }
    let mean_adv = prob.advantages.iter().sum::<f64>() / 5.0;
    approx::assert_relative_eq!(tape.scalar(g.policy_loss), -mean_adv, epsilon = 1e-12);
}

fn toy_buffer(p: &PolicyParams, rng: &mut ChaCha8Rng) -> RolloutBuffer {
    let mut buf = RolloutBuffer::new();
    for ep in 0..3 {
        let mut slots = Tensor::zeros(3, 2);
        for t in 0..3 {
            let mean = p.forward(&slots, t, Role::Actor).unwrap();
            let (action, log_prob) = sample_action(&mean, &p.log_std, rng);
            let value = p.value(&slots, t).unwrap();
            buf.push(Transition {
                slots: slots.clone(),
                filled: t,
                action: action.clone(),
                log_prob,
                value,
                reward: action[0] - 0.1 * ep as f64,
                done: t == 2,
            });
            slots.data[t * 2] = action[0];
            slots.data[t * 2 + 1] = action[1];
        }
    }
    buf
}

#[test]
fn ppo_update_reports_diagnostics_and_is_deterministic() {
    let cfg = NetworkConfig { layers: 1, heads: 2, hidden: 4, ff_width: 8 };
    let p0 = PolicyParams::new(cfg, 2, 3, 2, &mut seeded(9)).unwrap();
    let mut buf = toy_buffer(&p0, &mut seeded(10));
    assert!(PpoLearner::new(PpoConfig::default(), &p0).update(&mut p0.clone(), &buf, &mut seeded(0)).is_err());
    buf.finish(0.99, 0.95, true);
    let ppo = PpoConfig { epochs: 3, minibatch_size: 4, learning_rate: 1e-2, ..Default::default() };
    let run = || {
        let mut p = p0.clone();
        let mut learner = PpoLearner::new(ppo, &p);
        let d = learner.update(&mut p, &buf, &mut seeded(11)).unwrap();
        (p, d)
    };
    let (p1, d1) = run();
    let (p2, d2) = run();
    assert_eq!(p1, p2);
    assert_eq!(d1, d2);
    assert_ne!(p1, p0);
    // 9 samples in minibatches of 4 is 3 steps per epoch
    assert_eq!(d1.gradient_steps, 9);
    assert!((0.0..=1.0).contains(&d1.clip_fraction));
    assert!(d1.approx_kl >= 0.0 && d1.grad_norm > 0.0);
}

#[test]
fn checkpoint_round_trip() {
    let p = gradcheck::toy_policy(12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    p.save(&path, &serde_json::json!({"lr": 1e-3})).unwrap();
    assert_eq!(PolicyParams::load(&path, &p.actor_shape).unwrap(), p);
    let mut other = p.actor_shape;
    other.slots += 1;
    assert!(PolicyParams::load(&path, &other).is_err());
}
