//! Clipped-surrogate PPO update.
//!
//! Loss per minibatch:
//!
//! ```text
//! L = -mean(min(r A, clip(r, 1-ε, 1+ε) A)) + c_v mean((V - R)^2) - c_e H
//! r = exp(log π_θ(a|s) - log π_old(a|s))
//! ```
//!
//! Gradients come from the tape, are clipped to a global L2 norm, and are
//! applied with Adam.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::network;
use super::policy::{entropy_on_tape, log_prob_on_tape, PolicyParams, TapeParams};
use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    /// Episodes collected between updates.
    pub episodes_per_update: usize,
    pub minibatch_size: usize,
    pub normalize_advantages: bool,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_range: 0.2,
            learning_rate: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            epochs: 10,
            episodes_per_update: 10,
            minibatch_size: 64,
            normalize_advantages: true,
            max_grad_norm: 0.5,
            adam_eps: 1e-5,
        }
    }
}

/// Adam over the flat parameter vector of a [`PolicyParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut PolicyParams, grads: &[f64]) {
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        params.for_each_value_mut(|i, p| {
            let g = grads[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
}

/// One training sample: a stored transition with its advantage and return.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub slots: &'a Tensor,
    pub filled: usize,
    pub action: &'a [f64],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// Loss graph of one minibatch.
#[derive(Debug, Clone)]
pub struct LossGraph {
    pub loss: Var,
    pub policy_loss: Var,
    pub value_loss: Var,
    pub entropy: Var,
    pub log_probs: Vec<Var>,
    pub values: Vec<Var>,
    pub ratios: Vec<f64>,
}

/// Builds the PPO loss for `batch` on `tape`.
pub fn ppo_loss(
    tape: &mut Tape,
    params: &PolicyParams,
    vars: &TapeParams,
    batch: &[Sample<'_>],
    cfg: &PpoConfig,
) -> Result<LossGraph> {
    let n = batch.len() as f64;
    let mut surrogates = Vec::with_capacity(batch.len());
    let mut sq_errors = Vec::with_capacity(batch.len());
    let mut log_probs = Vec::with_capacity(batch.len());
    let mut values = Vec::with_capacity(batch.len());
    let mut ratios = Vec::with_capacity(batch.len());
    for s in batch {
        let mean = network::forward(tape, &params.actor_shape, &vars.actor, s.slots, s.filled)?;
        let lp = log_prob_on_tape(tape, mean, vars.log_std, s.action);
        let log_ratio = tape.add_scalar(lp, -s.old_log_prob);
        let ratio = tape.exp(log_ratio);
        ratios.push(tape.scalar(ratio));
        let unclipped = tape.scale(ratio, s.advantage);
        let clipped = tape.clamp(ratio, 1.0 - cfg.clip_range, 1.0 + cfg.clip_range);
        let clipped = tape.scale(clipped, s.advantage);
        surrogates.push(tape.min(unclipped, clipped));
        log_probs.push(lp);

        let v = network::forward(tape, &params.critic_shape, &vars.critic, s.slots, s.filled)?;
        let err = tape.add_scalar(v, -s.ret);
        sq_errors.push(tape.mul(err, err));
        values.push(v);
    }
    let surrogate = tape.sum_all(&surrogates);
    let policy_loss = tape.scale(surrogate, -1.0 / n);
    let sq = tape.sum_all(&sq_errors);
    let value_loss = tape.scale(sq, 1.0 / n);
    let entropy = entropy_on_tape(tape, vars.log_std);
    let weighted_value = tape.scale(value_loss, cfg.value_coef);
    let weighted_entropy = tape.scale(entropy, -cfg.entropy_coef);
    let loss = tape.add(policy_loss, weighted_value);
    let loss = tape.add(loss, weighted_entropy);
    Ok(LossGraph {
        loss,
        policy_loss,
        value_loss,
        entropy,
        log_probs,
        values,
        ratios,
    })
}

/// Flat gradient in [`PolicyParams::for_each_value_mut`] order.
pub fn flat_gradient(tape: &Tape, root: Var, vars: &TapeParams) -> Vec<f64> {
    let mut grads = tape.backward(root);
    let mut out = Vec::new();
    for v in vars.all() {
        out.extend(grads.take(v).data);
    }
    out
}

/// Scales `grads` in place so their L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / (norm + 1e-6);
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left `[1-ε, 1+ε]`.
    pub clip_fraction: f64,
    /// `mean((r - 1) - ln r)`, an estimate of KL(old ‖ new).
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub gradient_steps: usize,
}

/// PPO learner: configuration plus optimizer state.
#[derive(Debug, Clone)]
pub struct PpoLearner {
    pub config: PpoConfig,
    pub optimizer: Adam,
}

impl PpoLearner {
    pub fn new(config: PpoConfig, params: &PolicyParams) -> Self {
        Self {
            optimizer: Adam::new(params.parameter_count(), config.learning_rate, config.adam_eps),
            config,
        }
    }

    /// Runs `epochs` passes of shuffled minibatches over the buffer.
    ///
    /// The buffer must already hold advantages (see [`RolloutBuffer::finish`]).
    /// A non-finite loss restores the parameters from before the call and
    /// returns an error carrying the diagnostics so far.
    pub fn update(
        &mut self,
        params: &mut PolicyParams,
        buffer: &RolloutBuffer,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateDiagnostics> {
        if !buffer.has_advantages() {
            return Err(Error::InvalidArgument(
                "rollout buffer has no advantages; call finish() first".into(),
            ));
        }
        let cfg = self.config;
        let snapshot = (params.clone(), self.optimizer.clone());
        let mut diag = UpdateDiagnostics::default();
        let mut ratio_count = 0usize;
        let mut clipped = 0usize;
        let mut kl_sum = 0.0;
        let mut indices: Vec<usize> = (0..buffer.len()).collect();
        let batch_size = cfg.minibatch_size.clamp(1, buffer.len());

        for _ in 0..cfg.epochs {
            indices.shuffle(rng);
            for chunk in indices.chunks(batch_size) {
                let batch: Vec<Sample<'_>> = chunk
                    .iter()
                    .map(|&i| {
                        let t = &buffer.transitions[i];
                        Sample {
                            slots: &t.slots,
                            filled: t.filled,
                            action: &t.action,
                            old_log_prob: t.log_prob,
                            advantage: buffer.advantages[i],
                            ret: buffer.returns[i],
                        }
                    })
                    .collect();
                let mut tape = Tape::new();
                let vars = params.to_tape(&mut tape);
                let graph = ppo_loss(&mut tape, params, &vars, &batch, &cfg)?;
                let loss = tape.scalar(graph.loss);
                diag.policy_loss = tape.scalar(graph.policy_loss);
                diag.value_loss = tape.scalar(graph.value_loss);
                diag.entropy = tape.scalar(graph.entropy);
                for &r in &graph.ratios {
                    ratio_count += 1;
                    if (r - 1.0).abs() > cfg.clip_range {
                        clipped += 1;
                    }
                    kl_sum += (r - 1.0) - r.ln();
                }
                diag.clip_fraction = clipped as f64 / ratio_count as f64;
                diag.approx_kl = kl_sum / ratio_count as f64;
                if !loss.is_finite() {
                    (*params, self.optimizer) = snapshot;
                    return Err(Error::Numerical(format!(
                        "non-finite PPO loss after {} gradient steps; diagnostics: {diag:?}",
                        diag.gradient_steps
                    )));
                }
                let mut grads = flat_gradient(&tape, graph.loss, &vars);
                diag.grad_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
                self.optimizer.step(params, &grads);
                diag.gradient_steps += 1;
            }
        }
        if !params.is_finite() {
            (*params, self.optimizer) = snapshot;
            return Err(Error::Numerical(format!(
                "parameters became non-finite; diagnostics: {diag:?}"
            )));
        }
        Ok(diag)
    }
}
