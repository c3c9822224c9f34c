//! Actor and critic parameters, the Gaussian action head, and checkpoints.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::network::{self, NetworkConfig, NetworkShape};
use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const ACTOR_HEAD_GAIN: f64 = 0.01;
const CRITIC_HEAD_GAIN: f64 = 1.0;

/// `0.5 * ln(2π)`.
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Actor,
    Critic,
}

/// All learnable tensors of the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor_shape: NetworkShape,
    pub critic_shape: NetworkShape,
    #[serde(with = "tensor_list")]
    pub actor: Vec<Tensor>,
    #[serde(with = "tensor_list")]
    pub critic: Vec<Tensor>,
    /// State-independent log standard deviation, one per action dimension.
    pub log_std: Vec<f64>,
}

impl PolicyParams {
    pub fn new(
        config: NetworkConfig,
        slot_dim: usize,
        slots: usize,
        action_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let actor_shape = NetworkShape {
            config,
            input_dim: slot_dim,
            slots,
            output_dim: action_dim,
        };
        let critic_shape = NetworkShape {
            output_dim: 1,
            ..actor_shape
        };
        actor_shape.validate()?;
        let actor = actor_shape.init(ACTOR_HEAD_GAIN, rng);
        let critic = critic_shape.init(CRITIC_HEAD_GAIN, rng);
        Ok(Self {
            actor_shape,
            critic_shape,
            actor,
            critic,
            log_std: vec![0.0; action_dim],
        })
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn slot_dim(&self) -> usize {
        self.actor_shape.input_dim
    }

    pub fn slots(&self) -> usize {
        self.actor_shape.slots
    }

    pub fn parameter_count(&self) -> usize {
        self.actor.iter().chain(&self.critic).map(Tensor::len).sum::<usize>() + self.log_std.len()
    }

    /// Every parameter tensor, actor first, then critic, then log-std.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = self.actor.iter().chain(&self.critic).cloned().collect();
        out.push(Tensor::row_vector(self.log_std.clone()));
        out
    }

    pub fn for_each_value_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut i = 0;
        for t in self.actor.iter_mut().chain(self.critic.iter_mut()) {
            for v in &mut t.data {
                f(i, v);
                i += 1;
            }
        }
        for v in &mut self.log_std {
            f(i, v);
            i += 1;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor
            .iter()
            .chain(&self.critic)
            .all(|t| t.data.iter().all(|v| v.is_finite()))
            && self.log_std.iter().all(|v| v.is_finite())
    }

    /// Places all parameters on `tape` as leaves.
    pub fn to_tape(&self, tape: &mut Tape) -> TapeParams {
        let actor = self.actor.iter().map(|t| tape.leaf(t.clone())).collect();
        let critic = self.critic.iter().map(|t| tape.leaf(t.clone())).collect();
        let log_std = tape.leaf(Tensor::row_vector(self.log_std.clone()));
        TapeParams {
            actor,
            critic,
            log_std,
        }
    }

    /// Action mean (actor) or state value (critic) for one state, without
    /// keeping a gradient graph around.
    pub fn forward(&self, slots: &Tensor, filled: usize, role: Role) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (shape, tensors) = match role {
            Role::Actor => (&self.actor_shape, &self.actor),
            Role::Critic => (&self.critic_shape, &self.critic),
        };
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = network::forward(&mut tape, shape, &vars, slots, filled)?;
        Ok(tape.value(out).data.clone())
    }

    pub fn value(&self, slots: &Tensor, filled: usize) -> Result<f64> {
        Ok(self.forward(slots, filled, Role::Critic)?[0])
    }

    pub fn save(&self, path: &Path, hyperparameters: &serde_json::Value) -> Result<()> {
        let checkpoint = Checkpoint {
            shapes: self
                .actor_shape
                .tensor_specs()
                .into_iter()
                .map(|(n, r, c)| (format!("actor.{n}"), r, c))
                .chain(
                    self.critic_shape
                        .tensor_specs()
                        .into_iter()
                        .map(|(n, r, c)| (format!("critic.{n}"), r, c)),
                )
                .chain(std::iter::once(("log_std".to_string(), 1, self.action_dim())))
                .collect(),
            hyperparameters: hyperparameters.clone(),
            params: self.clone(),
        };
        let text = serde_json::to_string(&checkpoint)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint and checks it against the expected shapes.
    pub fn load(path: &Path, expected_actor: &NetworkShape) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let checkpoint: Checkpoint = serde_json::from_str(&text)?;
        let p = checkpoint.params;
        if p.actor_shape != *expected_actor {
            return Err(Error::Config(format!(
                "checkpoint network {:?} does not match configured {:?}",
                p.actor_shape, expected_actor
            )));
        }
        let check = |shape: &NetworkShape, tensors: &[Tensor], who: &str| -> Result<()> {
            let specs = shape.tensor_specs();
            if specs.len() != tensors.len() {
                return Err(Error::Config(format!("{who} checkpoint has wrong tensor count")));
            }
            for ((name, r, c), t) in specs.iter().zip(tensors) {
                if t.shape() != (*r, *c) {
                    return Err(Error::Config(format!(
                        "{who}.{name}: checkpoint {:?}, expected ({r}, {c})",
                        t.shape()
                    )));
                }
            }
            Ok(())
        };
        check(&p.actor_shape, &p.actor, "actor")?;
        check(&p.critic_shape, &p.critic, "critic")?;
        if p.log_std.len() != p.actor_shape.output_dim {
            return Err(Error::Config("checkpoint log_std has wrong length".into()));
        }
        Ok(p)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    shapes: Vec<(String, usize, usize)>,
    hyperparameters: serde_json::Value,
    params: PolicyParams,
}

mod tensor_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::agent::tape::Tensor;

    #[derive(Serialize, Deserialize)]
    struct Raw {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(tensors: &[Tensor], s: S) -> Result<S::Ok, S::Error> {
        let raw: Vec<Raw> = tensors
            .iter()
            .map(|t| Raw {
                rows: t.rows,
                cols: t.cols,
                data: t.data.clone(),
            })
            .collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Tensor>, D::Error> {
        let raw = Vec::<Raw>::deserialize(d)?;
        raw.into_iter()
            .map(|r| {
                if r.rows * r.cols != r.data.len() {
                    return Err(serde::de::Error::custom("tensor data does not match shape"));
                }
                Ok(Tensor::from_vec(r.rows, r.cols, r.data))
            })
            .collect()
    }
}

/// Parameter leaves on a tape.
#[derive(Debug, Clone)]
pub struct TapeParams {
    pub actor: Vec<Var>,
    pub critic: Vec<Var>,
    pub log_std: Var,
}

impl TapeParams {
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.actor.iter().chain(&self.critic).copied().collect();
        v.push(self.log_std);
        v
    }
}

/// Gaussian log-density of `action` on the tape; `log_std` is clamped first.
pub fn log_prob_on_tape(tape: &mut Tape, mean: Var, log_std: Var, action: &[f64]) -> Var {
    let d = action.len() as f64;
    let ls = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
    let a = tape.leaf(Tensor::row_vector(action.to_vec()));
    let diff = tape.sub(a, mean);
    let neg_ls = tape.scale(ls, -1.0);
    let inv_std = tape.exp(neg_ls);
    let z = tape.mul(diff, inv_std);
    let z2 = tape.mul(z, z);
    let quad = tape.sum(z2);
    let quad = tape.scale(quad, -0.5);
    let ls_sum = tape.sum(ls);
    let ls_sum = tape.scale(ls_sum, -1.0);
    let lp = tape.add(quad, ls_sum);
    tape.add_scalar(lp, -d * HALF_LN_2PI)
}

/// Entropy of the diagonal Gaussian, `Σ (log σ + ½ ln(2πe))`.
pub fn entropy_on_tape(tape: &mut Tape, log_std: Var) -> Var {
    let d = tape.value(log_std).len() as f64;
    let ls = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
    let s = tape.sum(ls);
    tape.add_scalar(s, d * (HALF_LN_2PI + 0.5))
}

/// Exact Gaussian log-density of `action`.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&a, &m), &ls)| {
            let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// Draws from `N(mean, exp(log_std)^2)` per coordinate and returns the sample
/// with its log-density.
pub fn sample_action(mean: &[f64], log_std: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let action: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(&m, &ls)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp() * eps
        })
        .collect();
    let lp = gaussian_log_prob(&action, mean, log_std);
    (action, lp)
}
