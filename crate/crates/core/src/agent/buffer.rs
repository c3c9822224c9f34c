//! Rollout storage and generalized advantage estimation.

use super::tape::Tensor;

/// One environment step as seen by the learner.
#[derive(Debug, Clone)]
pub struct Transition {
    /// Slot matrix of the state the action was taken in (`M × slot_dim`).
    pub slots: Tensor,
    pub filled: usize,
    pub action: Vec<f64>,
    /// Log-probability of `action` under the policy that sampled it.
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// TD residuals folded backwards:
///
/// ```text
/// δ_t = r_t + γ V(s_{t+1}) (1 - done_t) - V(s_t)
/// A_t = δ_t + γ λ (1 - done_t) A_{t+1}
/// ```
///
/// The value after the last step is taken as 0, so the final step should be
/// terminal. Returns are `A + V`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        self.transitions.push(t);
        self.advantages.clear();
        self.returns.clear();
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
        self.advantages.clear();
        self.returns.clear();
    }

    pub fn has_advantages(&self) -> bool {
        !self.transitions.is_empty() && self.advantages.len() == self.transitions.len()
    }

    /// Fills `advantages` and `returns`; with `normalize` the advantages are
    /// shifted and scaled to zero mean and unit standard deviation.
    pub fn finish(&mut self, gamma: f64, lambda: f64, normalize: bool) {
        let rewards: Vec<f64> = self.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = self.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = self.transitions.iter().map(|t| t.done).collect();
        let (mut adv, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda);
        if normalize && !adv.is_empty() {
            let n = adv.len() as f64;
            let mean = adv.iter().sum::<f64>() / n;
            let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            for a in &mut adv {
                *a = (*a - mean) / (sd + 1e-8);
            }
        }
        self.advantages = adv;
        self.returns = ret;
    }
}
