//! PPO agent with transformer actor and critic.
//!
//! - [`tape`]: reverse-mode autodiff over small matrices.
//! - [`network`]: the encoder with its readout token and attention mask.
//! - [`policy`]: parameters, Gaussian action head, checkpoints.
//! - [`buffer`]: rollout storage and GAE.
//! - [`ppo`]: the clipped-surrogate update.

pub mod buffer;
pub mod network;
pub mod policy;
pub mod ppo;
pub mod tape;

pub use buffer::{compute_gae, RolloutBuffer, Transition};
pub use network::{NetworkConfig, NetworkShape};
pub use policy::{gaussian_log_prob, sample_action, PolicyParams, Role};
pub use ppo::{PpoConfig, PpoLearner, UpdateDiagnostics};
pub use tape::{Tape, Tensor, Var};
