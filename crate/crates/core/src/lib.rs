//! Confounding tree-graph POMDP benchmark together with a DQN learner and
//! the MOHQA agent, which adds a reward-modulated Hebbian head with neural
//! eligibility traces on top of the DQN body.
//!
//! Module map:
//!
//! - [`ctgraph`]: the CT-graph environment and its analytic random-policy oracle.
//! - [`nn`]: a small f64 network stack (conv, dense, ReLU) with exact backprop.
//! - [`dqn`]: replay memory, epsilon-greedy exploration, target network sync.
//! - [`mohn`]: the modulated Hebbian head (thresholded Hebbian terms, traces,
//!   reward-modulated clipped weights, one-hot output).
//! - [`agent`]: combination of the two heads, the modified TD loss, and the
//!   training loop for both the plain DQN baseline and MOHQA.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod ctgraph;
pub mod dqn;
pub mod error;
pub mod mohn;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
