//! Discovery of hidden causal events in trajectory data, and planning over
//! the memory-augmented state space.
//!
//! The pipeline: collect random-exploration trajectories ([`sim`]), find
//! observable attributes whose transitions stay stochastic under full
//! conditioning ([`discovery::identify_stochastic`]), explain the residual
//! entropy with hyper-ball events found by gradient descent on a relaxed
//! conditional entropy ([`infotheory`], [`discovery`]), turn the winning
//! events into binary latch memory ([`memory`]), then fit a tabular model
//! and plan over the augmented states ([`planner`]).

pub mod cli;
pub mod density;
pub mod discovery;
pub mod error;
pub mod infotheory;
pub mod memory;
pub mod planner;
pub mod sim;
pub mod trajectory;

mod util;

pub use error::{Error, Result};
