//! Frugal interactive change detection by active learning.
//!
//! Displays of unlabeled samples are chosen by minimising a representativity /
//! diversity / ambiguity objective over the probability simplex; a stateless
//! Q-learner picks the criterion mix and display size from iteration to
//! iteration; a pluggable binary classifier is retrained on every batch of
//! oracle labels and evaluated by equal error rate.

pub mod clustering;
pub mod config;
pub mod error;
pub mod policy;
pub mod pool;
pub mod report;
pub mod scorer;
pub mod selector;
pub mod session;

pub use config::{PoolSource, RunConfig, Strategy};
pub use error::{Error, Result};
pub use pool::{ItemId, Label, Pool};
pub use session::{run_simulated, RunLog, Session};
