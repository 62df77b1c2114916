//! Differentiable modal logic.
//!
//! Learnable Kripke structures whose accessibility relation is trained by
//! gradient descent on Łukasiewicz contradiction losses, plus six
//! multi-agent scenarios built on them: trust learning from broken promises,
//! root-cause analysis over event traces, a learned legality boundary for
//! spoofing, per-agent confidence calibration, constrained drone assignment
//! and trust-weighted swarm consensus.

pub mod autodiff;
pub mod checks;
pub mod cli;
mod error;
pub mod fuzzy;
pub mod kripke;
pub mod metrics;
pub mod optim;
pub mod scenario;
pub mod selftest;
pub mod simgen;
pub mod table;

pub use error::{Error, Result};
