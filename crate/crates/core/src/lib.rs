//! Adversarial process construction against stopping-time sequence predictors.
//!
//! Given any estimator and stopping rule, [`forge`] builds a stationary
//! ergodic binary process, one level at a time, on which the estimator's
//! prediction at the stopping times is off by at least 1/4 on an event of
//! probability at least 1/16 per level. The process is a coding of a
//! countable-state renewal chain ([`chain`]); exact conditional
//! probabilities come from [`oracle`].

pub mod chain;
pub mod coding;
pub mod oracle;
pub mod rng;
pub mod forge;
pub mod harness;
pub mod predictors;
pub mod report;
pub mod stats;
