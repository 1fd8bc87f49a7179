//! Training loop machinery: optimizer, per-step schedule, corpus synthesis,
//! checkpointing, and metrics logging.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod metrics;
pub mod optim;
pub mod run;
pub mod step;
