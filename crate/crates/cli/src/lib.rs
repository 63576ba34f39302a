//! Configuration and experiment plumbing behind the `splitfed` binary,
//! exposed as a library so integration tests can drive experiments
//! in-process.

pub mod config;
pub mod experiment;
