//! Streaming agents and the experiment protocol.
//!
//! The LC agent pairs a linear known-class head and an OOD detector with a
//! pluggable discovered-class learner; the FEVM agent uses one EVM for known
//! and discovered classes alike.

mod agent;
mod experiment;

pub use agent::{Agent, AgentConfig, AgentCore, LearnerChoice, Mode, StepOutcome};
pub use experiment::{
    method_name, run_experiment, run_seed, run_stream, BatchReport, ExperimentConfig, ExperimentReport, RunReport,
    WindowReport, DEFAULT_WINDOW,
};
