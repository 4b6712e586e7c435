//! Multiclass packet scheduling for heterogeneous M2M uplink traffic.
//!
//! Periodic-update (PU) classes carry firm deadlines and a step utility;
//! event-driven (ED) classes arrive as Poisson streams with a sigmoid
//! latency utility. The crate provides a discrete-event simulator of the
//! single-server application queue, a threshold-based scheduler that
//! maximizes a proportionally-fair system utility, FCFS/EDD/fixed-priority
//! baselines, a threshold grid search, and an experiment runner.

pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod optimizer;
pub mod scenario;
pub mod schedulers;
pub mod traffic;
pub mod utility;

pub use config::{validate_config, ClassKind, ClassRef, EdClassSpec, PuClassSpec, SimConfig, TimeMs, Violation};
pub use engine::{run, run_logged, run_observed, Disposition, Epoch, Packet, SimState};
pub use error::{Error, Result};
pub use metrics::{ClassStats, RunSummary};
pub use scenario::Scenario;
pub use schedulers::{PolicyDecision, PolicyKind, SchedulerPolicy};
pub use traffic::{generate_traces, Traces};
