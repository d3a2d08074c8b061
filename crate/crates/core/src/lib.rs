//! Deterministic benchmark engine for trading agents.
//!
//! Every run walks the same per-step lifecycle: observe a bar snapshot, plan
//! (analyst decision plus optional feedback block), pass the intent through
//! the risk gate, convert approved weights to orders, simulate fills, mark the
//! portfolio, reflect, and append one record to an append-only trajectory.
//! Metrics and representation diagnostics are recomputed from those records
//! alone, so any result can be replayed from the logs.

pub mod agents;
pub mod dataio;
pub mod execsim;
pub mod halluprobe;
pub mod metrics;
pub mod orchestrator;
pub mod report;
pub mod reprdiag;
pub mod riskgate;
pub mod rng;
pub mod stats;
pub mod synthmarket;
pub mod text;
pub mod trajectory;

#[cfg(feature = "cli")]
pub mod cli;

pub use agents::{DecisionRecord, FeedbackCondition, RiskMemory};
pub use execsim::{ExecConfig, ExecMode, ExecutionOutcome};
pub use metrics::MetricsBundle;
pub use riskgate::{RiskPolicy, RiskReport};
pub use synthmarket::{Bar, MarketPanel, RegimeSpec};
pub use trajectory::{PortfolioState, TrajectoryStep};
