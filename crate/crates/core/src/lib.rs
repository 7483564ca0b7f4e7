//! Critical packet-arrival probability for Kalman filtering over a
//! memoryless erasure channel.
//!
//! * [`system`]: linear system type, assumption checks, JSON spec files.
//! * [`spectral`]: diagonal standard form and equi-block degeneracy.
//! * [`critical`]: closed-form critical values and bounds.
//! * [`filter`]: Riccati recursion, intermittent Kalman filter and the
//!   maximum-likelihood covariance used to cross-check it.
//! * [`harness`]: seeded Monte Carlo divergence estimates and sweeps.
//! * [`report`]: JSON and CSV output.

pub mod critical;
pub mod error;
pub mod filter;
pub mod harness;
mod linalg;
pub mod report;
pub mod spectral;
pub mod system;

pub use critical::{critical_value, AnalysisOptions, CriticalValueResult};
pub use error::{Error, Result};
pub use harness::{empirical_pc, estimate, SimulationSummary, SweepResult, TrialConfig, Verdict};
pub use linalg::CMatrix;
pub use system::{load_system, parse_system, validate, LinearSystem, ValidationReport};
