//! Test-driven multi-agent web application generation engine.

pub mod devagent;
pub mod eval;
pub mod gateway;
pub mod journal;
pub mod orchestrator;
pub mod prompts;
pub mod testgen;
pub mod testrunner;
pub mod workspace;

/// Scalar used for rates, percentages and scores.
pub type Real = f64;

/// Exact percentage, for arithmetic that must not round.
pub type ExactRate = num_rational::Ratio<u64>;

pub type EvalReport = eval::EvalReport<Real>;
pub type AlignmentReport = eval::AlignmentReport<Real>;
pub type CategoryTable = eval::CategoryTable<Real>;
