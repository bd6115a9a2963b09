//! Monte Carlo estimators and tests with pre-registered tolerances.

pub mod field;
pub mod fits;
pub mod hazard;
pub mod kurtz;
pub mod report;
pub mod summary;
pub mod walk;

pub use report::{StatReport, Verdict};
