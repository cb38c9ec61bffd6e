//! Config-driven benchmark pipeline: dataset bundles, tuning, DPS runs,
//! evaluation, reports and the chain diagnostics.

pub mod config;
pub mod dataset;
pub mod external;
pub mod pipeline;
pub mod report;
