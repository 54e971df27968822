//! Command-line front end: configuration, simulation study, data analysis
//! and scaling reports.

pub mod analyze;
pub mod config;
pub mod error;
pub mod format;
pub mod models;
pub mod scale;
pub mod simulate;
