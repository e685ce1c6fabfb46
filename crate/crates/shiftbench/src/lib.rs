//! Tools for studying learning under dataset shift: magnitude-controlled
//! shift samplers, density-ratio weight estimation, weighted risk
//! minimization, importance-weighted set matching, catalog record ingestion,
//! and a reproducible benchmark harness on top of them.

pub mod bench;
pub mod core;
pub mod data;
pub mod error;
pub mod learn;
pub mod matching;
pub mod metrics;
pub mod samplers;
pub mod seeding;
pub mod weights;

pub use error::{Result, ShiftError};
