//! Independent reference implementations and fixtures for the test suites.
//!
//! The oracles favour obviousness over speed: loops follow the textbook
//! definitions directly and share no code with the library kernels.

pub mod fixtures;
pub mod kernels;
pub mod metrics;
pub mod search;
