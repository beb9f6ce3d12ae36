//! Cost-aware active learning for Gaussian processes with weak annotations.
//!
//! The library trains GP models on annotations of selectable precision
//! (noisy regression targets, flip-noised binary labels), scores candidate
//! annotations by mutual information per unit cost, and runs seeded
//! budget-constrained acquisition experiments that emit plot-ready CSV.

pub mod acquisition;
pub mod active_loop;
pub mod classification;
pub mod experiment;
pub mod kernel;
pub mod math;
pub mod oracles;
pub mod regression;
