//! Simulator and analysis toolkit for CHSH Bell-inequality experiments.
//!
//! The crate runs quantum and local-hidden-variable (LHV) pair sources
//! through active- and passive-switch station models, records per-station
//! event logs, pairs them offline into coincidences, and estimates the
//! CHSH quantity S. A separate optimizer computes the maximum S an LHV
//! model can fake at a given detection efficiency and locates the
//! critical efficiency 2/(1+sqrt(2)) where the LHV maximum meets the
//! quantum value 2*sqrt(2).
//!
//! Module map:
//! - [`core`]: angles, settings, outcomes, RNG streams, CHSH arithmetic
//! - [`sources`]: quantum reference sampler and the LHV source family
//! - [`apparatus`]: switch/detector station models and event-log generation
//! - [`analysis`]: coincidence pairing, correlation/CHSH estimation
//! - [`lhvopt`]: strategy enumeration and the efficiency-constrained optimum
//! - [`harness`]: CLI configuration, scenario orchestration, reports

pub mod analysis;
pub mod apparatus;
pub mod core;
pub mod harness;
pub mod lhvopt;
pub mod sources;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
