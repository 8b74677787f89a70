//! Simulation-guided synthesis of barrier certificates for hybrid systems.
//!
//! The pipeline: simulate the system ([`sim`]), fit a maximum-margin
//! certificate candidate to the simulation segments ([`chebyshev`]), search
//! for points where the candidate breaks ([`falsify`]), refine and repeat
//! ([`engine`]), and optionally prove the result with interval
//! branch-and-bound ([`verify`]).
#![allow(
    clippy::should_implement_trait,
    clippy::redundant_guards,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod expr;
pub mod model;
pub mod sim;
pub mod chebyshev;
pub mod falsify;
pub mod verify;
pub mod engine;
pub mod document;
pub mod corpus;
