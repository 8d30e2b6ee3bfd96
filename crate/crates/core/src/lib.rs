//! Semifactual ("even if") explanations for reinforcement-learning policies.
//!
//! The crate searches over short action sequences with a constrained NSGA-II
//! for alternative states in which a black-box policy still picks the same
//! action. Two search directions are provided: forward from the explained
//! state ([`generators::advance_explain`]) and backward from `k` steps
//! earlier in the recorded trajectory ([`generators::rewind_explain`]).
//! Candidates are ranked on temporal distance, stochastic uncertainty,
//! fidelity and exceptionality, all minimized, with validity as a hard
//! constraint.
//!
//! Everything here is `no_std` + `alloc` and fully determined by explicit
//! seeds. File formats, the experiment harness and the CLI live in the
//! `semifactual` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod envs;
pub mod error;
pub mod generators;
pub mod optimizer;
pub mod policy;
pub mod properties;
pub mod seeding;

pub use error::{Error, Result};
