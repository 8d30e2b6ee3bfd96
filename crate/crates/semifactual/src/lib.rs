//! File formats, experiment harness, reports and oracle self-tests for
//! semifactual explanations of RL policies. The algorithms live in
//! [`semifactual_core`], re-exported here as [`core`].

pub use semifactual_core as core;

pub mod harness;
pub mod io;
pub mod report;
pub mod selftest;
