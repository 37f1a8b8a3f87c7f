//! Checks shared by the integration tests and the acceptance suite. Each
//! function panics with a description of the first violation.
#![allow(dead_code)]

pub mod corpus;
pub mod equivalences;
pub mod gradients;
pub mod metrics;
pub mod scst;
