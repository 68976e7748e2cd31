//! Desk-scale dememorization lab.
//!
//! Generates unlearnability perturbations, trains small classifiers, runs
//! exact, approximate and certified unlearning, attacks the result with
//! weight-space recovery, and certifies dememorization depth by Monte Carlo.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod availability;
pub mod certifier;
pub mod data;
pub mod error;
pub mod evalmetrics;
pub mod exec;
pub mod model;
pub mod numcore;
pub mod pipeline;
pub mod trainer;
pub mod unlearner;

pub use error::{Error, Result};
pub use exec::Exec;
