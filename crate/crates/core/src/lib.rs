#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod metrics;
pub mod modulation;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
