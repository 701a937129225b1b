//! Experiment harness: configuration, policy archives and case runners.

pub mod archive;
pub mod config;
pub mod io;
pub mod run;

pub use archive::{export_grid, import_grid, PolicyArchive};
pub use config::{Case, ExperimentConfig};
pub use run::{calibrate, compare_case, eval_case, train_case, Controller};
