//! Experiment runner for the `pdafpf` filters: named scenarios, seeded
//! Monte-Carlo campaigns, CSV/JSON output and self-checks.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod presets;
pub mod runner;
pub mod verify;

pub use error::{CliError, Result};
pub use experiment::{run_experiment, SummaryTable};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/output-files.md")]
    mod output_files {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
