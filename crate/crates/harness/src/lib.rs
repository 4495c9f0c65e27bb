//! Experiment orchestration for steering the toy music transformer: layer
//! scans, coefficient and prompt-count sweeps, held-out evaluation, CSV
//! tables, SVG plots and the `steerlab` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod report;
pub mod runner;
pub mod stats;
pub mod svg;

pub use config::Config;
pub use error::{HarnessError, Result};
pub use experiments::Pipeline;
