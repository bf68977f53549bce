//! Experiment harness for `fairgame`: JSON configs, the synthetic convergence,
//! fair-share and valuation drivers, and their CSV/SVG/manifest outputs.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{default_synthetic, load_config, parse_config, ExperimentConfig, ExperimentKind};
pub use error::{CliError, Result};
pub use experiments::run_experiment;
