//! Experiment runner for `kinlab`: TOML configs, bundled presets, task runners and the
//! hypothesis checklist behind the `kinlab` binary.

pub mod config;
pub mod hypotheses;
pub mod presets;
pub mod run;

pub use config::{ExperimentConfig, Task};
pub use presets::{preset, PRESETS};
pub use run::{run, RunSummary};

/// Process exit code for an error.
pub fn exit_code(e: &kinlab::Error) -> i32 {
    match e {
        kinlab::Error::Invalid(_) | kinlab::Error::GridMismatch(_) => 2,
        kinlab::Error::Numerical(_) => 3,
        kinlab::Error::Capacity(_) => 4,
        kinlab::Error::Io(_) => 5,
    }
}
