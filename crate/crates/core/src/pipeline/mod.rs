//! End-to-end runs: partition, train, embed, assign, evaluate, with every
//! artifact written to one output directory.

pub mod config;
mod pca;
pub mod run;
pub mod sweep;

pub use config::{RunConfig, StageSeeds};
pub use pca::pca_2d;
pub use run::{assign_classes, assignment_space, evaluate, execute, load_inputs, run_pipeline, write_artifacts, RunOutcome};
pub use sweep::{run_sweep, SweepAxis, SweepRun, SweepTable};
