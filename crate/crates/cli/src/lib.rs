//! Config-driven experiment pipeline: simulate, build datasets, train,
//! evaluate and summarize, with every output reproducible from the config
//! and its seed.

pub mod config;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use pipeline::{cmd_dataset, cmd_eval, cmd_report, cmd_simulate, cmd_train, EvalOptions, Run};

use slowmap::ErrorClass;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

/// Process exit code for an error, from the first library error in its chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<slowmap::Error>() {
            return match e.class() {
                ErrorClass::Config => EXIT_CONFIG,
                ErrorClass::Numerical => EXIT_NUMERICAL,
                ErrorClass::Degenerate => EXIT_DEGENERATE,
                ErrorClass::Other => EXIT_FAILURE,
            };
        }
    }
    EXIT_FAILURE
}
