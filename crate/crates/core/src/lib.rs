//! Learning slow variables of multiscale stochastic systems.
//!
//! The pipeline simulates an observed SDE, builds a dataset of states paired
//! with their projections onto the slow manifold, and trains an
//! encoder-decoder network whose bottleneck ends up approximating the slow
//! map. Trained encoders are scored by how orthogonal their gradients are to
//! the local fast directions, and magnitude pruning exposes which input
//! coordinates the slow map actually depends on.

pub mod error;
pub mod linalg;
pub mod rng;
pub mod sde;
pub mod systems;
pub mod dataset;
pub mod net;
pub mod prune;
pub mod metrics;

pub use error::{Error, ErrorClass, Result};
pub use linalg::{frobenius_norm, matmul, sym_eig, EigenDecomposition, Matrix};
pub use rng::{Purpose, SeedSpec};
pub use sde::{simulate_bursts, simulate_path, SdeSystem, Trajectory};
pub use systems::{make_halfmoons, make_quad, make_sin2d, pushforward_covariance, ObservedPair, SystemSpec};
pub use net::{train, Architecture, Checkpoint, Network, TrainConfig};
pub use prune::{sparsity_report, PruneConfig, PruneSchedule, SparsityReport};
pub use metrics::{affine_fit, error_stats, orthogonality_error, AffineFit, ErrorStats, OrthoError};
