//! Incremental Gauss-Newton with information-guided gating and selective
//! partial optimization, plus the batch and gating-only baselines.
//!
//! [`SolverState::increment`] adds new edges to the factor, decides between a
//! global and a local pass from the detrended log-determinant gain, then
//! iterates Gauss-Newton over an active set that is pruned to moving
//! variables and expanded one hop per iteration.

mod active;
mod batch;
mod config;
mod gating;
mod run;
mod state;

pub use active::{edges_touching, expand_active_set, prune_active_set};
pub use batch::{batch_solve, BatchResult};
pub use config::{dataset_thresholds, Detrend, GateFallback, Gating, PoseInit, ReorderPolicy, SolverConfig, Variant};
pub use gating::{delta_eta, gate_igg, gate_lcg};
pub use run::{composed_initial, reference_solution, run_variant, stream_graph, stream_nchi2, warm_reference, RunResult, RunSummary};
pub use state::{initialize_pose, IncrementRecord, SolverState, DESCENT_SLACK};
