//! Contention-aware transaction ordering for a permissioned ledger.
//!
//! The crate models an order-execute-validate pipeline in virtual time:
//! SmallBank transactions are screened by a dependency manager, ordered by
//! one of five schemes, executed on parallel workers with version-based
//! validation, and sealed into hash-linked blocks. Attack generators and
//! defense evaluators sit on top.

pub mod attack;
pub mod block;
pub mod config;
pub mod depman;
pub mod digest;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod ledger;
pub mod report;
pub mod rng;
pub mod sched;
pub mod workload;

pub use block::{cut_block, Block};
pub use depman::{build_conflict_graph, classify_tx, conflicts, ConflictGraph, DependencyManager, Validity};
pub use engine::{replay_serial, run_simulation, EngineConfig, MetricsReport, SimOutput};
pub use error::{Error, Result};
pub use ledger::{
    apply_tx, extract_rw_sets, occ_validate, snapshot_versions, LedgerState, Operation, Origin, Scenario, Transaction,
    TxId, TxStatus, WalletId,
};
pub use sched::{Schedule, Scheme};
pub use workload::{contention_index, generate_workload, Mix, TxStream, WorkloadConfig};
