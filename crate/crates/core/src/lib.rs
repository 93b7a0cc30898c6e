//! Simulator for distance-based asynchronous recovery of mobile hosts.
//!
//! Mobile hosts roam a hexagonal grid of cells, one support station per
//! cell. Stations log every message before delivering it, hosts checkpoint
//! independently, and a handoff moves the checkpoint and log only when the
//! host has drifted at least K hops from its checkpoint. A failed host rolls
//! back on its own and replays its log.
//!
//! * [`topology`]: the cell grid and station distance table.
//! * [`protocol`]: logging, checkpointing, handoff, disconnect/reconnect and
//!   recovery as state transitions on host and station records.
//! * [`sim`]: the seeded discrete-event driver with fault injection.
//! * [`metrics`]: transfer and recovery cost accounting.
//! * [`cli`]: scenario files, sweeps and CSV/JSON output.

pub mod cli;
pub mod metrics;
pub mod protocol;
pub mod sim;
pub mod topology;
