//! Transfer and recovery cost accounting.
//!
//! Every cost is a hop-weighted sum. A handoff moves the trace record over
//! the old-to-new hop distance. A consolidating handoff also moves the latest
//! checkpoint from `cp_loc` and each post-checkpoint log entry from the
//! station that held it. Recovery mirrors this: the checkpoint is fetched
//! from `cp_loc` and each log-set member is contacted for its entries.

use serde::Serialize;

use crate::protocol::{HostId, Threshold};
use crate::topology::MssId;

/// Per-item weights for the cost model.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostWeights {
    pub trace: u64,
    pub checkpoint: u64,
    pub entry: u64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            trace: 1,
            checkpoint: 50,
            entry: 5,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    TraceOnly,
    Consolidating,
}

/// What one handoff moved between stations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TransferReport {
    pub host: HostId,
    pub time: u64,
    pub from: MssId,
    pub to: MssId,
    pub kind: TransferKind,
    /// Distance from the new station to the checkpoint location, the value
    /// compared against K.
    pub hop_distance: u32,
    /// Distance the trace record travelled (old to new station).
    pub trace_hops: u32,
    pub checkpoint_units: u32,
    pub checkpoint_hops: u32,
    pub log_entries_moved: u64,
    /// Sum over moved entries of the hop distance each one travelled.
    pub log_entry_hops: u64,
    /// Sequence numbers of the moved entries, ascending.
    pub moved_seqs: Vec<u64>,
}

impl TransferReport {
    pub fn cost(&self, w: &CostWeights) -> u64 {
        w.trace * u64::from(self.trace_hops)
            + w.checkpoint * u64::from(self.checkpoint_units) * u64::from(self.checkpoint_hops)
            + w.entry * self.log_entry_hops
    }
}

/// What one recovery fetched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RecoveryReport {
    pub host: HostId,
    pub fail_time: u64,
    pub recover_time: u64,
    pub at: MssId,
    pub checkpoint_seq: u64,
    pub checkpoint_rec_seq: u64,
    pub restored_rec_seq: u64,
    pub checkpoint_fetch_hops: u32,
    pub log_fetch_hops_total: u64,
    /// Sum over replayed entries of the hop distance each one travelled.
    pub log_entry_hops: u64,
    pub entries_replayed: u64,
}

impl RecoveryReport {
    pub fn cost(&self, w: &CostWeights) -> u64 {
        w.checkpoint * u64::from(self.checkpoint_fetch_hops)
            + w.trace * self.log_fetch_hops_total
            + w.entry * self.log_entry_hops
    }

    /// First and last replayed sequence number, if any entry was replayed.
    pub fn replayed_range(&self) -> Option<(u64, u64)> {
        (self.entries_replayed > 0).then(|| (self.checkpoint_rec_seq + 1, self.restored_rec_seq))
    }
}

/// Identifies one run in a report row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RunLabel {
    pub k: Threshold,
    pub seed: u64,
    pub ticks: u64,
    pub hosts: u32,
    pub grid_radius: u32,
}

/// Running totals for one simulation run.
#[derive(Clone, Debug)]
pub struct Metrics {
    label: RunLabel,
    weights: CostWeights,
    handoffs_total: u64,
    handoffs_consolidating: u64,
    transfer_cost: u64,
    recoveries: u64,
    recovery_cost_total: u64,
    recovery_entries_replayed: u64,
    logset_sum: u64,
    logset_samples: u64,
    logset_max: u64,
    storage_max: Vec<u64>,
    checkpoints_taken: u64,
    messages_delivered: u64,
    transfers: Vec<TransferReport>,
    recovery_reports: Vec<RecoveryReport>,
}

impl Metrics {
    pub fn new(label: RunLabel, weights: CostWeights, stations: usize) -> Self {
        Metrics {
            label,
            weights,
            handoffs_total: 0,
            handoffs_consolidating: 0,
            transfer_cost: 0,
            recoveries: 0,
            recovery_cost_total: 0,
            recovery_entries_replayed: 0,
            logset_sum: 0,
            logset_samples: 0,
            logset_max: 0,
            storage_max: vec![0; stations],
            checkpoints_taken: 0,
            messages_delivered: 0,
            transfers: Vec::new(),
            recovery_reports: Vec::new(),
        }
    }

    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }

    pub fn record_transfer(&mut self, report: TransferReport) {
        self.handoffs_total += 1;
        if report.kind == TransferKind::Consolidating {
            self.handoffs_consolidating += 1;
        }
        self.transfer_cost += report.cost(&self.weights);
        self.transfers.push(report);
    }

    pub fn record_recovery(&mut self, report: RecoveryReport) {
        self.recoveries += 1;
        self.recovery_cost_total += report.cost(&self.weights);
        self.recovery_entries_replayed += report.entries_replayed;
        self.recovery_reports.push(report);
    }

    pub fn record_checkpoint(&mut self) {
        self.checkpoints_taken += 1;
    }

    pub fn record_delivery(&mut self) {
        self.messages_delivered += 1;
    }

    pub fn record_logset_size(&mut self, size: usize) {
        let size = size as u64;
        self.logset_sum += size;
        self.logset_samples += 1;
        self.logset_max = self.logset_max.max(size);
    }

    pub fn record_storage(&mut self, mss: MssId, units: u64) {
        let slot = &mut self.storage_max[mss.index()];
        *slot = (*slot).max(units);
    }

    pub fn transfers(&self) -> &[TransferReport] {
        &self.transfers
    }

    pub fn recoveries(&self) -> &[RecoveryReport] {
        &self.recovery_reports
    }

    pub fn finalize(&self) -> MetricsReport {
        let logset_size_mean = if self.logset_samples == 0 {
            0.0
        } else {
            self.logset_sum as f64 / self.logset_samples as f64
        };
        MetricsReport {
            k: self.label.k,
            seed: self.label.seed,
            ticks: self.label.ticks,
            hosts: self.label.hosts,
            grid_radius: self.label.grid_radius,
            handoffs_total: self.handoffs_total,
            handoffs_consolidating: self.handoffs_consolidating,
            transfer_cost: self.transfer_cost,
            recoveries: self.recoveries,
            recovery_cost_total: self.recovery_cost_total,
            recovery_entries_replayed: self.recovery_entries_replayed,
            logset_size_mean,
            logset_size_max: self.logset_max,
            storage_units_max: self.storage_max.iter().copied().max().unwrap_or(0),
            storage_units_per_mss: self.storage_max.clone(),
            checkpoints_taken: self.checkpoints_taken,
            messages_delivered: self.messages_delivered,
            weights: self.weights,
        }
    }
}

/// Aggregates of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub k: Threshold,
    pub seed: u64,
    pub ticks: u64,
    pub hosts: u32,
    pub grid_radius: u32,
    pub handoffs_total: u64,
    pub handoffs_consolidating: u64,
    pub transfer_cost: u64,
    pub recoveries: u64,
    pub recovery_cost_total: u64,
    pub recovery_entries_replayed: u64,
    pub logset_size_mean: f64,
    pub logset_size_max: u64,
    pub storage_units_max: u64,
    pub storage_units_per_mss: Vec<u64>,
    pub checkpoints_taken: u64,
    pub messages_delivered: u64,
    pub weights: CostWeights,
}

/// CSV column order.
pub const CSV_COLUMNS: [&str; 14] = [
    "k",
    "seed",
    "ticks",
    "hosts",
    "grid_radius",
    "handoffs_total",
    "handoffs_consolidating",
    "transfer_cost",
    "recoveries",
    "recovery_cost_total",
    "recovery_entries_replayed",
    "logset_size_mean",
    "logset_size_max",
    "storage_units_max",
];

impl MetricsReport {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.k.to_string(),
            self.seed.to_string(),
            self.ticks.to_string(),
            self.hosts.to_string(),
            self.grid_radius.to_string(),
            self.handoffs_total.to_string(),
            self.handoffs_consolidating.to_string(),
            self.transfer_cost.to_string(),
            self.recoveries.to_string(),
            self.recovery_cost_total.to_string(),
            self.recovery_entries_replayed.to_string(),
            format!("{:.4}", self.logset_size_mean),
            self.logset_size_max.to_string(),
            self.storage_units_max.to_string(),
        ]
    }
}
