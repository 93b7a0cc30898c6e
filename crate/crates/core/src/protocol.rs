//! Checkpointing, receiver-side message logging, distance-threshold handoff
//! and independent recovery of mobile hosts.
//!
//! Stations are passed around as a slice indexed by [`MssId`]. Operations
//! that touch more than one station (handoff, reconnect in a new cell,
//! recovery) take the whole slice and read from whichever stations the
//! trace record points at.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::ops::Bound;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::metrics::{RecoveryReport, TransferKind, TransferReport};
use crate::topology::{CellCoord, DistanceTable, MssId};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct HostId(pub u32);

impl HostId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

/// Distance threshold K. `Infinite` never consolidates.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Threshold {
    Finite(u32),
    Infinite,
}

impl Threshold {
    /// Whether a handoff at distance `d` from the checkpoint consolidates.
    pub fn triggers(self, d: u32) -> bool {
        match self {
            Threshold::Finite(k) => d >= k,
            Threshold::Infinite => false,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Finite(k) => write!(f, "{k}"),
            Threshold::Infinite => f.write_str("INF"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid threshold {0:?}: expected a non-negative integer or INF")]
pub struct ThresholdParseError(pub String);

impl FromStr for Threshold {
    type Err = ThresholdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") {
            return Ok(Threshold::Infinite);
        }
        s.parse::<u32>()
            .map(Threshold::Finite)
            .map_err(|_| ThresholdParseError(s.to_string()))
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Application state of a piecewise-deterministic host: an order-sensitive
/// digest over every payload delivered so far.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct AppState {
    pub count: u64,
    pub digest: u64,
}

impl Default for AppState {
    fn default() -> Self {
        AppState {
            count: 0,
            digest: FNV_OFFSET,
        }
    }
}

impl AppState {
    /// Folds one delivered payload into the state (FNV-1a over the previous
    /// digest position, the payload length and the payload bytes).
    pub fn apply(&mut self, payload: &[u8]) {
        let mut h = self.digest;
        let header = self
            .count
            .to_le_bytes()
            .into_iter()
            .chain((payload.len() as u64).to_le_bytes());
        for b in header.chain(payload.iter().copied()) {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.digest = h;
        self.count += 1;
    }

    pub fn fold<'a, I>(payloads: I) -> Self
    where
        I: IntoIterator<Item = &'a [u8]>,
    {
        let mut state = AppState::default();
        for p in payloads {
            state.apply(p);
        }
        state
    }
}

impl fmt::Display for AppState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}:{:016x}", self.count, self.digest)
    }
}

/// Where a host is attached.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Connection {
    Connected(MssId),
    Disconnected(MssId),
    Failed(MssId),
}

impl Connection {
    /// The station currently holding the host's trace record.
    pub fn mss(self) -> MssId {
        match self {
            Connection::Connected(m) | Connection::Disconnected(m) | Connection::Failed(m) => m,
        }
    }

    fn describe(self) -> &'static str {
        match self {
            Connection::Connected(_) => "connected",
            Connection::Disconnected(_) => "disconnected",
            Connection::Failed(_) => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HostState {
    pub id: HostId,
    pub chknum: u64,
    pub rec_seq: u64,
    pub app_state: AppState,
    pub connection: Connection,
    pub cell: CellCoord,
}

impl HostState {
    pub fn is_connected(&self) -> bool {
        matches!(self.connection, Connection::Connected(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub cp_seq: u64,
    pub cp_loc: MssId,
    pub log_set: BTreeSet<MssId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Checkpoint {
    pub host: HostId,
    pub cp_seq: u64,
    pub rec_seq: u64,
    pub app_state: AppState,
}

/// An application message on its way to `dest`. `stamp` is the per-channel
/// send order, used to assert FIFO delivery.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AppMessage {
    pub sender: HostId,
    pub stamp: u64,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub host: HostId,
    pub seq: u64,
    pub sender: HostId,
    pub stamp: u64,
    pub payload: Vec<u8>,
}

/// A stored log entry. Superseded entries were copied elsewhere by a
/// consolidating handoff and are kept only for audit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LogRecord {
    pub entry: LogEntry,
    pub superseded: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum ControlMessage {
    Leave { r: u64 },
    Join { host: HostId, prev: MssId },
    Disconnect { r: u64 },
    Reconnect { host: HostId, prev: MssId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MobilityRecord {
    pub host: HostId,
    pub msg: ControlMessage,
    pub rec_seq: u64,
}

/// Stable storage and bookkeeping of one mobile support station.
#[derive(Clone, Debug, Serialize)]
pub struct MssState {
    pub id: MssId,
    pub cell: CellCoord,
    pub active_hosts: BTreeSet<HostId>,
    /// Disconnected hosts with the `r` they reported.
    pub disconnected_hosts: BTreeMap<HostId, u64>,
    pub app_log: BTreeMap<HostId, BTreeMap<u64, LogRecord>>,
    pub mobility_log: Vec<MobilityRecord>,
    pub checkpoints: BTreeMap<HostId, Vec<Checkpoint>>,
    pub traces: BTreeMap<HostId, TraceRecord>,
    pub num_msg: BTreeMap<HostId, u64>,
    /// Messages held for disconnected or failed hosts; not yet sequenced.
    pub pending: BTreeMap<HostId, VecDeque<AppMessage>>,
}

impl MssState {
    pub fn new(id: MssId, cell: CellCoord) -> Self {
        MssState {
            id,
            cell,
            active_hosts: BTreeSet::new(),
            disconnected_hosts: BTreeMap::new(),
            app_log: BTreeMap::new(),
            mobility_log: Vec::new(),
            checkpoints: BTreeMap::new(),
            traces: BTreeMap::new(),
            num_msg: BTreeMap::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn checkpoint(&self, host: HostId, cp_seq: u64) -> Option<&Checkpoint> {
        self.checkpoints
            .get(&host)?
            .iter()
            .rev()
            .find(|c| c.cp_seq == cp_seq)
    }

    /// Live log entries for `host` with `seq` in the given range.
    pub fn live_entries(
        &self,
        host: HostId,
        seqs: impl std::ops::RangeBounds<u64>,
    ) -> impl Iterator<Item = &LogEntry> {
        self.app_log
            .get(&host)
            .map(|log| log.range(seqs))
            .into_iter()
            .flatten()
            .filter(|(_, rec)| !rec.superseded)
            .map(|(_, rec)| &rec.entry)
    }

    /// Stored checkpoints plus stored log records (live and superseded).
    pub fn storage_units(&self) -> u64 {
        let ckpts: usize = self.checkpoints.values().map(Vec::len).sum();
        let logs: usize = self.app_log.values().map(BTreeMap::len).sum();
        (ckpts + logs) as u64
    }

    pub fn pending_len(&self) -> usize {
        self.pending.values().map(VecDeque::len).sum()
    }

    fn store_checkpoint(&mut self, ckpt: Checkpoint) {
        let list = self.checkpoints.entry(ckpt.host).or_default();
        if !list.iter().any(|c| c.cp_seq == ckpt.cp_seq) {
            list.push(ckpt);
        }
    }

    fn store_entry(&mut self, entry: LogEntry) {
        self.app_log.entry(entry.host).or_default().insert(
            entry.seq,
            LogRecord {
                entry,
                superseded: false,
            },
        );
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("{host} cannot receive at {mss}")]
    DestinationUnavailable { host: HostId, mss: MssId },
    #[error("{host} is {state}")]
    HostUnavailable { host: HostId, state: &'static str },
    #[error("{host} is not attached to {mss}")]
    WrongStation { host: HostId, mss: MssId },
    #[error("{host} cannot hand off from {mss} to itself")]
    SameStation { host: HostId, mss: MssId },
    #[error("{mss} holds no trace record for {host}")]
    UnknownTrace { host: HostId, mss: MssId },
    #[error("checkpoint {cp_seq} of {host} missing at {mss}")]
    MissingCheckpoint {
        host: HostId,
        cp_seq: u64,
        mss: MssId,
    },
    #[error("log entry {seq} of {host} is not reachable")]
    MissingLogEntry { host: HostId, seq: u64 },
    #[error("log of {host} has a gap: expected seq {expected}, found {found}")]
    LogGap {
        host: HostId,
        expected: u64,
        found: u64,
    },
    #[error("log entry {seq} of {host} is live at more than one place")]
    DuplicateEntry { host: HostId, seq: u64 },
    #[error("{host} has rec_seq {host_count} but {mss} counted {mss_count}")]
    CounterMismatch {
        host: HostId,
        mss: MssId,
        host_count: u64,
        mss_count: u64,
    },
    #[error("{host} was not disconnected")]
    NotDisconnected { host: HostId },
    #[error("{host} has not failed")]
    NotFailed { host: HostId },
    #[error("trace of {host} held by {count} stations")]
    TraceCount { host: HostId, count: usize },
    #[error("{host} is both active and disconnected at {mss}")]
    MembershipOverlap { host: HostId, mss: MssId },
}

/// Sequence numbers in `(floor, upto]`.
fn after(floor: u64, upto: u64) -> (Bound<u64>, Bound<u64>) {
    (Bound::Excluded(floor), Bound::Included(upto.max(floor)))
}

fn connected_at(host: &HostState, mss: MssId) -> Result<(), ProtocolError> {
    match host.connection {
        Connection::Connected(m) if m == mss => Ok(()),
        Connection::Connected(_) => Err(ProtocolError::WrongStation { host: host.id, mss }),
        other => Err(ProtocolError::HostUnavailable {
            host: host.id,
            state: other.describe(),
        }),
    }
}

/// Creates a host at its birth station with the implicit checkpoint 0.
pub fn register_host(id: HostId, mss: &mut MssState) -> HostState {
    let initial = Checkpoint {
        host: id,
        cp_seq: 0,
        rec_seq: 0,
        app_state: AppState::default(),
    };
    mss.store_checkpoint(initial);
    mss.traces.insert(
        id,
        TraceRecord {
            cp_seq: 0,
            cp_loc: mss.id,
            log_set: BTreeSet::new(),
        },
    );
    mss.num_msg.insert(id, 0);
    mss.active_hosts.insert(id);
    HostState {
        id,
        chknum: 0,
        rec_seq: 0,
        app_state: AppState::default(),
        connection: Connection::Connected(mss.id),
        cell: mss.cell,
    }
}

/// Logs `msg` at `mss`, then delivers it to `host`.
pub fn deliver_and_log(
    mss: &mut MssState,
    host: &mut HostState,
    msg: AppMessage,
) -> Result<LogEntry, ProtocolError> {
    if host.connection != Connection::Connected(mss.id) || !mss.active_hosts.contains(&host.id) {
        return Err(ProtocolError::DestinationUnavailable {
            host: host.id,
            mss: mss.id,
        });
    }
    let counted = mss.num_msg.get(&host.id).copied().unwrap_or(0);
    if counted != host.rec_seq {
        return Err(ProtocolError::CounterMismatch {
            host: host.id,
            mss: mss.id,
            host_count: host.rec_seq,
            mss_count: counted,
        });
    }
    let mss_id = mss.id;
    let trace = mss
        .traces
        .get_mut(&host.id)
        .ok_or(ProtocolError::UnknownTrace {
            host: host.id,
            mss: mss_id,
        })?;
    trace.log_set.insert(mss_id);

    let seq = counted + 1;
    mss.num_msg.insert(host.id, seq);
    let entry = LogEntry {
        host: host.id,
        seq,
        sender: msg.sender,
        stamp: msg.stamp,
        payload: msg.payload,
    };
    // logged before the host sees it
    mss.store_entry(entry.clone());

    host.rec_seq = seq;
    host.app_state.apply(&entry.payload);
    Ok(entry)
}

pub fn log_mobility(mss: &mut MssState, host: HostId, msg: ControlMessage, rec_seq: u64) {
    mss.mobility_log.push(MobilityRecord { host, msg, rec_seq });
}

pub fn take_checkpoint(
    host: &mut HostState,
    mss: &mut MssState,
) -> Result<Checkpoint, ProtocolError> {
    connected_at(host, mss.id)?;
    let mss_id = mss.id;
    let trace = mss
        .traces
        .get_mut(&host.id)
        .ok_or(ProtocolError::UnknownTrace {
            host: host.id,
            mss: mss_id,
        })?;
    host.chknum += 1;
    trace.cp_seq = host.chknum;
    trace.cp_loc = mss_id;
    trace.log_set.clear();

    let ckpt = Checkpoint {
        host: host.id,
        cp_seq: host.chknum,
        rec_seq: host.rec_seq,
        app_state: host.app_state,
    };
    mss.store_checkpoint(ckpt.clone());
    Ok(ckpt)
}

/// Moves `host` from its current station to `new`.
///
/// Logs `Leave(r)` at the old station and `Join` at the new one, moves the
/// trace record, and continues the delivery counter at the new station. If
/// the new station is at least `k` hops from the checkpoint location, the
/// latest checkpoint and every live post-checkpoint log entry are copied to
/// the new station and the trace is collapsed onto it.
pub fn handoff(
    host: &mut HostState,
    stations: &mut [MssState],
    new: MssId,
    k: Threshold,
    dt: &DistanceTable,
) -> Result<TransferReport, ProtocolError> {
    let old = match host.connection {
        Connection::Connected(m) => m,
        other => {
            return Err(ProtocolError::HostUnavailable {
                host: host.id,
                state: other.describe(),
            })
        }
    };
    if old == new {
        return Err(ProtocolError::SameStation {
            host: host.id,
            mss: old,
        });
    }
    let mut trace =
        stations[old.index()]
            .traces
            .remove(&host.id)
            .ok_or(ProtocolError::UnknownTrace {
                host: host.id,
                mss: old,
            })?;

    log_mobility(
        &mut stations[old.index()],
        host.id,
        ControlMessage::Leave { r: host.rec_seq },
        host.rec_seq,
    );
    log_mobility(
        &mut stations[new.index()],
        host.id,
        ControlMessage::Join {
            host: host.id,
            prev: old,
        },
        host.rec_seq,
    );
    stations[old.index()].active_hosts.remove(&host.id);
    stations[new.index()].active_hosts.insert(host.id);
    stations[new.index()].num_msg.insert(host.id, host.rec_seq);

    let distance = dt.get(new, trace.cp_loc);
    let mut report = TransferReport {
        host: host.id,
        time: 0,
        from: old,
        to: new,
        kind: TransferKind::TraceOnly,
        hop_distance: distance,
        trace_hops: dt.get(old, new),
        checkpoint_units: 0,
        checkpoint_hops: 0,
        log_entries_moved: 0,
        log_entry_hops: 0,
        moved_seqs: Vec::new(),
    };

    if k.triggers(distance) {
        let ckpt = stations[trace.cp_loc.index()]
            .checkpoint(host.id, trace.cp_seq)
            .cloned()
            .ok_or(ProtocolError::MissingCheckpoint {
                host: host.id,
                cp_seq: trace.cp_seq,
                mss: trace.cp_loc,
            })?;
        let floor = ckpt.rec_seq;
        if trace.cp_loc != new {
            report.checkpoint_units = 1;
            report.checkpoint_hops = distance;
            stations[new.index()].store_checkpoint(ckpt);
        }

        let mut moved = Vec::new();
        for &src in trace.log_set.iter().filter(|&&m| m != new) {
            let hops = u64::from(dt.get(src, new));
            if let Some(log) = stations[src.index()].app_log.get_mut(&host.id) {
                for (_, rec) in log.range_mut(floor + 1..) {
                    if rec.superseded {
                        continue;
                    }
                    rec.superseded = true;
                    report.log_entry_hops += hops;
                    moved.push(rec.entry.clone());
                }
            }
        }
        moved.sort_by_key(|e| e.seq);
        report.log_entries_moved = moved.len() as u64;
        report.moved_seqs = moved.iter().map(|e| e.seq).collect();
        let dest = &mut stations[new.index()];
        for entry in moved {
            dest.store_entry(entry);
        }
        let present = dest
            .live_entries(host.id, after(floor, host.rec_seq))
            .count() as u64;
        if present != host.rec_seq - floor {
            let mut expected = floor + 1;
            for e in dest.live_entries(host.id, after(floor, host.rec_seq)) {
                if e.seq != expected {
                    break;
                }
                expected += 1;
            }
            return Err(ProtocolError::MissingLogEntry {
                host: host.id,
                seq: expected,
            });
        }

        trace.cp_loc = new;
        trace.log_set = BTreeSet::from([new]);
        report.kind = TransferKind::Consolidating;
    }

    stations[new.index()].traces.insert(host.id, trace);
    host.connection = Connection::Connected(new);
    host.cell = stations[new.index()].cell;
    Ok(report)
}

pub fn disconnect(host: &mut HostState, mss: &mut MssState) -> Result<(), ProtocolError> {
    connected_at(host, mss.id)?;
    log_mobility(
        mss,
        host.id,
        ControlMessage::Disconnect { r: host.rec_seq },
        host.rec_seq,
    );
    mss.active_hosts.remove(&host.id);
    mss.disconnected_hosts.insert(host.id, host.rec_seq);
    host.connection = Connection::Disconnected(mss.id);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconnectOutcome {
    /// Held messages delivered at the previous station, in FIFO order.
    pub delivered: Vec<LogEntry>,
    /// Present when the host came back in a different cell.
    pub transfer: Option<TransferReport>,
}

/// Reattaches a disconnected host at its previous station, drains the
/// messages held there, and hands off to `at` if that is a different cell.
pub fn reconnect(
    host: &mut HostState,
    stations: &mut [MssState],
    at: MssId,
    k: Threshold,
    dt: &DistanceTable,
) -> Result<ReconnectOutcome, ProtocolError> {
    let prev = match host.connection {
        Connection::Disconnected(m) => m,
        _ => return Err(ProtocolError::NotDisconnected { host: host.id }),
    };
    let ps = &mut stations[prev.index()];
    log_mobility(
        ps,
        host.id,
        ControlMessage::Reconnect {
            host: host.id,
            prev,
        },
        host.rec_seq,
    );
    ps.disconnected_hosts.remove(&host.id);
    ps.active_hosts.insert(host.id);
    host.connection = Connection::Connected(prev);
    let delivered = drain_pending(host, ps)?;

    let transfer = if at != prev {
        Some(handoff(host, stations, at, k, dt)?)
    } else {
        None
    };
    Ok(ReconnectOutcome {
        delivered,
        transfer,
    })
}

fn drain_pending(host: &mut HostState, mss: &mut MssState) -> Result<Vec<LogEntry>, ProtocolError> {
    let queued = mss.pending.remove(&host.id).unwrap_or_default();
    queued
        .into_iter()
        .map(|msg| deliver_and_log(mss, host, msg))
        .collect()
}

/// Crashes a connected host. Its volatile state is lost; the checkpoint
/// counter survives. Failing an already failed host does nothing.
pub fn fail(host: &mut HostState) -> Result<(), ProtocolError> {
    match host.connection {
        Connection::Connected(m) => {
            host.connection = Connection::Failed(m);
            host.app_state = AppState::default();
            host.rec_seq = 0;
            Ok(())
        }
        Connection::Failed(_) => Ok(()),
        Connection::Disconnected(_) => Err(ProtocolError::HostUnavailable {
            host: host.id,
            state: "disconnected",
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecoveryOutcome {
    pub report: RecoveryReport,
    /// State right after replay, before held messages are delivered.
    pub restored: AppState,
    /// Messages that arrived during the outage, delivered after replay.
    pub delivered: Vec<LogEntry>,
}

/// Restores a failed host from its latest checkpoint plus the logged
/// messages that followed it. No other host is touched.
pub fn recover_host(
    host: &mut HostState,
    stations: &mut [MssState],
    dt: &DistanceTable,
) -> Result<RecoveryOutcome, ProtocolError> {
    let at = match host.connection {
        Connection::Failed(m) => m,
        _ => return Err(ProtocolError::NotFailed { host: host.id }),
    };
    let here = &stations[at.index()];
    let trace = here
        .traces
        .get(&host.id)
        .cloned()
        .ok_or(ProtocolError::UnknownTrace {
            host: host.id,
            mss: at,
        })?;
    let delivered_count = here.num_msg.get(&host.id).copied().unwrap_or(0);
    let ckpt = stations[trace.cp_loc.index()]
        .checkpoint(host.id, trace.cp_seq)
        .cloned()
        .ok_or(ProtocolError::MissingCheckpoint {
            host: host.id,
            cp_seq: trace.cp_seq,
            mss: trace.cp_loc,
        })?;

    let mut gathered: Vec<(&LogEntry, u64)> = Vec::new();
    let mut log_fetch_hops_total = 0;
    for &src in &trace.log_set {
        let hops = u64::from(dt.get(at, src));
        log_fetch_hops_total += hops;
        gathered.extend(
            stations[src.index()]
                .live_entries(host.id, ckpt.rec_seq + 1..)
                .map(|e| (e, hops)),
        );
    }
    gathered.sort_by_key(|(e, _)| e.seq);

    let mut state = ckpt.app_state;
    let mut expected = ckpt.rec_seq + 1;
    let mut log_entry_hops = 0;
    for (entry, hops) in &gathered {
        if entry.seq != expected {
            return Err(if entry.seq < expected {
                ProtocolError::DuplicateEntry {
                    host: host.id,
                    seq: entry.seq,
                }
            } else {
                ProtocolError::LogGap {
                    host: host.id,
                    expected,
                    found: entry.seq,
                }
            });
        }
        state.apply(&entry.payload);
        log_entry_hops += hops;
        expected += 1;
    }
    let restored_rec_seq = expected - 1;
    if restored_rec_seq != delivered_count {
        return Err(ProtocolError::MissingLogEntry {
            host: host.id,
            seq: expected,
        });
    }

    let report = RecoveryReport {
        host: host.id,
        fail_time: 0,
        recover_time: 0,
        at,
        checkpoint_seq: ckpt.cp_seq,
        checkpoint_rec_seq: ckpt.rec_seq,
        restored_rec_seq,
        checkpoint_fetch_hops: dt.get(at, trace.cp_loc),
        log_fetch_hops_total,
        log_entry_hops,
        entries_replayed: gathered.len() as u64,
    };

    host.app_state = state;
    host.rec_seq = restored_rec_seq;
    host.chknum = host.chknum.max(trace.cp_seq);
    host.connection = Connection::Connected(at);
    let delivered = drain_pending(host, &mut stations[at.index()])?;
    Ok(RecoveryOutcome {
        report,
        restored: state,
        delivered,
    })
}

/// The log entries reachable through the trace record cover every sequence
/// number after the checkpoint, exactly once.
pub fn check_recoverability(host: &HostState, stations: &[MssState]) -> Result<(), ProtocolError> {
    let at = host.connection.mss();
    let here = &stations[at.index()];
    let trace = here
        .traces
        .get(&host.id)
        .ok_or(ProtocolError::UnknownTrace {
            host: host.id,
            mss: at,
        })?;
    let delivered = here.num_msg.get(&host.id).copied().unwrap_or(0);
    if host.is_connected() && host.rec_seq != delivered {
        return Err(ProtocolError::CounterMismatch {
            host: host.id,
            mss: at,
            host_count: host.rec_seq,
            mss_count: delivered,
        });
    }
    let ckpt = stations[trace.cp_loc.index()]
        .checkpoint(host.id, trace.cp_seq)
        .ok_or(ProtocolError::MissingCheckpoint {
            host: host.id,
            cp_seq: trace.cp_seq,
            mss: trace.cp_loc,
        })?;

    if ckpt.rec_seq > delivered {
        return Err(ProtocolError::CounterMismatch {
            host: host.id,
            mss: at,
            host_count: ckpt.rec_seq,
            mss_count: delivered,
        });
    }
    let reachable: BTreeSet<MssId> = trace
        .log_set
        .iter()
        .copied()
        .chain([trace.cp_loc])
        .collect();
    let mut seqs: Vec<u64> = reachable
        .iter()
        .flat_map(|m| {
            stations[m.index()]
                .live_entries(host.id, after(ckpt.rec_seq, delivered))
                .map(|e| e.seq)
        })
        .collect();
    seqs.sort_unstable();
    let mut expected = ckpt.rec_seq + 1;
    for seq in seqs {
        if seq < expected {
            return Err(ProtocolError::DuplicateEntry { host: host.id, seq });
        }
        if seq > expected {
            return Err(ProtocolError::LogGap {
                host: host.id,
                expected,
                found: seq,
            });
        }
        expected += 1;
    }
    if expected != delivered + 1 {
        return Err(ProtocolError::MissingLogEntry {
            host: host.id,
            seq: expected,
        });
    }
    Ok(())
}

/// Live log entries of `host` across all stations are exactly
/// `1..=delivered`, and exactly one station holds its trace record.
pub fn check_live_sequences(host: &HostState, stations: &[MssState]) -> Result<(), ProtocolError> {
    let holders = stations
        .iter()
        .filter(|s| s.traces.contains_key(&host.id))
        .count();
    if holders != 1 {
        return Err(ProtocolError::TraceCount {
            host: host.id,
            count: holders,
        });
    }
    for s in stations {
        if s.active_hosts.contains(&host.id) && s.disconnected_hosts.contains_key(&host.id) {
            return Err(ProtocolError::MembershipOverlap {
                host: host.id,
                mss: s.id,
            });
        }
    }
    let at = host.connection.mss();
    let delivered = stations[at.index()]
        .num_msg
        .get(&host.id)
        .copied()
        .unwrap_or(0);
    let mut seqs: Vec<u64> = stations
        .iter()
        .flat_map(|s| s.live_entries(host.id, ..).map(|e| e.seq))
        .collect();
    seqs.sort_unstable();
    for (i, seq) in seqs.iter().enumerate() {
        let expected = i as u64 + 1;
        if *seq < expected {
            return Err(ProtocolError::DuplicateEntry {
                host: host.id,
                seq: *seq,
            });
        }
        if *seq > expected {
            return Err(ProtocolError::LogGap {
                host: host.id,
                expected,
                found: *seq,
            });
        }
    }
    if seqs.len() as u64 != delivered {
        return Err(ProtocolError::MissingLogEntry {
            host: host.id,
            seq: seqs.len() as u64 + 1,
        });
    }
    Ok(())
}
