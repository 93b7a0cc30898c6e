//! Deterministic discrete-event driver for the protocol.
//!
//! Time advances in integer ticks. At the start of each tick every host
//! draws its workload (send, move, disconnect, fail) from a single seeded
//! ChaCha8 stream in host-id order; the resulting events and any events
//! scheduled earlier for that tick are then processed in `(time, seqno)`
//! order.
//!
//! Messages travel over per-(sender, receiver) FIFO channels. Latency is one
//! wireless hop on each side plus one tick per wired hop between the two
//! stations, measured when the message is sent. On arrival the message is
//! routed to wherever the receiver is attached at that moment; if the
//! receiver is disconnected or failed the message is held at its station.
//!
//! The threshold K only decides where recovery data lives. It never feeds
//! back into event timing or the random stream, so runs that differ only in
//! K produce the same deliveries.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::metrics::{
    CostWeights, Metrics, MetricsReport, RecoveryReport, RunLabel, TransferKind, TransferReport,
};
use crate::protocol::{
    self, AppMessage, AppState, Connection, HostId, HostState, LogEntry, MssState, ProtocolError,
    Threshold,
};
use crate::topology::{DistanceTable, Grid, MssId};

/// Identity of the random generator, echoed in reports.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.3, seed_from_u64)";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub grid_radius: u32,
    pub num_hosts: u32,
    pub k: Threshold,
    /// Ticks between checkpoints of one host; 0 disables periodic checkpoints.
    pub checkpoint_interval: u64,
    /// Per host per tick probability of sending one message.
    pub msg_rate: f64,
    /// Per host per tick probability of moving to a neighboring cell.
    pub move_prob: f64,
    pub disconnect_prob: f64,
    pub disconnect_ticks: u64,
    /// Probability that a reconnecting host shows up in a neighboring cell.
    pub reconnect_move_prob: f64,
    /// Scheduled failures as `(tick, host)`.
    pub failures: Vec<(u64, HostId)>,
    /// Per host per tick probability of failing.
    pub fail_rate: f64,
    pub repair_delay: u64,
    pub run_length: u64,
    pub seed: u64,
    pub weights: CostWeights,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            grid_radius: 2,
            num_hosts: 4,
            k: Threshold::Finite(2),
            checkpoint_interval: 50,
            msg_rate: 0.2,
            move_prob: 0.05,
            disconnect_prob: 0.005,
            disconnect_ticks: 20,
            reconnect_move_prob: 0.5,
            failures: Vec::new(),
            fail_rate: 0.001,
            repair_delay: 5,
            run_length: 1000,
            seed: 1,
            weights: CostWeights::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{key}: {reason}")]
pub struct ConfigError {
    pub key: &'static str,
    pub reason: String,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let probs = [
            ("msg_rate", self.msg_rate),
            ("move_prob", self.move_prob),
            ("disconnect_prob", self.disconnect_prob),
            ("reconnect_move_prob", self.reconnect_move_prob),
            ("fail_rate", self.fail_rate),
        ];
        for (key, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError {
                    key,
                    reason: format!("{p} is outside [0, 1]"),
                });
            }
        }
        if self.run_length == 0 {
            return Err(ConfigError {
                key: "run_length",
                reason: "must be positive".into(),
            });
        }
        if self.num_hosts == 0 {
            return Err(ConfigError {
                key: "num_hosts",
                reason: "must be positive".into(),
            });
        }
        if let Some((t, h)) = self.failures.iter().find(|(_, h)| h.0 >= self.num_hosts) {
            return Err(ConfigError {
                key: "failures",
                reason: format!("host {} at tick {t} does not exist", h.0),
            });
        }
        Ok(())
    }

    pub fn label(&self) -> RunLabel {
        RunLabel {
            k: self.k,
            seed: self.seed,
            ticks: self.run_length,
            hosts: self.num_hosts,
            grid_radius: self.grid_radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum EventKind {
    SendApp {
        src: HostId,
        dst: HostId,
        payload: Vec<u8>,
    },
    /// The head of the `src -> dst` channel arrives.
    Deliver {
        src: HostId,
        dst: HostId,
    },
    Move(HostId),
    CheckpointTimer(HostId),
    Fail(HostId),
    Recover(HostId),
    Disconnect(HostId),
    Reconnect(HostId),
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::SendApp { src, dst, .. } => write!(f, "send {src}->{dst}"),
            EventKind::Deliver { src, dst } => write!(f, "deliver {src}->{dst}"),
            EventKind::Move(h) => write!(f, "move {h}"),
            EventKind::CheckpointTimer(h) => write!(f, "checkpoint {h}"),
            EventKind::Fail(h) => write!(f, "fail {h}"),
            EventKind::Recover(h) => write!(f, "recover {h}"),
            EventKind::Disconnect(h) => write!(f, "disconnect {h}"),
            EventKind::Reconnect(h) => write!(f, "reconnect {h}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SimEvent {
    pub time: u64,
    pub seqno: u64,
    pub kind: EventKind,
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seqno).cmp(&(other.time, other.seqno))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} #{} {}", self.time, self.seqno, self.kind)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(#[from] ConfigError),
    #[error("{event}: {source}")]
    Protocol {
        event: String,
        #[source]
        source: ProtocolError,
    },
    #[error("{event}: invariant violated: {detail}")]
    InvariantViolation { event: String, detail: String },
}

impl SimError {
    pub fn is_invariant_violation(&self) -> bool {
        !matches!(self, SimError::Config(_))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Check trace coverage after every event and log uniqueness after every
    /// tick.
    pub check_invariants: bool,
    pub record_trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            check_invariants: true,
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug)]
struct InFlight {
    ready_at: u64,
    msg: AppMessage,
}

/// One directed host-to-host channel.
#[derive(Clone, Debug, Default)]
struct Channel {
    queue: VecDeque<InFlight>,
    next_stamp: u64,
    last_ready: u64,
    last_delivered: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeliveryRecord {
    pub time: u64,
    pub dest: HostId,
    pub seq: u64,
    pub sender: HostId,
    pub stamp: u64,
    pub mss: MssId,
}

/// Outcome of comparing a recovered host against its pre-failure snapshot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RecoveryCheck {
    pub host: HostId,
    pub fail_time: u64,
    pub recover_time: u64,
    pub expected: AppState,
    pub expected_rec_seq: u64,
    pub restored: AppState,
    pub restored_rec_seq: u64,
}

impl RecoveryCheck {
    pub fn matches(&self) -> bool {
        self.expected == self.restored && self.expected_rec_seq == self.restored_rec_seq
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum TraceEvent {
    Delivered {
        time: u64,
        host: HostId,
        mss: MssId,
        seq: u64,
        sender: HostId,
    },
    Held {
        time: u64,
        host: HostId,
        mss: MssId,
        sender: HostId,
    },
    Checkpoint {
        time: u64,
        host: HostId,
        mss: MssId,
        cp_seq: u64,
        rec_seq: u64,
    },
    Handoff(TransferReport),
    Disconnected {
        time: u64,
        host: HostId,
        mss: MssId,
        r: u64,
    },
    Reconnected {
        time: u64,
        host: HostId,
        mss: MssId,
    },
    Failed {
        time: u64,
        host: HostId,
        mss: MssId,
        rec_seq: u64,
    },
    Recovered(RecoveryReport),
}

impl TraceEvent {
    pub fn host(&self) -> HostId {
        match self {
            TraceEvent::Delivered { host, .. }
            | TraceEvent::Held { host, .. }
            | TraceEvent::Checkpoint { host, .. }
            | TraceEvent::Disconnected { host, .. }
            | TraceEvent::Reconnected { host, .. }
            | TraceEvent::Failed { host, .. } => *host,
            TraceEvent::Handoff(r) => r.host,
            TraceEvent::Recovered(r) => r.host,
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Delivered {
                time,
                host,
                mss,
                seq,
                sender,
            } => write!(
                f,
                "t={time} {host} deliver seq={seq} from {sender} logged at {mss}"
            ),
            TraceEvent::Held {
                time,
                host,
                mss,
                sender,
            } => write!(f, "t={time} {host} hold message from {sender} at {mss}"),
            TraceEvent::Checkpoint {
                time,
                host,
                mss,
                cp_seq,
                rec_seq,
            } => write!(
                f,
                "t={time} {host} checkpoint cp_seq={cp_seq} rec_seq={rec_seq} at {mss}"
            ),
            TraceEvent::Handoff(r) => {
                write!(
                    f,
                    "t={} {} handoff {}->{} D={} ",
                    r.time, r.host, r.from, r.to, r.hop_distance
                )?;
                match r.kind {
                    TransferKind::TraceOnly => {
                        write!(f, "trace-only trace_hops={}", r.trace_hops)
                    }
                    TransferKind::Consolidating => write!(
                        f,
                        "consolidating trace_hops={} checkpoint_units={} checkpoint_hops={} entries={} seqs={:?} entry_hops={}",
                        r.trace_hops,
                        r.checkpoint_units,
                        r.checkpoint_hops,
                        r.log_entries_moved,
                        r.moved_seqs,
                        r.log_entry_hops
                    ),
                }
            }
            TraceEvent::Disconnected { time, host, mss, r } => {
                write!(f, "t={time} {host} disconnect r={r} at {mss}")
            }
            TraceEvent::Reconnected { time, host, mss } => {
                write!(f, "t={time} {host} reconnect at {mss}")
            }
            TraceEvent::Failed {
                time,
                host,
                mss,
                rec_seq,
            } => write!(f, "t={time} {host} fail at {mss} rec_seq={rec_seq}"),
            TraceEvent::Recovered(r) => {
                write!(
                    f,
                    "t={} {} recover at {} checkpoint cp_seq={} rec_seq={} fetch_hops={} log_hops={} ",
                    r.recover_time,
                    r.host,
                    r.at,
                    r.checkpoint_seq,
                    r.checkpoint_rec_seq,
                    r.checkpoint_fetch_hops,
                    r.log_fetch_hops_total
                )?;
                match r.replayed_range() {
                    Some((a, b)) => {
                        write!(f, "replay seq {a}..={b} ({} entries)", r.entries_replayed)
                    }
                    None => f.write_str("replay nothing"),
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Snapshot {
    time: u64,
    state: AppState,
    rec_seq: u64,
}

/// Message accounting at the end of a run.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub sent: u64,
    pub delivered: u64,
    pub in_flight: u64,
    pub held: u64,
    pub sends_dropped: u64,
}

/// The complete state of one simulation run.
#[derive(Clone, Debug)]
pub struct World {
    config: ScenarioConfig,
    opts: RunOptions,
    grid: Grid,
    distances: DistanceTable,
    stations: Vec<MssState>,
    hosts: Vec<HostState>,
    channels: BTreeMap<(HostId, HostId), Channel>,
    queue: BinaryHeap<std::cmp::Reverse<SimEvent>>,
    next_seqno: u64,
    rng: ChaCha8Rng,
    now: u64,
    metrics: Metrics,
    snapshots: BTreeMap<HostId, Snapshot>,
    send_counters: Vec<u64>,
    deliveries: Vec<DeliveryRecord>,
    recovery_checks: Vec<RecoveryCheck>,
    trace: Vec<TraceEvent>,
    sent: u64,
    sends_dropped: u64,
}

/// Final world plus aggregated metrics.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub world: World,
    pub report: MetricsReport,
}

pub fn run(config: &ScenarioConfig) -> Result<RunOutcome, SimError> {
    run_with(config, RunOptions::default())
}

pub fn run_with(config: &ScenarioConfig, opts: RunOptions) -> Result<RunOutcome, SimError> {
    let mut world = World::new(config.clone(), opts)?;
    world.run_to_end()?;
    let report = world.metrics.finalize();
    Ok(RunOutcome { world, report })
}

impl World {
    pub fn new(config: ScenarioConfig, opts: RunOptions) -> Result<Self, SimError> {
        config.validate()?;
        let grid = Grid::new(config.grid_radius);
        let distances = DistanceTable::build(&grid);
        let mut stations: Vec<MssState> = grid
            .stations()
            .map(|(id, c)| MssState::new(id, c))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let hosts: Vec<HostState> = (0..config.num_hosts)
            .map(|i| {
                let birth = MssId(rng.gen_range(0..grid.len() as u32));
                protocol::register_host(HostId(i), &mut stations[birth.index()])
            })
            .collect();
        let metrics = Metrics::new(config.label(), config.weights, grid.len());
        let mut world = World {
            send_counters: vec![0; hosts.len()],
            opts,
            grid,
            distances,
            stations,
            hosts,
            channels: BTreeMap::new(),
            queue: BinaryHeap::new(),
            next_seqno: 0,
            rng,
            now: 0,
            metrics,
            snapshots: BTreeMap::new(),
            deliveries: Vec::new(),
            recovery_checks: Vec::new(),
            trace: Vec::new(),
            sent: 0,
            sends_dropped: 0,
            config,
        };

        if world.config.checkpoint_interval > 0 {
            for i in 0..world.config.num_hosts {
                let phase = world.rng.gen_range(0..world.config.checkpoint_interval);
                world.schedule(phase + 1, EventKind::CheckpointTimer(HostId(i)));
            }
        }
        let mut failures = world.config.failures.clone();
        failures.sort();
        for (t, h) in failures {
            world.schedule(t, EventKind::Fail(h));
        }
        Ok(world)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn distances(&self) -> &DistanceTable {
        &self.distances
    }

    pub fn stations(&self) -> &[MssState] {
        &self.stations
    }

    pub fn hosts(&self) -> &[HostState] {
        &self.hosts
    }

    pub fn host(&self, id: HostId) -> Option<&HostState> {
        self.hosts.get(id.index())
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn deliveries(&self) -> &[DeliveryRecord] {
        &self.deliveries
    }

    pub fn recovery_checks(&self) -> &[RecoveryCheck] {
        &self.recovery_checks
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn schedule(&mut self, time: u64, kind: EventKind) {
        let ev = SimEvent {
            time,
            seqno: self.next_seqno,
            kind,
        };
        self.next_seqno += 1;
        self.queue.push(std::cmp::Reverse(ev));
    }

    /// Deep copy of the live application state of `host`.
    pub fn snapshot_for_oracle(&self, host: HostId) -> AppState {
        self.hosts[host.index()].app_state
    }

    pub fn conservation(&self) -> Conservation {
        let in_flight = self.channels.values().map(|c| c.queue.len() as u64).sum();
        let held = self.stations.iter().map(|s| s.pending_len() as u64).sum();
        Conservation {
            sent: self.sent,
            delivered: self.deliveries.len() as u64,
            in_flight,
            held,
            sends_dropped: self.sends_dropped,
        }
    }

    /// Runs every tick, then completes recoveries that were still pending.
    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        for t in 0..self.config.run_length {
            self.now = t;
            self.generate_workload(t);
            while self.queue.peek().is_some_and(|e| e.0.time <= t) {
                let ev = self.queue.pop().expect("peeked").0;
                self.step(ev)?;
            }
            self.end_of_tick()?;
        }

        let leftover = std::mem::take(&mut self.queue);
        let mut rest = Vec::new();
        for std::cmp::Reverse(ev) in leftover.into_sorted_vec().into_iter().rev() {
            if matches!(ev.kind, EventKind::Recover(_)) {
                self.now = ev.time;
                self.step(ev)?;
            } else {
                rest.push(std::cmp::Reverse(ev));
            }
        }
        self.queue = rest.into_iter().collect();

        if self.opts.check_invariants {
            let c = self.conservation();
            if c.sent != c.delivered + c.in_flight + c.held {
                return Err(SimError::InvariantViolation {
                    event: format!("end of run t={}", self.now),
                    detail: format!("message conservation broken: {c:?}"),
                });
            }
        }
        Ok(())
    }

    fn generate_workload(&mut self, t: u64) {
        let n = self.config.num_hosts;
        for i in 0..n {
            let u_send: f64 = self.rng.gen();
            let dst_pick: u32 = self.rng.gen();
            let nonce: u64 = self.rng.gen();
            let u_move: f64 = self.rng.gen();
            let u_disc: f64 = self.rng.gen();
            let u_fail: f64 = self.rng.gen();

            let h = HostId(i);
            if !self.hosts[h.index()].is_connected() {
                continue;
            }
            if n > 1 && u_send < self.config.msg_rate {
                let mut dst = dst_pick % (n - 1);
                if dst >= i {
                    dst += 1;
                }
                let counter = self.send_counters[h.index()];
                self.send_counters[h.index()] += 1;
                let mut payload = Vec::with_capacity(20);
                payload.extend_from_slice(&i.to_le_bytes());
                payload.extend_from_slice(&counter.to_le_bytes());
                payload.extend_from_slice(&nonce.to_le_bytes());
                self.schedule(
                    t,
                    EventKind::SendApp {
                        src: h,
                        dst: HostId(dst),
                        payload,
                    },
                );
            }
            if u_move < self.config.move_prob {
                self.schedule(t, EventKind::Move(h));
            }
            if u_disc < self.config.disconnect_prob {
                self.schedule(t, EventKind::Disconnect(h));
            }
            if u_fail < self.config.fail_rate {
                self.schedule(t, EventKind::Fail(h));
            }
        }
    }

    /// Applies one event to the world.
    pub fn step(&mut self, event: SimEvent) -> Result<(), SimError> {
        let label = event.to_string();
        log::debug!("{label}");
        self.now = event.time;
        self.apply(event.kind).map_err(|e| match e {
            StepError::Protocol(source) => SimError::Protocol {
                event: label.clone(),
                source,
            },
            StepError::Invariant(detail) => SimError::InvariantViolation {
                event: label.clone(),
                detail,
            },
        })?;
        if self.opts.check_invariants {
            for h in &self.hosts {
                protocol::check_recoverability(h, &self.stations).map_err(|e| {
                    SimError::InvariantViolation {
                        event: label.clone(),
                        detail: e.to_string(),
                    }
                })?;
            }
        }
        Ok(())
    }

    fn apply(&mut self, kind: EventKind) -> Result<(), StepError> {
        let now = self.now;
        match kind {
            EventKind::SendApp { src, dst, payload } => self.send(src, dst, payload),
            EventKind::Deliver { src, dst } => self.arrive(src, dst)?,
            EventKind::Move(h) => {
                if !self.hosts[h.index()].is_connected() {
                    return Ok(());
                }
                let nbrs = self.grid.neighbors(self.hosts[h.index()].cell);
                if nbrs.is_empty() {
                    return Ok(());
                }
                let target = nbrs[self.rng.gen_range(0..nbrs.len())];
                let new = self.grid.mss_of(target).expect("neighbor is in grid");
                let report = protocol::handoff(
                    &mut self.hosts[h.index()],
                    &mut self.stations,
                    new,
                    self.config.k,
                    &self.distances,
                )?;
                self.record_transfer(report);
            }
            EventKind::CheckpointTimer(h) => {
                self.schedule(
                    now + self.config.checkpoint_interval,
                    EventKind::CheckpointTimer(h),
                );
                let host = &mut self.hosts[h.index()];
                if let Connection::Connected(m) = host.connection {
                    let ckpt = protocol::take_checkpoint(host, &mut self.stations[m.index()])?;
                    self.metrics.record_checkpoint();
                    self.push_trace(TraceEvent::Checkpoint {
                        time: now,
                        host: h,
                        mss: m,
                        cp_seq: ckpt.cp_seq,
                        rec_seq: ckpt.rec_seq,
                    });
                }
            }
            EventKind::Fail(h) => match self.hosts[h.index()].connection {
                Connection::Connected(m) => {
                    let live = &self.hosts[h.index()];
                    let snap = Snapshot {
                        time: now,
                        state: self.snapshot_for_oracle(h),
                        rec_seq: live.rec_seq,
                    };
                    self.push_trace(TraceEvent::Failed {
                        time: now,
                        host: h,
                        mss: m,
                        rec_seq: snap.rec_seq,
                    });
                    self.snapshots.insert(h, snap);
                    protocol::fail(&mut self.hosts[h.index()])?;
                    self.schedule(now + self.config.repair_delay, EventKind::Recover(h));
                }
                // a sleeping host cannot crash; try again next tick
                Connection::Disconnected(_) => self.schedule(now + 1, EventKind::Fail(h)),
                Connection::Failed(_) => {}
            },
            EventKind::Recover(h) => {
                if !matches!(self.hosts[h.index()].connection, Connection::Failed(_)) {
                    return Ok(());
                }
                let out = protocol::recover_host(
                    &mut self.hosts[h.index()],
                    &mut self.stations,
                    &self.distances,
                )?;
                let snap = self
                    .snapshots
                    .remove(&h)
                    .ok_or_else(|| StepError::Invariant(format!("no snapshot taken for {h}")))?;
                let report = RecoveryReport {
                    fail_time: snap.time,
                    recover_time: now,
                    ..out.report
                };
                let check = RecoveryCheck {
                    host: h,
                    fail_time: snap.time,
                    recover_time: now,
                    expected: snap.state,
                    expected_rec_seq: snap.rec_seq,
                    restored: out.restored,
                    restored_rec_seq: report.restored_rec_seq,
                };
                if !check.matches() {
                    return Err(StepError::Invariant(format!(
                        "{h} restored {} at rec_seq {} but was {} at rec_seq {} before failing",
                        check.restored,
                        check.restored_rec_seq,
                        check.expected,
                        check.expected_rec_seq
                    )));
                }
                self.recovery_checks.push(check);
                self.push_trace(TraceEvent::Recovered(report.clone()));
                self.metrics.record_recovery(report);
                self.record_deliveries(out.delivered)?;
            }
            EventKind::Disconnect(h) => {
                let host = &mut self.hosts[h.index()];
                if let Connection::Connected(m) = host.connection {
                    protocol::disconnect(host, &mut self.stations[m.index()])?;
                    let r = host.rec_seq;
                    self.push_trace(TraceEvent::Disconnected {
                        time: now,
                        host: h,
                        mss: m,
                        r,
                    });
                    let back = now + self.config.disconnect_ticks.max(1);
                    self.schedule(back, EventKind::Reconnect(h));
                }
            }
            EventKind::Reconnect(h) => {
                let Connection::Disconnected(prev) = self.hosts[h.index()].connection else {
                    return Ok(());
                };
                let u: f64 = self.rng.gen();
                let nbrs = self.grid.neighbors(self.hosts[h.index()].cell);
                let at = if u < self.config.reconnect_move_prob && !nbrs.is_empty() {
                    let c = nbrs[self.rng.gen_range(0..nbrs.len())];
                    self.grid.mss_of(c).expect("neighbor is in grid")
                } else {
                    prev
                };
                let out = protocol::reconnect(
                    &mut self.hosts[h.index()],
                    &mut self.stations,
                    at,
                    self.config.k,
                    &self.distances,
                )?;
                self.push_trace(TraceEvent::Reconnected {
                    time: now,
                    host: h,
                    mss: prev,
                });
                // drained at `prev` before any handoff; attachment was
                // enforced by deliver_and_log
                self.record_deliveries_unchecked(out.delivered, prev)?;
                if let Some(report) = out.transfer {
                    self.record_transfer(report);
                }
            }
        }
        Ok(())
    }

    fn send(&mut self, src: HostId, dst: HostId, payload: Vec<u8>) {
        let Connection::Connected(from) = self.hosts[src.index()].connection else {
            self.sends_dropped += 1;
            return;
        };
        let to = self.hosts[dst.index()].connection.mss();
        let latency = 2 + u64::from(self.distances.get(from, to));
        let chan = self.channels.entry((src, dst)).or_default();
        chan.next_stamp += 1;
        let ready_at = (self.now + latency).max(chan.last_ready);
        chan.last_ready = ready_at;
        chan.queue.push_back(InFlight {
            ready_at,
            msg: AppMessage {
                sender: src,
                stamp: chan.next_stamp,
                payload,
            },
        });
        self.sent += 1;
        self.schedule(ready_at, EventKind::Deliver { src, dst });
    }

    fn arrive(&mut self, src: HostId, dst: HostId) -> Result<(), StepError> {
        let now = self.now;
        let inflight = self
            .channels
            .get_mut(&(src, dst))
            .and_then(|c| c.queue.pop_front())
            .ok_or_else(|| StepError::Invariant(format!("channel {src}->{dst} is empty")))?;
        if inflight.ready_at > now {
            return Err(StepError::Invariant(format!(
                "channel {src}->{dst} head not due until t={}",
                inflight.ready_at
            )));
        }
        match self.hosts[dst.index()].connection {
            Connection::Connected(m) => {
                let entry = protocol::deliver_and_log(
                    &mut self.stations[m.index()],
                    &mut self.hosts[dst.index()],
                    inflight.msg,
                )?;
                self.record_deliveries_at(vec![entry], m)?;
            }
            Connection::Disconnected(m) | Connection::Failed(m) => {
                self.push_trace(TraceEvent::Held {
                    time: now,
                    host: dst,
                    mss: m,
                    sender: src,
                });
                self.stations[m.index()]
                    .pending
                    .entry(dst)
                    .or_default()
                    .push_back(inflight.msg);
            }
        }
        Ok(())
    }

    fn record_deliveries(&mut self, entries: Vec<LogEntry>) -> Result<(), StepError> {
        for entry in entries {
            let m = self.hosts[entry.host.index()].connection.mss();
            self.record_deliveries_at(vec![entry], m)?;
        }
        Ok(())
    }

    /// FIFO and location checks for messages just logged at `mss`.
    fn record_deliveries_at(
        &mut self,
        entries: Vec<LogEntry>,
        mss: MssId,
    ) -> Result<(), StepError> {
        for entry in &entries {
            if !self.stations[mss.index()]
                .active_hosts
                .contains(&entry.host)
            {
                return Err(StepError::Invariant(format!(
                    "{} not attached to {mss} when its message was logged there",
                    entry.host
                )));
            }
        }
        self.record_deliveries_unchecked(entries, mss)
    }

    fn record_deliveries_unchecked(
        &mut self,
        entries: Vec<LogEntry>,
        mss: MssId,
    ) -> Result<(), StepError> {
        for entry in entries {
            let chan = self.channels.entry((entry.sender, entry.host)).or_default();
            if entry.stamp != chan.last_delivered + 1 {
                return Err(StepError::Invariant(format!(
                    "FIFO broken on {}->{}: delivered stamp {} after {}",
                    entry.sender, entry.host, entry.stamp, chan.last_delivered
                )));
            }
            chan.last_delivered = entry.stamp;
            self.metrics.record_delivery();
            self.push_trace(TraceEvent::Delivered {
                time: self.now,
                host: entry.host,
                mss,
                seq: entry.seq,
                sender: entry.sender,
            });
            self.deliveries.push(DeliveryRecord {
                time: self.now,
                dest: entry.host,
                seq: entry.seq,
                sender: entry.sender,
                stamp: entry.stamp,
                mss,
            });
        }
        Ok(())
    }

    fn record_transfer(&mut self, mut report: TransferReport) {
        report.time = self.now;
        self.push_trace(TraceEvent::Handoff(report.clone()));
        self.metrics.record_transfer(report);
    }

    fn push_trace(&mut self, ev: TraceEvent) {
        if self.opts.record_trace {
            self.trace.push(ev);
        }
    }

    fn end_of_tick(&mut self) -> Result<(), SimError> {
        for h in &self.hosts {
            let m = h.connection.mss();
            let size = self.stations[m.index()]
                .traces
                .get(&h.id)
                .map_or(0, |t| t.log_set.len());
            self.metrics.record_logset_size(size);
        }
        for s in &self.stations {
            self.metrics.record_storage(s.id, s.storage_units());
        }
        if self.opts.check_invariants {
            for h in &self.hosts {
                protocol::check_live_sequences(h, &self.stations).map_err(|e| {
                    SimError::InvariantViolation {
                        event: format!("end of tick t={}", self.now),
                        detail: e.to_string(),
                    }
                })?;
            }
        }
        Ok(())
    }
}

enum StepError {
    Protocol(ProtocolError),
    Invariant(String),
}

impl From<ProtocolError> for StepError {
    fn from(e: ProtocolError) -> Self {
        StepError::Protocol(e)
    }
}
