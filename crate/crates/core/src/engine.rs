//! Discrete-event simulation of the ordering/execution pipeline.
//!
//! All times are integer microseconds of virtual time. Events are processed
//! in `(time, kind, sequence)` order with kind priority
//! completion < expiry < scheduling tick < block cut < arrival, so a tick
//! sees every completion at the same instant. A transaction arriving exactly
//! on a tick waits for the next one.
//!
//! A scheduling tick is a no-op while earlier rounds are still executing.
//! Rounds from one tick run back to back: every transaction of a round
//! starts together on its own worker, captures its read versions, and the
//! next round starts once the slowest member has finished.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::block::{seal, Block};
use crate::depman::{DependencyManager, LiveConflicts, Validity};
use crate::error::{Error, Result};
use crate::ledger::{
    occ_validate, LedgerState, OpKind, Origin, StatusKind, Transaction, TxId, TxStatus, TxType, VersionSnapshot,
};
use crate::rng::SimRng;
use crate::sched::{
    schedule_conchain, schedule_fifo, schedule_grouped, schedule_locking, schedule_timestamp, HoldState, LockTable,
    Schedule, Scheme,
};
use crate::workload::TxStream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub query_us: u64,
    pub deposit_checking_us: u64,
    pub transact_savings_us: u64,
    pub send_payment_us: u64,
    pub write_check_us: u64,
    pub amalgamate_us: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            query_us: 1_000,
            deposit_checking_us: 2_000,
            transact_savings_us: 2_000,
            send_payment_us: 2_000,
            write_check_us: 2_000,
            amalgamate_us: 2_000,
        }
    }
}

impl CostModel {
    pub fn cost(&self, kind: OpKind) -> u64 {
        match kind {
            OpKind::Query => self.query_us,
            OpKind::DepositChecking => self.deposit_checking_us,
            OpKind::TransactSavings => self.transact_savings_us,
            OpKind::SendPayment => self.send_payment_us,
            OpKind::WriteCheck => self.write_check_us,
            OpKind::Amalgamate => self.amalgamate_us,
        }
    }

    fn all(&self) -> [u64; 6] {
        OpKind::ALL.map(|k| self.cost(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub workers: usize,
    pub scheduling_tick_us: u64,
    /// `None` lets the ConChain assigner open as many rounds as it needs.
    pub rounds_per_tick: Option<usize>,
    pub block_max_txs: usize,
    pub block_interval_us: u64,
    pub cost: CostModel,
    /// Pending transactions older than this expire. `None` disables expiry.
    pub queue_ttl_us: Option<u64>,
    pub lock_overhead_us: u64,
    pub infra_failure_prob: f64,
    pub max_hold_rounds: u64,
    /// Run the dependency manager's fake-transaction screening on arrival.
    pub screening: bool,
    pub event_log: bool,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            workers: 4,
            scheduling_tick_us: 100_000,
            rounds_per_tick: None,
            block_max_txs: 100,
            block_interval_us: 1_000_000,
            cost: CostModel::default(),
            queue_ttl_us: None,
            lock_overhead_us: 5_000,
            infra_failure_prob: 0.0,
            max_hold_rounds: 10,
            screening: true,
            event_log: false,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("engine.workers", "must be at least 1"));
        }
        if self.scheduling_tick_us == 0 {
            return Err(Error::config("engine.scheduling_tick_s", "must be positive"));
        }
        if self.rounds_per_tick == Some(0) {
            return Err(Error::config("engine.rounds_per_tick", "must be positive"));
        }
        if self.block_max_txs == 0 {
            return Err(Error::config("engine.block_max_txs", "must be at least 1"));
        }
        if self.block_interval_us == 0 {
            return Err(Error::config("engine.block_interval_s", "must be positive"));
        }
        if self.cost.all().contains(&0) {
            return Err(Error::config("engine.cost", "execution costs must be positive"));
        }
        if self.queue_ttl_us == Some(0) {
            return Err(Error::config("engine.queue_ttl_s", "must be positive when enabled"));
        }
        if !(0.0..=1.0).contains(&self.infra_failure_prob) {
            return Err(Error::config("engine.infra_failure_prob", "must be within [0, 1]"));
        }
        if self.max_hold_rounds == 0 {
            return Err(Error::config("engine.max_hold_rounds", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutcome {
    pub status: TxStatus,
    pub latency_us: u64,
    pub origin: Origin,
    pub tx_type: TxType,
    /// Whether the transaction was ever assigned to a worker.
    pub dispatched: bool,
}

pub type PerTx = BTreeMap<TxId, TxOutcome>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: String,
    pub mix: String,
    pub workers: usize,
    pub succ: u64,
    pub fail: u64,
    pub fail_breakdown: BTreeMap<StatusKind, u64>,
    /// Seconds.
    pub mean_latency: f64,
    pub tps_committed: f64,
    pub success_rate: f64,
    /// Seconds.
    pub makespan: f64,
}

impl MetricsReport {
    pub fn failures(&self, kind: StatusKind) -> u64 {
        self.fail_breakdown.get(&kind).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportLabels {
    pub scheme: String,
    pub mix: String,
    pub workers: usize,
}

pub fn compute_metrics(per_tx: &PerTx, duration_us: u64, labels: &ReportLabels) -> Result<MetricsReport> {
    if per_tx.is_empty() {
        return Err(Error::TooFewTransactions { needed: 1, got: 0 });
    }
    let mut succ = 0u64;
    let mut fail_breakdown = BTreeMap::new();
    let mut latency_sum = 0u128;
    for o in per_tx.values() {
        latency_sum += u128::from(o.latency_us);
        if o.status.is_committed() {
            succ += 1;
        } else {
            *fail_breakdown.entry(o.status.kind()).or_insert(0u64) += 1;
        }
    }
    let n = per_tx.len() as u64;
    let makespan = duration_us as f64 / 1e6;
    Ok(MetricsReport {
        scheme: labels.scheme.clone(),
        mix: labels.mix.clone(),
        workers: labels.workers,
        succ,
        fail: n - succ,
        fail_breakdown,
        mean_latency: latency_sum as f64 / n as f64 / 1e6,
        tps_committed: if succ == 0 { 0.0 } else { succ as f64 / makespan },
        success_rate: succ as f64 / n as f64,
        makespan,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time_us: u64,
    pub kind: String,
    pub tx_id: Option<TxId>,
    pub worker: Option<usize>,
    pub detail: String,
}

impl EventRecord {
    /// `time_us,kind,tx_id,worker,detail`
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.time_us,
            self.kind,
            self.tx_id.map(|t| t.to_string()).unwrap_or_default(),
            self.worker.map(|w| w.to_string()).unwrap_or_default(),
            self.detail
        )
    }
}

pub fn event_log_text(events: &[EventRecord]) -> String {
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "{}", e.to_line());
    }
    out
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: MetricsReport,
    pub chain: Vec<Block>,
    pub per_tx: PerTx,
    pub commit_order: Vec<TxId>,
    /// Each dispatched round with its start time.
    pub rounds: Vec<(u64, Vec<TxId>)>,
    pub final_state: LedgerState,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Complete { idx: usize, worker: usize },
    Expire { idx: usize },
    Tick,
    BlockCut,
    Arrival { idx: usize },
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            EventKind::Complete { .. } => 0,
            EventKind::Expire { .. } => 1,
            EventKind::Tick => 2,
            EventKind::BlockCut => 3,
            EventKind::Arrival { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct QueuedEvent {
    time: u64,
    priority: u8,
    seq: u64,
    kind: EventKind,
}

#[derive(Debug, Clone)]
enum Phase {
    Waiting,
    Pending,
    /// Assigned to a round that has not started yet.
    Queued,
    InFlight { snapshot: VersionSnapshot },
    Done,
}

struct Engine<'a> {
    txs: &'a [Transaction],
    scheme: Scheme,
    cfg: &'a EngineConfig,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<QueuedEvent>>,
    ledger: LedgerState,
    depman: DependencyManager,
    hold: HoldState,
    locks: LockTable,
    lock_attempts: Vec<u64>,
    phase: Vec<Phase>,
    /// Indices into `txs`; arrival order is index order.
    pending: BTreeSet<usize>,
    round_queue: VecDeque<Vec<(usize, usize)>>,
    running: usize,
    block_buffer: Vec<(TxId, TxStatus)>,
    chain: Vec<Block>,
    per_tx: PerTx,
    dispatched: Vec<bool>,
    commit_order: Vec<TxId>,
    rounds: Vec<(u64, Vec<TxId>)>,
    done: usize,
    first_dispatch: Option<u64>,
    last_terminal: u64,
    infra_rng: SimRng,
    events: Vec<EventRecord>,
    index_of: BTreeMap<TxId, usize>,
}

impl<'a> Engine<'a> {
    fn push(&mut self, time: u64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(QueuedEvent {
            time,
            priority: kind.priority(),
            seq: self.seq,
            kind,
        }));
    }

    fn log(&mut self, kind: &str, tx: Option<usize>, worker: Option<usize>, detail: impl Into<String>) {
        if self.cfg.event_log {
            self.events.push(EventRecord {
                time_us: self.now,
                kind: kind.to_string(),
                tx_id: tx.map(|i| self.txs[i].id()),
                worker,
                detail: detail.into(),
            });
        }
    }

    fn all_done(&self) -> bool {
        self.done == self.txs.len()
    }

    fn finish(&mut self, idx: usize, status: TxStatus, executed: bool) {
        let tx = &self.txs[idx];
        debug_assert!(!self.per_tx.contains_key(&tx.id()), "transaction {} finished twice", tx.id());
        self.phase[idx] = Phase::Done;
        self.done += 1;
        self.last_terminal = self.last_terminal.max(self.now);
        self.depman.release(tx.id());
        self.hold.forget(tx.id());
        if self.scheme == Scheme::Locking {
            self.locks.release(tx.id());
        }
        self.per_tx.insert(
            tx.id(),
            TxOutcome {
                status,
                latency_us: self.now - tx.submit_us(),
                origin: tx.origin(),
                tx_type: tx.tx_type(),
                dispatched: self.dispatched[idx],
            },
        );
        if executed {
            self.block_buffer.push((tx.id(), status));
            if self.block_buffer.len() >= self.cfg.block_max_txs {
                self.cut_block();
            }
        }
    }

    fn cut_block(&mut self) {
        if self.block_buffer.is_empty() {
            return;
        }
        let txs = std::mem::take(&mut self.block_buffer);
        let tail = self.chain.last().expect("genesis present");
        let block = seal(tail, txs, self.now);
        self.ledger.height = block.height;
        self.log("block", None, None, format!("height={} txs={}", block.height, block.txs.len()));
        self.chain.push(block);
    }

    fn on_arrival(&mut self, idx: usize) {
        let tx = &self.txs[idx];
        self.log("arrival", Some(idx), None, "");
        if self.cfg.screening {
            if let Validity::Fake(reason) = self.depman.admit(tx, &self.ledger) {
                self.log("reject", Some(idx), None, format!("{reason:?}"));
                self.finish(idx, TxStatus::RejectedFake(reason), false);
                return;
            }
        } else {
            let touched: Vec<_> = tx.rw().touched().cloned().collect();
            for w in &touched {
                self.ledger.ensure_account(w);
            }
        }
        self.phase[idx] = Phase::Pending;
        self.pending.insert(idx);
        if let Some(ttl) = self.cfg.queue_ttl_us {
            self.push(tx.submit_us() + ttl, EventKind::Expire { idx });
        }
    }

    fn on_expire(&mut self, idx: usize) {
        if matches!(self.phase[idx], Phase::Pending) {
            self.pending.remove(&idx);
            self.log("expire", Some(idx), None, "");
            self.finish(idx, TxStatus::Expired, false);
        }
    }

    fn schedule(&self) -> Result<Schedule> {
        let window: Vec<&Transaction> = self.pending.iter().map(|&i| &self.txs[i]).collect();
        let w = self.cfg.workers;
        Ok(match self.scheme {
            Scheme::Fifo => schedule_fifo(&window, w),
            Scheme::Timestamp => schedule_timestamp(&window, w),
            Scheme::Grouped => schedule_grouped(&window, w),
            Scheme::Locking => schedule_locking(&window, w, &self.locks),
            Scheme::Conchain => schedule_conchain(&window, w, &LiveConflicts, &self.hold, self.cfg.rounds_per_tick)?,
        })
    }

    fn on_tick(&mut self) -> Result<()> {
        let idle = self.running == 0 && self.round_queue.is_empty();
        if idle && !self.pending.is_empty() {
            let schedule = self.schedule()?;
            match self.scheme {
                Scheme::Locking => {
                    for &i in &self.pending {
                        self.lock_attempts[i] += 1;
                    }
                    for id in schedule.dispatched() {
                        let tx = &self.txs[self.index_of[&id]];
                        let acquired = self.locks.acquire(tx);
                        debug_assert!(acquired);
                    }
                }
                Scheme::Conchain => self.hold.record(&schedule),
                _ => {}
            }
            for round in &schedule.rounds {
                let r: Vec<(usize, usize)> = round.iter().map(|a| (self.index_of[&a.tx], a.worker)).collect();
                for &(i, _) in &r {
                    self.pending.remove(&i);
                    self.phase[i] = Phase::Queued;
                }
                self.round_queue.push_back(r);
            }
            self.start_next_round();
        }
        if !self.all_done() {
            self.push(self.now + self.cfg.scheduling_tick_us, EventKind::Tick);
        }
        Ok(())
    }

    fn start_next_round(&mut self) {
        let Some(round) = self.round_queue.pop_front() else {
            return;
        };
        self.first_dispatch.get_or_insert(self.now);
        self.running = round.len();
        self.rounds.push((self.now, round.iter().map(|&(i, _)| self.txs[i].id()).collect()));
        for (idx, worker) in round {
            let tx = &self.txs[idx];
            let snapshot = self
                .ledger
                .snapshot_versions(&tx.rw().reads)
                .expect("admitted transactions only touch known wallets");
            let mut duration = self.cfg.cost.cost(tx.op().kind());
            if self.scheme == Scheme::Locking {
                duration += self.lock_attempts[idx] * self.cfg.lock_overhead_us;
            }
            self.phase[idx] = Phase::InFlight { snapshot };
            self.dispatched[idx] = true;
            self.log("dispatch", Some(idx), Some(worker), format!("until={}", self.now + duration));
            self.push(self.now + duration, EventKind::Complete { idx, worker });
        }
    }

    fn on_complete(&mut self, idx: usize, worker: usize) {
        let Phase::InFlight { snapshot } = std::mem::replace(&mut self.phase[idx], Phase::Done) else {
            unreachable!("completion for a transaction not in flight");
        };
        let tx = &self.txs[idx];
        let status = if !occ_validate(&snapshot, &self.ledger) {
            TxStatus::AbortedConflict
        } else {
            let mut next = self.ledger.clone_for(tx);
            let status = next.apply(tx);
            if status.is_committed() && self.infra_rng.chance(self.cfg.infra_failure_prob) {
                TxStatus::AbortedInfrastructure
            } else {
                if status.is_committed() {
                    self.ledger.merge_from(next, tx);
                    self.commit_order.push(tx.id());
                }
                status
            }
        };
        self.log("complete", Some(idx), Some(worker), format!("{status:?}"));
        self.finish(idx, status, true);
        self.running -= 1;
        if self.running == 0 {
            self.start_next_round();
        }
    }

    fn run(mut self, mix_label: &str) -> Result<SimOutput> {
        for (idx, tx) in self.txs.iter().enumerate() {
            self.push(tx.submit_us(), EventKind::Arrival { idx });
        }
        if !self.txs.is_empty() {
            self.push(0, EventKind::Tick);
            self.push(self.cfg.block_interval_us, EventKind::BlockCut);
        }
        while let Some(Reverse(ev)) = self.queue.pop() {
            self.now = ev.time;
            match ev.kind {
                EventKind::Arrival { idx } => self.on_arrival(idx),
                EventKind::Expire { idx } => self.on_expire(idx),
                EventKind::Tick => self.on_tick()?,
                EventKind::Complete { idx, worker } => self.on_complete(idx, worker),
                EventKind::BlockCut => {
                    self.cut_block();
                    if !self.all_done() {
                        self.push(self.now + self.cfg.block_interval_us, EventKind::BlockCut);
                    }
                }
            }
        }
        assert!(self.all_done(), "every transaction reaches a terminal status");
        self.now = self.last_terminal;
        self.cut_block();

        let duration = self.first_dispatch.map_or(0, |start| self.last_terminal.saturating_sub(start));
        let labels = ReportLabels {
            scheme: self.scheme.token().to_string(),
            mix: mix_label.to_string(),
            workers: self.cfg.workers,
        };
        let report = if self.per_tx.is_empty() {
            MetricsReport {
                scheme: labels.scheme,
                mix: labels.mix,
                workers: labels.workers,
                succ: 0,
                fail: 0,
                fail_breakdown: BTreeMap::new(),
                mean_latency: 0.0,
                tps_committed: 0.0,
                success_rate: 0.0,
                makespan: 0.0,
            }
        } else {
            compute_metrics(&self.per_tx, duration, &labels)?
        };
        Ok(SimOutput {
            report,
            chain: self.chain,
            per_tx: self.per_tx,
            commit_order: self.commit_order,
            rounds: self.rounds,
            final_state: self.ledger,
            events: self.events,
        })
    }
}

impl LedgerState {
    /// Copy of just the accounts `tx` touches, enough to run it speculatively.
    fn clone_for(&self, tx: &Transaction) -> LedgerState {
        LedgerState {
            accounts: tx
                .rw()
                .touched()
                .filter_map(|w| self.accounts.get(w).map(|a| (w.clone(), *a)))
                .collect(),
            height: self.height,
        }
    }

    fn merge_from(&mut self, partial: LedgerState, tx: &Transaction) {
        for w in &tx.rw().writes {
            self.accounts.insert(w.clone(), partial.accounts[w]);
        }
    }
}

/// Runs one simulation. Fully determined by its arguments.
pub fn run_simulation(
    stream: &TxStream,
    scheme: Scheme,
    initial: &LedgerState,
    cfg: &EngineConfig,
    mix_label: &str,
) -> Result<SimOutput> {
    cfg.validate()?;
    let txs = &stream.txs;
    let mut index_of = BTreeMap::new();
    for (i, t) in txs.iter().enumerate() {
        if index_of.insert(t.id(), i).is_some() {
            return Err(Error::DuplicateTxId(t.id()));
        }
    }
    let n = txs.len();
    let engine = Engine {
        txs,
        scheme,
        cfg,
        now: 0,
        seq: 0,
        queue: BinaryHeap::new(),
        ledger: initial.clone(),
        depman: DependencyManager::new(),
        hold: HoldState::new(cfg.max_hold_rounds),
        locks: LockTable::new(),
        lock_attempts: vec![0; n],
        phase: vec![Phase::Waiting; n],
        pending: BTreeSet::new(),
        round_queue: VecDeque::new(),
        running: 0,
        block_buffer: Vec::new(),
        chain: vec![Block::genesis()],
        per_tx: BTreeMap::new(),
        dispatched: vec![false; n],
        commit_order: Vec::new(),
        rounds: Vec::new(),
        done: 0,
        first_dispatch: None,
        last_terminal: 0,
        infra_rng: SimRng::derive(cfg.seed, "infra"),
        events: Vec::new(),
        index_of,
    };
    engine.run(mix_label)
}

/// Serial re-execution of a commit order; every transaction must commit.
pub fn replay_serial(committed: &[&Transaction], initial: &LedgerState) -> Result<LedgerState> {
    let mut state = initial.clone();
    for tx in committed {
        let status = state.apply(tx);
        if !status.is_committed() {
            return Err(Error::ReplayDiverged {
                tx: tx.id(),
                status: status.to_string(),
            });
        }
    }
    Ok(state)
}

/// Transactions of `stream` in the order given by `commit_order`.
pub fn committed_transactions<'s>(stream: &'s TxStream, commit_order: &[TxId]) -> Vec<&'s Transaction> {
    let by_id: BTreeMap<TxId, &Transaction> = stream.txs.iter().map(|t| (t.id(), t)).collect();
    commit_order.iter().map(|id| by_id[id]).collect()
}
