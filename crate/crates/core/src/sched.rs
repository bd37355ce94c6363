//! Ordering schemes. Each scheduler is a pure function of the pending window,
//! the worker count, and scheme-specific context owned by the engine.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::depman::ConflictView;
use crate::error::{Error, Result};
use crate::ledger::{Transaction, TxId, TxType, WalletId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Fifo,
    Timestamp,
    Grouped,
    Locking,
    Conchain,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Fifo,
        Scheme::Timestamp,
        Scheme::Grouped,
        Scheme::Locking,
        Scheme::Conchain,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Scheme::Fifo => "fifo",
            Scheme::Timestamp => "timestamp",
            Scheme::Grouped => "grouped",
            Scheme::Locking => "locking",
            Scheme::Conchain => "conchain",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub tx: TxId,
    pub worker: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub rounds: Vec<Vec<Assignment>>,
    /// Deferred to the next scheduling call.
    pub held: Vec<TxId>,
}

impl Schedule {
    pub fn dispatched(&self) -> impl Iterator<Item = TxId> + '_ {
        self.rounds.iter().flatten().map(|a| a.tx)
    }

    pub fn round_ids(&self) -> Vec<Vec<TxId>> {
        self.rounds.iter().map(|r| r.iter().map(|a| a.tx).collect()).collect()
    }

    fn from_rounds(rounds: Vec<Vec<TxId>>, held: Vec<TxId>) -> Self {
        let rounds = rounds
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .enumerate()
                    .map(|(worker, tx)| Assignment { tx, worker })
                    .collect()
            })
            .collect();
        Schedule { rounds, held }
    }
}

fn chunked(ids: Vec<TxId>, workers: usize) -> Vec<Vec<TxId>> {
    assert!(workers > 0, "need at least one worker");
    ids.chunks(workers).map(<[TxId]>::to_vec).collect()
}

fn by_timestamp<'a>(pending: &[&'a Transaction]) -> Vec<&'a Transaction> {
    let mut sorted = pending.to_vec();
    sorted.sort_by_key(|t| (t.submit_us(), t.id()));
    sorted
}

/// Arrival order, chunks of `workers`, no conflict avoidance.
pub fn schedule_fifo(pending: &[&Transaction], workers: usize) -> Schedule {
    let ids = pending.iter().map(|t| t.id()).collect();
    Schedule::from_rounds(chunked(ids, workers), Vec::new())
}

/// FIFO after a stable sort by `(submit_time, id)`.
pub fn schedule_timestamp(pending: &[&Transaction], workers: usize) -> Schedule {
    let ids = by_timestamp(pending).iter().map(|t| t.id()).collect();
    Schedule::from_rounds(chunked(ids, workers), Vec::new())
}

/// Reads first, then read-write transactions; each group in timestamp order
/// and chunked separately.
pub fn schedule_grouped(pending: &[&Transaction], workers: usize) -> Schedule {
    let sorted = by_timestamp(pending);
    let (reads, writes): (Vec<&Transaction>, Vec<&Transaction>) =
        sorted.into_iter().partition(|t| t.tx_type() == TxType::Read);
    let mut rounds = chunked(reads.iter().map(|t| t.id()).collect(), workers);
    rounds.extend(chunked(writes.iter().map(|t| t.id()).collect(), workers));
    Schedule::from_rounds(rounds, Vec::new())
}

/// Wallet → holding transaction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LockTable {
    holders: BTreeMap<WalletId, TxId>,
}

impl LockTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn holder(&self, wallet: &WalletId) -> Option<TxId> {
        self.holders.get(wallet).copied()
    }

    pub fn can_acquire(&self, tx: &Transaction) -> bool {
        tx.rw()
            .touched()
            .all(|w| self.holder(w).is_none_or(|h| h == tx.id()))
    }

    /// Takes every lock `tx` needs, all or nothing.
    pub fn acquire(&mut self, tx: &Transaction) -> bool {
        if !self.can_acquire(tx) {
            return false;
        }
        for w in tx.rw().touched() {
            self.holders.insert(w.clone(), tx.id());
        }
        true
    }

    pub fn release(&mut self, id: TxId) {
        self.holders.retain(|_, h| *h != id);
    }

    pub fn is_empty(&self) -> bool {
        self.holders.is_empty()
    }
}

/// Timestamp order; a transaction is dispatched only if every wallet it
/// touches is free (or already its own). Locks taken earlier in the same call
/// count as taken.
pub fn schedule_locking(pending: &[&Transaction], workers: usize, locks: &LockTable) -> Schedule {
    let mut table = locks.clone();
    let mut dispatched = Vec::new();
    let mut held = Vec::new();
    for t in by_timestamp(pending) {
        if table.acquire(t) {
            dispatched.push(t.id());
        } else {
            held.push(t.id());
        }
    }
    Schedule::from_rounds(chunked(dispatched, workers), held)
}

/// Per-transaction hold bookkeeping for the ConChain assigner.
///
/// `tick` counts scheduling calls; a transaction's hold age is the number of
/// calls since it was first held.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoldState {
    pub held_since: BTreeMap<TxId, u64>,
    pub tick: u64,
    pub max_hold_rounds: u64,
}

impl HoldState {
    pub fn new(max_hold_rounds: u64) -> Self {
        HoldState {
            held_since: BTreeMap::new(),
            tick: 0,
            max_hold_rounds,
        }
    }

    pub fn age(&self, id: TxId) -> u64 {
        self.held_since.get(&id).map_or(0, |since| self.tick - since)
    }

    pub fn is_aged(&self, id: TxId) -> bool {
        self.held_since.contains_key(&id) && self.age(id) >= self.max_hold_rounds
    }

    /// Folds a schedule produced at the current tick into the hold book and
    /// advances the tick.
    pub fn record(&mut self, schedule: &Schedule) {
        for id in schedule.dispatched() {
            self.held_since.remove(&id);
        }
        for id in &schedule.held {
            self.held_since.entry(*id).or_insert(self.tick);
        }
        self.tick += 1;
    }

    pub fn forget(&mut self, id: TxId) {
        self.held_since.remove(&id);
    }
}

/// Greedy conflict-free batching.
///
/// Candidates are taken by `(hold age desc, submit_time, id)` and each goes
/// into the earliest round that has a free worker and no conflicting member.
/// Regular candidates may open new rounds until `rounds_per_tick` is reached
/// (`None` = no limit); the rest are held. Candidates whose hold age has
/// reached `max_hold_rounds` are placed first and may open rounds beyond the
/// limit, which bounds how long anything can wait.
pub fn schedule_conchain<V: ConflictView + ?Sized>(
    pending: &[&Transaction],
    workers: usize,
    graph: &V,
    hold: &HoldState,
    rounds_per_tick: Option<usize>,
) -> Result<Schedule> {
    assert!(workers > 0, "need at least one worker");
    if let Some(t) = pending.iter().find(|t| !graph.contains(t.id())) {
        return Err(Error::MissingGraphNode(t.id()));
    }
    let mut order: Vec<&Transaction> = pending.to_vec();
    order.sort_by_cached_key(|t| (std::cmp::Reverse(hold.age(t.id())), t.submit_us(), t.id()));
    let (forced, regular): (Vec<_>, Vec<_>) = order.into_iter().partition(|t| hold.is_aged(t.id()));

    let mut rounds: Vec<Vec<&Transaction>> = Vec::new();
    for t in forced {
        place_first_fit(&mut rounds, t, workers, graph, true);
    }
    let mut held = Vec::new();
    for t in regular {
        let capped = rounds_per_tick.is_some_and(|cap| rounds.len() >= cap);
        let full = capped && rounds.iter().all(|r| r.len() == workers);
        if full || !place_first_fit(&mut rounds, t, workers, graph, !capped) {
            held.push(t.id());
        }
    }
    let rounds = rounds.into_iter().map(|r| r.iter().map(|t| t.id()).collect()).collect();
    Ok(Schedule::from_rounds(rounds, held))
}

fn place_first_fit<'a, V: ConflictView + ?Sized>(
    rounds: &mut Vec<Vec<&'a Transaction>>,
    t: &'a Transaction,
    workers: usize,
    graph: &V,
    may_open: bool,
) -> bool {
    if let Some(round) = rounds
        .iter_mut()
        .find(|r| r.len() < workers && r.iter().all(|m| !graph.conflicting(m, t)))
    {
        round.push(t);
        return true;
    }
    if may_open {
        rounds.push(vec![t]);
    }
    may_open
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depman::{build_conflict_graph, LiveConflicts};
    use crate::ledger::{Operation, Origin};

    fn dep(id: u64, submit: u64, wallet: usize) -> Transaction {
        Transaction::new(id, submit, Operation::DepositChecking(WalletId::account(wallet), 1), Origin::Honest).unwrap()
    }

    fn read(id: u64, submit: u64, wallet: usize) -> Transaction {
        Transaction::new(id, submit, Operation::Query(WalletId::account(wallet)), Origin::Honest).unwrap()
    }

    fn refs(txs: &[Transaction]) -> Vec<&Transaction> {
        txs.iter().collect()
    }

    fn ids(v: &[&[u64]]) -> Vec<Vec<TxId>> {
        v.iter().map(|r| r.iter().map(|i| TxId(*i)).collect()).collect()
    }

    #[test]
    fn fifo_chunks() {
        let txs: Vec<_> = (0..5).map(|i| dep(i, i, i as usize)).collect();
        let s = schedule_fifo(&refs(&txs), 2);
        assert_eq!(s.round_ids(), ids(&[&[0, 1], &[2, 3], &[4]]));
        assert!(s.held.is_empty());
        assert_eq!(s.rounds[0][1].worker, 1);
        assert!(schedule_fifo(&[], 2).rounds.is_empty());
    }

    #[test]
    fn fifo_follows_arrival_not_id() {
        // Arrival order 2, 0, 1 with submit times reversed relative to ids.
        let txs = vec![dep(2, 0, 2), dep(0, 5, 0), dep(1, 9, 1)];
        let s = schedule_fifo(&refs(&txs), 2);
        assert_eq!(s.round_ids(), ids(&[&[2, 0], &[1]]));
    }

    #[test]
    fn timestamp_sorts_with_id_tiebreak() {
        let txs = vec![dep(0, 3, 0), dep(1, 1, 1), dep(2, 2, 2)];
        assert_eq!(schedule_timestamp(&refs(&txs), 3).round_ids(), ids(&[&[1, 2, 0]]));
        let tied = vec![dep(5, 1, 0), dep(3, 1, 1), dep(4, 1, 2)];
        assert_eq!(schedule_timestamp(&refs(&tied), 3).round_ids(), ids(&[&[3, 4, 5]]));
        let sorted: Vec<_> = (0..7).map(|i| dep(i, i, 0)).collect();
        assert_eq!(schedule_timestamp(&refs(&sorted), 3), schedule_fifo(&refs(&sorted), 3));
    }

    #[test]
    fn grouped_reads_first() {
        let txs = vec![dep(0, 0, 0), read(1, 1, 1), dep(2, 2, 2), read(3, 3, 3)];
        assert_eq!(schedule_grouped(&refs(&txs), 2).round_ids(), ids(&[&[1, 3], &[0, 2]]));
        let reads: Vec<_> = (0..5).map(|i| read(i, 10 - i, 0)).collect();
        assert_eq!(schedule_grouped(&refs(&reads), 2), schedule_timestamp(&refs(&reads), 2));
        let writes: Vec<_> = (0..5).map(|i| dep(i, 10 - i, 0)).collect();
        assert_eq!(schedule_grouped(&refs(&writes), 2), schedule_timestamp(&refs(&writes), 2));
    }

    #[test]
    fn locking_excludes_conflicts() {
        let txs = vec![dep(0, 0, 1), dep(1, 1, 1)];
        let s = schedule_locking(&refs(&txs), 2, &LockTable::new());
        assert_eq!(s.round_ids(), ids(&[&[0]]));
        assert_eq!(s.held, vec![TxId(1)]);

        let disjoint = vec![dep(0, 0, 1), dep(1, 1, 2)];
        let s = schedule_locking(&refs(&disjoint), 2, &LockTable::new());
        assert_eq!(s.round_ids(), ids(&[&[0, 1]]));
    }

    #[test]
    fn locking_two_tick_trace() {
        let txs = vec![dep(0, 0, 1), dep(1, 1, 1)];
        let mut locks = LockTable::new();
        // Tick 1: tx 0 dispatched and takes wallet 1.
        let s1 = schedule_locking(&refs(&txs), 2, &locks);
        for id in s1.dispatched() {
            assert!(locks.acquire(&txs[id.0 as usize]));
        }
        // Still running at tick 2 attempt: tx 1 stays held.
        let s2 = schedule_locking(&refs(&txs[1..]), 2, &locks);
        assert_eq!(s2.held, vec![TxId(1)]);
        // Completion releases; next call dispatches it.
        locks.release(TxId(0));
        let s3 = schedule_locking(&refs(&txs[1..]), 2, &locks);
        assert_eq!(s3.round_ids(), ids(&[&[1]]));
    }

    #[test]
    fn conchain_greedy_example() {
        let txs = vec![dep(0, 0, 1), dep(1, 1, 1), dep(2, 2, 2)];
        let g = build_conflict_graph(&txs).unwrap();
        let s = schedule_conchain(&refs(&txs), 2, &g, &HoldState::new(10), Some(1)).unwrap();
        assert_eq!(s.round_ids(), ids(&[&[0, 2]]));
        assert_eq!(s.held, vec![TxId(1)]);
        // Oracle: the round is independent and no held candidate could be added.
        let round: Vec<&Transaction> = vec![&txs[0], &txs[2]];
        assert!(!crate::depman::conflicts(round[0], round[1]).unwrap());
        assert!(round.len() == 2 || crate::depman::conflicts(&txs[1], &txs[0]).unwrap());
    }

    #[test]
    fn conchain_non_conflicting_fills_rounds() {
        let txs: Vec<_> = (0..4).map(|i| dep(i, i, i as usize)).collect();
        let s = schedule_conchain(&refs(&txs), 2, &LiveConflicts, &HoldState::new(10), Some(2)).unwrap();
        assert_eq!(s.round_ids(), ids(&[&[0, 1], &[2, 3]]));
        assert!(s.held.is_empty());
    }

    #[test]
    fn conchain_missing_node_is_error() {
        let txs = vec![dep(0, 0, 1), dep(1, 1, 1)];
        let g = build_conflict_graph(&txs[..1]).unwrap();
        assert_eq!(
            schedule_conchain(&refs(&txs), 2, &g, &HoldState::new(10), None),
            Err(Error::MissingGraphNode(TxId(1)))
        );
    }

    #[test]
    fn conchain_aged_goes_first() {
        let txs = vec![dep(0, 0, 1), dep(1, 1, 2)];
        let mut hold = HoldState::new(4);
        hold.held_since.insert(TxId(1), 0);
        hold.tick = 4;
        let s = schedule_conchain(&refs(&txs), 1, &LiveConflicts, &hold, Some(1)).unwrap();
        assert_eq!(s.rounds[0][0].tx, TxId(1));
        assert_eq!(s.held, vec![TxId(0)]);
    }

    #[test]
    fn conchain_aged_may_exceed_round_cap() {
        let txs = vec![dep(0, 0, 1), dep(1, 1, 1), dep(2, 2, 1)];
        let mut hold = HoldState::new(2);
        for id in 0..3 {
            hold.held_since.insert(TxId(id), 0);
        }
        hold.tick = 2;
        let s = schedule_conchain(&refs(&txs), 4, &LiveConflicts, &hold, Some(1)).unwrap();
        assert_eq!(s.round_ids(), ids(&[&[0], &[1], &[2]]));
        assert!(s.held.is_empty());
    }

    #[test]
    fn hold_state_tracks_ages() {
        let mut hold = HoldState::new(3);
        let s = Schedule::from_rounds(vec![vec![TxId(0)]], vec![TxId(1)]);
        hold.record(&s);
        hold.record(&Schedule::from_rounds(vec![], vec![TxId(1)]));
        assert_eq!(hold.age(TxId(1)), 2);
        assert_eq!(hold.age(TxId(0)), 0);
        hold.record(&Schedule::from_rounds(vec![vec![TxId(1)]], vec![]));
        assert!(hold.held_since.is_empty());
    }
}
