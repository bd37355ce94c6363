//! Dependency manager: conflict detection and pre-ordering screening.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{FakeReason, LedgerState, Money, Operation, Transaction, TxId, WalletId};

/// Read-write or write-write overlap between two distinct transactions.
pub fn conflicts(t1: &Transaction, t2: &Transaction) -> Result<bool> {
    if t1.id() == t2.id() {
        return Err(Error::SelfComparison(t1.id()));
    }
    Ok(rw_overlap(t1, t2))
}

pub(crate) fn rw_overlap(t1: &Transaction, t2: &Transaction) -> bool {
    let (a, b) = (t1.rw(), t2.rw());
    a.writes.iter().any(|w| b.reads.contains(w) || b.writes.contains(w))
        || b.writes.iter().any(|w| a.reads.contains(w))
}

/// Anything the ConChain assigner can ask about conflicts.
pub trait ConflictView {
    fn contains(&self, id: TxId) -> bool;
    fn conflicting(&self, a: &Transaction, b: &Transaction) -> bool;
}

/// Answers directly from the transactions' read/write sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct LiveConflicts;

impl ConflictView for LiveConflicts {
    fn contains(&self, _id: TxId) -> bool {
        true
    }

    fn conflicting(&self, a: &Transaction, b: &Transaction) -> bool {
        a.id() != b.id() && rw_overlap(a, b)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictGraph {
    nodes: BTreeSet<TxId>,
    adjacency: BTreeMap<TxId, BTreeSet<TxId>>,
}

impl ConflictGraph {
    pub fn nodes(&self) -> &BTreeSet<TxId> {
        &self.nodes
    }

    pub fn has_edge(&self, a: TxId, b: TxId) -> bool {
        self.adjacency.get(&a).is_some_and(|n| n.contains(&b))
    }

    pub fn neighbors(&self, id: TxId) -> impl Iterator<Item = TxId> + '_ {
        self.adjacency.get(&id).into_iter().flatten().copied()
    }

    /// Unordered edges as `(low, high)` pairs, sorted.
    pub fn edges(&self) -> Vec<(TxId, TxId)> {
        self.adjacency
            .iter()
            .flat_map(|(a, ns)| ns.iter().filter(move |b| a < *b).map(move |b| (*a, *b)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    fn add_edge(&mut self, a: TxId, b: TxId) {
        debug_assert_ne!(a, b);
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
    }

    /// Undirected DOT rendering, nodes labeled by transaction id.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph conflicts {\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  {n};");
        }
        for (a, b) in self.edges() {
            let _ = writeln!(out, "  {a} -- {b};");
        }
        out.push_str("}\n");
        out
    }
}

impl ConflictView for ConflictGraph {
    fn contains(&self, id: TxId) -> bool {
        self.nodes.contains(&id)
    }

    fn conflicting(&self, a: &Transaction, b: &Transaction) -> bool {
        self.has_edge(a.id(), b.id())
    }
}

/// For each transaction index, the higher indices it conflicts with.
///
/// Uses a wallet → (index, writes?) inverted index, so the work is
/// proportional to the number of transactions sharing a wallet rather than
/// all `n²` pairs.
fn conflicting_successors(txs: &[Transaction]) -> Vec<Vec<usize>> {
    let mut by_wallet: HashMap<&WalletId, Vec<(usize, bool)>> = HashMap::new();
    for (i, t) in txs.iter().enumerate() {
        for w in t.rw().touched() {
            by_wallet.entry(w).or_default().push((i, t.rw().writes.contains(w)));
        }
    }
    let mut succ: Vec<HashSet<usize>> = vec![HashSet::new(); txs.len()];
    for users in by_wallet.values() {
        for (x, &(i, wi)) in users.iter().enumerate() {
            for &(j, wj) in &users[x + 1..] {
                if wi || wj {
                    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                    succ[lo].insert(hi);
                }
            }
        }
    }
    succ.into_iter()
        .map(|s| {
            let mut v: Vec<usize> = s.into_iter().collect();
            v.sort_unstable();
            v
        })
        .collect()
}

pub fn build_conflict_graph(txs: &[Transaction]) -> Result<ConflictGraph> {
    let mut graph = ConflictGraph::default();
    for t in txs {
        if !graph.nodes.insert(t.id()) {
            return Err(Error::DuplicateTxId(t.id()));
        }
    }
    for (i, succ) in conflicting_successors(txs).into_iter().enumerate() {
        for j in succ {
            graph.add_edge(txs[i].id(), txs[j].id());
        }
    }
    Ok(graph)
}

/// Number of unordered conflicting pairs.
pub fn count_conflicting_pairs(txs: &[Transaction]) -> u64 {
    conflicting_successors(txs).iter().map(|s| s.len() as u64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    Valid,
    Fake(FakeReason),
}

/// Worst-case amount `op` can take out of each wallet.
///
/// Amalgamate is charged the full current balance of its source.
pub fn max_debits(op: &Operation, state: &LedgerState) -> Vec<(WalletId, Money)> {
    match op {
        Operation::SendPayment(a, _, m) | Operation::WriteCheck(a, m) => vec![(a.clone(), *m)],
        Operation::Amalgamate(a, _) => {
            vec![(a.clone(), state.account(a).map_or(0, |acct| acct.total()))]
        }
        _ => Vec::new(),
    }
}

/// Screens `tx` before ordering.
///
/// Reasons are checked in priority order: unknown wallet, duplicate id,
/// over-commitment. A wallet is over-committed when its outstanding pending
/// debits plus this transaction's debit exceed its current total balance.
/// Amalgamate drains whatever is left and so is never over-committed itself,
/// but its full-balance debit is booked against later spenders.
pub fn classify_tx(
    tx: &Transaction,
    state: &LedgerState,
    pending_debits: &BTreeMap<WalletId, Money>,
    admitted: &HashSet<TxId>,
) -> Validity {
    if tx.rw().touched().any(|w| !state.contains(w)) {
        return Validity::Fake(FakeReason::UnknownWallet);
    }
    if admitted.contains(&tx.id()) {
        return Validity::Fake(FakeReason::DuplicateId);
    }
    if !matches!(tx.op(), Operation::Amalgamate(..)) {
        for (w, debit) in max_debits(tx.op(), state) {
            let pending = pending_debits.get(&w).copied().unwrap_or(0);
            let balance = state.account(&w).map_or(0, |a| a.total());
            if pending.saturating_add(debit) > balance {
                return Validity::Fake(FakeReason::OverCommitted);
            }
        }
    }
    Validity::Valid
}

/// Admission book: ids seen this run and outstanding debits per wallet.
///
/// Single writer; the engine owns it.
#[derive(Debug, Clone, Default)]
pub struct DependencyManager {
    admitted: HashSet<TxId>,
    pending_debits: BTreeMap<WalletId, Money>,
    booked: HashMap<TxId, Vec<(WalletId, Money)>>,
}

impl DependencyManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn classify(&self, tx: &Transaction, state: &LedgerState) -> Validity {
        classify_tx(tx, state, &self.pending_debits, &self.admitted)
    }

    /// Classifies and, if valid, books the transaction's debits.
    pub fn admit(&mut self, tx: &Transaction, state: &LedgerState) -> Validity {
        let v = self.classify(tx, state);
        if v == Validity::Valid {
            self.admitted.insert(tx.id());
            let debits = max_debits(tx.op(), state);
            for (w, m) in &debits {
                *self.pending_debits.entry(w.clone()).or_default() += m;
            }
            self.booked.insert(tx.id(), debits);
        }
        v
    }

    /// Drops the booked debits of a transaction that reached a terminal status.
    pub fn release(&mut self, id: TxId) {
        if let Some(debits) = self.booked.remove(&id) {
            for (w, m) in debits {
                if let Some(p) = self.pending_debits.get_mut(&w) {
                    *p -= m;
                    if *p == 0 {
                        self.pending_debits.remove(&w);
                    }
                }
            }
        }
    }

    pub fn pending_debits(&self) -> &BTreeMap<WalletId, Money> {
        &self.pending_debits
    }
}
